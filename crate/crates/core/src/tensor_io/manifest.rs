//! The evaluation manifest: one JSON object per line, one line per sample.
//!
//! ```text
//! {"sample_id": "n01440764_0001", "true_class": 0, "pred_class": 0,
//!  "heatmap_path": "heatmaps/n01440764_0001.npy",
//!  "bboxes": [[12, 30, 180, 200]], "width": 224, "height": 224,
//!  "tags": {"method": "ZS", "corruption": "gaussian_noise", "severity": "3"}}
//! ```
//!
//! Evidence is either `heatmap_path` or `capture` (per-layer attention and
//! gradient files plus token layout). Ground truth is either `mask_path` or
//! `bboxes` together with `width` and `height`. Relative paths resolve
//! against the manifest's directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::{BBox, BoxError};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest line {line}: invalid JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("manifest line {line}: missing field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error(
        "manifest line {line} (sample {sample_id:?}): both `heatmap_path` and `capture` given"
    )]
    ConflictingEvidence { line: usize, sample_id: String },
    #[error("manifest line {line} (sample {sample_id:?}): both `mask_path` and `bboxes` given")]
    ConflictingGroundTruth { line: usize, sample_id: String },
    #[error("manifest line {line}: sample_id {sample_id:?} already used on line {first_line}")]
    DuplicateSampleId {
        line: usize,
        first_line: usize,
        sample_id: String,
    },
    #[error("manifest line {line} (sample {sample_id:?}): {source}")]
    InvalidBox {
        line: usize,
        sample_id: String,
        source: BoxError,
    },
    #[error("manifest line {line} (sample {sample_id:?}): invalid capture: {message}")]
    InvalidCapture {
        line: usize,
        sample_id: String,
        message: String,
    },
    #[error("manifest line {line} (sample {sample_id:?}): tag {key:?} must be a string or number")]
    InvalidTag {
        line: usize,
        sample_id: String,
        key: String,
    },
    #[error("manifest i/o: {0}")]
    Io(#[from] io::Error),
}

/// Where the explanation heatmap for a sample comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum Evidence {
    Heatmap(PathBuf),
    Capture(CaptureSpec),
}

/// Per-layer attention/gradient files plus the token layout needed to
/// project relevance onto the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureSpec {
    /// In forward order; the last entry is the final block.
    pub layers: Vec<CaptureLayer>,
    pub cls_index: usize,
    /// Patch grid (rows, cols).
    pub grid: (usize, usize),
    /// Token positions that are not image patches. Defaults to `[cls_index]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub non_image_tokens: Option<Vec<usize>>,
    /// The class the gradients were taken for (the annotation class).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<u32>,
}

impl CaptureSpec {
    pub fn non_image_tokens(&self) -> Vec<usize> {
        let mut tokens = self
            .non_image_tokens
            .clone()
            .unwrap_or_else(|| vec![self.cls_index]);
        tokens.sort_unstable();
        tokens.dedup();
        tokens
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureLayer {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub attention: PathBuf,
    pub gradient: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GroundTruth {
    Mask(PathBuf),
    Boxes {
        boxes: Vec<BBox>,
        width: u32,
        height: u32,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleEntry {
    pub sample_id: String,
    pub true_class: u32,
    pub pred_class: u32,
    pub evidence: Evidence,
    pub ground_truth: GroundTruth,
    pub tags: BTreeMap<String, String>,
    /// 1-based line in the source file; 0 for entries built in memory.
    pub line: usize,
}

impl SampleEntry {
    pub fn is_correct(&self) -> bool {
        self.true_class == self.pred_class
    }
}

#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub entries: Vec<SampleEntry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Entries ordered by `sample_id`; downstream processing uses this order.
    pub fn sorted_entries(&self) -> Vec<&SampleEntry> {
        let mut entries: Vec<_> = self.entries.iter().collect();
        entries.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        entries
    }
}

/// Loads and validates a JSONL manifest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest, ManifestError> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = parse_manifest(BufReader::new(file))?;
    manifest.base_dir = base_dir;
    Ok(manifest)
}

/// Parses JSONL manifest text; `base_dir` is left empty.
pub fn parse_manifest(reader: impl BufRead) -> Result<Manifest, ManifestError> {
    let mut entries = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let entry = raw.validate(line_no)?;
        if let Some(&first_line) = seen.get(&entry.sample_id) {
            return Err(ManifestError::DuplicateSampleId {
                line: line_no,
                first_line,
                sample_id: entry.sample_id,
            });
        }
        seen.insert(entry.sample_id.clone(), line_no);
        entries.push(entry);
    }
    Ok(Manifest {
        entries,
        base_dir: PathBuf::new(),
    })
}

/// Writes entries as JSONL, one line each, in the given order.
pub fn write_manifest<'a>(
    entries: impl IntoIterator<Item = &'a SampleEntry>,
    path: impl AsRef<Path>,
) -> io::Result<()> {
    let mut out = Vec::new();
    for entry in entries {
        out.extend_from_slice(entry_to_json(entry).as_bytes());
        out.push(b'\n');
    }
    fs::File::create(path)?.write_all(&out)
}

pub fn entry_to_json(entry: &SampleEntry) -> String {
    let raw = RawEntry::from(entry);
    serde_json::to_string(&raw).expect("manifest entries always serialize")
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RawEntry {
    sample_id: Option<String>,
    true_class: Option<u32>,
    pred_class: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    heatmap_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    capture: Option<CaptureSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask_path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bboxes: Option<Vec<[u32; 4]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    width: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    height: Option<u32>,
    #[serde(default)]
    tags: BTreeMap<String, serde_json::Value>,
}

impl RawEntry {
    fn validate(self, line: usize) -> Result<SampleEntry, ManifestError> {
        let missing = |field| ManifestError::MissingField { line, field };
        let sample_id = self.sample_id.ok_or_else(|| missing("sample_id"))?;
        let true_class = self.true_class.ok_or_else(|| missing("true_class"))?;
        let pred_class = self.pred_class.ok_or_else(|| missing("pred_class"))?;

        let evidence = match (self.heatmap_path, self.capture) {
            (Some(_), Some(_)) => {
                return Err(ManifestError::ConflictingEvidence { line, sample_id });
            }
            (Some(p), None) => Evidence::Heatmap(p),
            (None, Some(c)) => {
                if let Err(message) = check_capture(&c) {
                    return Err(ManifestError::InvalidCapture {
                        line,
                        sample_id,
                        message,
                    });
                }
                Evidence::Capture(c)
            }
            (None, None) => return Err(missing("heatmap_path or capture")),
        };

        let ground_truth = match (self.mask_path, self.bboxes) {
            (Some(_), Some(_)) => {
                return Err(ManifestError::ConflictingGroundTruth { line, sample_id });
            }
            (Some(p), None) => GroundTruth::Mask(p),
            (None, Some(raw_boxes)) => {
                let width = self.width.ok_or_else(|| missing("width"))?;
                let height = self.height.ok_or_else(|| missing("height"))?;
                let mut boxes = Vec::with_capacity(raw_boxes.len());
                for [x_min, y_min, x_max, y_max] in raw_boxes {
                    let b = BBox {
                        x_min,
                        y_min,
                        x_max,
                        y_max,
                    };
                    if let Err(source) = b.validate(width, height) {
                        return Err(ManifestError::InvalidBox {
                            line,
                            sample_id,
                            source,
                        });
                    }
                    boxes.push(b);
                }
                GroundTruth::Boxes {
                    boxes,
                    width,
                    height,
                }
            }
            (None, None) => return Err(missing("mask_path or bboxes")),
        };

        let mut tags = BTreeMap::new();
        for (key, value) in self.tags {
            let value = match value {
                serde_json::Value::String(s) => s,
                serde_json::Value::Number(n) => n.to_string(),
                _ => {
                    return Err(ManifestError::InvalidTag {
                        line,
                        sample_id,
                        key,
                    })
                }
            };
            tags.insert(key, value);
        }

        Ok(SampleEntry {
            sample_id,
            true_class,
            pred_class,
            evidence,
            ground_truth,
            tags,
            line,
        })
    }
}

fn check_capture(c: &CaptureSpec) -> Result<(), String> {
    if c.layers.is_empty() {
        return Err("no layers".into());
    }
    if c.grid.0 == 0 || c.grid.1 == 0 {
        return Err(format!("grid {:?} has a zero dimension", c.grid));
    }
    if c.non_image_tokens
        .as_ref()
        .is_some_and(|t| !t.contains(&c.cls_index))
    {
        return Err("non_image_tokens must include cls_index".into());
    }
    Ok(())
}

impl From<&SampleEntry> for RawEntry {
    fn from(e: &SampleEntry) -> Self {
        let mut raw = RawEntry {
            sample_id: Some(e.sample_id.clone()),
            true_class: Some(e.true_class),
            pred_class: Some(e.pred_class),
            tags: e
                .tags
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect(),
            ..Default::default()
        };
        match &e.evidence {
            Evidence::Heatmap(p) => raw.heatmap_path = Some(p.clone()),
            Evidence::Capture(c) => raw.capture = Some(c.clone()),
        }
        match &e.ground_truth {
            GroundTruth::Mask(p) => raw.mask_path = Some(p.clone()),
            GroundTruth::Boxes {
                boxes,
                width,
                height,
            } => {
                raw.bboxes = Some(
                    boxes
                        .iter()
                        .map(|b| [b.x_min, b.y_min, b.x_max, b.y_max])
                        .collect(),
                );
                raw.width = Some(*width);
                raw.height = Some(*height);
            }
        }
        raw
    }
}
