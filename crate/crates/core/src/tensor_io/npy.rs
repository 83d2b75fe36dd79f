//! Reading and writing the numpy npy format.
//!
//! Only the subset used for heatmaps, masks and attention captures is
//! supported: format version 1.0, C order, little-endian `<f4` / `<f8`, rank
//! 2 or 3. Anything else is rejected with a specific error rather than
//! coerced.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use crate::tensor::{DType, Tensor, Tensor2};

/// The npy magic string.
pub const MAGIC: [u8; 6] = *b"\x93NUMPY";

/// Fixed prefix: magic, major/minor version, u16 header length.
const PREAMBLE_LEN: usize = MAGIC.len() + 2 + 2;

/// Total header size (preamble + dict + newline) is padded to this.
const HEADER_ALIGN: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum NpyError {
    #[error("not an npy file (magic bytes mismatch)")]
    MagicMismatch,
    #[error("unsupported npy version {0}.{1} (only 1.0)")]
    UnsupportedVersion(u8, u8),
    #[error("unsupported dtype {0:?} (only '<f4' and '<f8')")]
    UnsupportedDtype(String),
    #[error("fortran-ordered arrays are not supported")]
    UnsupportedLayout,
    #[error("unsupported array rank {} for shape {0:?} (only 2-D or 3-D)", .0.len())]
    UnsupportedRank(Vec<usize>),
    #[error("shape {0:?} has a zero-length axis")]
    EmptyAxis(Vec<usize>),
    #[error("malformed npy header: {0}")]
    MalformedHeader(String),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("mask is not binary: element {index} is {value}")]
    MaskNotBinary { index: usize, value: f64 },
    #[error("expected a 2-D array, found shape {0:?}")]
    NotAMatrix(Vec<usize>),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a 2-D or 3-D array from an npy file.
pub fn read_npy(path: impl AsRef<Path>) -> Result<Tensor, NpyError> {
    let bytes = fs::read(path)?;
    decode(&bytes)
}

/// Reads a 2-D array, rejecting 3-D files.
pub fn read_npy_2d(path: impl AsRef<Path>) -> Result<Tensor2, NpyError> {
    match read_npy(path)? {
        Tensor::D2(t) => Ok(t),
        other => Err(NpyError::NotAMatrix(other.shape())),
    }
}

/// Reads a 2-D array whose values must be exactly 0.0 or 1.0.
pub fn read_binary_mask(path: impl AsRef<Path>) -> Result<Tensor2, NpyError> {
    let t = read_npy_2d(path)?;
    if let Some((index, &value)) = t
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| v != 0.0 && v != 1.0)
    {
        return Err(NpyError::MaskNotBinary { index, value });
    }
    Ok(t)
}

/// Writes a tensor to `path`, replacing any existing file.
pub fn write_npy(tensor: &Tensor, path: impl AsRef<Path>) -> Result<(), NpyError> {
    let bytes = encode(tensor);
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

/// Serializes a tensor to npy bytes.
pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let shape = tensor.shape();
    let dtype = tensor.dtype();
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}), }}",
        dtype.descr(),
        dims.join(", ")
    );
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let padding = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    dict.extend(std::iter::repeat_n(' ', padding));
    dict.push('\n');

    let data = tensor.data();
    let mut out = Vec::with_capacity(PREAMBLE_LEN + dict.len() + data.len() * dtype.itemsize());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    match dtype {
        DType::F32 => {
            for &v in data {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        DType::F64 => {
            for &v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Parses npy bytes.
pub fn decode(bytes: &[u8]) -> Result<Tensor, NpyError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(NpyError::MagicMismatch);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(NpyError::MalformedHeader(
            "file ends inside the preamble".into(),
        ));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(NpyError::UnsupportedVersion(major, minor));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let payload_start = PREAMBLE_LEN + header_len;
    let header = bytes
        .get(PREAMBLE_LEN..payload_start)
        .ok_or_else(|| NpyError::MalformedHeader("file ends inside the header".into()))?;
    let header = std::str::from_utf8(header)
        .map_err(|_| NpyError::MalformedHeader("header is not ASCII".into()))?;
    let dict = HeaderDict::parse(header)?;

    let dtype = match dict.descr.as_str() {
        "<f4" => DType::F32,
        "<f8" => DType::F64,
        other => return Err(NpyError::UnsupportedDtype(other.to_string())),
    };
    if dict.fortran_order {
        return Err(NpyError::UnsupportedLayout);
    }
    if !(2..=3).contains(&dict.shape.len()) {
        return Err(NpyError::UnsupportedRank(dict.shape));
    }
    if dict.shape.contains(&0) {
        return Err(NpyError::EmptyAxis(dict.shape));
    }

    let count = dict
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| NpyError::MalformedHeader("shape overflows".into()))?;
    let expected = count
        .checked_mul(dtype.itemsize())
        .ok_or_else(|| NpyError::MalformedHeader("shape overflows".into()))?;
    let payload = &bytes[payload_start..];
    if payload.len() < expected {
        return Err(NpyError::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }

    let data: Vec<f64> = match dtype {
        DType::F32 => payload[..expected]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        DType::F64 => payload[..expected]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
    };
    Tensor::from_parts(&dict.shape, dtype, data)
        .map_err(|e| NpyError::MalformedHeader(e.to_string()))
}

#[derive(Debug, Default)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

impl HeaderDict {
    fn parse(header: &str) -> Result<Self, NpyError> {
        let mut p = Parser {
            src: header.trim_end().as_bytes(),
            pos: 0,
        };
        let mut descr = None;
        let mut fortran_order = None;
        let mut shape = None;

        p.expect(b'{')?;
        loop {
            p.skip_ws();
            if p.eat(b'}') {
                break;
            }
            let key = p.string()?;
            p.skip_ws();
            p.expect(b':')?;
            p.skip_ws();
            match key.as_str() {
                "descr" => descr = Some(p.string()?),
                "fortran_order" => fortran_order = Some(p.boolean()?),
                "shape" => shape = Some(p.tuple()?),
                other => return Err(malformed(format!("unexpected key {other:?}"))),
            }
            p.skip_ws();
            if !p.eat(b',') {
                p.skip_ws();
                p.expect(b'}')?;
                break;
            }
        }
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(malformed("trailing characters after dict"));
        }

        Ok(Self {
            descr: descr.ok_or_else(|| malformed("missing 'descr'"))?,
            fortran_order: fortran_order.ok_or_else(|| malformed("missing 'fortran_order'"))?,
            shape: shape.ok_or_else(|| malformed("missing 'shape'"))?,
        })
    }
}

fn malformed(msg: impl Into<String>) -> NpyError {
    NpyError::MalformedHeader(msg.into())
}

/// Just enough of a Python literal parser for npy header dicts.
struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), NpyError> {
        if self.eat(b) {
            Ok(())
        } else {
            Err(malformed(format!(
                "expected {:?} at offset {}",
                b as char, self.pos
            )))
        }
    }

    fn string(&mut self) -> Result<String, NpyError> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(malformed(format!("expected string at offset {}", self.pos))),
        };
        self.pos += 1;
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b == quote {
                let s = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
                self.pos += 1;
                return Ok(s);
            }
            self.pos += 1;
        }
        Err(malformed("unterminated string"))
    }

    fn boolean(&mut self) -> Result<bool, NpyError> {
        let rest = &self.src[self.pos..];
        if rest.starts_with(b"True") {
            self.pos += 4;
            Ok(true)
        } else if rest.starts_with(b"False") {
            self.pos += 5;
            Ok(false)
        } else {
            Err(malformed(format!(
                "expected True/False at offset {}",
                self.pos
            )))
        }
    }

    fn tuple(&mut self) -> Result<Vec<usize>, NpyError> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(b')') {
                return Ok(dims);
            }
            let start = self.pos;
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
            // Python 2 era writers emit long literals such as `3L`.
            let digits = std::str::from_utf8(&self.src[start..self.pos]).unwrap_or_default();
            let dim = digits
                .parse::<usize>()
                .map_err(|_| malformed(format!("bad shape entry at offset {start}")))?;
            self.eat(b'L');
            dims.push(dim);
            self.skip_ws();
            if !self.eat(b',') {
                self.skip_ws();
                self.expect(b')')?;
                return Ok(dims);
            }
        }
    }
}
