//! File formats: npy arrays and the JSONL evaluation manifest.

mod manifest;
mod npy;

pub use manifest::{
    entry_to_json, load_manifest, parse_manifest, write_manifest, CaptureLayer, CaptureSpec,
    Evidence, GroundTruth, Manifest, ManifestError, SampleEntry,
};
pub use npy::{
    decode, encode, read_binary_mask, read_npy, read_npy_2d, write_npy, NpyError, MAGIC,
};
