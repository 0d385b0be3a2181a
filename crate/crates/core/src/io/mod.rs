//! File formats: NIfTI-1 volumes, cohort manifests, content digests.

mod manifest;
mod nifti;

use std::fs::File;
use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use manifest::{
    parse_manifest, parse_references, read_manifest, read_references, Manifest, ManifestRow,
    ReferenceRow,
};
pub use nifti::{
    read_image, read_labels, read_probabilities, read_raw, read_volume, write_loaded,
    write_volume, LoadedVolume, NiftiScalar, RawVolume,
};
pub(crate) use nifti::labels_from_values;

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn bytes_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
