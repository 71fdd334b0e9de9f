//! IDX image/label file reader (the MNIST container format).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::LabeledDataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32> {
    let end = at + 4;
    if end > bytes.len() {
        return Err(Error::InvalidDataset("truncated idx header".into()));
    }
    Ok(u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]))
}

/// Reads an idx3-ubyte image file into row-major f64 vectors scaled to [0, 1].
pub fn read_idx_images(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::InvalidDataset(format!(
            "bad idx image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(&bytes, 4)? as usize;
    let rows = read_u32_be(&bytes, 8)? as usize;
    let cols = read_u32_be(&bytes, 12)? as usize;
    let pixels = rows * cols;
    let body = &bytes[16..];
    if body.len() < count * pixels {
        return Err(Error::InvalidDataset(format!(
            "idx image body holds {} bytes, expected {}",
            body.len(),
            count * pixels
        )));
    }
    Ok((0..count)
        .map(|i| {
            body[i * pixels..(i + 1) * pixels]
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect()
        })
        .collect())
}

/// Reads an idx1-ubyte label file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    let magic = read_u32_be(&bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(Error::InvalidDataset(format!(
            "bad idx label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"
        )));
    }
    let count = read_u32_be(&bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(Error::InvalidDataset(format!(
            "idx label body holds {} bytes, expected {count}",
            body.len()
        )));
    }
    Ok(body[..count].iter().map(|&b| b as usize).collect())
}

/// Loads a paired image/label file set, optionally truncated to `limit`
/// samples. The label count is inferred as `max(label) + 1`.
pub fn load_idx_dataset(
    images: &Path,
    labels: &Path,
    limit: Option<usize>,
) -> Result<LabeledDataset> {
    let mut feats = read_idx_images(images)?;
    let mut labs = read_idx_labels(labels)?;
    if feats.len() != labs.len() {
        return Err(Error::InvalidDataset(format!(
            "{} images but {} labels",
            feats.len(),
            labs.len()
        )));
    }
    if let Some(n) = limit {
        feats.truncate(n);
        labs.truncate(n);
    }
    let label_count = labs.iter().copied().max().map_or(0, |m| m + 1);
    LabeledDataset::new(feats, labs, label_count)
}
