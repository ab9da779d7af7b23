//! IDX (MNIST) reader and writer: big-endian header, unsigned-byte payload.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::LabeledDataset;
use crate::linalg::Matrix;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: bad magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated, need {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn header(bytes: &[u8], path: &Path, words: usize, magic: u32) -> Result<Vec<usize>, IdxError> {
    let needed = 4 * words;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            needed,
            found: bytes.len(),
        });
    }
    let w: Vec<u32> = bytes[..needed]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if w[0] != magic {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found: w[0],
        });
    }
    Ok(w[1..].iter().map(|&v| v as usize).collect())
}

/// Loads images scaled to `[0, 1]` and flattened row-major. The class count is
/// `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, IdxError> {
    let img = read(images_path)?;
    let dims = header(&img, images_path, 4, IMAGES_MAGIC)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = rows * cols;
    let needed = 16 + count * pixels;
    if img.len() < needed {
        return Err(IdxError::Truncated {
            path: images_path.to_path_buf(),
            needed,
            found: img.len(),
        });
    }

    let lab = read(labels_path)?;
    let label_count = header(&lab, labels_path, 2, LABELS_MAGIC)?[0];
    if label_count != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    if lab.len() < 8 + count {
        return Err(IdxError::Truncated {
            path: labels_path.to_path_buf(),
            needed: 8 + count,
            found: lab.len(),
        });
    }

    let data: Vec<f64> = img[16..needed].iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lab[8..8 + count].iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    let features = Matrix::new(count, pixels, data).expect("pixel data is finite");
    Ok(LabeledDataset::new(features, labels, classes).expect("labels bounded by max"))
}

/// Writes an IDX image/label pair. Feature values are mapped back to bytes by
/// `round(255 · v)` clamped to `[0, 255]`.
pub fn write_idx(
    data: &LabeledDataset,
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<(), IdxError> {
    assert_eq!(rows * cols, data.dim(), "image shape must match feature dim");
    let n = data.len();
    let mut img = Vec::with_capacity(16 + n * rows * cols);
    for w in [IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&w.to_be_bytes());
    }
    img.extend(
        data.samples
            .features
            .as_slice()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut lab = Vec::with_capacity(8 + n);
    for w in [LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&w.to_be_bytes());
    }
    lab.extend(data.labels().iter().map(|&l| l as u8));
    let write = |path: &Path, bytes: &[u8]| {
        fs::write(path, bytes).map_err(|source| IdxError::Io {
            path: path.to_path_buf(),
            source,
        })
    };
    write(images_path, &img)?;
    write(labels_path, &lab)
}
