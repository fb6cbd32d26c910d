//! Reader for the big-endian IDX container used by MNIST.

use std::path::Path;

use thiserror::Error;

use super::dataset::{DatasetError, LabeledDataset};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("wrong magic number {found:#010x}, expected {expected:#010x}")]
    WrongMagic { expected: u32, found: u32 },
    #[error("truncated IDX file: need {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("IDX file has {extra} unexpected trailing bytes")]
    TrailingBytes { extra: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("image dimensions must be positive, got {rows}x{cols}")]
    EmptyImage { rows: usize, cols: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Decoded image file: `count` images of `rows * cols` pixels scaled to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub images: Vec<Vec<f64>>,
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, IdxError> {
    let end = offset + 4;
    let chunk = bytes.get(offset..end).ok_or(IdxError::Truncated {
        expected: end,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), IdxError> {
    let found = read_u32(bytes, 0)?;
    if found != expected {
        return Err(IdxError::WrongMagic { expected, found });
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, payload: usize) -> Result<(), IdxError> {
    let expected = header.checked_add(payload).ok_or(IdxError::Truncated {
        expected: usize::MAX,
        found: bytes.len(),
    })?;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IdxError::TrailingBytes {
            extra: bytes.len() - expected,
        });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, IdxError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(IdxError::EmptyImage { rows, cols });
    }
    let pixels = rows.checked_mul(cols).and_then(|p| p.checked_mul(count));
    let pixels = pixels.ok_or(IdxError::Truncated {
        expected: usize::MAX,
        found: bytes.len(),
    })?;
    check_payload(bytes, 16, pixels)?;
    let images = bytes[16..]
        .chunks_exact(rows * cols)
        .map(|img| img.iter().map(|&p| f64::from(p) / 255.0).collect())
        .collect();
    Ok(IdxImages { rows, cols, images })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>, IdxError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    check_payload(bytes, 8, count)?;
    Ok(bytes[8..].iter().map(|&l| usize::from(l)).collect())
}

fn read(path: &Path) -> Result<Vec<u8>, IdxError> {
    std::fs::read(path).map_err(|source| IdxError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load an image file and its label file. `num_classes` is one more than the
/// largest label present.
pub fn load_idx_dataset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset, IdxError> {
    let images = parse_idx_images(&read(images_path.as_ref())?)?;
    let labels = parse_idx_labels(&read(labels_path.as_ref())?)?;
    if images.images.len() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.images.len(),
            labels: labels.len(),
        });
    }
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    Ok(LabeledDataset::new(images.images, labels, num_classes)?)
}
