//! Bit-exact reader and writer for the IDX container used by the
//! MNIST-family datasets.
//!
//! Layout (all integers big-endian): a `u32` magic encoding the element type
//! and rank, one `u32` per dimension, then the payload as unsigned bytes.
//! Image files use magic `0x0000_0803` (rank 3: count × rows × cols), label
//! files `0x0000_0801` (rank 1: count).

use std::io::Read;
use std::path::Path;

use ndarray::Array2;

use crate::dataset::Dataset;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// Everything that can go wrong while parsing an IDX pair.
#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("bad magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated payload: needed {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, IdxError>;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(IdxError::Truncated {
            needed: end,
            got: bytes.len(),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Raw parsed image file: `count` images of `rows`×`cols` bytes.
#[derive(Debug)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// One flattened image per row, original byte values.
    pub pixels: Array2<u8>,
}

/// Parse an image file (`0x0000_0803`).
pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let magic = read_u32(&bytes, 0)?;
    if magic != IMAGE_MAGIC {
        return Err(IdxError::BadMagic {
            expected: IMAGE_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&bytes, 4)? as usize;
    let rows = read_u32(&bytes, 8)? as usize;
    let cols = read_u32(&bytes, 12)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    let pixels = Array2::from_shape_vec((count, rows * cols), bytes[16..needed].to_vec())
        .expect("shape follows from header");
    Ok(IdxImages { rows, cols, pixels })
}

/// Parse a label file (`0x0000_0801`).
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let magic = read_u32(&bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(IdxError::BadMagic {
            expected: LABEL_MAGIC,
            found: magic,
        });
    }
    let count = read_u32(&bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            needed,
            got: bytes.len(),
        });
    }
    Ok(bytes[8..needed].to_vec())
}

/// Load an image/label pair into a [`Dataset`], pixels scaled to `[0, 1]`.
pub fn load_idx(path_images: &Path, path_labels: &Path) -> Result<Dataset> {
    let images = read_idx_images(path_images)?;
    let labels = read_idx_labels(path_labels)?;
    if images.pixels.nrows() != labels.len() {
        return Err(IdxError::CountMismatch {
            images: images.pixels.nrows(),
            labels: labels.len(),
        });
    }
    let inputs = images.pixels.mapv(|b| b as f64 / 255.0);
    let labels: Vec<usize> = labels.into_iter().map(|b| b as usize).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        name: path_images
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "idx".into()),
        split: String::new(),
        inputs,
        labels: Some(labels),
        classes,
    })
}

/// Write an image file; one flattened `rows`×`cols` image per input row.
pub fn write_idx_images(path: &Path, pixels: &Array2<u8>, rows: usize, cols: usize) -> Result<()> {
    assert_eq!(pixels.ncols(), rows * cols, "image shape mismatch");
    let mut bytes = Vec::with_capacity(16 + pixels.len());
    bytes.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(pixels.nrows() as u32).to_be_bytes());
    bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for row in pixels.rows() {
        bytes.extend(row.iter());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Write a label file.
pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + labels.len());
    bytes.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    bytes.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    bytes.extend_from_slice(labels);
    std::fs::write(path, bytes)?;
    Ok(())
}
