//! IDX-format image and label files.

use std::path::{Path, PathBuf};

use super::Dataset;
use crate::engine::Tensor;
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn idx_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Idx {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingData(path.display().to_string()),
        _ => Error::Io(e),
    })
}

/// Parses an IDX payload: magic, big-endian extents, then unsigned bytes.
fn parse_idx<'a>(path: &Path, bytes: &'a [u8], magic: u32, rank: usize) -> Result<(Vec<usize>, &'a [u8])> {
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(idx_err(path, "truncated header"));
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    if word(0) != magic {
        return Err(idx_err(path, format!("magic {:#010x}, expected {magic:#010x}", word(0))));
    }
    let dims: Vec<usize> = (1..=rank).map(|i| word(i) as usize).collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(idx_err(
            path,
            format!("payload has {} bytes, header promises {expected}", payload.len()),
        ));
    }
    Ok((dims, &payload[..expected]))
}

/// Images scaled to `[0, 1]` as `[N × rows × cols × 1]` and labels as
/// `[N]` floats, optionally truncated to the first `limit` examples. All
/// rows land in the train partition.
pub fn mnist_load(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    let (idims, pixels) = parse_idx(images_path, &image_bytes, IMAGE_MAGIC, 3)?;
    let (ldims, labels) = parse_idx(labels_path, &label_bytes, LABEL_MAGIC, 1)?;
    if idims[0] != ldims[0] {
        return Err(idx_err(labels_path, format!("{} labels for {} images", ldims[0], idims[0])));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > 9) {
        return Err(idx_err(labels_path, format!("label {bad} out of range")));
    }
    let n = limit.map_or(idims[0], |l| l.min(idims[0]));
    let (rows, cols) = (idims[1], idims[2]);
    let per = rows * cols;
    let images = Tensor::new(
        [n, rows, cols, 1],
        pixels[..n * per].iter().map(|&p| f64::from(p) / 255.0).collect(),
    )?;
    let labels = Tensor::vector(labels[..n].iter().map(|&l| f64::from(l)).collect())?;
    Dataset::split_at(images, labels, n, 0)
}

/// Standard file names under `dir`.
pub fn mnist_paths(dir: &Path, train: bool) -> (PathBuf, PathBuf) {
    let prefix = if train { "train" } else { "t10k" };
    (
        dir.join(format!("{prefix}-images-idx3-ubyte")),
        dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}

/// Writes IDX files; used to build fixtures.
pub fn write_idx(path: &Path, magic: u32, dims: &[u32], payload: &[u8]) -> Result<()> {
    let mut bytes = magic.to_be_bytes().to_vec();
    for d in dims {
        bytes.extend_from_slice(&d.to_be_bytes());
    }
    bytes.extend_from_slice(payload);
    std::fs::write(path, bytes)?;
    Ok(())
}
