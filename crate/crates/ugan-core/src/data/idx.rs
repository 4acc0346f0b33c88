//! Big-endian IDX readers/writers (the MNIST container format).
//!
//! Magic 0x00000803: images, dims count x rows x cols, unsigned bytes.
//! Magic 0x00000801: labels, dims count, unsigned bytes.
//! Parse errors carry the byte offset of the fault.

use super::Dataset;
use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> Reader<'a> {
    fn u32_be(&mut self, what: &str) -> Result<u32> {
        if self.off + 4 > self.buf.len() {
            return Err(Error::parse(
                self.off as u64,
                format!("truncated file while reading {what}"),
            ));
        }
        let v = u32::from_be_bytes(self.buf[self.off..self.off + 4].try_into().unwrap());
        self.off += 4;
        Ok(v)
    }

    fn bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.off + n > self.buf.len() {
            return Err(Error::parse(
                self.off as u64,
                format!(
                    "truncated file while reading {what}: need {n} bytes, {} left",
                    self.buf.len() - self.off
                ),
            ));
        }
        let s = &self.buf[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }
}

/// Parse an IDX image file into (pixels, rows, cols).
pub fn read_idx_images(path: &Path) -> Result<(Vec<Vec<u8>>, usize, usize)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, off: 0 };
    let magic = r.u32_be("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse(
            0,
            format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = r.u32_be("item count")? as usize;
    let rows = r.u32_be("row count")? as usize;
    let cols = r.u32_be("column count")? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::parse(8, format!("degenerate image size {rows}x{cols}")));
    }
    let mut pixels = Vec::with_capacity(count);
    for i in 0..count {
        let item = r.bytes(rows * cols, &format!("image {i}"))?;
        pixels.push(item.to_vec());
    }
    Ok((pixels, rows, cols))
}

/// Parse an IDX label file.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, off: 0 };
    let magic = r.u32_be("magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse(
            0,
            format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let count = r.u32_be("label count")? as usize;
    Ok(r.bytes(count, "labels")?.to_vec())
}

/// Load an image file (and optional aligned label file) as a dataset of
/// single-channel images.
pub fn load_mnist_idx(images_path: &Path, labels_path: Option<&Path>) -> Result<Dataset> {
    let (pixels, rows, cols) = read_idx_images(images_path)?;
    let labels = match labels_path {
        None => None,
        Some(p) => {
            let labels = read_idx_labels(p)?;
            if labels.len() != pixels.len() {
                return Err(Error::parse(
                    4,
                    format!(
                        "label count {} does not match image count {}",
                        labels.len(),
                        pixels.len()
                    ),
                ));
            }
            Some(labels)
        }
    };
    Dataset::from_images(1, rows, cols, pixels, labels)
}

pub fn write_idx_images(path: &Path, pixels: &[Vec<u8>], rows: usize, cols: usize) -> Result<()> {
    let mut out = Vec::with_capacity(16 + pixels.len() * rows * cols);
    out.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(pixels.len() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    for (i, item) in pixels.iter().enumerate() {
        if item.len() != rows * cols {
            return Err(Error::Data(format!(
                "image {i} has {} bytes, expected {}",
                item.len(),
                rows * cols
            )));
        }
        out.extend_from_slice(item);
    }
    atomic_write(path, &out)
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    atomic_write(path, &out)
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))?;
    Ok(())
}
