//! IDX container parsing and writing (the MNIST distribution format).
//!
//! Big-endian: magic u32, dimension sizes as u32, then raw unsigned bytes.
//! Images use magic 0x00000803 (N, rows, cols), labels 0x00000801 (N).
//! Pixels are mapped to f64 by dividing by 255; writing rounds back, which
//! is exact for values that came from bytes.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn u32_be(&mut self) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::IdxFormat {
                path: self.path.into(),
                reason: "truncated header".into(),
            });
        }
        let v = u32::from_be_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn payload(&mut self, expected: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if available < expected {
            return Err(Error::IdxFormat {
                path: self.path.into(),
                reason: format!("payload truncated: {available} bytes, expected {expected}"),
            });
        }
        if available > expected {
            return Err(Error::IdxFormat {
                path: self.path.into(),
                reason: format!("{} trailing bytes after payload", available - expected),
            });
        }
        Ok(&self.bytes[self.pos..])
    }
}

/// N x (rows*cols) matrix of pixels scaled to [0,1].
pub fn read_idx_images(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = r.u32_be()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::IdxFormat {
            path: path.into(),
            reason: format!("bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let n = r.u32_be()? as usize;
    let rows = r.u32_be()? as usize;
    let cols = r.u32_be()? as usize;
    let pixels = r.payload(n * rows * cols)?;
    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    Matrix::from_vec(n, rows * cols, data)
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let magic = r.u32_be()?;
    if magic != LABELS_MAGIC {
        return Err(Error::IdxFormat {
            path: path.into(),
            reason: format!("bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let n = r.u32_be()? as usize;
    let payload = r.payload(n)?;
    Ok(payload.iter().map(|&b| b as usize).collect())
}

/// Writes pixels back as bytes; `rows * cols` must factor the matrix width.
pub fn write_idx_images(path: &Path, images: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != images.cols() {
        return Err(Error::ShapeMismatch(format!(
            "{rows}x{cols} does not match {} columns",
            images.cols()
        )));
    }
    let mut out = Vec::with_capacity(16 + images.rows() * images.cols());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    out.extend_from_slice(&(images.rows() as u32).to_be_bytes());
    out.extend_from_slice(&(rows as u32).to_be_bytes());
    out.extend_from_slice(&(cols as u32).to_be_bytes());
    out.extend(images.data().iter().map(|&v| (v * 255.0).round() as u8));
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(l as u8);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Loads a paired image/label file into a ten-class dataset, checking that
/// the sample counts agree.
pub fn load_mnist_pair(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let inputs = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if inputs.rows() != labels.len() {
        return Err(Error::IdxFormat {
            path: labels_path.into(),
            reason: format!(
                "{} labels but {} images in {}",
                labels.len(),
                inputs.rows(),
                images_path.display()
            ),
        });
    }
    Dataset::new(inputs, labels, 10, split)
}
