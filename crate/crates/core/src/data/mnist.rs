//! MNIST in IDX format (optionally gzip-compressed).
//!
//! Layout: big-endian u32 magic (`0x00000803` images, `0x00000801` labels),
//! one big-endian u32 per dimension, then raw unsigned bytes.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::linalg::RealMatrix;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Training examples kept from the standard 60000-image file.
pub const MNIST_TRAIN_SIZE: usize = 50_000;

#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            message,
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.err("truncated header".into()))?;
        self.pos += 4;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32()?;
        if found != expected {
            self.pos -= 4;
            return Err(self.err(format!(
                "bad magic number: expected 0x{expected:08x}, found 0x{found:08x}"
            )));
        }
        Ok(())
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.err(format!(
                "truncated {what}: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            ))),
        }
    }
}

pub fn read_idx_images(path: impl AsRef<Path>) -> Result<IdxImages> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    cur.magic(IMAGES_MAGIC)?;
    let count = cur.u32()? as usize;
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let pixels = cur.take(count * rows * cols, "pixel data")?.to_vec();
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels,
    })
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    cur.magic(LABELS_MAGIC)?;
    let count = cur.u32()? as usize;
    let labels = cur.take(count, "label data")?.to_vec();
    if let Some(pos) = labels.iter().position(|&l| l > 9) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 8 + pos as u64,
            message: format!("label {} is not a digit", labels[pos]),
        });
    }
    Ok(labels)
}

/// Loads an image/label pair as a 10-class dataset with pixels scaled by
/// 1/255, keeping at most `limit` examples from the start of the files.
pub fn load_mnist_idx_split(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    split: SplitTag,
    limit: Option<usize>,
) -> Result<Dataset> {
    let img = read_idx_images(images.as_ref())?;
    let lab = read_idx_labels(labels.as_ref())?;
    if img.count != lab.len() {
        return Err(Error::Format {
            path: labels.as_ref().to_path_buf(),
            offset: 4,
            message: format!(
                "{} labels for {} images in {}",
                lab.len(),
                img.count,
                images.as_ref().display()
            ),
        });
    }
    let n = limit.map_or(img.count, |l| l.min(img.count));
    let d = img.rows * img.cols;
    let data = img.pixels[..n * d]
        .iter()
        .map(|&p| f64::from(p) / 255.0)
        .collect();
    Dataset::new(
        RealMatrix::from_vec(n, d, data)?,
        lab[..n].iter().map(|&l| usize::from(l)).collect(),
        10,
        split,
    )
}

/// Training split: the first 50000 examples of the given files.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    load_mnist_idx_split(images, labels, SplitTag::Train, Some(MNIST_TRAIN_SIZE))
}

/// Digits 0–4 become class 0, digits 5–9 class 1.
pub fn binarize_mnist(d: &Dataset) -> Result<Dataset> {
    if d.num_classes() != 10 {
        return Err(Error::invalid(format!(
            "binarize_mnist needs a 10-class dataset, got {} classes",
            d.num_classes()
        )));
    }
    let labels = d.labels().iter().map(|&l| usize::from(l >= 5)).collect();
    Dataset::new(d.inputs().clone(), labels, 2, d.split())
}
