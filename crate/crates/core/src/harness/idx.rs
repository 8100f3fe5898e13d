//! IDX (MNIST) image and label files.

use std::path::Path;

use crate::erm::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Idx {
                offset: self.bytes.len(),
                reason: format!("truncated: needed {n} bytes at offset {}", self.pos),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, want: u32, what: &str) -> Result<()> {
        let got = self.u32()?;
        if got != want {
            return Err(Error::Idx {
                offset: 0,
                reason: format!("bad magic 0x{got:08x} for {what} (expected 0x{want:08x})"),
            });
        }
        Ok(())
    }
}

/// Parses in-memory IDX images and labels. Pixels are scaled by 1/255.
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut img = Reader { bytes: images, pos: 0 };
    img.magic(IMAGES_MAGIC, "images")?;
    let n = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let dim = rows * cols;

    let mut lab = Reader { bytes: labels, pos: 0 };
    lab.magic(LABELS_MAGIC, "labels")?;
    let n_labels = lab.u32()? as usize;
    if n_labels != n {
        return Err(Error::Idx {
            offset: 4,
            reason: format!("label count {n_labels} does not match image count {n}"),
        });
    }

    let pixels = img.take(n * dim)?;
    let raw_labels = lab.take(n)?;
    let features: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<u32> = raw_labels.iter().map(|&l| l as u32).collect();
    let classes = labels.iter().max().map_or(1, |&m| m as usize + 1).max(2);
    Dataset::from_parts(features, labels, dim, classes)
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    parse_idx(&std::fs::read(images)?, &std::fs::read(labels)?)
}

#[cfg(test)]
pub(crate) fn encode_images(images: &[Vec<u8>], rows: u32, cols: u32) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(IMAGES_MAGIC.to_be_bytes());
    out.extend((images.len() as u32).to_be_bytes());
    out.extend(rows.to_be_bytes());
    out.extend(cols.to_be_bytes());
    for img in images {
        out.extend(img);
    }
    out
}

#[cfg(test)]
pub(crate) fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}
