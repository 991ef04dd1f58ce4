//! MNIST IDX reader (big-endian, uncompressed).

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Idx<'a> {
    bytes: Vec<u8>,
    offset: usize,
    path: &'a Path,
}

impl<'a> Idx<'a> {
    fn open(path: &'a Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
        Ok(Self {
            bytes,
            offset: 0,
            path,
        })
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.offset as u64,
            message: message.into(),
        }
    }

    fn u32_be(&mut self) -> Result<u32> {
        if self.offset + 4 > self.bytes.len() {
            return Err(self.fail("truncated header"));
        }
        let b = &self.bytes[self.offset..self.offset + 4];
        self.offset += 4;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn payload(&mut self, n: usize) -> Result<&[u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(self.fail(format!(
                "truncated payload: wanted {n} bytes, {} remain",
                self.bytes.len() - self.offset
            )));
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }
}

/// Loads an MNIST image/label file pair. Pixels are scaled to `[0, 1]`
/// by `/255`.
pub fn load_mnist(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let mut img = Idx::open(images_path)?;
    let magic = img.u32_be()?;
    if magic != IMAGES_MAGIC {
        img.offset = 0;
        return Err(img.fail(format!("bad images magic {magic:#010x}")));
    }
    let count = img.u32_be()? as usize;
    let rows = img.u32_be()? as usize;
    let cols = img.u32_be()? as usize;
    let pixels: Vec<f32> = img
        .payload(count * rows * cols)?
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();

    let mut lab = Idx::open(labels_path)?;
    let magic = lab.u32_be()?;
    if magic != LABELS_MAGIC {
        lab.offset = 0;
        return Err(lab.fail(format!("bad labels magic {magic:#010x}")));
    }
    let label_count = lab.u32_be()? as usize;
    if label_count != count {
        return Err(lab.fail(format!("{label_count} labels for {count} images")));
    }
    let labels = lab.payload(label_count)?.to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(lab.fail(format!("label byte {bad} outside 0..=9")));
    }

    LabeledDataset::new("mnist".into(), 0.0, rows, cols, pixels, labels, 10)
}
