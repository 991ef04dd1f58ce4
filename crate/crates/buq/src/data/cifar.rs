//! CIFAR-10 binary batch reader with BT.601 grayscale conversion.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

const SIDE: usize = 32;
const PLANE: usize = SIDE * SIDE;
/// 1 label byte + three planar channels.
const ROW_BYTES: usize = 1 + 3 * PLANE;

/// BT.601 luminance of one pixel, on `[0, 1]`-scaled channels, in f32.
#[inline]
pub(crate) fn bt601(r: u8, g: u8, b: u8) -> f32 {
    let rf = r as f32 / 255.0;
    let gf = g as f32 / 255.0;
    let bf = b as f32 / 255.0;
    0.2989 * rf + 0.5870 * gf + 0.1140 * bf
}

/// Loads one CIFAR-10 binary batch file (rows of `1 + 3072` bytes, planar
/// RGB) as 32x32 single-channel images.
pub fn load_cifar10_grayscale(path: &Path) -> Result<LabeledDataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.is_empty() || bytes.len() % ROW_BYTES != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: (bytes.len() - bytes.len() % ROW_BYTES) as u64,
            message: format!(
                "file length {} is not a positive multiple of the {ROW_BYTES}-byte row size",
                bytes.len()
            ),
        });
    }
    let count = bytes.len() / ROW_BYTES;
    let mut pixels = Vec::with_capacity(count * PLANE);
    let mut labels = Vec::with_capacity(count);
    for row in 0..count {
        let base = row * ROW_BYTES;
        let label = bytes[base];
        if label > 9 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: base as u64,
                message: format!("label byte {label} outside 0..=9"),
            });
        }
        labels.push(label);
        let red = &bytes[base + 1..base + 1 + PLANE];
        let green = &bytes[base + 1 + PLANE..base + 1 + 2 * PLANE];
        let blue = &bytes[base + 1 + 2 * PLANE..base + 1 + 3 * PLANE];
        for i in 0..PLANE {
            pixels.push(bt601(red[i], green[i], blue[i]));
        }
    }
    LabeledDataset::new("cifar10g".into(), 0.0, SIDE, SIDE, pixels, labels, 10)
}
