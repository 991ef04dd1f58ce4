//! Dataset ingestion, grayscale conversion, and impulse-noise shifts.

mod cifar;
mod mnist;
mod noise;
mod pgm;

pub use cifar::load_cifar10_grayscale;
pub use mnist::load_mnist;
pub use noise::{alpha_grid, apply_impulse_noise, NoiseSpec};
pub use pgm::{image_to_u8, pgm_bytes, write_pgm};

use crate::error::{Error, Result};
use crate::tensor::TensorF32;

/// Single-channel images in `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    name: String,
    /// Impulse-noise level this dataset was corrupted with; 0 for clean.
    alpha: f64,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
    labels: Vec<u8>,
    classes: usize,
}

impl LabeledDataset {
    pub fn new(
        name: String,
        alpha: f64,
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        labels: Vec<u8>,
        classes: usize,
    ) -> Result<Self> {
        let per_image = height * width;
        if per_image == 0 {
            return Err(Error::Config("image dimensions must be nonzero".into()));
        }
        if pixels.len() != labels.len() * per_image {
            return Err(Error::Config(format!(
                "{} pixels do not match {} labels of {}x{} images",
                pixels.len(),
                labels.len(),
                height,
                width
            )));
        }
        if let Some(&p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("pixel {p} outside [0, 1]")));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Config(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            name,
            alpha,
            height,
            width,
            pixels,
            labels,
            classes,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.height * self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[cfg(test)]
    pub(crate) fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    /// Pixels of image `i`, row-major.
    pub fn image(&self, i: usize) -> &[f32] {
        let n = self.pixels_per_image();
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Contiguous pixels of images `start..end`.
    pub fn image_block(&self, start: usize, end: usize) -> &[f32] {
        let n = self.pixels_per_image();
        &self.pixels[start * n..end * n]
    }

    /// Image `i` as a `[1, h, w]` tensor.
    pub fn image_tensor(&self, i: usize) -> TensorF32 {
        TensorF32::new(
            vec![1, self.height, self.width],
            self.image(i).to_vec(),
        )
    }

    /// The first `count` samples as a new dataset (all of them when `count`
    /// is zero or exceeds the length). Prefix subsetting keeps per-image
    /// corruption seeds stable.
    pub fn take(&self, count: usize) -> LabeledDataset {
        let count = if count == 0 {
            self.len()
        } else {
            count.min(self.len())
        };
        let n = self.pixels_per_image();
        LabeledDataset {
            name: self.name.clone(),
            alpha: self.alpha,
            height: self.height,
            width: self.width,
            pixels: self.pixels[..count * n].to_vec(),
            labels: self.labels[..count].to_vec(),
            classes: self.classes,
        }
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }
}

/// Concatenates datasets of identical geometry (e.g. CIFAR-10 training
/// batches) in order.
pub fn concat(parts: Vec<LabeledDataset>) -> Result<LabeledDataset> {
    let mut iter = parts.into_iter();
    let mut first = iter
        .next()
        .ok_or_else(|| Error::Config("nothing to concatenate".into()))?;
    for part in iter {
        if part.height != first.height
            || part.width != first.width
            || part.classes != first.classes
            || part.alpha != first.alpha
        {
            return Err(Error::Config("cannot concatenate mismatched datasets".into()));
        }
        first.pixels.extend_from_slice(&part.pixels);
        first.labels.extend_from_slice(&part.labels);
    }
    Ok(first)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_validates_counts_and_range() {
        assert!(LabeledDataset::new("t".into(), 0.0, 2, 2, vec![0.0; 8], vec![0, 1], 2).is_ok());
        assert!(LabeledDataset::new("t".into(), 0.0, 2, 2, vec![0.0; 7], vec![0, 1], 2).is_err());
        assert!(LabeledDataset::new("t".into(), 0.0, 2, 2, vec![1.5; 8], vec![0, 1], 2).is_err());
        assert!(LabeledDataset::new("t".into(), 0.0, 2, 2, vec![0.0; 8], vec![0, 5], 2).is_err());
    }

    #[test]
    fn take_is_a_prefix() {
        let ds =
            LabeledDataset::new("t".into(), 0.0, 1, 2, vec![0.1, 0.2, 0.3, 0.4], vec![0, 1], 2)
                .unwrap();
        let one = ds.take(1);
        assert_eq!(one.len(), 1);
        assert_eq!(one.image(0), &[0.1, 0.2]);
        assert_eq!(ds.take(0).len(), 2);
        assert_eq!(ds.take(99).len(), 2);
    }
}
