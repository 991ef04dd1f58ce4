//! Impulse-noise distributional shift.
//!
//! A noise level `alpha` sets `floor(|alpha| * n_pixels)` distinct pixels
//! per image to the maximum value 1.0 ("salted", `alpha > 0`) or to 0.0
//! ("peppered", `alpha < 0`). Each image's pixel choice is seeded by
//! `seed ^ image_index`, so corruption does not depend on dataset order or
//! on prefix subsetting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};

/// Largest |alpha| accepted; the shift grid spans `[-0.3, 0.3]`.
pub const ALPHA_MAX: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(alpha: f64, seed: u64) -> Result<Self> {
        if !alpha.is_finite() || alpha.abs() > ALPHA_MAX + 1e-12 {
            return Err(Error::Config(format!(
                "alpha {alpha} outside [-{ALPHA_MAX}, {ALPHA_MAX}]"
            )));
        }
        Ok(Self { alpha, seed })
    }
}

/// Returns a corrupted copy of `ds`. `alpha == 0` returns an identical
/// copy; labels are never touched.
pub fn apply_impulse_noise(ds: &LabeledDataset, spec: &NoiseSpec) -> LabeledDataset {
    let mut out = ds.clone();
    if spec.alpha == 0.0 {
        return out;
    }
    let n_pixels = ds.pixels_per_image();
    let k = (spec.alpha.abs() * n_pixels as f64).floor() as usize;
    let value = if spec.alpha > 0.0 { 1.0f32 } else { 0.0f32 };
    let per_image = out.pixels_per_image();
    for i in 0..out.len() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ i as u64);
        let chosen = rand::seq::index::sample(&mut rng, n_pixels, k);
        let image = &mut out.pixels_mut()[i * per_image..(i + 1) * per_image];
        for p in chosen {
            image[p] = value;
        }
    }
    set_alpha(&mut out, spec.alpha);
    out
}

fn set_alpha(ds: &mut LabeledDataset, alpha: f64) {
    // reconstruct through the validated constructor to keep invariants in
    // one place
    let rebuilt = LabeledDataset::new(
        ds.name().to_string(),
        alpha,
        ds.height(),
        ds.width(),
        ds.image_block(0, ds.len()).to_vec(),
        ds.labels().to_vec(),
        ds.classes(),
    )
    .expect("corruption preserves dataset invariants");
    *ds = rebuilt;
}

/// `n` evenly spaced noise levels from -0.3 to 0.3 inclusive.
pub fn alpha_grid(n: usize) -> Vec<f64> {
    assert!(n >= 2, "alpha grid needs at least two points");
    (0..n)
        .map(|i| -ALPHA_MAX + (i as f64 * 2.0 * ALPHA_MAX) / (n - 1) as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_dataset(value: f32, side: usize, count: usize) -> LabeledDataset {
        LabeledDataset::new(
            "flat".into(),
            0.0,
            side,
            side,
            vec![value; side * side * count],
            vec![0; count],
            10,
        )
        .unwrap()
    }

    #[test]
    fn alpha_zero_is_identity() {
        let ds = flat_dataset(0.25, 8, 3);
        let spec = NoiseSpec::new(0.0, 7).unwrap();
        assert_eq!(apply_impulse_noise(&ds, &spec), ds);
    }

    #[test]
    fn salt_count_is_floor_of_alpha_pixels() {
        // floor(0.09 * 784) = 70
        let ds = flat_dataset(0.0, 28, 4);
        let spec = NoiseSpec::new(0.09, 42).unwrap();
        let noisy = apply_impulse_noise(&ds, &spec);
        for i in 0..noisy.len() {
            let ones = noisy.image(i).iter().filter(|&&p| p == 1.0).count();
            assert_eq!(ones, 70);
        }
        assert_eq!(noisy.alpha(), 0.09);
        assert_eq!(noisy.labels(), ds.labels());
    }

    #[test]
    fn pepper_count_is_floor_of_alpha_pixels() {
        // floor(0.09 * 1024) = 92
        let ds = flat_dataset(1.0, 32, 4);
        let spec = NoiseSpec::new(-0.09, 42).unwrap();
        let noisy = apply_impulse_noise(&ds, &spec);
        for i in 0..noisy.len() {
            let zeros = noisy.image(i).iter().filter(|&&p| p == 0.0).count();
            assert_eq!(zeros, 92);
        }
    }

    #[test]
    fn corruption_is_deterministic_and_subset_stable() {
        let ds = flat_dataset(0.5, 16, 6);
        let spec = NoiseSpec::new(0.2, 11).unwrap();
        let a = apply_impulse_noise(&ds, &spec);
        let b = apply_impulse_noise(&ds, &spec);
        assert_eq!(a, b);
        // corrupting a prefix subset gives the same images
        let sub = apply_impulse_noise(&ds.take(3), &spec);
        for i in 0..3 {
            assert_eq!(sub.image(i), a.image(i));
        }
    }

    #[test]
    fn images_get_distinct_noise() {
        let ds = flat_dataset(0.0, 16, 2);
        let spec = NoiseSpec::new(0.1, 3).unwrap();
        let noisy = apply_impulse_noise(&ds, &spec);
        assert_ne!(noisy.image(0), noisy.image(1));
    }

    #[test]
    fn alpha_outside_range_is_rejected() {
        assert!(NoiseSpec::new(0.31, 0).is_err());
        assert!(NoiseSpec::new(-0.5, 0).is_err());
        assert!(NoiseSpec::new(f64::NAN, 0).is_err());
        assert!(NoiseSpec::new(0.3, 0).is_ok());
        assert!(NoiseSpec::new(-0.3, 0).is_ok());
    }

    #[test]
    fn alpha_grid_examples() {
        assert_eq!(alpha_grid(2), vec![-0.3, 0.3]);
        let three = alpha_grid(3);
        assert_eq!(three.len(), 3);
        assert_eq!(three[0], -0.3);
        assert!(three[1].abs() < 1e-15);
        assert_eq!(three[2], 0.3);

        let grid = alpha_grid(21);
        assert_eq!(grid.len(), 21);
        let contains = |v: f64| grid.iter().any(|&a| (a - v).abs() < 1e-12);
        assert!(contains(-0.27));
        assert!(contains(0.0));
        assert!(contains(0.09));
        assert!(contains(0.27));
        assert_eq!(grid[0], -0.3);
        assert_eq!(grid[20], 0.3);
    }
}
