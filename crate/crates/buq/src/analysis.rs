//! Aggregation of per-sample uncertainty records: joint (H, I) histograms,
//! accuracy-conditioned maps, moment tables, and shift deltas.

use std::io::Write;

use crate::error::{Error, Result};
use crate::posterior::PosteriorKind;
use crate::uq::{UncertaintyRecord, MI_SLACK};

/// Binned counts over the (H, I) plane, both axes spanning `[0, ln M]`,
/// plus per-bin correct-prediction counts.
///
/// Values at the range boundary clamp into the edge bins. Accumulation is
/// order-independent and merging is associative, so shards can own private
/// histograms and merge at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram2D {
    bins_h: usize,
    bins_i: usize,
    /// Upper edge of both axes: `ln(classes)`.
    range: f64,
    counts: Vec<u64>,
    correct_counts: Vec<u64>,
}

impl JointHistogram2D {
    /// Default bin count per axis.
    pub const DEFAULT_BINS: usize = 50;

    pub fn new(bins_h: usize, bins_i: usize, classes: usize) -> Self {
        assert!(bins_h >= 1 && bins_i >= 1, "need at least one bin per axis");
        assert!(classes >= 2, "need at least two classes");
        Self {
            bins_h,
            bins_i,
            range: (classes as f64).ln(),
            counts: vec![0; bins_h * bins_i],
            correct_counts: vec![0; bins_h * bins_i],
        }
    }

    pub fn bins_h(&self) -> usize {
        self.bins_h
    }

    pub fn bins_i(&self) -> usize {
        self.bins_i
    }

    /// Upper edge of both axes (`ln M`).
    pub fn range(&self) -> f64 {
        self.range
    }

    fn bin_index(&self, value: f64, bins: usize) -> usize {
        let w = self.range / bins as f64;
        ((value / w) as usize).min(bins - 1)
    }

    /// Bin coordinates `(bin_h, bin_i)` a record falls into.
    pub fn bin_of(&self, h: f64, i: f64) -> (usize, usize) {
        (self.bin_index(h, self.bins_h), self.bin_index(i, self.bins_i))
    }

    /// Adds one record.
    ///
    /// Panics when H or I is non-finite, outside `[0, ln M]` beyond float
    /// slack, or violates `I <= H + 1e-9`: such a record means the pipeline
    /// upstream is broken, and aborting here keeps the bound guarded
    /// end to end.
    pub fn accumulate(&mut self, record: &UncertaintyRecord) {
        assert!(
            record.h_nat.is_finite() && record.i_nat.is_finite(),
            "sample {}: non-finite uncertainty H={} I={}",
            record.sample_id,
            record.h_nat,
            record.i_nat
        );
        assert!(
            record.i_nat <= record.h_nat + MI_SLACK,
            "sample {}: epistemic uncertainty {} exceeds total {}",
            record.sample_id,
            record.i_nat,
            record.h_nat
        );
        assert!(
            (-MI_SLACK..=self.range + MI_SLACK).contains(&record.h_nat) && record.i_nat >= 0.0,
            "sample {}: H={} I={} outside [0, ln M = {}]",
            record.sample_id,
            record.h_nat,
            record.i_nat,
            self.range
        );
        let (bh, bi) = self.bin_of(record.h_nat, record.i_nat);
        let at = bh * self.bins_i + bi;
        self.counts[at] += 1;
        if record.correct {
            self.correct_counts[at] += 1;
        }
    }

    pub fn count_at(&self, bin_h: usize, bin_i: usize) -> u64 {
        self.counts[bin_h * self.bins_i + bin_i]
    }

    pub fn correct_at(&self, bin_h: usize, bin_i: usize) -> u64 {
        self.correct_counts[bin_h * self.bins_i + bin_i]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total_correct(&self) -> u64 {
        self.correct_counts.iter().sum()
    }

    /// Merges another histogram of identical geometry into this one.
    pub fn merge(&mut self, other: &JointHistogram2D) -> Result<()> {
        if self.bins_h != other.bins_h || self.bins_i != other.bins_i || self.range != other.range
        {
            return Err(Error::KeyMismatch {
                expected: format!("{}x{} histogram over [0, {}]", self.bins_h, self.bins_i, self.range),
                got: format!("{}x{} over [0, {}]", other.bins_h, other.bins_i, other.range),
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.correct_counts.iter_mut().zip(&other.correct_counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-bin accuracy where the bin holds at least `min_count` records,
    /// `None` elsewhere. Indexed `[bin_h][bin_i]` flattened row-major.
    pub fn accuracy_map(&self, min_count: u64) -> Vec<Option<f64>> {
        assert!(min_count >= 1, "min_count must be >= 1");
        self.counts
            .iter()
            .zip(&self.correct_counts)
            .map(|(&n, &c)| {
                if n >= min_count {
                    Some(c as f64 / n as f64)
                } else {
                    None
                }
            })
            .collect()
    }

    /// CSV rows `bin_H_low,bin_I_low,count,correct`, skipping empty bins.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "bin_H_low,bin_I_low,count,correct")?;
        let wh = self.range / self.bins_h as f64;
        let wi = self.range / self.bins_i as f64;
        for bh in 0..self.bins_h {
            for bi in 0..self.bins_i {
                let count = self.count_at(bh, bi);
                if count == 0 {
                    continue;
                }
                writeln!(
                    w,
                    "{},{},{},{}",
                    bh as f64 * wh,
                    bi as f64 * wi,
                    count,
                    self.correct_at(bh, bi)
                )?;
            }
        }
        Ok(())
    }

    /// Count heatmap as 8-bit grayscale, log-scaled, `bins_i` rows tall
    /// with the I axis pointing up.
    pub fn count_heatmap(&self) -> (usize, usize, Vec<u8>) {
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let mut pixels = vec![0u8; self.bins_h * self.bins_i];
        for bh in 0..self.bins_h {
            for bi in 0..self.bins_i {
                let v = self.count_at(bh, bi) as f64;
                let scaled = ((1.0 + v).ln() / (1.0 + max).ln() * 255.0).round() as u8;
                // row 0 of the image is the highest I bin
                let row = self.bins_i - 1 - bi;
                pixels[row * self.bins_h + bh] = scaled;
            }
        }
        (self.bins_h, self.bins_i, pixels)
    }

    /// Accuracy heatmap as 8-bit grayscale (accuracy 0 -> 0, 1 -> 255);
    /// bins below `min_count` render black.
    pub fn accuracy_heatmap(&self, min_count: u64) -> (usize, usize, Vec<u8>) {
        let map = self.accuracy_map(min_count);
        let mut pixels = vec![0u8; self.bins_h * self.bins_i];
        for bh in 0..self.bins_h {
            for bi in 0..self.bins_i {
                if let Some(acc) = map[bh * self.bins_i + bi] {
                    let row = self.bins_i - 1 - bi;
                    pixels[row * self.bins_h + bh] = (acc * 255.0).round() as u8;
                }
            }
        }
        (self.bins_h, self.bins_i, pixels)
    }
}

/// One row of the moments table: means and standard deviations of H and I
/// plus accuracy, keyed by architecture, posterior kind and noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub arch: String,
    pub posterior: PosteriorKind,
    pub alpha: f64,
    pub mean_h: f64,
    pub std_h: f64,
    pub mean_i: f64,
    pub std_i: f64,
    pub accuracy: f64,
    pub count: usize,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

/// Sample mean and (n-1)-denominator standard deviation of H and I over a
/// homogeneous batch of records. Needs at least two records, all sharing
/// one posterior kind and noise level.
pub fn moments(arch: &str, records: &[UncertaintyRecord]) -> Result<MomentRow> {
    if records.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: records.len(),
        });
    }
    let first = &records[0];
    if let Some(bad) = records
        .iter()
        .find(|r| r.posterior != first.posterior || r.alpha != first.alpha)
    {
        return Err(Error::KeyMismatch {
            expected: format!("posterior={} alpha={}", first.posterior, first.alpha),
            got: format!("posterior={} alpha={}", bad.posterior, bad.alpha),
        });
    }
    let n = records.len();
    let (mean_h, std_h) = mean_std(records.iter().map(|r| r.h_nat), n);
    let (mean_i, std_i) = mean_std(records.iter().map(|r| r.i_nat), n);
    let correct = records.iter().filter(|r| r.correct).count();
    Ok(MomentRow {
        arch: arch.to_string(),
        posterior: first.posterior,
        alpha: first.alpha,
        mean_h,
        std_h,
        mean_i,
        std_i,
        accuracy: correct as f64 / n as f64,
        count: n,
    })
}

/// Change in mean uncertainty (and accuracy) between two moment rows of
/// the same architecture and posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftDelta {
    pub d_mean_h: f64,
    pub d_mean_i: f64,
    pub d_accuracy: f64,
}

pub fn shift_delta(base: &MomentRow, shifted: &MomentRow) -> Result<ShiftDelta> {
    if base.arch != shifted.arch || base.posterior != shifted.posterior {
        return Err(Error::KeyMismatch {
            expected: format!("{}/{}", base.arch, base.posterior),
            got: format!("{}/{}", shifted.arch, shifted.posterior),
        });
    }
    Ok(ShiftDelta {
        d_mean_h: shifted.mean_h - base.mean_h,
        d_mean_i: shifted.mean_i - base.mean_i,
        d_accuracy: shifted.accuracy - base.accuracy,
    })
}

/// One histogram over the concatenation of several record groups
/// (typically one group per noise level).
pub fn union_over_alphas<'a>(
    groups: impl IntoIterator<Item = &'a [UncertaintyRecord]>,
    bins: usize,
    classes: usize,
) -> JointHistogram2D {
    let mut hist = JointHistogram2D::new(bins, bins, classes);
    for group in groups {
        for record in group {
            hist.accumulate(record);
        }
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn record(h: f64, i: f64, correct: bool) -> UncertaintyRecord {
        UncertaintyRecord {
            sample_id: 0,
            alpha: 0.0,
            posterior: PosteriorKind::Ensemble,
            h_nat: h,
            i_nat: i,
            predicted: 0,
            truth: if correct { 0 } else { 1 },
            correct,
        }
    }

    #[test]
    fn origin_lands_in_bin_zero() {
        let mut hist = JointHistogram2D::new(10, 10, 10);
        hist.accumulate(&record(0.0, 0.0, true));
        assert_eq!(hist.count_at(0, 0), 1);
        assert_eq!(hist.correct_at(0, 0), 1);
    }

    #[test]
    fn boundary_values_clamp_to_edge_bins() {
        let mut hist = JointHistogram2D::new(10, 10, 10);
        let ln10 = 10.0f64.ln();
        hist.accumulate(&record(ln10, 0.0, false));
        assert_eq!(hist.count_at(9, 0), 1);
        assert_eq!(hist.correct_at(9, 0), 0);
    }

    #[test]
    fn merge_equals_union_accumulation() {
        let records: Vec<UncertaintyRecord> = (0..100)
            .map(|k| {
                let h = (k as f64 / 100.0) * 10.0f64.ln();
                record(h, h * 0.5, k % 3 == 0)
            })
            .collect();
        let mut left = JointHistogram2D::new(20, 20, 10);
        let mut right = JointHistogram2D::new(20, 20, 10);
        let mut whole = JointHistogram2D::new(20, 20, 10);
        for (k, r) in records.iter().enumerate() {
            whole.accumulate(r);
            if k % 2 == 0 {
                left.accumulate(r);
            } else {
                right.accumulate(r);
            }
        }
        left.merge(&right).unwrap();
        assert_eq!(left, whole);
        assert_eq!(whole.total(), 100);
    }

    #[test]
    fn merge_rejects_mismatched_geometry() {
        let mut a = JointHistogram2D::new(10, 10, 10);
        let b = JointHistogram2D::new(10, 12, 10);
        assert!(a.merge(&b).is_err());
    }

    #[test]
    #[should_panic(expected = "exceeds total")]
    fn bound_violation_aborts() {
        let mut hist = JointHistogram2D::new(10, 10, 10);
        hist.accumulate(&record(0.1, 0.2, true));
    }

    #[test]
    #[should_panic(expected = "non-finite")]
    fn non_finite_aborts() {
        let mut hist = JointHistogram2D::new(10, 10, 10);
        hist.accumulate(&record(f64::NAN, 0.0, true));
    }

    #[test]
    fn accuracy_map_thresholds_on_count() {
        let mut hist = JointHistogram2D::new(2, 2, 10);
        for k in 0..10 {
            hist.accumulate(&record(0.0, 0.0, k < 9));
        }
        hist.accumulate(&record(2.0, 0.0, true));
        hist.accumulate(&record(2.0, 0.0, false));
        let map = hist.accuracy_map(5);
        assert_abs_diff_eq!(map[0].unwrap(), 0.9, epsilon = 1e-12);
        assert!(map[2].is_none(), "2-count bin below min_count 5");
    }

    #[test]
    fn all_correct_histogram_has_unit_accuracy() {
        let mut hist = JointHistogram2D::new(4, 4, 10);
        for k in 0..40 {
            hist.accumulate(&record((k as f64 / 40.0) * 2.0, 0.1_f64.min(k as f64 / 40.0), true));
        }
        for acc in hist.accuracy_map(1).into_iter().flatten() {
            assert_eq!(acc, 1.0);
        }
    }

    #[test]
    fn accuracy_map_conserves_correct_counts() {
        let mut hist = JointHistogram2D::new(8, 8, 10);
        let mut total_correct = 0u64;
        for k in 0..500u64 {
            let h = (k as f64 % 97.0) / 97.0 * 10.0f64.ln();
            let correct = k % 7 != 0;
            total_correct += correct as u64;
            hist.accumulate(&record(h, h * 0.3, correct));
        }
        let map = hist.accuracy_map(1);
        let mut recovered = 0.0;
        for bh in 0..hist.bins_h() {
            for bi in 0..hist.bins_i() {
                if let Some(acc) = map[bh * hist.bins_i() + bi] {
                    recovered += acc * hist.count_at(bh, bi) as f64;
                }
            }
        }
        assert_eq!(recovered.round() as u64, total_correct);
        assert_eq!(hist.total_correct(), total_correct);
    }

    #[test]
    fn moments_two_point_example() {
        let records = vec![record(0.2, 0.1, true), record(0.4, 0.1, true)];
        let row = moments("dense", &records).unwrap();
        assert_abs_diff_eq!(row.mean_h, 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(row.std_h, 0.1414, epsilon = 1e-4);
        assert_eq!(row.accuracy, 1.0);
        assert_eq!(row.count, 2);
    }

    #[test]
    fn moments_requires_two_records() {
        let records = vec![record(0.2, 0.1, true)];
        match moments("dense", &records) {
            Err(Error::InsufficientData { needed: 2, got: 1 }) => {}
            other => panic!("expected insufficient data, got {other:?}"),
        }
    }

    #[test]
    fn moments_rejects_mixed_groups() {
        let mut records = vec![record(0.2, 0.1, true), record(0.4, 0.1, true)];
        records[1].alpha = 0.09;
        assert!(moments("dense", &records).is_err());
    }

    #[test]
    fn shift_delta_examples() {
        let base = moments("dense", &[record(0.2, 0.1, true), record(0.4, 0.1, true)]).unwrap();
        let same = shift_delta(&base, &base).unwrap();
        assert_eq!(same.d_mean_h, 0.0);
        assert_eq!(same.d_mean_i, 0.0);

        let mut shifted_records = vec![record(0.5, 0.2, true), record(0.7, 0.3, false)];
        shifted_records.iter_mut().for_each(|r| r.alpha = 0.09);
        let shifted = moments("dense", &shifted_records).unwrap();
        let delta = shift_delta(&base, &shifted).unwrap();
        assert!(delta.d_mean_h > 0.0);
        assert!(delta.d_mean_i > 0.0);
        assert_abs_diff_eq!(delta.d_accuracy, -0.5, epsilon = 1e-12);

        let other = MomentRow {
            arch: "cnn".into(),
            ..shifted
        };
        assert!(shift_delta(&base, &other).is_err());
    }

    #[test]
    fn union_is_count_conserving() {
        let group_a: Vec<UncertaintyRecord> = (0..30).map(|_| record(0.1, 0.05, true)).collect();
        let group_b: Vec<UncertaintyRecord> = (0..50).map(|_| record(1.5, 0.7, false)).collect();
        let union = union_over_alphas([&group_a[..], &group_b[..]], 10, 10);
        assert_eq!(union.total(), 80);
        assert_eq!(union.total_correct(), 30);

        let single = union_over_alphas([&group_a[..]], 10, 10);
        let mut direct = JointHistogram2D::new(10, 10, 10);
        for r in &group_a {
            direct.accumulate(r);
        }
        assert_eq!(single, direct);
    }
}
