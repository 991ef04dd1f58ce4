//! Uncertainty measures on posterior sample matrices.
//!
//! Two quantities are computed per input: the total predictive uncertainty
//! `H` (entropy of the mean class distribution across posterior samples) and
//! the epistemic uncertainty `I` (mutual information between parameters and
//! label, i.e. `H` minus the mean per-sample entropy). Both are in nats.
//!
//! `I` decomposes the prediction's uncertainty: it is large when individual
//! posterior samples are confident but disagree with each other, and zero
//! when all samples produce the same distribution. Jensen's inequality gives
//! `0 <= I <= H`; a pre-clamp value below `-1e-9` is treated as a broken
//! matrix, not float noise.
//!
//! All sums accumulate in `f64` regardless of the `f32` storage of the
//! sample matrices.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::posterior::{PosteriorKind, PosteriorSampleMatrix};

/// Probabilities below this are clamped before `ln` so that `0 * ln 0 = 0`.
const LN_CLAMP: f64 = 1e-12;

/// Largest tolerated negative mutual information before clamping to zero.
pub const MI_SLACK: f64 = 1e-9;

/// A point on the class simplex.
///
/// Entries are nonnegative and sum to one within `1e-6`; `new` rejects
/// anything else.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    probs: Vec<f64>,
}

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Config("probability vector must be nonempty".into()));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Config(format!("invalid probability {p}")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "probabilities sum to {sum}, not 1 within 1e-6"
            )));
        }
        Ok(Self { probs })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest entry, lowest index winning ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// `p * ln p` with the zero limit and the clamp applied.
#[inline]
fn xlnx(p: f64) -> f64 {
    p * p.clamp(LN_CLAMP, 1.0).ln()
}

fn entropy_of(probs: impl Iterator<Item = f64>) -> f64 {
    let mut acc = 0.0;
    for p in probs {
        acc += xlnx(p);
    }
    -acc
}

/// Shannon entropy of a class distribution, in nats.
///
/// `H(p) = -sum_c p_c ln p_c`, with `0 ln 0 = 0`. Lies in `[0, ln M]` for a
/// distribution over `M` classes.
pub fn entropy(p: &ProbabilityVector) -> f64 {
    entropy_of(p.as_slice().iter().copied())
}

/// Entropy of the mean distribution across posterior samples: the total
/// predictive uncertainty `H` for this input.
pub fn predictive_entropy(m: &PosteriorSampleMatrix) -> f64 {
    entropy_of(m.column_means().into_iter())
}

/// Mean entropy of the individual posterior-sample distributions: the
/// aleatoric part of the prediction's uncertainty.
pub fn expected_likelihood_entropy(m: &PosteriorSampleMatrix) -> f64 {
    let mut acc = 0.0;
    for row in m.rows() {
        acc += entropy_of(row.iter().copied());
    }
    acc / m.n_samples() as f64
}

/// Epistemic uncertainty `I = H - E[H(row)]`, clamped to zero when float
/// noise pushes it within `-1e-9` of zero.
///
/// Returns an internal-consistency error when the pre-clamp value falls
/// below `-1e-9`, which cannot happen for a valid sample matrix.
pub fn mutual_information(m: &PosteriorSampleMatrix) -> Result<f64> {
    let raw = predictive_entropy(m) - expected_likelihood_entropy(m);
    if raw < -MI_SLACK {
        return Err(Error::InternalConsistency { value: raw });
    }
    Ok(raw.max(0.0))
}

/// Per-sample uncertainty summary: both measures plus the prediction
/// outcome and the noise level of the evaluated input.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyRecord {
    pub sample_id: u64,
    pub alpha: f64,
    pub posterior: PosteriorKind,
    pub h_nat: f64,
    pub i_nat: f64,
    pub predicted: usize,
    pub truth: usize,
    pub correct: bool,
}

/// Bundles `H`, `I`, and the prediction outcome for one sample matrix.
///
/// The predicted class is the argmax of the mean distribution with
/// lowest-index tie-break.
pub fn uncertainty_record(
    m: &PosteriorSampleMatrix,
    true_class: usize,
    alpha: f64,
) -> Result<UncertaintyRecord> {
    assert!(
        true_class < m.n_classes(),
        "true class {} out of range for {} classes",
        true_class,
        m.n_classes()
    );
    let means = m.column_means();
    let mut predicted = 0;
    for (i, &p) in means.iter().enumerate().skip(1) {
        if p > means[predicted] {
            predicted = i;
        }
    }
    let h = entropy_of(means.into_iter());
    let i = mutual_information(m)?;
    Ok(UncertaintyRecord {
        sample_id: m.input_id(),
        alpha,
        posterior: m.kind(),
        h_nat: h,
        i_nat: i,
        predicted,
        truth: true_class,
        correct: predicted == true_class,
    })
}

pub const RECORDS_CSV_HEADER: &str = "sample_id,alpha,posterior,H_nat,I_nat,pred,true,correct";

/// Canonical fixed-point rendering of a noise level, used in CSV columns and
/// file names so that identical runs emit identical bytes.
pub fn format_alpha(alpha: f64) -> String {
    let s = format!("{alpha:.4}");
    // normalize -0.0000 to 0.0000
    if s == "-0.0000" {
        "0.0000".to_string()
    } else {
        s
    }
}

/// Writes records as CSV with the fixed header.
pub fn write_records_csv<W: Write>(mut w: W, records: &[UncertaintyRecord]) -> Result<()> {
    writeln!(w, "{RECORDS_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.sample_id,
            format_alpha(r.alpha),
            r.posterior,
            r.h_nat,
            r.i_nat,
            r.predicted,
            r.truth,
            r.correct
        )?;
    }
    Ok(())
}

/// Reads a records CSV produced by [`write_records_csv`]. Parse failures
/// carry the 1-based line number.
pub fn read_records_csv(path: &Path) -> Result<Vec<UncertaintyRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    let fail = |line: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: line as u64,
        message,
    };
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if idx == 0 {
            if line.trim() != RECORDS_CSV_HEADER {
                return Err(fail(lineno, format!("bad header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(fail(lineno, format!("expected 8 fields, got {}", fields.len())));
        }
        let parse_f64 = |s: &str, what: &str| {
            s.parse::<f64>()
                .map_err(|e| fail(lineno, format!("bad {what} {s:?}: {e}")))
        };
        let parse_usize = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|e| fail(lineno, format!("bad {what} {s:?}: {e}")))
        };
        let posterior = match fields[2] {
            "ensemble" => PosteriorKind::Ensemble,
            "dropout" => PosteriorKind::Dropout,
            other => return Err(fail(lineno, format!("bad posterior kind {other:?}"))),
        };
        let correct = match fields[7] {
            "true" => true,
            "false" => false,
            other => return Err(fail(lineno, format!("bad correct flag {other:?}"))),
        };
        records.push(UncertaintyRecord {
            sample_id: fields[0]
                .parse::<u64>()
                .map_err(|e| fail(lineno, format!("bad sample_id {:?}: {e}", fields[0])))?,
            alpha: parse_f64(fields[1], "alpha")?,
            posterior,
            h_nat: parse_f64(fields[3], "H_nat")?,
            i_nat: parse_f64(fields[4], "I_nat")?,
            predicted: parse_usize(fields[5], "pred")?,
            truth: parse_usize(fields[6], "true")?,
            correct,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::PosteriorSampleMatrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: &[&[f64]]) -> PosteriorSampleMatrix {
        let cols = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        PosteriorSampleMatrix::new(flat, rows.len(), cols, 0, PosteriorKind::Ensemble).unwrap()
    }

    /// Naive high-precision reference: materializes every term explicitly.
    mod reference {
        pub fn entropy(p: &[f64]) -> f64 {
            let mut terms = Vec::with_capacity(p.len());
            for &v in p {
                if v > 0.0 {
                    terms.push(-v * v.clamp(1e-12, 1.0).ln());
                } else {
                    terms.push(0.0);
                }
            }
            terms.into_iter().sum()
        }

        pub fn column_means(rows: &[Vec<f64>]) -> Vec<f64> {
            let n = rows.len() as f64;
            let m = rows[0].len();
            let mut out = vec![0.0; m];
            for row in rows {
                for (o, &v) in out.iter_mut().zip(row.iter()) {
                    *o += v;
                }
            }
            for o in &mut out {
                *o /= n;
            }
            out
        }

        pub fn predictive_entropy(rows: &[Vec<f64>]) -> f64 {
            entropy(&column_means(rows))
        }

        pub fn expected_likelihood_entropy(rows: &[Vec<f64>]) -> f64 {
            let terms: Vec<f64> = rows.iter().map(|r| entropy(r)).collect();
            terms.iter().sum::<f64>() / rows.len() as f64
        }

        pub fn mutual_information(rows: &[Vec<f64>]) -> f64 {
            predictive_entropy(rows) - expected_likelihood_entropy(rows)
        }
    }

    fn rows_f64(m: &PosteriorSampleMatrix) -> Vec<Vec<f64>> {
        m.rows().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn entropy_uniform_is_ln_m() {
        let p = ProbabilityVector::new(vec![0.1; 10]).unwrap();
        assert_abs_diff_eq!(entropy(&p), 10.0_f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(entropy(&p), 2.302585, epsilon = 1e-6);
    }

    #[test]
    fn entropy_one_hot_is_zero() {
        let p = ProbabilityVector::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(entropy(&p), 0.0);
    }

    #[test]
    fn entropy_two_class_example() {
        let p = ProbabilityVector::new(vec![0.7, 0.3]).unwrap();
        let expected = reference::entropy(&[0.7, 0.3]);
        assert_abs_diff_eq!(entropy(&p), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(entropy(&p), 0.610864, epsilon = 1e-6);
    }

    #[test]
    fn predictive_entropy_disagreeing_onehots() {
        let m = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_abs_diff_eq!(predictive_entropy(&m), 2.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn predictive_entropy_identical_onehots() {
        let m = matrix(&[&[0.0, 1.0], &[0.0, 1.0]]);
        assert_eq!(predictive_entropy(&m), 0.0);
    }

    #[test]
    fn predictive_entropy_mean_example() {
        let m = matrix(&[&[0.8, 0.2], &[0.6, 0.4]]);
        assert_abs_diff_eq!(predictive_entropy(&m), 0.610864, epsilon = 1e-6);
    }

    #[test]
    fn expected_likelihood_entropy_examples() {
        let sharp = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(expected_likelihood_entropy(&sharp), 0.0);

        let uniform = matrix(&[&[0.25; 4], &[0.25; 4]]);
        assert_abs_diff_eq!(
            expected_likelihood_entropy(&uniform),
            4.0_f64.ln(),
            epsilon = 1e-12
        );

        let mixed = matrix(&[&[0.8, 0.2], &[0.6, 0.4]]);
        assert_abs_diff_eq!(expected_likelihood_entropy(&mixed), 0.586707, epsilon = 1e-6);
    }

    #[test]
    fn mutual_information_examples() {
        let sharp = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_abs_diff_eq!(
            mutual_information(&sharp).unwrap(),
            2.0_f64.ln(),
            epsilon = 1e-12
        );

        let identical = matrix(&[&[0.3, 0.7], &[0.3, 0.7], &[0.3, 0.7]]);
        assert_abs_diff_eq!(mutual_information(&identical).unwrap(), 0.0, epsilon = 1e-12);

        let mixed = matrix(&[&[0.8, 0.2], &[0.6, 0.4]]);
        assert_abs_diff_eq!(mutual_information(&mixed).unwrap(), 0.024157, epsilon = 1e-6);
    }

    #[test]
    fn single_sample_mutual_information_is_exactly_zero() {
        let m = matrix(&[&[0.2, 0.5, 0.3]]);
        assert_eq!(mutual_information(&m).unwrap(), 0.0);
    }

    fn random_matrix(rng: &mut ChaCha8Rng) -> PosteriorSampleMatrix {
        let n = rng.gen_range(1..=64);
        let m = rng.gen_range(2..=10);
        let mut flat = Vec::with_capacity(n * m);
        for _ in 0..n {
            // f32-precision values, as the network would produce
            let mut row: Vec<f64> = (0..m).map(|_| (rng.gen::<f32>() + 1e-6) as f64).collect();
            // occasionally sharpen a row to stress near-one-hot cases
            if rng.gen_bool(0.2) {
                let k = rng.gen_range(0..m);
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if j == k { 1.0 } else { 0.0 };
                }
            }
            let sum: f32 = row.iter().map(|&v| v as f32).sum();
            for v in &mut row {
                *v = (*v as f32 / sum) as f64;
            }
            flat.extend_from_slice(&row);
        }
        PosteriorSampleMatrix::new(flat, n, m, 0, PosteriorKind::Dropout).unwrap()
    }

    #[test]
    fn matches_naive_reference_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let m = random_matrix(&mut rng);
            let rows = rows_f64(&m);
            assert_abs_diff_eq!(
                predictive_entropy(&m),
                reference::predictive_entropy(&rows),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                expected_likelihood_entropy(&m),
                reference::expected_likelihood_entropy(&rows),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                mutual_information(&m).unwrap(),
                reference::mutual_information(&rows).max(0.0),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn bound_holds_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20_000 {
            let m = random_matrix(&mut rng);
            let h = predictive_entropy(&m);
            let i = mutual_information(&m).unwrap();
            let ln_m = (m.n_classes() as f64).ln();
            assert!(i >= 0.0);
            assert!(i <= h + MI_SLACK, "I={i} > H={h}");
            assert!((0.0..=ln_m + 1e-9).contains(&h), "H={h} outside [0, ln M]");
        }
    }

    #[test]
    fn record_sharp_consensus() {
        let m = matrix(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let r = uncertainty_record(&m, 0, 0.0).unwrap();
        assert!(r.h_nat.abs() < 1e-9);
        assert!(r.i_nat.abs() < 1e-9);
        assert!(r.correct);
        assert_eq!(r.predicted, 0);
    }

    #[test]
    fn record_tie_breaks_to_lowest_index() {
        let m = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = uncertainty_record(&m, 0, 0.0).unwrap();
        assert_eq!(r.predicted, 0);
        assert!(r.correct);
        assert_abs_diff_eq!(r.h_nat, 2.0_f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.i_nat, 2.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn record_incorrect_prediction() {
        let m = matrix(&[&[0.8, 0.2], &[0.6, 0.4]]);
        let r = uncertainty_record(&m, 1, 0.09).unwrap();
        assert_eq!(r.predicted, 0);
        assert!(!r.correct);
        assert_eq!(r.alpha, 0.09);
    }

    #[test]
    fn records_csv_round_trip() {
        let m = matrix(&[&[0.8, 0.2], &[0.6, 0.4]]);
        let records = vec![
            uncertainty_record(&m, 0, 0.0).unwrap(),
            uncertainty_record(&m, 1, 0.09).unwrap(),
        ];
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.csv");
        std::fs::write(&path, &buf).unwrap();
        let back = read_records_csv(&path).unwrap();
        assert_eq!(records.len(), back.len());
        for (a, b) in records.iter().zip(back.iter()) {
            assert_eq!(a.sample_id, b.sample_id);
            assert_eq!(a.h_nat, b.h_nat);
            assert_eq!(a.i_nat, b.i_nat);
            assert_eq!(a.correct, b.correct);
        }
    }

    #[test]
    fn records_csv_parse_error_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            format!("{RECORDS_CSV_HEADER}\n0,0.0000,ensemble,0.1,0.05,1,1,true\nnot,a,row\n"),
        )
        .unwrap();
        match read_records_csv(&path) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn mi_invariant_under_row_and_class_permutation(
            seed in 0u64..5000,
            rot in 1usize..5,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_matrix(&mut rng);
            let n = m.n_samples();
            let c = m.n_classes();
            let base = mutual_information(&m).unwrap();

            // reverse the rows
            let mut rev: Vec<f64> = Vec::with_capacity(n * c);
            for i in (0..n).rev() {
                rev.extend_from_slice(m.row(i));
            }
            let m_rev = PosteriorSampleMatrix::new(rev, n, c, 0, m.kind()).unwrap();
            prop_assert!((mutual_information(&m_rev).unwrap() - base).abs() < 1e-12);

            // rotate the class labels of every row by the same offset
            let k = rot % c;
            let mut rolled: Vec<f64> = Vec::with_capacity(n * c);
            for i in 0..n {
                let row = m.row(i);
                for j in 0..c {
                    rolled.push(row[(j + k) % c]);
                }
            }
            let m_rolled = PosteriorSampleMatrix::new(rolled, n, c, 0, m.kind()).unwrap();
            prop_assert!((mutual_information(&m_rolled).unwrap() - base).abs() < 1e-12);
        }
    }
}
