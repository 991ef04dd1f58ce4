//! Approximate parameter posteriors: deep ensembles and Monte-Carlo dropout.
//!
//! Both produce, per input, an N x M matrix of class probabilities whose
//! rows play the role of posterior parameter samples. The ensemble draws
//! rows from independently initialized trainings; the dropout posterior
//! draws them as stochastic forward passes of a single model trained with
//! dropout. Row `i` of a dropout matrix always uses seed `base_seed + i`,
//! so matrices are reproducible no matter how evaluation is batched or
//! parallelized.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{train, Architecture, DropoutMode, ModelParams, TrainConfig};
use crate::tensor::TensorF32;
use crate::uq::ProbabilityVector;

/// Which posterior approximation produced a sample matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PosteriorKind {
    Ensemble,
    Dropout,
}

impl fmt::Display for PosteriorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PosteriorKind::Ensemble => write!(f, "ensemble"),
            PosteriorKind::Dropout => write!(f, "dropout"),
        }
    }
}

impl std::str::FromStr for PosteriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ensemble" => Ok(PosteriorKind::Ensemble),
            "dropout" => Ok(PosteriorKind::Dropout),
            other => Err(Error::Config(format!(
                "unknown posterior kind {other:?} (expected ensemble or dropout)"
            ))),
        }
    }
}

/// N x M class probabilities for one input, row per posterior sample.
///
/// Rows are renormalized in f64 at construction, so the stored rows sum to
/// one at machine precision and downstream entropies respect their bounds
/// with ~1e-15 margin rather than the 1e-6 slack of the raw input.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSampleMatrix {
    probs: Vec<f64>,
    n: usize,
    m: usize,
    input_id: u64,
    kind: PosteriorKind,
}

impl PosteriorSampleMatrix {
    /// Validates that every row is a distribution (entries in `[0, 1]`,
    /// sums within `1e-6` of one), then renormalizes each row exactly.
    pub fn new(
        mut probs: Vec<f64>,
        n: usize,
        m: usize,
        input_id: u64,
        kind: PosteriorKind,
    ) -> Result<Self> {
        if n == 0 || m == 0 || probs.len() != n * m {
            return Err(Error::Config(format!(
                "matrix of {} values cannot be {n} x {m}",
                probs.len()
            )));
        }
        for (i, row) in probs.chunks_exact_mut(m).enumerate() {
            let mut sum = 0.0f64;
            for &p in row.iter() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Config(format!("row {i}: probability {p} outside [0, 1]")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::Config(format!("row {i} sums to {sum}, not 1 within 1e-6")));
            }
            if sum != 1.0 {
                for p in row.iter_mut() {
                    *p /= sum;
                }
            }
        }
        Ok(Self {
            probs,
            n,
            m,
            input_id,
            kind,
        })
    }

    /// Builds from f32 probabilities (the network's native output).
    pub fn from_f32(
        probs: &[f32],
        n: usize,
        m: usize,
        input_id: u64,
        kind: PosteriorKind,
    ) -> Result<Self> {
        Self::new(probs.iter().map(|&p| p as f64).collect(), n, m, input_id, kind)
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    pub fn n_classes(&self) -> usize {
        self.m
    }

    pub fn input_id(&self) -> u64 {
        self.input_id
    }

    pub fn kind(&self) -> PosteriorKind {
        self.kind
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks_exact(self.m)
    }

    /// Column means accumulated in f64.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0f64; self.m];
        for row in self.rows() {
            for (acc, &p) in means.iter_mut().zip(row) {
                *acc += p;
            }
        }
        let inv = 1.0 / self.n as f64;
        for acc in &mut means {
            *acc *= inv;
        }
        means
    }
}

/// Mean class distribution across posterior samples.
pub fn predictive_mean(m: &PosteriorSampleMatrix) -> ProbabilityVector {
    ProbabilityVector::new(m.column_means()).expect("column means of a valid matrix lie on the simplex")
}

/// N independently initialized trainings of one architecture.
#[derive(Debug, Clone)]
pub struct EnsemblePosterior {
    members: Vec<ModelParams>,
}

impl EnsemblePosterior {
    pub fn new(members: Vec<ModelParams>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        let layers = members[0].layers();
        if members.iter().any(|m| m.layers() != layers) {
            return Err(Error::Config(
                "ensemble members must share one architecture".into(),
            ));
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[ModelParams] {
        &self.members
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    /// One row per member, dropout off.
    pub fn sample_predictive(&self, x: &TensorF32, input_id: u64) -> Result<PosteriorSampleMatrix> {
        let mut probs = Vec::new();
        for member in &self.members {
            let p = member.forward(x, DropoutMode::Off)?;
            probs.extend_from_slice(p.as_slice());
        }
        let m = probs.len() / self.members.len();
        PosteriorSampleMatrix::new(probs, self.members.len(), m, input_id, PosteriorKind::Ensemble)
    }

    /// Sample matrices for a whole dataset, batching the forward passes
    /// member by member. Row order per matrix is the member order; ids are
    /// the dataset indices.
    pub fn sample_dataset(&self, data: &LabeledDataset) -> Result<Vec<PosteriorSampleMatrix>> {
        sample_dataset_by_pass(
            data,
            self.members.len(),
            PosteriorKind::Ensemble,
            |pass, block, batch, shape| {
                self.members[pass].forward_probs_batch(block, batch, shape, DropoutMode::Off)
            },
        )
    }
}

/// One dropout-trained model sampled by `passes` stochastic forward passes.
#[derive(Debug, Clone)]
pub struct DropoutPosterior {
    base: ModelParams,
    passes: usize,
    seed: u64,
}

impl DropoutPosterior {
    /// Fails unless the base architecture contains a dropout layer.
    pub fn new(base: ModelParams, passes: usize, seed: u64) -> Result<Self> {
        if passes == 0 {
            return Err(Error::Config("dropout posterior needs at least one pass".into()));
        }
        let has_dropout = base
            .layers()
            .iter()
            .any(|l| matches!(l, crate::nn::LayerSpec::Dropout { .. }));
        if !has_dropout {
            return Err(Error::Config(
                "dropout posterior requires a model with dropout layers".into(),
            ));
        }
        Ok(Self { base, passes, seed })
    }

    pub fn base(&self) -> &ModelParams {
        &self.base
    }

    pub fn passes(&self) -> usize {
        self.passes
    }

    /// Row `i` uses dropout seed `seed + i`.
    pub fn sample_predictive(&self, x: &TensorF32, input_id: u64) -> Result<PosteriorSampleMatrix> {
        let mut probs = Vec::new();
        for i in 0..self.passes {
            let p = self
                .base
                .forward(x, DropoutMode::Sample(self.seed + i as u64))?;
            probs.extend_from_slice(p.as_slice());
        }
        let m = probs.len() / self.passes;
        PosteriorSampleMatrix::new(probs, self.passes, m, input_id, PosteriorKind::Dropout)
    }

    /// Sample matrices for a whole dataset. Each pass is one fixed mask
    /// seed applied to every input, so results do not depend on batching.
    pub fn sample_dataset(&self, data: &LabeledDataset) -> Result<Vec<PosteriorSampleMatrix>> {
        sample_dataset_by_pass(
            data,
            self.passes,
            PosteriorKind::Dropout,
            |pass, block, batch, shape| {
                self.base.forward_probs_batch(
                    block,
                    batch,
                    shape,
                    DropoutMode::Sample(self.seed + pass as u64),
                )
            },
        )
    }
}

fn sample_dataset_by_pass(
    data: &LabeledDataset,
    n_rows: usize,
    kind: PosteriorKind,
    forward: impl Fn(usize, &[f32], usize, &[usize]) -> Result<Vec<f32>>,
) -> Result<Vec<PosteriorSampleMatrix>> {
    let shape = [1usize, data.height(), data.width()];
    let mut per_input: Vec<Vec<f64>> = vec![Vec::new(); data.len()];
    let mut classes = 0usize;
    for pass in 0..n_rows {
        for start in (0..data.len()).step_by(256) {
            let end = (start + 256).min(data.len());
            let batch = end - start;
            let probs = forward(pass, data.image_block(start, end), batch, &shape)?;
            classes = probs.len() / batch;
            for bi in 0..batch {
                per_input[start + bi]
                    .extend(probs[bi * classes..(bi + 1) * classes].iter().map(|&v| v as f64));
            }
        }
    }
    per_input
        .into_iter()
        .enumerate()
        .map(|(i, probs)| PosteriorSampleMatrix::new(probs, n_rows, classes, i as u64, kind))
        .collect()
}

/// Either posterior behind one interface, for pipeline code that is
/// configured at runtime.
#[derive(Debug, Clone)]
pub enum Posterior {
    Ensemble(EnsemblePosterior),
    Dropout(DropoutPosterior),
}

impl Posterior {
    pub fn kind(&self) -> PosteriorKind {
        match self {
            Posterior::Ensemble(_) => PosteriorKind::Ensemble,
            Posterior::Dropout(_) => PosteriorKind::Dropout,
        }
    }

    pub fn sample_predictive(&self, x: &TensorF32, input_id: u64) -> Result<PosteriorSampleMatrix> {
        match self {
            Posterior::Ensemble(e) => e.sample_predictive(x, input_id),
            Posterior::Dropout(d) => d.sample_predictive(x, input_id),
        }
    }

    pub fn sample_dataset(&self, data: &LabeledDataset) -> Result<Vec<PosteriorSampleMatrix>> {
        match self {
            Posterior::Ensemble(e) => e.sample_dataset(data),
            Posterior::Dropout(d) => d.sample_dataset(data),
        }
    }
}

/// Trains `n` members with seeds `base_seed..base_seed+n`. Members share
/// the data order; only initialization (and train-time dropout masks)
/// differ. Training failures carry the member index.
pub fn train_ensemble(
    arch: &Architecture,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    n: usize,
    base_seed: u64,
) -> Result<EnsemblePosterior> {
    if n == 0 {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    let mut members = Vec::with_capacity(n);
    for i in 0..n {
        let member_cfg = TrainConfig {
            seed: base_seed + i as u64,
            ..cfg.clone()
        };
        let model = train(arch, data, &member_cfg).map_err(|e| match e {
            Error::TrainingDiverged { epoch } => Error::Config(format!(
                "member {i} diverged at epoch {epoch}"
            )),
            other => other,
        })?;
        members.push(model);
    }
    EnsemblePosterior::new(members)
}

/// Persists an ensemble as `member_XXX.buqm` files plus a plain-text
/// `manifest.txt` with `key=value` lines.
pub fn save_ensemble(
    ensemble: &EnsemblePosterior,
    dir: &Path,
    extra_manifest: &BTreeMap<String, String>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, member) in ensemble.members().iter().enumerate() {
        member.save(&dir.join(format!("member_{i:03}.buqm")))?;
    }
    let mut manifest = String::new();
    let first = &ensemble.members()[0];
    manifest.push_str(&format!("arch={}\n", first.arch()));
    manifest.push_str(&format!("n_members={}\n", ensemble.n_members()));
    let seeds: Vec<String> = ensemble
        .members()
        .iter()
        .map(|m| m.seed().to_string())
        .collect();
    manifest.push_str(&format!("seeds={}\n", seeds.join(",")));
    for (k, v) in extra_manifest {
        manifest.push_str(&format!("{k}={v}\n"));
    }
    std::fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

/// Reads `manifest.txt` into a key-value map. Lines starting with `#` and
/// blank lines are ignored.
pub fn read_manifest(dir: &Path) -> Result<BTreeMap<String, String>> {
    let path = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&path)?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => {
                return Err(Error::Format {
                    path,
                    offset: (i + 1) as u64,
                    message: format!("manifest line {line:?} is not key=value"),
                })
            }
        }
    }
    Ok(map)
}

/// Loads an ensemble saved by [`save_ensemble`], restoring arch id and
/// seeds from the manifest.
pub fn load_ensemble(dir: &Path) -> Result<(EnsemblePosterior, BTreeMap<String, String>)> {
    let manifest = read_manifest(dir)?;
    let n: usize = manifest
        .get("n_members")
        .ok_or_else(|| Error::Config("manifest missing n_members".into()))?
        .parse()
        .map_err(|e| Error::Config(format!("bad n_members: {e}")))?;
    let arch = manifest
        .get("arch")
        .ok_or_else(|| Error::Config("manifest missing arch".into()))?
        .clone();
    let seeds: Vec<u64> = match manifest.get("seeds") {
        Some(s) => s
            .split(',')
            .map(|v| v.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad seeds list: {e}")))?,
        None => vec![0; n],
    };
    if seeds.len() != n {
        return Err(Error::Config(format!(
            "manifest lists {} seeds for {n} members",
            seeds.len()
        )));
    }
    let mut members = Vec::with_capacity(n);
    for i in 0..n {
        let mut member = ModelParams::load(&dir.join(format!("member_{i:03}.buqm")))?;
        member.set_meta(arch.clone(), seeds[i]);
        members.push(member);
    }
    Ok((EnsemblePosterior::new(members)?, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;
    use crate::uq::mutual_information;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blob_data(seed: u64) -> LabeledDataset {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for class in 0..2u8 {
            let center = if class == 0 { 0.2f32 } else { 0.8f32 };
            for _ in 0..30 {
                for _ in 0..4 {
                    pixels.push((center + rng.gen_range(-0.075..0.075)).clamp(0.0, 1.0));
                }
                labels.push(class);
            }
        }
        LabeledDataset::new("blobs".into(), 0.0, 2, 2, pixels, labels, 2).unwrap()
    }

    fn blob_arch(p: f32) -> Architecture {
        Architecture::new(
            "blob",
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 4, output: 8 },
                LayerSpec::Relu,
                LayerSpec::Dropout { p },
                LayerSpec::Dense { input: 8, output: 2 },
                LayerSpec::Softmax,
            ],
        )
        .unwrap()
    }

    #[test]
    fn predictive_mean_examples() {
        let m = PosteriorSampleMatrix::new(
            vec![1.0, 0.0, 0.0, 1.0],
            2,
            2,
            0,
            PosteriorKind::Ensemble,
        )
        .unwrap();
        assert_eq!(predictive_mean(&m).as_slice(), &[0.5, 0.5]);

        let single =
            PosteriorSampleMatrix::new(vec![0.3, 0.7], 1, 2, 0, PosteriorKind::Ensemble).unwrap();
        let mean = predictive_mean(&single);
        assert_abs_diff_eq!(mean.as_slice()[0], 0.3, epsilon = 1e-12);

        let two = PosteriorSampleMatrix::new(
            vec![0.8, 0.2, 0.6, 0.4],
            2,
            2,
            0,
            PosteriorKind::Ensemble,
        )
        .unwrap();
        let mean = predictive_mean(&two);
        assert_abs_diff_eq!(mean.as_slice()[0], 0.7, epsilon = 1e-7);
        assert_abs_diff_eq!(mean.as_slice()[1], 0.3, epsilon = 1e-7);
    }

    #[test]
    fn invalid_matrices_are_rejected() {
        assert!(PosteriorSampleMatrix::new(vec![0.5, 0.6], 1, 2, 0, PosteriorKind::Ensemble)
            .is_err());
        assert!(PosteriorSampleMatrix::new(vec![1.5, -0.5], 1, 2, 0, PosteriorKind::Ensemble)
            .is_err());
        assert!(PosteriorSampleMatrix::new(vec![0.5, 0.5], 2, 2, 0, PosteriorKind::Ensemble)
            .is_err());
    }

    #[test]
    fn single_member_ensemble_has_zero_mutual_information() {
        let data = blob_data(1);
        let cfg = TrainConfig {
            epochs: 2,
            dropout_p: 0.0,
            ..TrainConfig::default()
        };
        let ens = train_ensemble(&blob_arch(0.0), &data, &cfg, 1, 7).unwrap();
        let m = ens.sample_predictive(&data.image_tensor(0), 0).unwrap();
        assert_eq!(m.n_samples(), 1);
        assert_eq!(mutual_information(&m).unwrap(), 0.0);
    }

    #[test]
    fn forced_identical_members_give_zero_mutual_information() {
        let data = blob_data(2);
        let cfg = TrainConfig {
            epochs: 2,
            dropout_p: 0.0,
            seed: 3,
            ..TrainConfig::default()
        };
        let member = crate::nn::train(&blob_arch(0.0), &data, &cfg).unwrap();
        let ens = EnsemblePosterior::new(vec![member.clone(), member]).unwrap();
        let m = ens.sample_predictive(&data.image_tensor(5), 5).unwrap();
        let i = mutual_information(&m).unwrap();
        assert!(i.abs() < 1e-12);
    }

    #[test]
    fn members_differ_pairwise() {
        let data = blob_data(3);
        let cfg = TrainConfig {
            epochs: 2,
            dropout_p: 0.1,
            ..TrainConfig::default()
        };
        let ens = train_ensemble(&blob_arch(0.1), &data, &cfg, 4, 100).unwrap();
        for i in 0..ens.n_members() {
            for j in i + 1..ens.n_members() {
                let a = ens.members()[i].layer_weights(1);
                let b = ens.members()[j].layer_weights(1);
                let dist: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(&x, &y)| ((x - y) as f64).powi(2))
                    .sum();
                assert!(dist > 0.0, "members {i} and {j} share weights");
            }
        }
        assert_eq!(ens.members()[0].seed(), 100);
        assert_eq!(ens.members()[3].seed(), 103);
    }

    #[test]
    fn dropout_rows_with_p_zero_are_identical() {
        let data = blob_data(4);
        let cfg = TrainConfig {
            epochs: 2,
            dropout_p: 0.0,
            ..TrainConfig::default()
        };
        let model = crate::nn::train(&blob_arch(0.0), &data, &cfg).unwrap();
        // p = 0 still counts as a dropout layer being present
        let post = DropoutPosterior::new(model, 5, 9).unwrap();
        let m = post.sample_predictive(&data.image_tensor(0), 0).unwrap();
        let first = m.row(0).to_vec();
        for i in 1..m.n_samples() {
            assert_eq!(m.row(i), &first[..]);
        }
    }

    #[test]
    fn dropout_matrix_is_reproducible() {
        let data = blob_data(5);
        let cfg = TrainConfig {
            epochs: 2,
            dropout_p: 0.3,
            ..TrainConfig::default()
        };
        let model = crate::nn::train(&blob_arch(0.3), &data, &cfg).unwrap();
        let post = DropoutPosterior::new(model, 6, 42).unwrap();
        let x = data.image_tensor(3);
        let a = post.sample_predictive(&x, 3).unwrap();
        let b = post.sample_predictive(&x, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_posterior_requires_dropout_layers() {
        let arch = Architecture::new(
            "no-dropout",
            vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { input: 4, output: 2 },
                LayerSpec::Softmax,
            ],
        )
        .unwrap();
        let model = ModelParams::init(&arch, 0);
        assert!(DropoutPosterior::new(model, 5, 0).is_err());
    }

    #[test]
    fn batched_sampling_matches_per_input_sampling() {
        let data = blob_data(6);
        let cfg = TrainConfig {
            epochs: 2,
            dropout_p: 0.2,
            ..TrainConfig::default()
        };
        let ens = train_ensemble(&blob_arch(0.2), &data, &cfg, 3, 11).unwrap();
        let matrices = ens.sample_dataset(&data).unwrap();
        for i in [0usize, 7, 59] {
            let single = ens.sample_predictive(&data.image_tensor(i), i as u64).unwrap();
            assert_eq!(matrices[i], single);
        }
        let post = DropoutPosterior::new(ens.members()[0].clone(), 4, 5).unwrap();
        let matrices = post.sample_dataset(&data).unwrap();
        for i in [1usize, 30] {
            let single = post.sample_predictive(&data.image_tensor(i), i as u64).unwrap();
            assert_eq!(matrices[i], single);
        }
    }

    #[test]
    fn ensemble_round_trips_through_directory() {
        let data = blob_data(7);
        let cfg = TrainConfig {
            epochs: 1,
            dropout_p: 0.1,
            ..TrainConfig::default()
        };
        let ens = train_ensemble(&blob_arch(0.1), &data, &cfg, 3, 50).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut extra = BTreeMap::new();
        extra.insert("dataset".to_string(), "blobs".to_string());
        save_ensemble(&ens, dir.path(), &extra).unwrap();
        let (back, manifest) = load_ensemble(dir.path()).unwrap();
        assert_eq!(back.n_members(), 3);
        assert_eq!(manifest.get("dataset").unwrap(), "blobs");
        assert_eq!(manifest.get("arch").unwrap(), "blob");
        for (a, b) in ens.members().iter().zip(back.members()) {
            assert_eq!(a.wb(), b.wb());
            assert_eq!(a.seed(), b.seed());
        }
        assert_eq!(back.members()[0].arch(), "blob");
    }

    proptest! {
        /// predictive_mean is permutation-invariant in rows and its entries
        /// stay within each column's min/max.
        #[test]
        fn predictive_mean_properties(seed in 0u64..3000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..8);
            let m = rng.gen_range(2..6);
            let mut flat: Vec<f64> = Vec::new();
            for _ in 0..n {
                let mut row: Vec<f64> = (0..m).map(|_| rng.gen::<f64>() + 1e-3).collect();
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
                flat.extend_from_slice(&row);
            }
            let mat = PosteriorSampleMatrix::new(flat.clone(), n, m, 0, PosteriorKind::Ensemble).unwrap();
            let mean = predictive_mean(&mat);

            // permutation invariance: reverse rows
            let mut rev = Vec::new();
            for i in (0..n).rev() {
                rev.extend_from_slice(&flat[i * m..(i + 1) * m]);
            }
            let mat_rev = PosteriorSampleMatrix::new(rev, n, m, 0, PosteriorKind::Ensemble).unwrap();
            let mean_rev = predictive_mean(&mat_rev);
            for (a, b) in mean.as_slice().iter().zip(mean_rev.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }

            // bounds per column
            for c in 0..m {
                let col: Vec<f64> = (0..n).map(|r| flat[r * m + c]).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(mean.as_slice()[c] >= lo - 1e-12);
                prop_assert!(mean.as_slice()[c] <= hi + 1e-12);
            }
        }
    }
}
