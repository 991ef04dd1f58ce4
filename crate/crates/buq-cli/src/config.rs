//! Run configuration: defaults, flat `key=value` config files, and flag
//! overrides, merged in that order.

use std::path::{Path, PathBuf};

use buq::error::{Error, Result};
use buq::nn::TrainConfig;
use sha2::{Digest, Sha256};

/// Everything a pipeline run needs. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Dataset name: `mnist` or `cifar10g`.
    pub dataset: String,
    /// Directory holding the raw dataset files.
    pub data_dir: PathBuf,
    /// Architecture id: `dense` or `cnn`.
    pub arch: String,
    /// Posterior kind used at evaluation: `ensemble` or `dropout`.
    pub posterior: String,
    /// Ensemble size (trained members).
    pub n_members: usize,
    /// Stochastic forward passes for the dropout posterior.
    pub n_passes: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub l2: f32,
    pub dropout_p: f32,
    /// Global seed: member `i` trains with `seed + i`; corruption and
    /// dropout sampling derive from it too.
    pub seed: u64,
    /// Noise levels evaluated, each in `[-0.3, 0.3]`.
    pub alphas: Vec<f64>,
    pub out_dir: PathBuf,
    /// Use only the first N training samples (0 = all).
    pub train_limit: usize,
    /// Use only the first N test samples (0 = all).
    pub test_limit: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: "mnist".into(),
            data_dir: PathBuf::from("data/mnist"),
            arch: "dense".into(),
            posterior: "ensemble".into(),
            n_members: 10,
            n_passes: 20,
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 64,
            epochs: 10,
            l2: 1e-4,
            dropout_p: 0.1,
            seed: 0,
            alphas: vec![0.0],
            out_dir: PathBuf::from("out"),
            train_limit: 0,
            test_limit: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.dataset.as_str(), "mnist" | "cifar10g") {
            return Err(Error::Config(format!(
                "unknown dataset {:?} (expected mnist or cifar10g)",
                self.dataset
            )));
        }
        if !matches!(self.arch.as_str(), "dense" | "cnn") {
            return Err(Error::Config(format!(
                "unknown architecture {:?} (expected dense or cnn)",
                self.arch
            )));
        }
        self.posterior.parse::<buq::posterior::PosteriorKind>()?;
        if self.n_members == 0 {
            return Err(Error::Config("n_members must be >= 1".into()));
        }
        if self.n_passes == 0 {
            return Err(Error::Config("n_passes must be >= 1".into()));
        }
        if self.alphas.is_empty() {
            return Err(Error::Config("alphas must be nonempty".into()));
        }
        for &alpha in &self.alphas {
            buq::data::NoiseSpec::new(alpha, 0)?;
        }
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            l2: self.l2,
            dropout_p: self.dropout_p,
            seed: self.seed,
        }
    }

    /// Applies `key=value` pairs from a config file. `#` starts a comment;
    /// blank lines are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {path:?}: {e}"))
        })?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config(format!(
                "config {path:?} line {}: {raw:?} is not key=value",
                lineno + 1
            )))?;
            self.apply_pair(key.trim(), value.trim()).map_err(|e| {
                Error::Config(format!("config {path:?} line {}: {e}", lineno + 1))
            })?;
        }
        Ok(())
    }

    pub fn apply_pair(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::Config(format!("bad {key} value {value:?}: {e}")))
        }
        match key {
            "dataset" => self.dataset = value.to_string(),
            "data_dir" => self.data_dir = PathBuf::from(value),
            "arch" => self.arch = value.to_string(),
            "posterior" => self.posterior = value.to_string(),
            "n_members" => self.n_members = parse(key, value)?,
            "n_passes" => self.n_passes = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "l2" => self.l2 = parse(key, value)?,
            "dropout_p" => self.dropout_p = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "alphas" => self.alphas = parse_alpha_list(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "train_limit" => self.train_limit = parse(key, value)?,
            "test_limit" => self.test_limit = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Short hex digest over the training-relevant fields; stored in the
    /// ensemble manifest so evaluate can detect mismatched configs.
    pub fn hash(&self) -> String {
        let canonical = format!(
            "dataset={}\narch={}\nn_members={}\nlearning_rate={}\nmomentum={}\nbatch_size={}\nepochs={}\nl2={}\ndropout_p={}\nseed={}\ntrain_limit={}\n",
            self.dataset,
            self.arch,
            self.n_members,
            self.learning_rate,
            self.momentum,
            self.batch_size,
            self.epochs,
            self.l2,
            self.dropout_p,
            self.seed,
            self.train_limit,
        );
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            hex.push_str(&format!("{byte:02x}"));
        }
        hex
    }
}

pub fn parse_alpha_list(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad alpha {v:?}: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# a comment\nepochs=3\nalphas=0.0, 0.09  # inline comment\narch=cnn\n\nseed=7\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_file(&path).unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.alphas, vec![0.0, 0.09]);
        assert_eq!(cfg.arch, "cnn");
        assert_eq!(cfg.seed, 7);
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_keys_and_values_are_config_errors() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_pair("nope", "1").is_err());
        assert!(cfg.apply_pair("epochs", "many").is_err());
    }

    #[test]
    fn invalid_architecture_fails_validation() {
        let cfg = RunConfig {
            arch: "swin".into(),
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn out_of_range_alpha_fails_validation() {
        let cfg = RunConfig {
            alphas: vec![0.0, 0.5],
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_tracks_training_fields_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.alphas = vec![0.09];
        assert_eq!(a.hash(), b.hash());
        b.epochs = 99;
        assert_ne!(a.hash(), b.hash());
    }
}
