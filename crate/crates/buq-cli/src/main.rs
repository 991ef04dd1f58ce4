use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use buq_cli::commands;
use buq_cli::config::{parse_alpha_list, RunConfig};

#[derive(Parser)]
#[command(
    name = "buq",
    version,
    about = "Train classifier ensembles, decompose predictive uncertainty into total (H) and epistemic (I) parts, and analyze the joint (H, I) distribution under impulse noise."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config-file plus per-field overrides; flags win over file values.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat key=value config file ('#' comments allowed).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset name: mnist or cifar10g.
    #[arg(long)]
    dataset: Option<String>,
    /// Directory with the raw dataset files.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Architecture: dense or cnn.
    #[arg(long)]
    arch: Option<String>,
    /// Posterior kind: ensemble or dropout.
    #[arg(long)]
    posterior: Option<String>,
    /// Number of ensemble members to train.
    #[arg(long)]
    n_members: Option<usize>,
    /// Stochastic forward passes for the dropout posterior.
    #[arg(long)]
    n_passes: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    momentum: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// L2 regularization coefficient.
    #[arg(long)]
    l2: Option<f32>,
    /// Dropout probability for dropout layers.
    #[arg(long)]
    dropout_p: Option<f32>,
    /// Global seed; member i trains with seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated noise levels in [-0.3, 0.3].
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Use only the first N training samples (0 = all).
    #[arg(long)]
    train_limit: Option<usize>,
    /// Use only the first N test samples (0 = all).
    #[arg(long)]
    test_limit: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, buq::Error> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(v) = &self.dataset {
            cfg.dataset = v.clone();
        }
        if let Some(v) = &self.data_dir {
            cfg.data_dir = v.clone();
        }
        if let Some(v) = &self.arch {
            cfg.arch = v.clone();
        }
        if let Some(v) = &self.posterior {
            cfg.posterior = v.clone();
        }
        if let Some(v) = self.n_members {
            cfg.n_members = v;
        }
        if let Some(v) = self.n_passes {
            cfg.n_passes = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.l2 {
            cfg.l2 = v;
        }
        if let Some(v) = self.dropout_p {
            cfg.dropout_p = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.alphas {
            cfg.alphas = parse_alpha_list(v)?;
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = self.train_limit {
            cfg.train_limit = v;
        }
        if let Some(v) = self.test_limit {
            cfg.test_limit = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an ensemble and persist it (BUQM files + manifest).
    Train(ConfigArgs),
    /// Evaluate a persisted posterior on the noised test split, writing
    /// one records CSV per noise level.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Posterior directory (defaults to <out_dir>/posterior).
        #[arg(long)]
        posterior_dir: Option<PathBuf>,
    },
    /// Aggregate records CSVs into moments, histograms, accuracy maps and
    /// shift deltas.
    Report {
        /// Directory of records_*.csv files (defaults to <out_dir>/records).
        #[arg(long)]
        records_dir: Option<PathBuf>,
        /// Report output directory (defaults to <out_dir>/report).
        #[arg(long)]
        report_dir: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Verify the analytic toy model's epistemic-uncertainty identity;
    /// exits nonzero when the two forms disagree beyond the tolerance.
    ToyVerify {
        /// Maximum allowed |I_param - I_pred| in nats.
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        /// Quadrature cells per parameter axis.
        #[arg(long, default_value_t = buq::toy::DEFAULT_GRID)]
        grid: usize,
        /// Output directory for toy_identity.csv and toy_entropy.csv.
        #[arg(long, default_value = "out/toy")]
        out_dir: PathBuf,
    },
    /// Write a PGM strip of test images across noise levels.
    CorruptPreview {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of images in the strip.
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
}

fn run(cli: Cli) -> Result<(), (i32, String)> {
    let fail = |e: buq::Error| (buq_cli::exit_code_of(&e), e.to_string());
    match cli.command {
        Command::Train(args) => {
            let cfg = args.resolve().map_err(fail)?;
            commands::cmd_train(&cfg).map_err(fail)
        }
        Command::Evaluate {
            config,
            posterior_dir,
        } => {
            let cfg = config.resolve().map_err(fail)?;
            let dir = posterior_dir.unwrap_or_else(|| commands::posterior_dir(&cfg));
            commands::cmd_evaluate(&cfg, &dir).map_err(fail)
        }
        Command::Report {
            records_dir,
            report_dir,
            config,
        } => {
            let cfg = config.resolve().map_err(fail)?;
            let records = records_dir.unwrap_or_else(|| commands::records_dir(&cfg));
            let out = report_dir.unwrap_or_else(|| cfg.out_dir.join("report"));
            commands::cmd_report(&records, &out, 10).map(|_| ()).map_err(fail)
        }
        Command::ToyVerify { tol, grid, out_dir } => {
            let verdict = commands::cmd_toy_verify(tol, grid, &out_dir).map_err(fail)?;
            if verdict.pass {
                Ok(())
            } else {
                Err((
                    1,
                    format!(
                        "identity violated: max |diff| = {:.3e} > {tol:.3e}",
                        verdict.prior_max_diff.max(verdict.posterior_max_diff)
                    ),
                ))
            }
        }
        Command::CorruptPreview { config, count } => {
            let cfg = config.resolve().map_err(fail)?;
            commands::cmd_corrupt_preview(&cfg, count)
                .map(|_| ())
                .map_err(fail)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
