//! Pipeline subcommands. Each returns a library error; `main` maps those
//! to exit codes. All file outputs go through a temp-file + rename so
//! concurrent runs on disjoint output directories never see partial files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use buq::analysis::{moments, shift_delta, JointHistogram2D, MomentRow};
use buq::data::{
    alpha_grid, apply_impulse_noise, concat, image_to_u8, load_cifar10_grayscale, load_mnist,
    pgm_bytes, LabeledDataset, NoiseSpec,
};
use buq::error::{Error, Result};
use buq::nn::{arch_by_id, dataset_accuracy, Architecture};
use buq::posterior::{
    load_ensemble, save_ensemble, train_ensemble, DropoutPosterior, Posterior, PosteriorKind,
};
use buq::toy::{
    count_local_maxima, default_x_grid, posterior_predictive_toy, toy_posterior, verify_identity,
    ToyClass, ToyPosteriorGrid,
};
use buq::uq::{
    format_alpha, read_records_csv, uncertainty_record, write_records_csv, UncertaintyRecord,
};

use crate::config::RunConfig;

/// Writes bytes atomically: temp file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads the train and test splits named by the config.
pub fn load_splits(cfg: &RunConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    let dir = &cfg.data_dir;
    let (train, test) = match cfg.dataset.as_str() {
        "mnist" => {
            let train = load_mnist(
                &dir.join("train-images-idx3-ubyte"),
                &dir.join("train-labels-idx1-ubyte"),
            )?;
            let test = load_mnist(
                &dir.join("t10k-images-idx3-ubyte"),
                &dir.join("t10k-labels-idx1-ubyte"),
            )?;
            (train, test)
        }
        "cifar10g" => {
            let batches: Vec<LabeledDataset> = (1..=5)
                .map(|i| load_cifar10_grayscale(&dir.join(format!("data_batch_{i}.bin"))))
                .collect::<Result<_>>()?;
            let train = concat(batches)?;
            let test = load_cifar10_grayscale(&dir.join("test_batch.bin"))?;
            (train, test)
        }
        other => return Err(Error::Config(format!("unknown dataset {other:?}"))),
    };
    Ok((train.take(cfg.train_limit), test.take(cfg.test_limit)))
}

fn build_arch(cfg: &RunConfig, data: &LabeledDataset) -> Result<Architecture> {
    arch_by_id(
        &cfg.arch,
        1,
        data.height(),
        data.width(),
        data.classes(),
        cfg.dropout_p,
    )
}

pub fn posterior_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("posterior")
}

pub fn records_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("records")
}

/// Trains the ensemble and persists it with its manifest. Prints one line
/// per member with final train/test accuracy.
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let (train_split, test_split) = load_splits(cfg)?;
    let arch = build_arch(cfg, &train_split)?;
    let ensemble = train_ensemble(
        &arch,
        &train_split,
        &cfg.train_config(),
        cfg.n_members,
        cfg.seed,
    )?;

    let mut extra = BTreeMap::new();
    extra.insert("seed".to_string(), cfg.seed.to_string());
    extra.insert("dropout_p".to_string(), cfg.dropout_p.to_string());
    extra.insert("l2".to_string(), cfg.l2.to_string());
    extra.insert("epochs".to_string(), cfg.epochs.to_string());
    extra.insert("dataset".to_string(), cfg.dataset.clone());
    extra.insert("config_hash".to_string(), cfg.hash());
    let dir = posterior_dir(cfg);
    save_ensemble(&ensemble, &dir, &extra)?;

    for (i, member) in ensemble.members().iter().enumerate() {
        let train_acc = dataset_accuracy(member, &train_split)?;
        let test_acc = dataset_accuracy(member, &test_split)?;
        println!(
            "member {i}: train accuracy {train_acc:.4}, validation accuracy {test_acc:.4}"
        );
    }
    println!("saved {} members to {}", ensemble.n_members(), dir.display());
    Ok(())
}

/// Builds the posterior the config asks for from a persisted directory.
pub fn load_posterior(cfg: &RunConfig, dir: &Path) -> Result<(Posterior, String)> {
    let (ensemble, manifest) = load_ensemble(dir)?;
    let arch = manifest
        .get("arch")
        .cloned()
        .unwrap_or_default();
    if arch != cfg.arch {
        return Err(Error::Config(format!(
            "manifest architecture {arch:?} does not match configured {:?}",
            cfg.arch
        )));
    }
    if let Some(ds) = manifest.get("dataset") {
        if *ds != cfg.dataset {
            return Err(Error::Config(format!(
                "manifest dataset {ds:?} does not match configured {:?}",
                cfg.dataset
            )));
        }
    }
    let kind: PosteriorKind = cfg.posterior.parse()?;
    let posterior = match kind {
        PosteriorKind::Ensemble => Posterior::Ensemble(ensemble),
        PosteriorKind::Dropout => {
            let base = ensemble.members()[0].clone();
            Posterior::Dropout(DropoutPosterior::new(base, cfg.n_passes, cfg.seed)?)
        }
    };
    Ok((posterior, arch))
}

fn records_csv_name(arch: &str, kind: PosteriorKind, alpha: f64) -> String {
    format!("records_{arch}_{kind}_{}.csv", format_alpha(alpha))
}

/// Evaluates the posterior on the corrupted test split, one records CSV
/// per noise level. Every record is bound-checked before it is written.
pub fn cmd_evaluate(cfg: &RunConfig, posterior_path: &Path) -> Result<()> {
    cfg.validate()?;
    let (_, test_split) = load_splits(cfg)?;
    let (posterior, arch) = load_posterior(cfg, posterior_path)?;
    let out = records_dir(cfg);
    std::fs::create_dir_all(&out)?;

    for &alpha in &cfg.alphas {
        let noisy = apply_impulse_noise(&test_split, &NoiseSpec::new(alpha, cfg.seed)?);
        let records = evaluate_records(&posterior, &noisy, alpha)?;
        let mut bytes = Vec::new();
        write_records_csv(&mut bytes, &records)?;
        let path = out.join(records_csv_name(&arch, posterior.kind(), alpha));
        write_atomic(&path, &bytes)?;
        println!("wrote {} records to {}", records.len(), path.display());
    }
    Ok(())
}

/// Uncertainty records for every sample of an (already corrupted) dataset.
pub fn evaluate_records(
    posterior: &Posterior,
    data: &LabeledDataset,
    alpha: f64,
) -> Result<Vec<UncertaintyRecord>> {
    let matrices = posterior.sample_dataset(data)?;
    let ln_m = (data.classes() as f64).ln();
    let mut records = Vec::with_capacity(matrices.len());
    for (i, matrix) in matrices.into_iter().enumerate() {
        let record = uncertainty_record(&matrix, data.labels()[i] as usize, alpha)?;
        // guard the epistemic bound end to end before anything is emitted
        if record.i_nat > record.h_nat + buq::uq::MI_SLACK
            || record.h_nat < 0.0
            || record.h_nat > ln_m + buq::uq::MI_SLACK
        {
            return Err(Error::InternalConsistency {
                value: record.i_nat - record.h_nat,
            });
        }
        records.push(record);
    }
    Ok(records)
}

fn parse_records_name(name: &str) -> Option<(String, PosteriorKind, String)> {
    let stem = name.strip_prefix("records_")?.strip_suffix(".csv")?;
    let mut parts = stem.split('_');
    let arch = parts.next()?.to_string();
    let kind = parts.next()?.parse::<PosteriorKind>().ok()?;
    let alpha = parts.next()?.to_string();
    if parts.next().is_some() {
        return None;
    }
    Some((arch, kind, alpha))
}

/// Everything `report` derives from one records directory.
pub struct Report {
    pub moments: Vec<MomentRow>,
    pub deltas: Vec<(String, PosteriorKind, buq::analysis::ShiftDelta)>,
    /// Union histogram per (arch, posterior) group.
    pub unions: Vec<(String, PosteriorKind, JointHistogram2D)>,
}

/// Aggregates all records CSVs in a directory: moments per noise level,
/// per-level heatmaps, union histograms with accuracy maps, and the
/// 0 -> 0.09 shift deltas where both levels are present.
pub fn cmd_report(records: &Path, out_dir: &Path, classes: usize) -> Result<Report> {
    let mut groups: BTreeMap<(String, PosteriorKind), Vec<(f64, Vec<UncertaintyRecord>)>> =
        BTreeMap::new();
    let mut entries: Vec<_> = std::fs::read_dir(records)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .collect();
    entries.sort();
    for path in entries {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some((arch, kind, _)) = parse_records_name(name) else {
            continue;
        };
        let recs = read_records_csv(&path)?;
        if recs.is_empty() {
            continue;
        }
        let alpha = recs[0].alpha;
        groups.entry((arch, kind)).or_default().push((alpha, recs));
    }
    if groups.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    std::fs::create_dir_all(out_dir)?;

    let mut moment_rows: Vec<MomentRow> = Vec::new();
    let mut deltas = Vec::new();
    let mut unions = Vec::new();
    let single_group = groups.len() == 1;

    for ((arch, kind), mut levels) in groups {
        levels.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut union = JointHistogram2D::new(
            JointHistogram2D::DEFAULT_BINS,
            JointHistogram2D::DEFAULT_BINS,
            classes,
        );
        for (alpha, recs) in &levels {
            moment_rows.push(moments(&arch, recs)?);
            let mut hist = JointHistogram2D::new(
                JointHistogram2D::DEFAULT_BINS,
                JointHistogram2D::DEFAULT_BINS,
                classes,
            );
            for r in recs {
                hist.accumulate(r);
                union.accumulate(r);
            }
            let (w, h, pixels) = hist.count_heatmap();
            write_atomic(
                &out_dir.join(format!("{arch}_{kind}_{}.pgm", format_alpha(*alpha))),
                &pgm_bytes(w, h, &pixels),
            )?;
        }

        // 0 -> 0.09 shift, when both levels exist
        let find = |target: f64| {
            levels
                .iter()
                .find(|(a, _)| (a - target).abs() < 1e-9)
                .map(|(_, r)| r)
        };
        if let (Some(base), Some(shifted)) = (find(0.0), find(0.09)) {
            let d = shift_delta(&moments(&arch, base)?, &moments(&arch, shifted)?)?;
            println!(
                "{arch}/{kind} alpha 0 -> 0.09: dH = {:+.4} nat, dI = {:+.4} nat, d(acc) = {:+.4}",
                d.d_mean_h, d.d_mean_i, d.d_accuracy
            );
            deltas.push((arch.clone(), kind, d));
        }

        let suffix = if single_group {
            String::new()
        } else {
            format!("_{arch}_{kind}")
        };
        let mut hist_csv = Vec::new();
        union.write_csv(&mut hist_csv)?;
        write_atomic(&out_dir.join(format!("joint_hist{suffix}.csv")), &hist_csv)?;

        let mut acc_csv = Vec::new();
        write_accuracy_map_csv(&mut acc_csv, &union, 5)?;
        write_atomic(&out_dir.join(format!("accuracy_map{suffix}.csv")), &acc_csv)?;
        let (w, h, pixels) = union.accuracy_heatmap(5);
        write_atomic(
            &out_dir.join(format!("accuracy_map{suffix}.pgm")),
            &pgm_bytes(w, h, &pixels),
        )?;
        unions.push((arch, kind, union));
    }

    moment_rows.sort_by(|a, b| {
        (&a.arch, a.posterior, a.alpha)
            .partial_cmp(&(&b.arch, b.posterior, b.alpha))
            .unwrap()
    });
    let mut csv = String::from("architecture,posterior,alpha,mean_H,std_H,mean_I,std_I,accuracy\n");
    for row in &moment_rows {
        println!(
            "{} {} alpha={}: acc {:.4}, H {:.4} ± {:.4} nat, I {:.4} ± {:.4} nat",
            row.arch,
            row.posterior,
            format_alpha(row.alpha),
            row.accuracy,
            row.mean_h,
            row.std_h,
            row.mean_i,
            row.std_i
        );
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.arch,
            row.posterior,
            format_alpha(row.alpha),
            row.mean_h,
            row.std_h,
            row.mean_i,
            row.std_i,
            row.accuracy
        ));
    }
    write_atomic(&out_dir.join("moments.csv"), csv.as_bytes())?;

    let mut delta_csv = String::from("architecture,posterior,alpha_base,alpha_shifted,dH,dI,d_accuracy\n");
    for (arch, kind, d) in &deltas {
        delta_csv.push_str(&format!(
            "{arch},{kind},0.0000,0.0900,{},{},{}\n",
            d.d_mean_h, d.d_mean_i, d.d_accuracy
        ));
    }
    write_atomic(&out_dir.join("deltas.csv"), delta_csv.as_bytes())?;

    Ok(Report {
        moments: moment_rows,
        deltas,
        unions,
    })
}

fn write_accuracy_map_csv(
    out: &mut Vec<u8>,
    hist: &JointHistogram2D,
    min_count: u64,
) -> Result<()> {
    use std::io::Write;
    writeln!(out, "bin_H_low,bin_I_low,count,correct,accuracy")?;
    let map = hist.accuracy_map(min_count);
    let wh = hist.range() / hist.bins_h() as f64;
    let wi = hist.range() / hist.bins_i() as f64;
    for bh in 0..hist.bins_h() {
        for bi in 0..hist.bins_i() {
            let count = hist.count_at(bh, bi);
            if count == 0 {
                continue;
            }
            let acc = match map[bh * hist.bins_i() + bi] {
                Some(a) => format!("{a}"),
                None => String::new(),
            };
            writeln!(
                out,
                "{},{},{},{},{}",
                bh as f64 * wh,
                bi as f64 * wi,
                count,
                hist.correct_at(bh, bi),
                acc
            )?;
        }
    }
    Ok(())
}

/// Outcome of the toy-model identity verification.
pub struct ToyVerdict {
    pub prior_max_diff: f64,
    pub posterior_max_diff: f64,
    pub pass: bool,
    pub predictive_maxima: usize,
}

/// Verifies the epistemic-uncertainty identity on the prior and after one
/// class-1 observation at x = 2, writing `toy_identity.csv` and
/// `toy_entropy.csv`.
pub fn cmd_toy_verify(tol: f64, grid: usize, out_dir: &Path) -> Result<ToyVerdict> {
    if tol <= 0.0 {
        return Err(Error::Config(format!("tolerance must be > 0, got {tol}")));
    }
    let xs = default_x_grid();
    let observation = [(2.0, ToyClass::Class1)];
    let prior = verify_identity(&[], &xs, grid, tol)?;
    let posterior = verify_identity(&observation, &xs, grid, tol)?;

    std::fs::create_dir_all(out_dir)?;
    let mut identity = String::from("x,I_param,I_pred,diff\n");
    for report in [&prior, &posterior] {
        for row in &report.rows {
            identity.push_str(&format!(
                "{},{},{},{}\n",
                row.x,
                row.i_param,
                row.i_pred,
                row.i_param - row.i_pred
            ));
        }
    }
    write_atomic(&out_dir.join("toy_identity.csv"), identity.as_bytes())?;

    let prior_grid = ToyPosteriorGrid::prior(grid, grid);
    let posterior_grid = toy_posterior(&observation, grid, grid)?;
    let mut entropy_csv = String::from("x,H_prior,H_posterior\n");
    for &x in &xs {
        let hp = buq::uq::entropy(&posterior_predictive_toy(&prior_grid, x));
        let ho = buq::uq::entropy(&posterior_predictive_toy(&posterior_grid, x));
        entropy_csv.push_str(&format!("{x},{hp},{ho}\n"));
    }
    write_atomic(&out_dir.join("toy_entropy.csv"), entropy_csv.as_bytes())?;

    let curve: Vec<f64> = posterior.rows.iter().map(|r| r.i_pred).collect();
    let verdict = ToyVerdict {
        prior_max_diff: prior.max_abs_diff,
        posterior_max_diff: posterior.max_abs_diff,
        pass: prior.pass && posterior.pass,
        predictive_maxima: count_local_maxima(&curve, 1e-9),
    };
    println!(
        "toy identity: prior max |diff| = {:.3e}, one-observation max |diff| = {:.3e} (tolerance {tol:.1e}) -> {}",
        verdict.prior_max_diff,
        verdict.posterior_max_diff,
        if verdict.pass { "pass" } else { "FAIL" }
    );
    Ok(verdict)
}

/// Writes a strip of preview images: one row per sample, one column per
/// noise level (like a corruption figure).
pub fn cmd_corrupt_preview(cfg: &RunConfig, count: usize) -> Result<PathBuf> {
    cfg.validate()?;
    let (_, test_split) = load_splits(cfg)?;
    let count = count.max(1).min(test_split.len());
    let alphas = if cfg.alphas.len() > 1 {
        cfg.alphas.clone()
    } else {
        alpha_grid(7)
    };

    let (h, w) = (test_split.height(), test_split.width());
    let pad = 2usize;
    let strip_w = alphas.len() * (w + pad) - pad;
    let strip_h = count * (h + pad) - pad;
    let mut canvas = vec![0u8; strip_w * strip_h];
    for (col, &alpha) in alphas.iter().enumerate() {
        let noisy = apply_impulse_noise(
            &test_split.take(count),
            &NoiseSpec::new(alpha, cfg.seed)?,
        );
        for row in 0..count {
            let img = image_to_u8(&noisy, row);
            let x0 = col * (w + pad);
            let y0 = row * (h + pad);
            for y in 0..h {
                let dst = (y0 + y) * strip_w + x0;
                canvas[dst..dst + w].copy_from_slice(&img[y * w..(y + 1) * w]);
            }
        }
    }
    let dir = cfg.out_dir.join("preview");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("corrupt_preview.pgm");
    write_atomic(&path, &pgm_bytes(strip_w, strip_h, &canvas))?;
    println!(
        "wrote {count} x {} preview strip to {}",
        alphas.len(),
        path.display()
    );
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_names_round_trip() {
        let name = records_csv_name("dense", PosteriorKind::Ensemble, 0.09);
        assert_eq!(name, "records_dense_ensemble_0.0900.csv");
        let (arch, kind, alpha) = parse_records_name(&name).unwrap();
        assert_eq!(arch, "dense");
        assert_eq!(kind, PosteriorKind::Ensemble);
        assert_eq!(alpha, "0.0900");
        assert!(parse_records_name("moments.csv").is_none());
        assert!(parse_records_name("records_dense.csv").is_none());
    }
}
