//! Subcommand implementations: training runs, paired baseline/regularized
//! comparisons, checkpoint evaluation, prediction diagnostics, gradient
//! checking, and the toy variance lab.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use ptrlab_core::checkpoint::{load_checkpoint, save_checkpoint};
use ptrlab_core::data::{load_csv, load_idx, make_blobs, split_train_val, Dataset};
use ptrlab_core::diagnostics::{
    confusion_mass, diagnose, mean_entropy_bits, rectification, RectificationSection,
};
use ptrlab_core::gradcheck::{finite_difference_check, Objective};
use ptrlab_core::network::{LayerSpec, Network, NetworkSpec};
use ptrlab_core::params::NetworkState;
use ptrlab_core::ptr::generate_pseudo_targets;
use ptrlab_core::rng::{seeded_stream, streams};
use ptrlab_core::tensor::Tensor;
use ptrlab_core::toylab::{variance_experiment, Sampler, VarianceResult};
use ptrlab_core::trainer::{evaluate, run_training};

use crate::config::{ConfigError, DataConfig, DataSource, ExperimentConfig};

/// Gradient-check failures above this relative error are reported as
/// runtime failures (non-zero exit).
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Builds the configured network; the config was validated, so this cannot
/// fail for parse-level reasons.
fn build_network(config: &ExperimentConfig) -> Result<Network> {
    Ok(Network::new(
        config.network.clone(),
        config.input_shape.clone(),
    )?)
}

/// Materializes the data source and applies the deterministic split.
/// Split warnings (classes too small to contribute validation samples) go
/// to stderr so reports stay clean.
pub fn load_splits(data: &DataConfig) -> Result<(Dataset, Dataset)> {
    let full = match &data.source {
        DataSource::Blobs {
            n_classes,
            n_per_class,
            dim,
            class_separation,
            noise_sigma,
            data_seed,
        } => make_blobs(
            *n_classes,
            *n_per_class,
            *dim,
            *class_separation,
            *noise_sigma,
            *data_seed,
        ),
        DataSource::Idx { images, labels } => load_idx(images, labels)?,
        DataSource::Csv { path } => load_csv(path)?,
    };
    let split = split_train_val(&full, data.val_fraction, data.split_seed)?;
    for warning in &split.warnings {
        eprintln!("warning: {warning}");
    }
    Ok((split.train, split.val))
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// Prints to stdout, treating a closed pipe as success so downstream
/// readers like `head` can stop early without killing the run.
pub fn print_stdout(text: &str) -> std::io::Result<()> {
    use std::io::{ErrorKind, Write};
    match std::io::stdout().write_all(text.as_bytes()) {
        Err(e) if e.kind() == ErrorKind::BrokenPipe => Ok(()),
        other => other,
    }
}

/// Writes the JSON rendering of `value` to `out`, or prints it when no
/// path is given.
fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let text = pretty_json(value)?;
    match out {
        Some(path) => fs::write(path, &text)
            .with_context(|| format!("writing {}", path.display()))?,
        None => print_stdout(&text)?,
    }
    Ok(())
}

fn class_labels(data: &Dataset) -> Vec<usize> {
    data.samples.iter().map(|(_, label)| *label).collect()
}

/// Trains one run per configured seed and writes, per seed, a
/// `seed_<k>/` directory holding `report.json`, `epochs.csv`, and
/// `checkpoint.bin`. Returns the run directories.
pub fn cmd_train(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let net = build_network(config)?;
    let (train, val) = load_splits(&config.data)?;
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    let mut run_dirs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let mut optimizer = config.optimizer.clone();
        optimizer.seed = seed;
        let (mut report, state) = run_training(
            &net,
            &train,
            &val,
            config.ptr.as_ref(),
            &optimizer,
            &config.augment,
        )?;
        let dir = config.output_dir.join(format!("seed_{seed}"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        save_checkpoint(&dir.join("checkpoint.bin"), &state)?;
        report.final_checkpoint = Some("checkpoint.bin".into());
        fs::write(dir.join("report.json"), pretty_json(&report)?)?;
        fs::write(dir.join("epochs.csv"), report.epochs_csv())?;
        let line = match report.epochs.last() {
            Some(last) => format!(
                "seed {seed}: val_accuracy {:.6} -> {}\n",
                last.val_accuracy,
                dir.display()
            ),
            None => format!("seed {seed}: no epochs -> {}\n", dir.display()),
        };
        print_stdout(&line)?;
        run_dirs.push(dir);
    }
    Ok(run_dirs)
}

/// One seed's paired outcome in a comparison run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedComparison {
    pub seed: u64,
    pub baseline_accuracy: f64,
    pub regularized_accuracy: f64,
    pub baseline_entropy_bits: f64,
    pub regularized_entropy_bits: f64,
    /// regularized − baseline mean prediction entropy.
    pub entropy_delta: f64,
    pub rectification: RectificationSection,
}

/// Aggregate of paired baseline/regularized runs across the seed list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonReport {
    pub seeds: Vec<SeedComparison>,
    pub baseline_mean_accuracy: f64,
    pub baseline_accuracy_stddev: f64,
    pub regularized_mean_accuracy: f64,
    pub regularized_accuracy_stddev: f64,
    /// Mean regularized accuracy minus mean baseline accuracy.
    pub accuracy_gain: f64,
    /// Fraction of the baseline's error eliminated by the gain.
    pub error_rate_reduction: f64,
    pub mean_entropy_delta: f64,
}

/// gain / (1 − baseline): the share of the baseline's error closed by the
/// gain. Defined as 0 when the baseline is already perfect.
pub fn error_rate_reduction(baseline_mean: f64, gain: f64) -> f64 {
    let baseline_error = 1.0 - baseline_mean;
    if baseline_error == 0.0 {
        0.0
    } else {
        gain / baseline_error
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation; 0 for fewer than two observations.
fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// For each seed, trains a baseline (regularizer off) and a regularized
/// model from identical initialization, shuffle order, dropout masks, and
/// augmentation draws, evaluates both on the validation split, and
/// aggregates. Writes `comparison.json` under the output directory.
pub fn cmd_compare(config: &ExperimentConfig) -> Result<ComparisonReport> {
    let net = build_network(config)?;
    let (train, val) = load_splits(&config.data)?;
    if val.is_empty() {
        bail!("comparison needs a non-empty validation split");
    }
    let labels = class_labels(&val);
    let mut seeds = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let mut optimizer = config.optimizer.clone();
        optimizer.seed = seed;
        let (_, baseline_state) =
            run_training(&net, &train, &val, None, &optimizer, &config.augment)?;
        let (_, regularized_state) = run_training(
            &net,
            &train,
            &val,
            config.ptr.as_ref(),
            &optimizer,
            &config.augment,
        )?;
        let (baseline_accuracy, baseline_probs) = evaluate(&net, &baseline_state, &val)?;
        let (regularized_accuracy, regularized_probs) =
            evaluate(&net, &regularized_state, &val)?;
        let baseline_entropy_bits = mean_entropy_bits(&baseline_probs);
        let regularized_entropy_bits = mean_entropy_bits(&regularized_probs);
        let rect = rectification(&regularized_probs, &baseline_probs, &labels)?;
        seeds.push(SeedComparison {
            seed,
            baseline_accuracy,
            regularized_accuracy,
            baseline_entropy_bits,
            regularized_entropy_bits,
            entropy_delta: regularized_entropy_bits - baseline_entropy_bits,
            rectification: rect.into(),
        });
    }

    let baseline: Vec<f64> = seeds.iter().map(|s| s.baseline_accuracy).collect();
    let regularized: Vec<f64> = seeds.iter().map(|s| s.regularized_accuracy).collect();
    let deltas: Vec<f64> = seeds.iter().map(|s| s.entropy_delta).collect();
    let baseline_mean_accuracy = mean(&baseline);
    let regularized_mean_accuracy = mean(&regularized);
    let accuracy_gain = regularized_mean_accuracy - baseline_mean_accuracy;
    let report = ComparisonReport {
        baseline_mean_accuracy,
        baseline_accuracy_stddev: stddev(&baseline),
        regularized_mean_accuracy,
        regularized_accuracy_stddev: stddev(&regularized),
        accuracy_gain,
        error_rate_reduction: error_rate_reduction(baseline_mean_accuracy, accuracy_gain),
        mean_entropy_delta: mean(&deltas),
        seeds,
    };
    fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("creating {}", config.output_dir.display()))?;
    let path = config.output_dir.join("comparison.json");
    fs::write(&path, pretty_json(&report)?)?;
    print_stdout(&format!(
        "compared {} seed(s): gain {:+.6}, error-rate reduction {:+.6}, entropy delta {:+.6} -> {}\n",
        report.seeds.len(),
        report.accuracy_gain,
        report.error_rate_reduction,
        report.mean_entropy_delta,
        path.display()
    ))?;
    Ok(report)
}

/// Accuracy and mean prediction entropy of one checkpoint on the
/// validation split.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub checkpoint: String,
    pub split: String,
    pub n_samples: usize,
    pub accuracy: f64,
    pub mean_entropy_bits: f64,
}

pub fn cmd_eval(
    config: &ExperimentConfig,
    checkpoint: &Path,
    out: Option<&Path>,
) -> Result<EvalReport> {
    let net = build_network(config)?;
    let state = load_checkpoint(checkpoint, &net)?;
    let (_, val) = load_splits(&config.data)?;
    if val.is_empty() {
        bail!("evaluation needs a non-empty validation split");
    }
    let (accuracy, probs) = evaluate(&net, &state, &val)?;
    let report = EvalReport {
        checkpoint: checkpoint.display().to_string(),
        split: "val".into(),
        n_samples: val.len(),
        accuracy,
        mean_entropy_bits: mean_entropy_bits(&probs),
    };
    emit(out, &report)?;
    Ok(report)
}

/// Runs the diagnostics pass for one checkpoint on the validation split,
/// optionally against a baseline checkpoint (enabling rectification
/// analysis), optionally dumping the confusion-mass matrix as CSV.
pub fn cmd_diagnose(
    config: &ExperimentConfig,
    checkpoint: &Path,
    baseline: Option<&Path>,
    confusion_csv: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let net = build_network(config)?;
    let (_, val) = load_splits(&config.data)?;
    if val.is_empty() {
        bail!("diagnostics need a non-empty validation split");
    }
    let labels = class_labels(&val);
    let state = load_checkpoint(checkpoint, &net)?;
    let (_, probs) = evaluate(&net, &state, &val)?;
    let baseline_probs = baseline
        .map(|path| -> Result<Tensor> {
            let baseline_state = load_checkpoint(path, &net)?;
            Ok(evaluate(&net, &baseline_state, &val)?.1)
        })
        .transpose()?;
    let report = diagnose(&probs, &labels, baseline_probs.as_ref())?;
    if let Some(csv_path) = confusion_csv {
        let mass = confusion_mass(&probs, &labels)?;
        fs::write(csv_path, mass.to_csv())
            .with_context(|| format!("writing {}", csv_path.display()))?;
    }
    emit(out, &report)
}

/// Outcome of the stock finite-difference gradient check.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckReport {
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Checks analytic gradients of a stock MLP against central finite
/// differences on a random batch. Fails (non-zero exit) when the worst
/// relative error reaches the tolerance.
pub fn cmd_gradcheck(seed: u64, epsilon: f64, out: Option<&Path>) -> Result<()> {
    let spec = NetworkSpec {
        layers: vec![
            LayerSpec::Dense { in_dim: 6, out_dim: 16 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_dim: 16, out_dim: 12 },
            LayerSpec::Relu,
            LayerSpec::Dense { in_dim: 12, out_dim: 4 },
        ],
        rep_index: 3,
    };
    let net = Network::new(spec, vec![6])?;
    let mut rng = seeded_stream(seed, streams::INIT);
    let mut state = NetworkState::init(&net, &mut rng);
    // Probe inputs drawn uniformly from [-1, 1).
    let batch = generate_pseudo_targets(4, 6, 0.5, &mut rng).map(|v| v * 2.0 - 1.0);
    let labels = [0usize, 1, 2, 3];
    let max_relative_error = finite_difference_check(
        &net,
        &mut state,
        &batch,
        &Objective::MeanCrossEntropy { labels: &labels },
        epsilon,
    )
    .map_err(|e| match e {
        // A bad epsilon is a usage problem, not a gradient failure.
        ptrlab_core::Error::Config(msg) => anyhow::Error::new(ConfigError(msg)),
        other => anyhow::Error::new(other),
    })?;
    let report = GradcheckReport {
        seed,
        epsilon,
        tolerance: GRADCHECK_TOLERANCE,
        max_relative_error,
        passed: max_relative_error < GRADCHECK_TOLERANCE,
    };
    emit(out, &report)?;
    if !report.passed {
        bail!(
            "gradient check failed: max relative error {max_relative_error:.3e} \
             >= {GRADCHECK_TOLERANCE:.0e}"
        );
    }
    Ok(())
}

fn parse_sampler(flag: &str, text: &str) -> Result<Sampler, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError(format!("--{flag}: {e}")))
}

/// Monte-Carlo variance of the toy gradient against its analytic
/// prediction; prints a `VarianceResult`.
pub fn cmd_toy(
    f_o_text: &str,
    t_text: &str,
    x: f64,
    n: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<VarianceResult> {
    let f_o = parse_sampler("f-o", f_o_text)?;
    let t = parse_sampler("t", t_text)?;
    if n < 2 {
        return Err(ConfigError(format!("--n: need at least 2 samples, got {n}")).into());
    }
    let mut rng = seeded_stream(seed, streams::TARGETS);
    let result = variance_experiment(&f_o, &t, x, n, &mut rng);
    emit(out, &result)?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_rate_reduction_matches_hand_arithmetic() {
        // 83.92% baseline with a 2.61-point gain closes 16.23% of the error.
        let r = error_rate_reduction(0.8392, 0.0261);
        assert!((r - 0.162313).abs() < 1e-6, "{r}");
        assert_eq!(error_rate_reduction(1.0, 0.0), 0.0);
    }

    #[test]
    fn stddev_is_the_sample_statistic() {
        assert_eq!(stddev(&[1.0]), 0.0);
        let s = stddev(&[1.0, 2.0, 3.0, 4.0]);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sampler_strings_parse_as_json() {
        let s = parse_sampler("t", r#"{"kind":"uniform","low":0.0,"high":2.0}"#).unwrap();
        assert_eq!(s, Sampler::Uniform { low: 0.0, high: 2.0 });
        assert!(parse_sampler("t", "uniform(0,2)").is_err());
    }
}
