//! Prediction diagnostics: confusion-mass accumulation, correct-class
//! probability mass, prediction entropy, and rectification analysis between
//! a regularized model and its baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const ROW_SUM_TOL: f64 = 1e-9;

/// D×D accumulation of predicted probability vectors, one row per
/// ground-truth class: `C[y][d]` is the total probability mass the model
/// placed on class `d` across all samples whose true class is `y`. With
/// valid probability rows the total mass equals the sample count, so the
/// diagonal sum measures how much mass landed on correct classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMass {
    c: Vec<f64>,
    n_classes: usize,
    n_samples: usize,
}

impl ConfusionMass {
    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn entry(&self, truth: usize, predicted: usize) -> f64 {
        self.c[truth * self.n_classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[f64] {
        &self.c[truth * self.n_classes..(truth + 1) * self.n_classes]
    }

    /// S: probability mass on correct classes.
    pub fn diag_mass(&self) -> f64 {
        (0..self.n_classes).map(|i| self.entry(i, i)).sum()
    }

    /// S′: misallocated mass, defined as total − S so that S + S′ always
    /// reproduces the accumulated total exactly.
    pub fn offdiag_mass(&self) -> f64 {
        self.total_mass() - self.diag_mass()
    }

    pub fn total_mass(&self) -> f64 {
        self.c.iter().sum()
    }

    /// Renders the matrix as CSV, one ground-truth row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for truth in 0..self.n_classes {
            let row: Vec<String> = self.row(truth).iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

fn check_probability_rows(probs: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let [n, d] = match *probs.shape() {
        [n, d] => [n, d],
        _ => {
            return Err(Error::Shape(format!(
                "probabilities must be a samples × classes matrix, got shape {:?}",
                probs.shape()
            )))
        }
    };
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} probability rows but {} labels",
            labels.len()
        )));
    }
    for (i, &label) in labels.iter().enumerate() {
        if label >= d {
            return Err(Error::LabelOutOfRange { label, n_classes: d });
        }
        let row = probs.row(i);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::Spec(format!(
                "probability row {i} sums to {sum}, expected 1 within {ROW_SUM_TOL:e}"
            )));
        }
        if row.iter().any(|&p| p < 0.0) {
            return Err(Error::Spec(format!(
                "probability row {i} contains a negative entry"
            )));
        }
    }
    Ok((n, d))
}

/// Accumulates each probability row into the matrix row of its ground-truth
/// class. Rows must be valid probability vectors.
pub fn confusion_mass(probs: &Tensor, labels: &[usize]) -> Result<ConfusionMass> {
    let (n, d) = check_probability_rows(probs, labels)?;
    let mut c = vec![0.0; d * d];
    for (i, &label) in labels.iter().enumerate() {
        for (slot, &p) in c[label * d..(label + 1) * d].iter_mut().zip(probs.row(i)) {
            *slot += p;
        }
    }
    Ok(ConfusionMass { c, n_classes: d, n_samples: n })
}

/// Mean over samples of the prediction entropy −Σ_d p_d·log₂(p_d), with
/// 0·log 0 taken as 0. Ranges over [0, log₂ D].
pub fn mean_entropy_bits(probs: &Tensor) -> f64 {
    assert_eq!(probs.shape().len(), 2, "expected a samples × classes matrix");
    let n = probs.shape()[0];
    if n == 0 {
        return 0.0;
    }
    let total: f64 = (0..n)
        .map(|i| -> f64 {
            probs
                .row(i)
                .iter()
                .map(|&p| if p > 0.0 { -p * p.log2() } else { 0.0 })
                .sum()
        })
        .sum();
    total / n as f64
}

/// Index of the largest entry, ties broken toward the lowest index so
/// reports stay deterministic.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn accuracy(probs: &Tensor, labels: &[usize]) -> f64 {
    assert_eq!(probs.shape()[0], labels.len(), "probability/label count mismatch");
    if labels.is_empty() {
        return 0.0;
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| argmax(probs.row(i)) == label)
        .count();
    correct as f64 / labels.len() as f64
}

/// Sample indices partitioned by how the regularized model's predictions
/// relate to the baseline's: `true_rectified` holds baseline errors the
/// regularized model fixed, `false_rectified` the samples it newly broke.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectificationReport {
    pub true_rectified: Vec<usize>,
    pub false_rectified: Vec<usize>,
    pub both_correct: Vec<usize>,
    pub both_wrong: Vec<usize>,
}

impl RectificationReport {
    pub fn total(&self) -> usize {
        self.true_rectified.len()
            + self.false_rectified.len()
            + self.both_correct.len()
            + self.both_wrong.len()
    }
}

/// Partitions the samples by comparing argmax predictions of the
/// regularized model (`probs_regularized`) against the baseline
/// (`probs_baseline`) on shared labels.
pub fn rectification(
    probs_regularized: &Tensor,
    probs_baseline: &Tensor,
    labels: &[usize],
) -> Result<RectificationReport> {
    if probs_regularized.shape() != probs_baseline.shape() {
        return Err(Error::Shape(format!(
            "prediction matrices disagree: {:?} vs {:?}",
            probs_regularized.shape(),
            probs_baseline.shape()
        )));
    }
    check_probability_rows(probs_regularized, labels)?;
    check_probability_rows(probs_baseline, labels)?;
    let mut report = RectificationReport::default();
    for (i, &label) in labels.iter().enumerate() {
        let reg_correct = argmax(probs_regularized.row(i)) == label;
        let base_correct = argmax(probs_baseline.row(i)) == label;
        match (reg_correct, base_correct) {
            (true, true) => report.both_correct.push(i),
            (true, false) => report.true_rectified.push(i),
            (false, true) => report.false_rectified.push(i),
            (false, false) => report.both_wrong.push(i),
        }
    }
    Ok(report)
}

/// Rectification index lists together with their sizes, as emitted in
/// diagnostics reports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RectificationSection {
    pub n_true_rectified: usize,
    pub n_false_rectified: usize,
    pub n_both_correct: usize,
    pub n_both_wrong: usize,
    pub true_rectified: Vec<usize>,
    pub false_rectified: Vec<usize>,
    pub both_correct: Vec<usize>,
    pub both_wrong: Vec<usize>,
}

impl From<RectificationReport> for RectificationSection {
    fn from(r: RectificationReport) -> Self {
        RectificationSection {
            n_true_rectified: r.true_rectified.len(),
            n_false_rectified: r.false_rectified.len(),
            n_both_correct: r.both_correct.len(),
            n_both_wrong: r.both_wrong.len(),
            true_rectified: r.true_rectified,
            false_rectified: r.false_rectified,
            both_correct: r.both_correct,
            both_wrong: r.both_wrong,
        }
    }
}

/// Summary of one model's predictions, optionally contrasted against a
/// baseline model's predictions on the same samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n_samples: usize,
    pub accuracy: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "S_prime")]
    pub s_prime: f64,
    pub mean_entropy_bits: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rectification: Option<RectificationSection>,
}

/// Runs the full diagnostics pass over one prediction matrix.
pub fn diagnose(
    probs: &Tensor,
    labels: &[usize],
    baseline_probs: Option<&Tensor>,
) -> Result<DiagnosticsReport> {
    let mass = confusion_mass(probs, labels)?;
    let rectification = baseline_probs
        .map(|base| rectification(probs, base, labels).map(RectificationSection::from))
        .transpose()?;
    Ok(DiagnosticsReport {
        n_samples: mass.n_samples(),
        accuracy: accuracy(probs, labels),
        s: mass.diag_mass(),
        s_prime: mass.offdiag_mass(),
        mean_entropy_bits: mean_entropy_bits(probs),
        rectification,
    })
}
