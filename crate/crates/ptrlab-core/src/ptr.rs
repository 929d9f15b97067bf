//! The pseudo-task regularizer.
//!
//! A randomized regression task is attached at the representation layer: each
//! batch regresses the representation toward fresh uniform targets on
//! `[0, 2m)` that are never reused, so the pseudo-task never converges and
//! keeps perturbing the backbone. Its gradient is weighted per batch so the
//! mean cross-entropy gradient norm at the representation stays `R` times the
//! mean weighted pseudo-task gradient norm — a signal-to-noise ratio held
//! exactly by construction, which also makes the regularizer invariant to any
//! rescaling of the regression loss.
//!
//! All losses and gradients here follow the per-instance convention; norms
//! are taken on unscaled per-instance gradients, so a common batch-mean
//! factor cancels out of the balance weight.

use serde::{Deserialize, Serialize};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;
use crate::tensor::Tensor;

/// Regression loss attached at the representation layer.
///
/// `L2` is `½·Σ(rep-t)²` (gradient `rep-t`), `SML1` is the smooth-L1 loss
/// with threshold 1 (gradient clamped to `[-1, 1]` per coordinate), and `FNP`
/// is the feature-norm penalty: `L2` against a constant zero target, ignoring
/// whatever targets are passed in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PtrKind {
    L2,
    SML1,
    FNP,
}

/// Regularizer settings. Serialized inside the experiment config under the
/// keys `ratio_R`, `target_mean_m`, `gate_T`, `loss_kind`, and
/// `epsilon_norm`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtrConfig {
    /// Target ratio of mean CE gradient norm to mean weighted pseudo-task
    /// gradient norm at the representation.
    #[serde(rename = "ratio_R", default = "default_ratio_r")]
    pub ratio_r: f64,
    /// Mean of the uniform pseudo-target distribution on `[0, 2m)`.
    #[serde(default = "default_target_mean_m")]
    pub target_mean_m: f64,
    /// The pseudo-task joins training once the previous epoch's mean
    /// cross-entropy falls below this threshold (and stays on from then on).
    #[serde(rename = "gate_T", default = "default_gate_t")]
    pub gate_t: f64,
    #[serde(default = "default_loss_kind")]
    pub loss_kind: PtrKind,
    /// Guard against dividing by a vanishing pseudo-task gradient norm.
    #[serde(default = "default_epsilon_norm")]
    pub epsilon_norm: f64,
}

fn default_ratio_r() -> f64 {
    3.0
}
fn default_target_mean_m() -> f64 {
    1.0
}
fn default_gate_t() -> f64 {
    1.0
}
fn default_loss_kind() -> PtrKind {
    PtrKind::SML1
}
fn default_epsilon_norm() -> f64 {
    1e-12
}

impl Default for PtrConfig {
    fn default() -> Self {
        Self {
            ratio_r: default_ratio_r(),
            target_mean_m: default_target_mean_m(),
            gate_t: default_gate_t(),
            loss_kind: default_loss_kind(),
            epsilon_norm: default_epsilon_norm(),
        }
    }
}

impl PtrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio_r > 0.0 && self.ratio_r.is_finite()) {
            return Err(Error::Config(format!("ratio_R must be positive, got {}", self.ratio_r)));
        }
        if !(self.gate_t > 0.0 && self.gate_t.is_finite()) {
            return Err(Error::Config(format!("gate_T must be positive, got {}", self.gate_t)));
        }
        if !(self.target_mean_m >= 0.0 && self.target_mean_m.is_finite()) {
            return Err(Error::Config(format!(
                "target_mean_m must be non-negative, got {}",
                self.target_mean_m
            )));
        }
        if !(self.epsilon_norm > 0.0 && self.epsilon_norm.is_finite()) {
            return Err(Error::Config(format!(
                "epsilon_norm must be positive, got {}",
                self.epsilon_norm
            )));
        }
        Ok(())
    }
}

/// Per-batch record of the gradient-norm balance.
#[derive(Clone, Debug, Serialize)]
pub struct BalanceRecord {
    /// Batch mean of the per-instance CE gradient norms at the representation.
    pub g_ce_mean: f64,
    /// Batch mean of the per-instance pseudo-task gradient norms.
    pub g_ptr_mean: f64,
    /// Balance weight `g_ce_mean / (g_ptr_mean · R)`, or 0 when the gate is
    /// closed or the norm guard trips.
    pub w: f64,
    /// Whether the pseudo-task was actually applied to this batch.
    pub gated_on: bool,
    pub per_instance_g_ce: Vec<f64>,
    pub per_instance_g_ptr: Vec<f64>,
}

/// Fresh i.i.d. uniform targets on `[0, 2m)`, one per representation entry.
/// Every call draws new values — targets are never reused across batches.
///
/// Sampling multiplies a unit uniform draw by `2m`, so `m = 0` produces an
/// exactly zero tensor while consuming the same number of draws as any other
/// `m`, keeping paired runs on identical generator trajectories.
pub fn generate_pseudo_targets(
    batch_size: usize,
    rep_dim: usize,
    m: f64,
    rng: &mut ChaCha8Rng,
) -> Tensor {
    let data: Vec<f64> = (0..batch_size * rep_dim)
        .map(|_| rng.random::<f64>() * 2.0 * m)
        .collect();
    Tensor::new(vec![batch_size, rep_dim], data).expect("target shape")
}

/// Per-instance regression losses and representation gradients for a
/// `[batch, rep_dim]` representation against equally shaped targets.
pub fn regression_loss(
    rep: &Tensor,
    targets: &Tensor,
    kind: PtrKind,
) -> Result<(Vec<f64>, Tensor)> {
    if rep.shape() != targets.shape() {
        return Err(Error::Shape(format!(
            "representation shape {:?} does not match target shape {:?}",
            rep.shape(),
            targets.shape()
        )));
    }
    let batch = rep.shape()[0];
    let dim = rep.row_len();
    let mut losses = vec![0.0; batch];
    let mut grad = vec![0.0; batch * dim];
    for bi in 0..batch {
        let r = rep.row(bi);
        let t = targets.row(bi);
        let grow = &mut grad[bi * dim..(bi + 1) * dim];
        let mut loss = 0.0;
        for j in 0..dim {
            // FNP pins the target to zero no matter what was passed in.
            let d = match kind {
                PtrKind::FNP => r[j],
                _ => r[j] - t[j],
            };
            match kind {
                PtrKind::L2 | PtrKind::FNP => {
                    loss += 0.5 * d * d;
                    grow[j] = d;
                }
                PtrKind::SML1 => {
                    if d.abs() < 1.0 {
                        loss += 0.5 * d * d;
                    } else {
                        loss += d.abs() - 0.5;
                    }
                    grow[j] = d.clamp(-1.0, 1.0);
                }
            }
        }
        losses[bi] = loss;
    }
    let grad = Tensor::new(rep.shape().to_vec(), grad).expect("gradient shape");
    Ok((losses, grad))
}

/// Per-instance CE gradient at the representation, through the classifier
/// head: `Wᵀ(softmax(z) - one_hot(y))` for each row of `grad_logits`.
pub fn grad_ce_at_rep(classifier_weights: &Tensor, grad_logits: &Tensor) -> Result<Tensor> {
    let n_classes = classifier_weights.shape()[0];
    let rep_dim = classifier_weights.shape()[1];
    if grad_logits.row_len() != n_classes {
        return Err(Error::Shape(format!(
            "logit gradient width {} does not match {n_classes} classes",
            grad_logits.row_len()
        )));
    }
    let batch = grad_logits.shape()[0];
    let (wd, gd) = (classifier_weights.data(), grad_logits.data());
    let mut out = vec![0.0; batch * rep_dim];
    for bi in 0..batch {
        let grow = &gd[bi * n_classes..(bi + 1) * n_classes];
        let orow = &mut out[bi * rep_dim..(bi + 1) * rep_dim];
        for (o, &gv) in grow.iter().enumerate() {
            let wrow = &wd[o * rep_dim..(o + 1) * rep_dim];
            for j in 0..rep_dim {
                orow[j] += gv * wrow[j];
            }
        }
    }
    Tensor::new(vec![batch, rep_dim], out)
}

/// Computes the balance weight for one batch from the two per-instance
/// gradient fields at the representation (`[batch, rep_dim]` each).
///
/// `w = ḡ_ce / (ḡ_ptr · R)` whenever the gate is open and the mean
/// pseudo-task norm clears `epsilon_norm`; otherwise `w = 0` and the record
/// reports the pseudo-task as not applied.
pub fn balance(
    grad_rep_ce: &Tensor,
    grad_rep_ptr: &Tensor,
    config: &PtrConfig,
    gated_on: bool,
) -> Result<BalanceRecord> {
    if grad_rep_ce.shape() != grad_rep_ptr.shape() {
        return Err(Error::Shape(format!(
            "CE gradient shape {:?} does not match pseudo-task gradient shape {:?}",
            grad_rep_ce.shape(),
            grad_rep_ptr.shape()
        )));
    }
    let per_instance_g_ce = row_norms(grad_rep_ce);
    let per_instance_g_ptr = row_norms(grad_rep_ptr);
    let g_ce_mean = mean(&per_instance_g_ce);
    let g_ptr_mean = mean(&per_instance_g_ptr);
    let applied = gated_on && g_ptr_mean >= config.epsilon_norm;
    let w = if applied {
        g_ce_mean / (g_ptr_mean * config.ratio_r)
    } else {
        0.0
    };
    Ok(BalanceRecord {
        g_ce_mean,
        g_ptr_mean,
        w,
        gated_on: applied,
        per_instance_g_ce,
        per_instance_g_ptr,
    })
}

/// Gate decision for an epoch: the pseudo-task turns on once a previous
/// epoch's mean training cross-entropy has fallen below `gate_t`, and stays
/// on (latched) for the rest of the run.
pub fn gate(prev_epoch_mean_ce: Option<f64>, gate_t: f64, latched: bool) -> bool {
    latched || prev_epoch_mean_ce.is_some_and(|ce| ce < gate_t)
}

fn row_norms(t: &Tensor) -> Vec<f64> {
    (0..t.shape()[0])
        .map(|i| t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
