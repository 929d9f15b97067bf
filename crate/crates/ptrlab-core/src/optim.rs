//! SGD with momentum, coupled weight decay, and a step learning-rate
//! schedule.
//!
//! The update is the classical momentum form with weight decay added to the
//! gradient before it enters the velocity:
//!
//! ```text
//! v ← μ·v + g + wd·θ
//! θ ← θ − lr·v
//! ```
//!
//! The learning rate is piecewise constant: it is multiplied by
//! `lr_decay_factor` at the start of each milestone epoch. When no milestones
//! are given they default to 60% and 85% of the epoch budget, rounded.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Gradients, NetworkState, ParamPair};
use crate::tensor::Tensor;

/// Optimizer and schedule settings for one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Epochs (1-based) at which the learning rate decays; `None` selects
    /// the default two-step schedule.
    #[serde(default)]
    pub lr_milestones: Option<Vec<usize>>,
    #[serde(default = "default_lr_decay_factor")]
    pub lr_decay_factor: f64,
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Default run seed; experiment drivers may run several seeds and
    /// override this per run.
    #[serde(default)]
    pub seed: u64,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_lr_decay_factor() -> f64 {
    0.1
}
fn default_batch_size() -> usize {
    20
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(Error::Config(format!(
                "lr_decay_factor must lie in (0, 1), got {}",
                self.lr_decay_factor
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if let Some(ms) = &self.lr_milestones {
            let increasing = ms.windows(2).all(|w| w[0] < w[1]);
            let in_range = ms.iter().all(|&m| (1..=self.epochs).contains(&m));
            if !increasing || !in_range {
                return Err(Error::Config(format!(
                    "lr_milestones must be strictly increasing within [1, {}], got {ms:?}",
                    self.epochs
                )));
            }
        }
        Ok(())
    }

    /// Effective milestone list: the explicit one, or 60%/85% of the epoch
    /// budget (rounded, deduplicated) when unset.
    pub fn milestones(&self) -> Vec<usize> {
        match &self.lr_milestones {
            Some(ms) => ms.clone(),
            None => default_milestones(self.epochs),
        }
    }
}

fn default_milestones(epochs: usize) -> Vec<usize> {
    if epochs == 0 {
        return Vec::new();
    }
    let m1 = ((epochs as f64) * 0.60).round().clamp(1.0, epochs as f64) as usize;
    let m2 = ((epochs as f64) * 0.85).round().clamp(1.0, epochs as f64) as usize;
    if m2 > m1 {
        vec![m1, m2]
    } else {
        vec![m1]
    }
}

/// Learning rate in force during `epoch` (1-based): the base rate decayed
/// once per milestone at or before this epoch.
pub fn lr_at_epoch(cfg: &OptimizerConfig, epoch: usize) -> f64 {
    let hits = cfg.milestones().iter().filter(|&&m| m <= epoch).count();
    cfg.lr * cfg.lr_decay_factor.powi(hits as i32)
}

/// One momentum step over every learnable layer. A `None` gradient entry is
/// treated as a zero data gradient (weight decay still applies), so
/// decay-only dynamics can be driven with an empty gradient set.
pub fn sgd_step(
    state: &mut NetworkState,
    grads: &Gradients,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    for (i, slot) in state.layers.iter_mut().enumerate() {
        let Some(layer) = slot else { continue };
        let grad = grads.get(i).and_then(Option::as_ref);
        update_tensor(
            &mut layer.params.weights,
            &mut layer.velocity.weights,
            grad.map(|g: &ParamPair| &g.weights),
            lr,
            momentum,
            weight_decay,
        );
        update_tensor(
            &mut layer.params.biases,
            &mut layer.velocity.biases,
            grad.map(|g| &g.biases),
            lr,
            momentum,
            weight_decay,
        );
    }
}

fn update_tensor(
    theta: &mut Tensor,
    velocity: &mut Tensor,
    grad: Option<&Tensor>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) {
    let td = theta.data_mut();
    let vd = velocity.data_mut();
    match grad {
        Some(g) => {
            let gd = g.data();
            for j in 0..td.len() {
                vd[j] = momentum * vd[j] + gd[j] + weight_decay * td[j];
                td[j] -= lr * vd[j];
            }
        }
        None => {
            for j in 0..td.len() {
                vd[j] = momentum * vd[j] + weight_decay * td[j];
                td[j] -= lr * vd[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerSpec, Network, NetworkSpec};
    use crate::rng::{seeded_stream, streams};

    fn config(epochs: usize) -> OptimizerConfig {
        OptimizerConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_milestones: None,
            lr_decay_factor: 0.1,
            epochs,
            batch_size: 20,
            seed: 0,
        }
    }

    #[test]
    fn default_milestones_sit_at_sixty_and_eighty_five_percent() {
        assert_eq!(default_milestones(100), vec![60, 85]);
        assert_eq!(default_milestones(30), vec![18, 26]);
        assert_eq!(default_milestones(1), vec![1]);
        assert_eq!(default_milestones(0), Vec::<usize>::new());
    }

    #[test]
    fn lr_is_piecewise_constant_and_decays_at_milestones() {
        let mut cfg = config(10);
        cfg.lr_milestones = Some(vec![4, 8]);
        let lrs: Vec<f64> = (1..=10).map(|e| lr_at_epoch(&cfg, e)).collect();
        for (e, lr) in lrs.iter().enumerate() {
            let expect = match e + 1 {
                1..=3 => 0.1,
                4..=7 => 0.01,
                _ => 0.001,
            };
            assert!((lr - expect).abs() < 1e-15, "epoch {} lr {lr}", e + 1);
        }
    }

    #[test]
    fn milestone_validation_rejects_disorder_and_overflow() {
        let mut cfg = config(10);
        cfg.lr_milestones = Some(vec![5, 5]);
        assert!(cfg.validate().is_err());
        cfg.lr_milestones = Some(vec![5, 11]);
        assert!(cfg.validate().is_err());
        cfg.lr_milestones = Some(vec![2, 5]);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn plain_gradient_descent_when_momentum_and_decay_are_off() {
        // Single dense layer, one step: θ ← θ − lr·g.
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 1, out_dim: 1 },
                LayerSpec::Dense { in_dim: 1, out_dim: 1 },
            ],
            rep_index: 0,
        };
        let net = Network::new(spec, vec![1]).unwrap();
        let mut state = NetworkState::init(&net, &mut seeded_stream(0, streams::INIT));
        state.layer_mut(0).params.weights = Tensor::new(vec![1, 1], vec![2.0]).unwrap();
        state.layer_mut(0).params.biases = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut grads: Gradients = vec![None, None];
        grads[0] = Some(ParamPair {
            weights: Tensor::new(vec![1, 1], vec![4.0]).unwrap(),
            biases: Tensor::new(vec![1], vec![-2.0]).unwrap(),
        });
        let before_head = state.layer(1).params.clone();
        sgd_step(&mut state, &grads, 0.5, 0.0, 0.0);
        assert_eq!(state.layer(0).params.weights.data(), &[0.0]);
        assert_eq!(state.layer(0).params.biases.data(), &[2.0]);
        // Zero grad + zero decay: the head must not move.
        assert_eq!(state.layer(1).params, before_head);
    }

    #[test]
    fn constant_gradient_velocity_converges_to_ten_g() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 1, out_dim: 1 },
                LayerSpec::Dense { in_dim: 1, out_dim: 1 },
            ],
            rep_index: 0,
        };
        let net = Network::new(spec, vec![1]).unwrap();
        let mut state = NetworkState::init(&net, &mut seeded_stream(0, streams::INIT));
        let g = 0.3;
        let mut grads: Gradients = vec![None, None];
        grads[0] = Some(ParamPair {
            weights: Tensor::new(vec![1, 1], vec![g]).unwrap(),
            biases: Tensor::new(vec![1], vec![g]).unwrap(),
        });
        for _ in 0..50 {
            sgd_step(&mut state, &grads, 1e-6, 0.9, 0.0);
        }
        let v = state.layer(0).velocity.weights.data()[0];
        assert!((v - 10.0 * g).abs() / (10.0 * g) < 0.01, "velocity {v}");
    }

    #[test]
    fn decay_only_dynamics_shrink_parameters_monotonically() {
        let spec = NetworkSpec {
            layers: vec![
                LayerSpec::Dense { in_dim: 2, out_dim: 2 },
                LayerSpec::Dense { in_dim: 2, out_dim: 2 },
            ],
            rep_index: 0,
        };
        let net = Network::new(spec, vec![2]).unwrap();
        let mut state = NetworkState::init(&net, &mut seeded_stream(3, streams::INIT));
        let norm = |s: &NetworkState| -> f64 {
            s.layers
                .iter()
                .flatten()
                .flat_map(|l| l.params.weights.data())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
        };
        let mut prev = norm(&state);
        let grads: Gradients = vec![None, None];
        for _ in 0..100 {
            sgd_step(&mut state, &grads, 0.1, 0.0, 0.1);
            let cur = norm(&state);
            assert!(cur < prev, "norm must shrink: {cur} vs {prev}");
            prev = cur;
        }
    }

    #[test]
    fn serde_defaults_fill_the_paper_style_settings() {
        let cfg: OptimizerConfig =
            serde_json::from_str(r#"{"lr": 0.01, "epochs": 30}"#).unwrap();
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 5e-4);
        assert_eq!(cfg.batch_size, 20);
        assert_eq!(cfg.lr_decay_factor, 0.1);
        assert_eq!(cfg.milestones(), vec![18, 26]);
        assert!(cfg.validate().is_ok());
    }
}
