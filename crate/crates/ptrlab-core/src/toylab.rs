//! Single-neuron gradient laboratory: closed-form gradients for a ReLU
//! neuron regressed onto a scalar target, and Monte-Carlo verification that
//! the gradient variance decomposes into the output variance plus the
//! target variance — the quantity a random pseudo-target inflates and a
//! constant zero target does not.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::ChaCha8Rng;

/// A one-weight, one-input neuron: pre-activation `a·x`, output
/// `ReLU(a·x)`, trained with the squared-error objective in [`toy_loss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyNeuron {
    pub a: f64,
    pub x: f64,
}

impl ToyNeuron {
    pub fn output(&self) -> f64 {
        (self.a * self.x).max(0.0)
    }

    pub fn gradient(&self, t: f64) -> f64 {
        toy_gradient(self.a, self.x, t)
    }
}

/// Regression objective ½·(ReLU(a·x) − t)².
pub fn toy_loss(a: f64, x: f64, t: f64) -> f64 {
    let f_o = (a * x).max(0.0);
    0.5 * (f_o - t) * (f_o - t)
}

/// d/da of [`toy_loss`]: `(ReLU(a·x) − t)·x` while the neuron is active
/// (`a·x > 0`), zero otherwise — an inactive ReLU blocks the chain rule.
pub fn toy_gradient(a: f64, x: f64, t: f64) -> f64 {
    let f_i = a * x;
    if f_i > 0.0 {
        (f_i - t) * x
    } else {
        0.0
    }
}

/// A scalar distribution with a known variance, so Monte-Carlo estimates
/// can be compared against the analytic prediction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    Constant { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl Sampler {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Sampler::Constant { value } => value,
            Sampler::Uniform { low, high } => {
                debug_assert!(low <= high, "uniform sampler bounds out of order");
                low + rng.random::<f64>() * (high - low)
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Sampler::Constant { .. } => 0.0,
            Sampler::Uniform { low, high } => (high - low) * (high - low) / 12.0,
        }
    }
}

/// Outcome of one variance experiment: the measured gradient variance, the
/// analytic prediction `x²·(Var(f°) + Var(t))`, and their relative gap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceResult {
    pub empirical_var: f64,
    pub predicted_var: f64,
    pub n_samples: usize,
    pub relative_gap: f64,
}

/// Single-pass (Welford) variance over a sample stream.
struct RunningVariance {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningVariance {
    fn new() -> Self {
        RunningVariance { n: 0, mean: 0.0, m2: 0.0 }
    }

    fn push(&mut self, value: f64) {
        self.n += 1;
        let delta = value - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (value - self.mean);
    }

    fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

/// Estimates the variance of the active-neuron gradient `(f° − t)·x` over
/// `n` independent draws of output `f°` and target `t`, compared against
/// the prediction `x²·(Var(f°) + Var(t))`. The output sampler stands in for
/// an active neuron, so it should produce positive values.
pub fn variance_experiment(
    f_o_sampler: &Sampler,
    t_sampler: &Sampler,
    x: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> VarianceResult {
    assert!(n >= 2, "variance needs at least two samples");
    let mut running = RunningVariance::new();
    for _ in 0..n {
        let f_o = f_o_sampler.sample(rng);
        let t = t_sampler.sample(rng);
        running.push((f_o - t) * x);
    }
    let empirical_var = running.variance();
    let predicted_var = x * x * (f_o_sampler.variance() + t_sampler.variance());
    let relative_gap = if predicted_var == 0.0 {
        empirical_var
    } else {
        (empirical_var - predicted_var).abs() / predicted_var
    };
    VarianceResult { empirical_var, predicted_var, n_samples: n, relative_gap }
}

/// Paired comparison of gradient variance under the constant-zero target
/// against a `Uniform[0, 2m)` pseudo-target, with `x = 1`. Both arms share
/// the same output draws, so at `m = 0` the two variances agree exactly;
/// for `m > 0` the pseudo-target arm exceeds the other by about `m²/3`.
pub fn fnp_vs_ptr_variance(
    f_o_sampler: &Sampler,
    m: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (f64, f64) {
    assert!(m >= 0.0, "target mean must be non-negative");
    assert!(n >= 2, "variance needs at least two samples");
    let mut fnp = RunningVariance::new();
    let mut ptr = RunningVariance::new();
    for _ in 0..n {
        let f_o = f_o_sampler.sample(rng);
        let t = rng.random::<f64>() * 2.0 * m;
        fnp.push(f_o);
        ptr.push(f_o - t);
    }
    (fnp.variance(), ptr.variance())
}
