//! Training orchestration: the epoch/batch loop that combines the
//! cross-entropy objective with the gradient-balanced pseudo-task, SGD with
//! momentum and weight decay, the stepped learning-rate schedule, and
//! deterministic multi-threaded evaluation.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::backward::{backward_from_rep, dense_backward};
use crate::data::{stack_batch, AugmentPolicy, Dataset};
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::forward::{forward, Mode};
use crate::loss::{softmax_cross_entropy, softmax_probs};
use crate::network::{Network, NetworkSpec};
use crate::optim::{lr_at_epoch, sgd_step, OptimizerConfig};
use crate::params::{NetworkState, ParamPair};
use crate::ptr::{
    balance, gate, generate_pseudo_targets, regression_loss, BalanceRecord, PtrConfig,
};
use crate::rng::{seeded_stream, streams, ChaCha8Rng};
use crate::tensor::Tensor;

/// Fixed forward-pass chunk used during evaluation. Per-sample results do
/// not depend on how samples are grouped, so this is a throughput knob only.
const EVAL_BATCH: usize = 32;

/// Scalar metrics recorded once per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean per-instance training cross-entropy over the epoch; this is the
    /// value the next epoch's gate decision looks at.
    pub mean_ce: f64,
    /// Mean per-instance pseudo-task loss over all training instances; 0
    /// while the gate is closed.
    pub mean_ptr_loss: f64,
    /// Mean applied balance weight over the epoch's batches (0 entries
    /// included for batches where the pseudo-task was off).
    pub mean_w: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_mean_entropy_bits: f64,
    /// Learning rate in force during this epoch.
    pub lr: f64,
    pub gate_on: bool,
}

/// Full record of one training run: the configuration that produced it plus
/// per-epoch metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub data_provenance: String,
    pub network: NetworkSpec,
    pub optimizer: OptimizerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ptr: Option<PtrConfig>,
    pub augment: AugmentPolicy,
    pub epochs: Vec<EpochStats>,
    /// Where the last-epoch checkpoint was written, relative to the report;
    /// filled in by the caller that persists the returned state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_checkpoint: Option<String>,
    /// Wall-clock duration of the run. Deliberately excluded from
    /// serialization so repeated runs of the same config produce
    /// byte-identical report files.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    /// Per-epoch metrics as a flat CSV document, one row per epoch.
    pub fn epochs_csv(&self) -> String {
        let mut out = String::from(
            "epoch,mean_ce,mean_ptr_loss,mean_w,train_accuracy,val_accuracy,\
             val_mean_entropy_bits,lr,gate_on\n",
        );
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.mean_ce,
                e.mean_ptr_loss,
                e.mean_w,
                e.train_accuracy,
                e.val_accuracy,
                e.val_mean_entropy_bits,
                e.lr,
                e.gate_on
            ));
        }
        out
    }
}

/// Per-batch aggregates returned by [`train_batch`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchStats {
    pub batch_size: usize,
    /// Sum of per-instance cross-entropy losses.
    pub sum_ce: f64,
    /// Sum of per-instance pseudo-task losses; 0 when the pseudo-task was
    /// not applied to this batch.
    pub sum_ptr_loss: f64,
    /// Balance weight applied to this batch (0 when off).
    pub w: f64,
}

impl BatchStats {
    pub fn mean_ce(&self) -> f64 {
        self.sum_ce / self.batch_size as f64
    }
}

/// One optimization step over a batch.
///
/// The classifier head receives gradients from the cross-entropy path only;
/// the pseudo-task attaches at the representation, upstream of the head.
/// When the gate is open the representation gradient becomes
/// `(1/B)·(∂CE/∂rep + w·∂L_ptr/∂rep)` with `w` balanced from the unscaled
/// per-instance norms, and everything below the representation sees the
/// combined signal through one backward pass.
#[allow(clippy::too_many_arguments)]
pub fn train_batch(
    net: &Network,
    state: &mut NetworkState,
    batch: &Tensor,
    labels: &[usize],
    ptr: Option<&PtrConfig>,
    gate_on: bool,
    opt: &OptimizerConfig,
    lr: f64,
    batch_index: usize,
    dropout_rng: &mut ChaCha8Rng,
    target_rng: &mut ChaCha8Rng,
) -> Result<(BatchStats, Option<BalanceRecord>)> {
    let trace = forward(net, state, batch, Mode::Train(dropout_rng))?;
    let (ce, grad_logits) = softmax_cross_entropy(trace.logits(), labels)?;
    let b = trace.batch_size() as f64;
    let sum_ce: f64 = ce.iter().sum();
    if !sum_ce.is_finite() {
        return Err(Error::NonFinite(format!(
            "batch {batch_index}: cross-entropy loss is not finite"
        )));
    }

    let head = state.layer(net.head_index());
    let (dw_head, db_head, grad_rep_ce) =
        dense_backward(&head.params.weights, trace.rep(), &grad_logits);

    let mut grad_at_rep = grad_rep_ce.map(|g| g / b);
    let mut record = None;
    let mut sum_ptr_loss = 0.0;
    if let (Some(cfg), true) = (ptr, gate_on) {
        let targets =
            generate_pseudo_targets(labels.len(), net.rep_dim(), cfg.target_mean_m, target_rng);
        let (ptr_loss, grad_rep_ptr) = regression_loss(trace.rep(), &targets, cfg.loss_kind)?;
        let batch_ptr_loss: f64 = ptr_loss.iter().sum();
        if !batch_ptr_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "batch {batch_index}: pseudo-task loss is not finite"
            )));
        }
        let bal = balance(&grad_rep_ce, &grad_rep_ptr, cfg, true)?;
        if bal.w > 0.0 {
            let scale = bal.w / b;
            for (slot, g) in grad_at_rep.data_mut().iter_mut().zip(grad_rep_ptr.data()) {
                *slot += scale * g;
            }
            sum_ptr_loss = batch_ptr_loss;
        }
        record = Some(bal);
    }

    let mut grads = backward_from_rep(net, state, &trace, &grad_at_rep)?;
    grads[net.head_index()] = Some(ParamPair {
        weights: dw_head.map(|v| v / b),
        biases: db_head.map(|v| v / b),
    });
    sgd_step(state, &grads, lr, opt.momentum, opt.weight_decay);

    let stats = BatchStats {
        batch_size: labels.len(),
        sum_ce,
        sum_ptr_loss,
        w: record.as_ref().map_or(0.0, |r| r.w),
    };
    Ok((stats, record))
}

/// Runs the full training loop and returns the report together with the
/// last-epoch parameters (the model a run always keeps, rather than the
/// best-validation one). `ptr: None` trains the vanilla baseline.
///
/// All randomness flows from `opt.seed` through fixed per-purpose generator
/// streams, so a baseline run and a pseudo-task run with the same seed share
/// initial weights, shuffle order, dropout masks, and augmentations exactly.
pub fn run_training(
    net: &Network,
    train: &Dataset,
    val: &Dataset,
    ptr: Option<&PtrConfig>,
    opt: &OptimizerConfig,
    augment: &AugmentPolicy,
) -> Result<(TrainReport, NetworkState)> {
    let started = Instant::now();
    opt.validate()?;
    if let Some(cfg) = ptr {
        cfg.validate()?;
    }
    if train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let sample_shape = train.sample_shape().expect("non-empty dataset");
    if sample_shape != net.input_shape() {
        return Err(Error::Config(format!(
            "sample shape {sample_shape:?} does not match network input {:?}",
            net.input_shape()
        )));
    }
    if train.n_classes > net.n_classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes but the classifier head emits {}",
            train.n_classes,
            net.n_classes()
        )));
    }
    if !val.is_empty() && val.sample_shape() != Some(sample_shape) {
        return Err(Error::Config(format!(
            "validation sample shape {:?} does not match training shape {sample_shape:?}",
            val.sample_shape()
        )));
    }
    augment.validate_for(sample_shape)?;

    let seed = opt.seed;
    let mut state = NetworkState::init(net, &mut seeded_stream(seed, streams::INIT));
    let mut shuffle_rng = seeded_stream(seed, streams::SHUFFLE);
    let mut dropout_rng = seeded_stream(seed, streams::DROPOUT);
    let mut target_rng = seeded_stream(seed, streams::TARGETS);
    let mut augment_rng = seeded_stream(seed, streams::AUGMENT);

    let mut epochs = Vec::with_capacity(opt.epochs);
    let mut latched = false;
    let mut prev_mean_ce: Option<f64> = None;
    let mut indices: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=opt.epochs {
        let lr = lr_at_epoch(opt, epoch);
        let gate_on = match ptr {
            Some(cfg) => gate(prev_mean_ce, cfg.gate_t, latched),
            None => false,
        };
        latched = gate_on;

        indices.shuffle(&mut shuffle_rng);
        let mut sum_ce = 0.0;
        let mut sum_ptr = 0.0;
        let mut sum_w = 0.0;
        let mut n_batches = 0usize;
        for (batch_index, chunk) in indices.chunks(opt.batch_size).enumerate() {
            let (batch, labels) = if augment.is_identity() {
                stack_batch(train, chunk, None)
            } else {
                stack_batch(train, chunk, Some((augment, &mut augment_rng)))
            };
            let (stats, _) = train_batch(
                net,
                &mut state,
                &batch,
                &labels,
                ptr,
                gate_on,
                opt,
                lr,
                batch_index,
                &mut dropout_rng,
                &mut target_rng,
            )?;
            sum_ce += stats.sum_ce;
            sum_ptr += stats.sum_ptr_loss;
            sum_w += stats.w;
            n_batches += 1;
        }
        let n_train = train.len() as f64;
        let mean_ce = sum_ce / n_train;
        prev_mean_ce = Some(mean_ce);

        let (train_accuracy, _) = evaluate(net, &state, train)?;
        let (val_accuracy, val_mean_entropy_bits) = if val.is_empty() {
            (0.0, 0.0)
        } else {
            let (acc, probs) = evaluate(net, &state, val)?;
            (acc, diagnostics::mean_entropy_bits(&probs))
        };
        epochs.push(EpochStats {
            epoch,
            mean_ce,
            mean_ptr_loss: sum_ptr / n_train,
            mean_w: if n_batches > 0 { sum_w / n_batches as f64 } else { 0.0 },
            train_accuracy,
            val_accuracy,
            val_mean_entropy_bits,
            lr,
            gate_on,
        });
    }

    let report = TrainReport {
        seed,
        data_provenance: train.provenance.clone(),
        network: net.spec().clone(),
        optimizer: opt.clone(),
        ptr: ptr.copied(),
        augment: *augment,
        epochs,
        final_checkpoint: None,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((report, state))
}

/// Argmax accuracy and the full softmax probability matrix (samples in
/// dataset order), evaluated with dropout off. Worker count comes from the
/// `PTRLAB_THREADS` cap; the output bytes never depend on it.
pub fn evaluate(net: &Network, state: &NetworkState, data: &Dataset) -> Result<(f64, Tensor)> {
    evaluate_with_threads(net, state, data, eval_threads(data.len()))
}

/// [`evaluate`] with an explicit worker count. Samples are split into
/// contiguous spans, one per worker, and each probability row lands at its
/// sample's position, so any worker count produces identical results.
pub fn evaluate_with_threads(
    net: &Network,
    state: &NetworkState,
    data: &Dataset,
    threads: usize,
) -> Result<(f64, Tensor)> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    if data.sample_shape() != Some(net.input_shape()) {
        return Err(Error::Config(format!(
            "sample shape {:?} does not match network input {:?}",
            data.sample_shape(),
            net.input_shape()
        )));
    }
    if data.n_classes > net.n_classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes but the classifier head emits {}",
            data.n_classes,
            net.n_classes()
        )));
    }

    let n = data.len();
    let k = net.n_classes();
    let threads = threads.clamp(1, n);
    let mut flat = vec![0.0; n * k];

    if threads == 1 {
        eval_span(net, state, data, 0, n, &mut flat)?;
    } else {
        let spans = split_spans(n, threads);
        let mut jobs = Vec::with_capacity(spans.len());
        let mut rest: &mut [f64] = &mut flat;
        for &(start, end) in &spans {
            let (head, tail) = rest.split_at_mut((end - start) * k);
            jobs.push((start, end, head));
            rest = tail;
        }
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .into_iter()
                .map(|(start, end, out)| {
                    scope.spawn(move || eval_span(net, state, data, start, end, out))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        for result in results {
            result?;
        }
    }

    let labels: Vec<usize> = data.samples.iter().map(|(_, l)| *l).collect();
    let probs = Tensor::new(vec![n, k], flat)?;
    let acc = diagnostics::accuracy(&probs, &labels);
    Ok((acc, probs))
}

fn eval_span(
    net: &Network,
    state: &NetworkState,
    data: &Dataset,
    start: usize,
    end: usize,
    out: &mut [f64],
) -> Result<()> {
    let mut pos = 0;
    let mut i = start;
    while i < end {
        let stop = (i + EVAL_BATCH).min(end);
        let chunk: Vec<usize> = (i..stop).collect();
        let (batch, _) = stack_batch(data, &chunk, None);
        let trace = forward(net, state, &batch, Mode::Eval)?;
        let probs = softmax_probs(trace.logits());
        out[pos..pos + probs.len()].copy_from_slice(probs.data());
        pos += probs.len();
        i = stop;
    }
    Ok(())
}

/// `n` split into `parts` contiguous near-equal spans.
fn split_spans(n: usize, parts: usize) -> Vec<(usize, usize)> {
    let base = n / parts;
    let rem = n % parts;
    let mut spans = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < rem);
        spans.push((start, start + len));
        start += len;
    }
    spans
}

fn eval_threads(n_samples: usize) -> usize {
    let available = std::thread::available_parallelism()
        .map(|v| v.get())
        .unwrap_or(1);
    let cap = std::env::var("PTRLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .unwrap_or(available);
    cap.min(available).min(n_samples.max(1))
}
