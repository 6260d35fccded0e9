//! Training recipe: cross-entropy / BCE objectives, AdamW with decoupled
//! weight decay, linear warmup into cosine decay (per-epoch granularity),
//! a deterministic epoch/batch loop, and full-state checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bank::{EmbeddingBank, Labels, TaskKind};
use crate::error::{Error, Result};
use crate::model::ProbeModel;
use crate::rng::Rng;
use crate::tensor::{softmax, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub peak_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            warmup_epochs: 5,
            peak_lr: 1e-4,
            batch_size: 32,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dropout_p: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs {} must be < epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.peak_lr <= 0.0 {
            return Err(Error::InvalidConfig("peak_lr must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidDropoutRate(self.dropout_p));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// objectives
// ---------------------------------------------------------------------------

/// Cross-entropy of a logit vector against a class index, via log-sum-exp
/// with max subtraction. Returns (loss, dloss/dlogits).
pub fn ce_loss(logits: &Tensor, target: usize) -> Result<(f64, Tensor)> {
    let c = logits.numel();
    if target >= c {
        return Err(Error::OutOfRange {
            op: "ce_loss",
            detail: format!("target {target} >= num_classes {c}"),
        });
    }
    let max = logits.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .data()
            .iter()
            .map(|z| (z - max).exp())
            .sum::<f64>()
            .ln();
    let loss = lse - logits.data()[target];
    let mut grad = softmax(logits)?;
    grad.data_mut()[target] -= 1.0;
    Ok((loss, grad))
}

/// Binary cross-entropy per class, averaged over classes, in the stable
/// form max(z,0) - z*y + log(1 + exp(-|z|)). Returns (loss, dloss/dlogits).
pub fn bce_loss(logits: &Tensor, targets: &[u8]) -> Result<(f64, Tensor)> {
    let c = logits.numel();
    if targets.len() != c {
        return Err(Error::ShapeMismatch {
            op: "bce_loss",
            detail: format!("{} targets for {c} logits", targets.len()),
        });
    }
    if targets.iter().any(|&y| y > 1) {
        return Err(Error::OutOfRange {
            op: "bce_loss",
            detail: "targets must be 0 or 1".into(),
        });
    }
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(&[c]);
    for (j, (&z, &y)) in logits.data().iter().zip(targets).enumerate() {
        let y = y as f64;
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        let sig = 1.0 / (1.0 + (-z).exp());
        grad.data_mut()[j] = (sig - y) / c as f64;
    }
    Ok((loss / c as f64, grad))
}

// ---------------------------------------------------------------------------
// schedule
// ---------------------------------------------------------------------------

/// Learning rate for a 0-based epoch: linear warmup to peak over
/// `warmup_epochs`, then cosine decay. Constant within an epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::OutOfRange {
            op: "lr_at",
            detail: format!("epoch {epoch} >= epochs {}", cfg.epochs),
        });
    }
    if epoch < cfg.warmup_epochs {
        Ok(cfg.peak_lr * (epoch + 1) as f64 / cfg.warmup_epochs as f64)
    } else {
        let span = (cfg.epochs - cfg.warmup_epochs) as f64;
        let progress = (epoch - cfg.warmup_epochs) as f64 / span;
        Ok(cfg.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl OptimState {
    pub fn for_model(model: &ProbeModel) -> OptimState {
        let m = model
            .params()
            .iter()
            .map(|(_, d)| Tensor::zeros(d.value.shape()))
            .collect::<Vec<_>>();
        OptimState {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One AdamW step over all model parameters from their accumulated grads:
/// decoupled decay theta -= lr*wd*theta, then the bias-corrected Adam
/// update. The step counter increments once per call (per batch).
pub fn adamw_step(model: &mut ProbeModel, opt: &mut OptimState, lr: f64, cfg: &TrainConfig) {
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, m), v) in model.params_mut().into_iter().zip(&mut opt.m).zip(&mut opt.v) {
        for i in 0..p.value.numel() {
            let g = p.grad.data()[i];
            let theta = &mut p.value.data_mut()[i];
            *theta -= lr * cfg.weight_decay * *theta;
            let mi = cfg.beta1 * m.data()[i] + (1.0 - cfg.beta1) * g;
            let vi = cfg.beta2 * v.data()[i] + (1.0 - cfg.beta2) * g * g;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            *theta -= lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// training loop and run state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunState {
    pub config: TrainConfig,
    pub model: ProbeModel,
    pub optim: OptimState,
    /// Number of completed epochs.
    pub epoch: usize,
    pub rng: Rng,
    pub history: Vec<EpochRecord>,
}

impl RunState {
    /// Fresh run: the seed drives parameter init first, then shuffling and
    /// dropout during training.
    pub fn new(model: ProbeModel, rng: Rng, config: TrainConfig) -> RunState {
        let optim = OptimState::for_model(&model);
        RunState {
            config,
            model,
            optim,
            epoch: 0,
            rng,
            history: Vec::new(),
        }
    }
}

pub fn check_compatible(bank: &EmbeddingBank, model: &ProbeModel) -> Result<()> {
    let manifest = bank.manifest();
    if manifest.num_classes != model.num_classes {
        return Err(Error::Incompatible(format!(
            "bank has {} classes, model has {}",
            manifest.num_classes, model.num_classes
        )));
    }
    if manifest.layers.len() != model.layers.len()
        || manifest
            .layers
            .iter()
            .zip(&model.layers)
            .any(|(a, b)| a.kind != b.kind || a.shape != b.shape)
    {
        return Err(Error::Incompatible(
            "bank layer shapes do not match the model".into(),
        ));
    }
    Ok(())
}

fn sample_loss(
    model: &mut ProbeModel,
    bank: &EmbeddingBank,
    sample: usize,
    scale: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let layers = bank.get_sample(sample)?;
    let (logits, cache) = model.forward(&layers, true, Some(rng))?;
    let (loss, mut dlogits) = match bank.labels() {
        Labels::Single(xs) => ce_loss(&logits, xs[sample] as usize)?,
        Labels::Multi(rows) => bce_loss(&logits, &rows[sample])?,
    };
    for g in dlogits.data_mut() {
        *g *= scale;
    }
    model.backward(&cache, &dlogits)?;
    Ok(loss)
}

/// Runs (or resumes) the epoch/batch loop until `config.epochs` epochs have
/// completed. Each epoch shuffles the sample order from the run rng, walks
/// batches in order, and applies one AdamW step per batch on the mean loss.
pub fn train(bank: &EmbeddingBank, run: &mut RunState) -> Result<()> {
    train_until(bank, run, run.config.epochs)
}

/// Like [`train`] but stops once `stop_epoch` epochs have completed, leaving
/// the run resumable. The lr schedule still spans the full `config.epochs`,
/// so an interrupted-and-resumed run retraces an uninterrupted one exactly.
pub fn train_until(bank: &EmbeddingBank, run: &mut RunState, stop_epoch: usize) -> Result<()> {
    run.config.validate()?;
    check_compatible(bank, &run.model)?;
    if matches!(bank.labels(), Labels::Single(_)) != matches!(bank.manifest().task, TaskKind::SingleLabel)
    {
        return Err(Error::Incompatible("label kind does not match task".into()));
    }
    let n = bank.num_samples();
    while run.epoch < stop_epoch.min(run.config.epochs) {
        let lr = lr_at(run.epoch, &run.config)?;
        let mut order: Vec<usize> = (0..n).collect();
        run.rng.shuffle(&mut order);
        let mut total_loss = 0.0;
        for batch in order.chunks(run.config.batch_size) {
            run.model.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                total_loss += sample_loss(&mut run.model, bank, i, scale, &mut run.rng)?;
            }
            adamw_step(&mut run.model, &mut run.optim, lr, &run.config);
        }
        run.history.push(EpochRecord {
            epoch: run.epoch,
            lr,
            mean_loss: total_loss / n as f64,
        });
        run.epoch += 1;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

pub fn checkpoint(run: &RunState, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(run)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn restore(path: &Path) -> Result<RunState> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::CorruptCheckpoint {
        path: path.into(),
        detail: e.to_string(),
    })
}
