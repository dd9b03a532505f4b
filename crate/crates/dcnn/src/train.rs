//! SGD with momentum under a cosine schedule with warm restarts, and
//! held-out evaluation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use gridbary_core::dataset::DatasetManifest;
use gridbary_core::rng::stream;
use gridbary_core::{kl_divergence, l1_distance, BarycentricWeights, GridMeasure};

use crate::checkpoint::save_checkpoint;
use crate::error::{Error, Result};
use crate::model::{backward, forward, predict, ModelConfig, ModelWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Length of the first cycle, in epochs.
    pub t0: usize,
    pub t_mult: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (needs `checkpoint_dir`).
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    /// JSON-lines step log.
    pub log_path: Option<PathBuf>,
    /// Stop early after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr_max: 0.05,
            lr_min: 1e-5,
            t0: 1,
            t_mult: 2,
            epochs: 31,
            momentum: 0.9,
            seed: 0,
            checkpoint_every: None,
            checkpoint_dir: None,
            log_path: None,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.lr_min >= 0.0 && self.lr_min < self.lr_max && self.lr_max.is_finite()) {
            return bad("need 0 <= lr_min < lr_max");
        }
        if self.t0 < 1 || self.t_mult < 1 {
            return bad("t0 and t_mult must be at least 1");
        }
        if self.batch_size < 1 || self.epochs < 1 {
            return bad("batch size and epochs must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint cadence must be at least 1");
        }
        Ok(())
    }
}

/// Learning rate at fractional epoch `progress`.
pub fn sgdr_lr(progress: f64, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.epochs as f64;
    if !(progress >= 0.0 && progress < total) {
        return Err(Error::OutOfRange { progress, total });
    }
    let (mut start, mut len) = (0.0, cfg.t0 as f64);
    while progress >= start + len {
        start += len;
        len *= cfg.t_mult as f64;
    }
    let t = (progress - start) / len;
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// One training or evaluation example in memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: usize,
    pub inputs: Vec<GridMeasure>,
    pub weights: BarycentricWeights,
    pub target: GridMeasure,
}

const TARGET_DRIFT: f64 = 1e-4;

/// Loads every manifest record and checks it against the model grid.
pub fn load_samples(manifest: &DatasetManifest, base: impl AsRef<Path>, size: usize) -> Result<Vec<Sample>> {
    let base = base.as_ref();
    (0..manifest.records.len())
        .map(|id| {
            let rec = manifest.load_record(base, id)?;
            for m in rec.inputs.iter().chain(std::iter::once(&rec.target)) {
                if m.shape() != (size, size) {
                    return Err(Error::DataShapeMismatch {
                        record: id,
                        reason: format!("grid {:?} for a model of size {size}", m.shape()),
                    });
                }
            }
            let drift = (rec.target.total() - 1.0).abs();
            if drift > TARGET_DRIFT {
                return Err(Error::DataShapeMismatch {
                    record: id,
                    reason: format!("target mass drifts by {drift:.3e}"),
                });
            }
            let target = gridbary_core::normalize(size, size, rec.target.mass())?;
            Ok(Sample {
                id,
                inputs: rec.inputs,
                weights: rec.weights,
                target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub wallclock_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub entries: Vec<LogEntry>,
}

impl TrainLog {
    pub fn first_loss(&self) -> Option<f64> {
        self.entries.first().map(|e| e.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.entries.last().map(|e| e.loss)
    }
}

/// Mean loss and mean gradient over a batch, reduced in batch order.
fn batch_gradient(w: &ModelWeights<f32>, batch: &[&Sample]) -> Result<(f64, ModelWeights<f32>)> {
    let parts = batch
        .par_iter()
        .map(|s| {
            let (_, stack) = forward(w, &s.inputs, &s.weights)?;
            let loss = stack.loss(&s.target)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { record: s.id });
            }
            Ok((loss, backward(w, &stack, &s.target)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = ModelWeights::zeros(w.config())?;
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_scaled(g, 1.0)?;
    }
    let n = batch.len() as f32;
    total.scale(1.0 / n);
    Ok((loss / batch.len() as f64, total))
}

/// Trains from He initialization seeded by `cfg.seed`.
pub fn train(model: &ModelConfig, cfg: &TrainConfig, samples: &[Sample]) -> Result<(ModelWeights<f32>, TrainLog)> {
    cfg.validate()?;
    model.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidConfig("no training samples".into()));
    }
    for s in samples {
        for m in s.inputs.iter().chain(std::iter::once(&s.target)) {
            if m.shape() != (model.size, model.size) {
                return Err(Error::DataShapeMismatch {
                    record: s.id,
                    reason: format!("grid {:?} for a model of size {}", m.shape(), model.size),
                });
            }
        }
    }
    let mut w = ModelWeights::<f32>::init(model, cfg.seed)?;
    let mut velocity = ModelWeights::<f32>::zeros(model)?;
    let mut log = TrainLog::default();
    let mut log_file = match &cfg.log_path {
        Some(p) => Some(fs::File::create(p)?),
        None => None,
    };
    if let (Some(_), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
        fs::create_dir_all(dir)?;
    }

    let started = Instant::now();
    let per_epoch = samples.len().div_ceil(cfg.batch_size);
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream(cfg.seed, "shuffle", epoch as u64));
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if cfg.max_steps.is_some_and(|m| step >= m) {
                break 'epochs;
            }
            let lr = sgdr_lr(epoch as f64 + b as f64 / per_epoch as f64, cfg)?;
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grad) = batch_gradient(&w, &batch)?;
            velocity.scale(cfg.momentum as f32);
            velocity.add_scaled(&grad, 1.0)?;
            w.add_scaled(&velocity, -(lr as f32))?;
            step += 1;
            let entry = LogEntry {
                step,
                epoch,
                lr,
                loss,
                wallclock_ms: started.elapsed().as_secs_f64() * 1e3,
            };
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{}", serde_json::to_string(&entry)?)?;
            }
            log.entries.push(entry);
        }
        log::info!(
            "epoch {} done, loss {:.5}",
            epoch + 1,
            log.last_loss().unwrap_or(f64::NAN)
        );
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if (epoch + 1) % every == 0 {
                save_checkpoint(&w, dir.join(format!("epoch_{:03}.wbck", epoch + 1)))?;
            }
        }
    }
    if !w.is_finite() {
        return Err(Error::NonFiniteLoss {
            record: log.entries.len(),
        });
    }
    Ok((w, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub record_id: String,
    pub n_inputs: usize,
    pub kl: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Scores of the uniform prediction, one per record.
    pub uniform: Vec<EvalRow>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

impl EvalReport {
    pub fn mean_kl(&self) -> f64 {
        mean(&self.rows.iter().map(|r| r.kl).collect::<Vec<_>>())
    }

    pub fn median_kl(&self) -> f64 {
        median(&self.rows.iter().map(|r| r.kl).collect::<Vec<_>>())
    }

    pub fn uniform_mean_kl(&self) -> f64 {
        mean(&self.uniform.iter().map(|r| r.kl).collect::<Vec<_>>())
    }

    /// Per-record rows followed by `mean`, `median` and `uniform_mean` summary rows.
    pub fn summary_rows(&self) -> Vec<EvalRow> {
        let col = |rows: &[EvalRow], f: fn(&EvalRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let n = self.rows.first().map_or(0, |r| r.n_inputs);
        let mut out = self.rows.clone();
        for (name, rows, agg) in [
            ("mean", &self.rows, mean as fn(&[f64]) -> f64),
            ("median", &self.rows, median),
            ("uniform_mean", &self.uniform, mean),
        ] {
            out.push(EvalRow {
                record_id: name.into(),
                n_inputs: n,
                kl: agg(&col(rows, |r| r.kl)),
                l1: agg(&col(rows, |r| r.l1)),
            });
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in self.summary_rows() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores given predictions against the sample targets.
pub fn evaluate_predictions(predictions: &[GridMeasure], samples: &[Sample]) -> Result<EvalReport> {
    if predictions.len() != samples.len() || samples.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "{} predictions for {} samples",
            predictions.len(),
            samples.len()
        )));
    }
    let mut rows = Vec::with_capacity(samples.len());
    let mut uniform = Vec::with_capacity(samples.len());
    for (p, s) in predictions.iter().zip(samples) {
        let (h, w) = s.target.shape();
        let u = GridMeasure::uniform(h, w)?;
        rows.push(EvalRow {
            record_id: s.id.to_string(),
            n_inputs: s.inputs.len(),
            kl: kl_divergence(&s.target, p)?,
            l1: l1_distance(&s.target, p)?,
        });
        uniform.push(EvalRow {
            record_id: s.id.to_string(),
            n_inputs: s.inputs.len(),
            kl: kl_divergence(&s.target, &u)?,
            l1: l1_distance(&s.target, &u)?,
        });
    }
    Ok(EvalReport { rows, uniform })
}

pub fn evaluate(w: &ModelWeights<f32>, samples: &[Sample]) -> Result<EvalReport> {
    let predictions = samples
        .par_iter()
        .map(|s| predict(w, &s.inputs, &s.weights))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(&predictions, samples)
}
