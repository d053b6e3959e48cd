//! Training loop, losses, the two evaluation metrics, and checkpoint files.
//!
//! A dataset directory is split by sample index: the first `train_size`
//! samples are the training pool, and the validation/test blocks sit at the
//! fixed tail of the file, so varying the training size never changes what
//! a model is evaluated on.

mod sweep;

pub use sweep::{sweep, SweepCell, SweepRow, CSV_HEADER};

use crate::ad::{ParamStore, Session, Tensor, TensorId};
use crate::geom::Vec3;
use crate::model::{forward_positions, GraphBatch, ModelConfig, ModelKind, ModelSpecs};
use crate::rng::rng_for;
use crate::sim::{SimError, TrajectoryDataset};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

const SHUFFLE_TAG: u64 = 0x5460;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged: non-finite loss at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Param(#[from] crate::ad::ParamError),
    #[error("checkpoint config parse error: {0}")]
    Config(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Constraint-regularization factor (used by `egnn-reg` only).
    pub lambda: f64,
    pub seed: u64,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 200,
            learning_rate: 5e-4,
            weight_decay: 1e-10,
            lambda: 0.1,
            seed: 0,
            train_size: 500,
            val_size: 200,
            test_size: 200,
        }
    }
}

/// Index ranges of the three splits within one dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: std::ops::Range<usize>,
    pub val: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
}

impl TrainConfig {
    pub fn splits(&self, dataset_len: usize) -> Result<Splits, TrainError> {
        let tail = self.val_size + self.test_size;
        if dataset_len < tail + self.train_size {
            return Err(TrainError::Invalid(format!(
                "dataset has {dataset_len} samples; needs >= {} for a {}/{}/{} split",
                self.train_size + tail,
                self.train_size,
                self.val_size,
                self.test_size,
            )));
        }
        if self.batch_size == 0 || self.batch_size > self.train_size {
            return Err(TrainError::Invalid(format!(
                "batch size {} must be in 1..={}",
                self.batch_size, self.train_size
            )));
        }
        Ok(Splits {
            train: 0..self.train_size,
            val: dataset_len - tail..dataset_len - self.test_size,
            test: dataset_len - self.test_size..dataset_len,
        })
    }
}

/// Evaluation result: raw MSE (multiply by 100 for the reported x1e-2
/// convention) and the mean per-trajectory constraint error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub constraint_error: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub wall_seconds: f64,
}

pub struct TrainOutcome {
    pub params: ParamStore,
    pub history: TrainHistory,
}

/// Mean squared error over every particle coordinate:
/// `sum |pred - target|^2 / (samples * particles * 3)`.
pub fn mse_loss(sess: &mut Session, pred: TensorId, target: TensorId) -> TensorId {
    let diff = sess.tape.sub(pred, target);
    let sq = sess.tape.mul(diff, diff);
    let cols = sess.tape.sum_rows(sq);
    let total = sess.tape.sum_all(cols);
    let count = sess.tape.value(pred).len() as f64;
    sess.tape.scale(total, 1.0 / count)
}

/// Plain-value MSE with the same normalization as [`mse_loss`].
pub fn mse_value(pred: &[Vec3], target: &[Vec3]) -> f64 {
    assert_eq!(pred.len(), target.len());
    let total: f64 = pred.iter().zip(target).map(|(a, b)| (*a - *b).norm_squared()).sum();
    total / (pred.len() * 3) as f64
}

/// Constrained arm-length pairs of a batch: (node a, node b, input length).
fn arm_pairs(batch: &GraphBatch) -> Vec<(usize, usize, f64)> {
    let xs = batch.positions.to_vec3s();
    let mut pairs = Vec::new();
    for k in 0..batch.sticks.members[0].len() {
        let (a, b) = (batch.sticks.members[0][k], batch.sticks.members[1][k]);
        pairs.push((a, b, (xs[a] - xs[b]).norm()));
    }
    for k in 0..batch.hinges.members[0].len() {
        let p = batch.hinges.members[0][k];
        for arm in 0..2 {
            let m = batch.hinges.members[arm + 1][k];
            pairs.push((p, m, (xs[p] - xs[m]).norm()));
        }
    }
    pairs
}

/// Total change in constrained lengths between input and prediction,
/// averaged per trajectory (both hinge edges count).
pub fn constraint_error(batch: &GraphBatch, pred: &[Vec3]) -> f64 {
    let pairs = arm_pairs(batch);
    if pairs.is_empty() {
        return 0.0;
    }
    let total: f64 = pairs
        .iter()
        .map(|&(a, b, len0)| ((pred[a] - pred[b]).norm() - len0).abs())
        .sum();
    total / batch.batch as f64
}

/// In-graph constraint penalty `sum_arms (|arm|_pred - |arm|_in)^2 / batch`.
fn constraint_penalty(sess: &mut Session, batch: &GraphBatch, pred: TensorId) -> Option<TensorId> {
    let pairs = arm_pairs(batch);
    if pairs.is_empty() {
        return None;
    }
    let idx_a = std::sync::Arc::new(pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let idx_b = std::sync::Arc::new(pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let len0 = Tensor::from_vec(pairs.len(), 1, pairs.iter().map(|p| p.2).collect());
    let xa = sess.tape.gather(pred, idx_a);
    let xb = sess.tape.gather(pred, idx_b);
    let diff = sess.tape.sub(xa, xb);
    let len = sess.tape.row_norm(diff);
    let len0 = sess.constant(len0);
    let delta = sess.tape.sub(len, len0);
    let sq = sess.tape.mul(delta, delta);
    let col = sess.tape.sum_rows(sq);
    let total = sess.tape.sum_all(col);
    Some(sess.tape.scale(total, 1.0 / batch.batch as f64))
}

/// Closed-form least-squares scale for the linear baseline
/// `x_T = x_0 + alpha * v_0`.
pub fn fit_linear_alpha(ds: &TrajectoryDataset, range: std::ops::Range<usize>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for sample in &ds.samples[range] {
        for ((x0, v0), xt) in sample
            .initial
            .positions
            .iter()
            .zip(&sample.initial.velocities)
            .zip(&sample.final_positions)
        {
            num += v0.dot(*xt - *x0);
            den += v0.norm_squared();
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

fn linear_predictions(params: &ParamStore, batch: &GraphBatch) -> Vec<Vec3> {
    let alpha = params.get("alpha").expect("linear checkpoint has alpha").at(0, 0);
    batch
        .positions
        .to_vec3s()
        .iter()
        .zip(batch.velocities.to_vec3s())
        .map(|(&x, v)| x + v * alpha)
        .collect()
}

/// Predicted final positions for any model kind (no gradients kept).
pub fn predict(params: &ParamStore, cfg: &ModelConfig, batch: &GraphBatch) -> Vec<Vec3> {
    if cfg.kind == ModelKind::Linear {
        return linear_predictions(params, batch);
    }
    let specs = ModelSpecs::new(*cfg);
    let mut sess = Session::new(params);
    let out = forward_positions(&mut sess, batch, &specs);
    sess.tape.value(out).to_vec3s()
}

/// Both metrics over a sample range, evaluated in batches.
pub fn evaluate(
    params: &ParamStore,
    cfg: &ModelConfig,
    ds: &TrajectoryDataset,
    range: std::ops::Range<usize>,
    batch_size: usize,
) -> Result<Metrics, TrainError> {
    let mut sq_total = 0.0;
    let mut cerr_total = 0.0;
    let mut count = 0usize;
    let mut start = range.start;
    while start < range.end {
        let end = (start + batch_size).min(range.end);
        let batch = GraphBatch::from_dataset(ds, start..end)?;
        let pred = predict(params, cfg, &batch);
        let targets = batch.targets.as_ref().expect("dataset batches carry targets").to_vec3s();
        sq_total += pred
            .iter()
            .zip(&targets)
            .map(|(a, b)| (*a - *b).norm_squared())
            .sum::<f64>();
        cerr_total += constraint_error(&batch, &pred) * batch.batch as f64;
        count += batch.nodes() * 3;
        start = end;
    }
    Ok(Metrics {
        mse: sq_total / count as f64,
        constraint_error: cerr_total / range.len() as f64,
    })
}

/// Minibatch Adam over the configured split; returns the best-validation
/// checkpoint and the loss history. Deterministic in the seed.
pub fn train(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &TrajectoryDataset,
) -> Result<TrainOutcome, TrainError> {
    train_with(model_cfg, cfg, ds, |_, _, _| {})
}

/// [`train`] with a per-epoch observer `(epoch, train_loss, val_mse)`.
pub fn train_with(
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &TrajectoryDataset,
    mut on_epoch: impl FnMut(usize, f64, f64),
) -> Result<TrainOutcome, TrainError> {
    let started = std::time::Instant::now();
    let splits = cfg.splits(ds.len())?;

    if model_cfg.kind == ModelKind::Linear {
        let alpha = fit_linear_alpha(ds, splits.train.clone());
        let mut params = ParamStore::new();
        params.insert("alpha", Tensor::scalar(alpha));
        let val = evaluate(&params, model_cfg, ds, splits.val.clone(), cfg.batch_size)?;
        let history = TrainHistory {
            train_loss: vec![],
            val_mse: vec![val.mse],
            best_epoch: 0,
            best_val_mse: val.mse,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        return Ok(TrainOutcome { params, history });
    }

    let specs = ModelSpecs::new(*model_cfg);
    let mut params = specs.register(cfg.seed);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, usize, ParamStore)> = None;

    let order_len = splits.train.len();
    for epoch in 0..cfg.epochs {
        // deterministic per-epoch shuffle
        let mut order: Vec<usize> = splits.train.clone().collect();
        let mut rng = rng_for(cfg.seed, SHUFFLE_TAG, epoch as u64);
        for i in (1..order_len).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let samples: Vec<&crate::sim::Sample> = chunk.iter().map(|&i| &ds.samples[i]).collect();
            let batch = GraphBatch::new(&samples, &ds.objects, &ds.spec.charges, true)?;
            let mut sess = Session::new(&params);
            let pred = forward_positions(&mut sess, &batch, &specs);
            let target = sess.constant(batch.targets.clone().expect("training batches carry targets"));
            let mut loss = mse_loss(&mut sess, pred, target);
            if model_cfg.kind == ModelKind::EgnnReg {
                if let Some(penalty) = constraint_penalty(&mut sess, &batch, pred) {
                    let scaled = sess.tape.scale(penalty, cfg.lambda);
                    loss = sess.tape.add(loss, scaled);
                }
            }
            let loss_value = sess.tape.value(loss).at(0, 0);
            if !loss_value.is_finite() {
                return Err(TrainError::Diverged { epoch });
            }
            epoch_loss += loss_value;
            batches += 1;
            let grads = sess.parameter_grads(loss);
            drop(sess);
            params.accumulate_grads(&grads);
            params.adam_step(cfg.learning_rate, 0.9, 0.999, 1e-8, cfg.weight_decay);
        }
        history.train_loss.push(epoch_loss / batches.max(1) as f64);

        let val = evaluate(&params, model_cfg, ds, splits.val.clone(), cfg.batch_size)?;
        history.val_mse.push(val.mse);
        if best.as_ref().is_none_or(|(b, _, _)| val.mse < *b) {
            best = Some((val.mse, epoch, params.clone()));
        }
        on_epoch(epoch, *history.train_loss.last().unwrap(), val.mse);
    }

    let (best_val, best_epoch, best_params) = match best {
        Some(b) => b,
        // zero epochs: return the initialized parameters
        None => (f64::NAN, 0, params),
    };
    history.best_epoch = best_epoch;
    history.best_val_mse = best_val;
    history.wall_seconds = started.elapsed().as_secs_f64();
    Ok(TrainOutcome { params: best_params, history })
}

/// Write a checkpoint: the ParamStore JSON at `params_path` plus a
/// `config.json` next to it.
pub fn save_checkpoint(
    params_path: &Path,
    params: &ParamStore,
    cfg: &ModelConfig,
) -> Result<(), TrainError> {
    if let Some(dir) = params_path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(params_path, params.to_json())?;
    let config_path = params_path.with_file_name("config.json");
    std::fs::write(config_path, serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

pub fn load_checkpoint(params_path: &Path) -> Result<(ParamStore, ModelConfig), TrainError> {
    let params = ParamStore::from_json(&std::fs::read_to_string(params_path)?)?;
    let config_path = params_path.with_file_name("config.json");
    let cfg: ModelConfig = serde_json::from_str(&std::fs::read_to_string(config_path)?)?;
    Ok((params, cfg))
}

#[cfg(test)]
mod tests;
