//! Sweeps over training sizes, model kinds, and seeds, with cross-system
//! evaluation of each trained checkpoint.

use super::{evaluate, train, Metrics, TrainConfig, TrainError, TrainOutcome};
use crate::model::{ModelConfig, ModelKind};
use crate::sim::TrajectoryDataset;

pub const CSV_HEADER: &str =
    "model,system,train_size,seed,mse_x1e2,constraint_error,epochs,wall_seconds,status";

/// One (model, train size, seed) training cell.
#[derive(Debug, Clone, Copy)]
pub struct SweepCell {
    pub kind: ModelKind,
    pub train_size: usize,
    pub seed: u64,
}

/// One CSV row: a cell evaluated on one system.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub model: ModelKind,
    pub system: String,
    pub train_size: usize,
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub epochs: usize,
    pub wall_seconds: f64,
    pub status: String,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        match &self.metrics {
            Some(m) => format!(
                "{},{},{},{},{:.6},{:.6e},{},{:.3},{}",
                self.model,
                self.system,
                self.train_size,
                self.seed,
                m.mse * 100.0,
                m.constraint_error,
                self.epochs,
                self.wall_seconds,
                self.status
            ),
            None => format!(
                "{},{},{},{},,,{},{:.3},{}",
                self.model, self.system, self.train_size, self.seed, self.epochs, self.wall_seconds, self.status
            ),
        }
    }
}

fn run_cell(
    cell: &SweepCell,
    base: &TrainConfig,
    train_ds: &TrajectoryDataset,
    eval_sets: &[(String, &TrajectoryDataset)],
) -> Vec<SweepRow> {
    let model_cfg = ModelConfig::new(cell.kind);
    let mut cfg = *base;
    cfg.train_size = cell.train_size;
    cfg.seed = cell.seed;
    cfg.batch_size = cfg.batch_size.min(cell.train_size);
    let started = std::time::Instant::now();
    let outcome: Result<TrainOutcome, TrainError> = train(&model_cfg, &cfg, train_ds);
    let wall = started.elapsed().as_secs_f64();

    match outcome {
        Ok(out) => eval_sets
            .iter()
            .map(|(name, ds)| {
                let splits = cfg.splits(ds.len());
                let metrics = splits.and_then(|s| {
                    evaluate(&out.params, &model_cfg, ds, s.test, cfg.batch_size)
                });
                match metrics {
                    Ok(m) => SweepRow {
                        model: cell.kind,
                        system: name.clone(),
                        train_size: cell.train_size,
                        seed: cell.seed,
                        metrics: Some(m),
                        epochs: cfg.epochs,
                        wall_seconds: wall,
                        status: "ok".into(),
                    },
                    Err(e) => SweepRow {
                        model: cell.kind,
                        system: name.clone(),
                        train_size: cell.train_size,
                        seed: cell.seed,
                        metrics: None,
                        epochs: cfg.epochs,
                        wall_seconds: wall,
                        status: format!("error: {e}").replace(',', ";"),
                    },
                }
            })
            .collect(),
        Err(e) => eval_sets
            .iter()
            .map(|(name, _)| SweepRow {
                model: cell.kind,
                system: name.clone(),
                train_size: cell.train_size,
                seed: cell.seed,
                metrics: None,
                epochs: cfg.epochs,
                wall_seconds: wall,
                status: format!("error: {e}").replace(',', ";"),
            })
            .collect(),
    }
}

/// Train every cell on the first dataset and evaluate each checkpoint on
/// every listed system (Table-2-style checkpoint reuse). `jobs` bounds the
/// number of concurrently running cells; results are identical for any
/// value because every cell is deterministic in isolation.
pub fn sweep(
    cells: &[SweepCell],
    base: &TrainConfig,
    train_ds: &TrajectoryDataset,
    eval_sets: &[(String, &TrajectoryDataset)],
    jobs: usize,
) -> Vec<SweepRow> {
    type RowSlot = std::sync::Mutex<Option<Vec<SweepRow>>>;
    let jobs = jobs.max(1);
    let mut rows: Vec<Option<Vec<SweepRow>>> = vec![None; cells.len()];
    let next = std::sync::atomic::AtomicUsize::new(0);
    let row_slots: Vec<RowSlot> = (0..cells.len()).map(|_| std::sync::Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..jobs.min(cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= cells.len() {
                    break;
                }
                let cell = &cells[i];
                let out = run_cell(cell, base, train_ds, eval_sets);
                eprintln!(
                    "cell {}/{}: {} size {} seed {} done ({:.0}s, {})",
                    i + 1,
                    cells.len(),
                    cell.kind,
                    cell.train_size,
                    cell.seed,
                    out.first().map_or(0.0, |r| r.wall_seconds),
                    out.first().map_or("?", |r| r.status.as_str()),
                );
                *row_slots[i].lock().unwrap() = Some(out);
            });
        }
    });

    for (slot, row) in row_slots.into_iter().zip(rows.iter_mut()) {
        *row = slot.into_inner().unwrap();
    }
    rows.into_iter().flatten().flatten().collect()
}
