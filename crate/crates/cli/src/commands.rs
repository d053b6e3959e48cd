//! Implementations of the five subcommands.

use crate::exit::CliError;
use gmnlab_core::checks;
use gmnlab_core::model::{ModelConfig, ModelKind};
use gmnlab_core::sim::{
    generate_dataset, read_dataset, write_dataset, SystemSpec, TrajectoryDataset,
};
use gmnlab_core::train::{
    evaluate, load_checkpoint, save_checkpoint, sweep, train_with, SweepCell, TrainConfig,
    CSV_HEADER,
};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

fn parse_kind(s: &str) -> Result<ModelKind, CliError> {
    ModelKind::from_str(s).map_err(CliError::from)
}

/// GMNLAB_THREADS caps internal parallelism when set.
fn thread_cap() -> usize {
    std::env::var("GMNLAB_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(usize::MAX)
}

#[allow(clippy::too_many_arguments)]
pub fn generate(
    p: usize,
    s: usize,
    hinges: usize,
    num: usize,
    steps: usize,
    dt: f64,
    seed: u64,
    out: &Path,
    softening: f64,
    box_scale: f64,
    length_range: (f64, f64),
) -> Result<(), CliError> {
    let mut spec = SystemSpec::sample(p, s, hinges, seed);
    spec.box_scale = box_scale;
    spec.stick_length_range = length_range;
    spec.validate()?;
    if dt.is_nan() || dt <= 0.0 {
        return Err(CliError::usage(format!("dt must be positive, got {dt}")));
    }
    eprintln!("generating {num} trajectories of ({p},{s},{hinges}), {steps} steps at dt {dt}");
    let (dataset, report) = generate_dataset(&spec, num, steps, dt, softening, seed)?;
    write_dataset(&dataset, out)?;
    println!(
        "{}",
        serde_json::json!({ "samples": report.samples, "max_rel_drift": report.max_drift })
    );
    Ok(())
}

fn model_config(kind: ModelKind, hidden: usize, layers: usize) -> Result<ModelConfig, CliError> {
    let mut cfg = ModelConfig::new(kind);
    cfg.hidden = hidden;
    cfg.layers = layers;
    cfg.validate()?;
    Ok(cfg)
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    model: &str,
    data: &Path,
    epochs: usize,
    batch: usize,
    lr: f64,
    hidden: usize,
    layers: usize,
    wd: f64,
    lambda: f64,
    seed: u64,
    out: &Path,
    sizes: (usize, usize, usize),
) -> Result<(), CliError> {
    let kind = parse_kind(model)?;
    let cfg = model_config(kind, hidden, layers)?;
    let ds = read_dataset(data)?;
    let train_cfg = TrainConfig {
        epochs,
        batch_size: batch,
        learning_rate: lr,
        weight_decay: wd,
        lambda,
        seed,
        train_size: sizes.0,
        val_size: sizes.1,
        test_size: sizes.2,
    };
    eprintln!(
        "training {kind} on {} ({} samples), {} epochs",
        data.display(),
        ds.len(),
        epochs
    );
    let outcome = train_with(&cfg, &train_cfg, &ds, |epoch, train_loss, val_mse| {
        if (epoch + 1) % 10 == 0 || epoch == 0 {
            eprintln!("epoch {:>4}  train_loss {train_loss:.6}  val_mse {val_mse:.6}", epoch + 1);
        }
    })?;
    save_checkpoint(out, &outcome.params, &cfg)?;
    let history_path = out.with_file_name("history.json");
    let history = serde_json::json!({
        "model": kind.as_str(),
        "train_config": train_cfg,
        "history": outcome.history,
    });
    std::fs::write(&history_path, serde_json::to_vec_pretty(&history).expect("serializable"))?;
    println!(
        "{}",
        serde_json::json!({
            "val_mse_x1e2": outcome.history.best_val_mse * 100.0,
            "best_epoch": outcome.history.best_epoch,
            "wall_seconds": outcome.history.wall_seconds,
        })
    );
    Ok(())
}

pub fn eval(
    model: &str,
    params_path: &Path,
    data: &Path,
    batch: usize,
    sizes: (usize, usize, usize),
) -> Result<(), CliError> {
    let kind = parse_kind(model)?;
    let (params, cfg) = load_checkpoint(params_path)?;
    if cfg.kind != kind {
        return Err(CliError::usage(format!(
            "--model {kind} does not match the checkpoint's config.json ({})",
            cfg.kind
        )));
    }
    let ds = read_dataset(data)?;
    let train_cfg = TrainConfig {
        train_size: sizes.0,
        val_size: sizes.1,
        test_size: sizes.2,
        batch_size: batch,
        ..TrainConfig::default()
    };
    let splits = train_cfg.splits(ds.len())?;
    let metrics = evaluate(&params, &cfg, &ds, splits.test, batch)?;
    println!(
        "{}",
        serde_json::json!({
            "mse_x1e2": metrics.mse * 100.0,
            "constraint_error": metrics.constraint_error,
        })
    );
    Ok(())
}

pub fn check(suite: &str, seed: u64) -> Result<(), CliError> {
    let reports = match suite {
        "equivariance" => vec![
            checks::equivariance_suite(seed, 100),
            checks::constraint_suite(seed, 1000),
        ],
        "gradients" => vec![checks::gradient_suite(seed)],
        "dynamics" => vec![checks::dynamics_suite(seed, 1000)],
        "reduction" => vec![checks::reduction_suite(seed)],
        other => return Err(CliError::usage(format!("unknown suite {other:?}"))),
    };
    for report in &reports {
        eprintln!("suite {} (seed {}):", report.suite, report.seed);
        for line in &report.checks {
            eprintln!("  {line}");
        }
    }
    println!("{}", serde_json::to_string_pretty(&reports).expect("serializable"));
    if let Some(failure) = reports.iter().find_map(|r| r.failure.as_ref()) {
        return Err(CliError::property(failure.clone()));
    }
    Ok(())
}

pub struct SweepArgs {
    pub train_sizes: Vec<usize>,
    pub systems: Vec<String>,
    pub models: Vec<String>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub data: PathBuf,
    pub epochs: usize,
    pub steps: usize,
    pub dt: f64,
    pub seed: u64,
    pub val_size: usize,
    pub test_size: usize,
    pub jobs: usize,
}

fn parse_system(s: &str) -> Result<(usize, usize, usize), CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::usage(format!("system {s:?} is not a p,s,h triple")));
    }
    let nums: Result<Vec<usize>, _> = parts.iter().map(|p| p.trim().parse::<usize>()).collect();
    match nums {
        Ok(v) => Ok((v[0], v[1], v[2])),
        Err(e) => Err(CliError::usage(format!("system {s:?}: {e}"))),
    }
}

/// Generate (or reuse a previously generated) dataset for one system.
fn ensure_dataset(
    root: &Path,
    system: (usize, usize, usize),
    num: usize,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<TrajectoryDataset, CliError> {
    let (p, s, h) = system;
    let dir = root.join(format!("sys_{p}_{s}_{h}_n{num}_t{steps}_seed{seed}"));
    if dir.join(gmnlab_core::sim::META_FILE).exists() {
        eprintln!("reusing dataset {}", dir.display());
        return Ok(read_dataset(&dir)?);
    }
    eprintln!("generating dataset {}", dir.display());
    let spec = SystemSpec::sample(p, s, h, seed);
    let (ds, _) = generate_dataset(&spec, num, steps, dt, 1e-2, seed)?;
    write_dataset(&ds, &dir)?;
    Ok(ds)
}

pub fn sweep_cmd(args: SweepArgs) -> Result<(), CliError> {
    let systems: Vec<(usize, usize, usize)> =
        args.systems.iter().map(|s| parse_system(s)).collect::<Result<_, _>>()?;
    let kinds: Vec<ModelKind> =
        args.models.iter().map(|m| parse_kind(m)).collect::<Result<_, _>>()?;
    if args.train_sizes.is_empty() || systems.is_empty() || kinds.is_empty() || args.seeds.is_empty() {
        return Err(CliError::usage("sweep needs at least one size, system, model, and seed"));
    }
    let max_size = *args.train_sizes.iter().max().expect("non-empty");
    let num = max_size + args.val_size + args.test_size;

    let datasets: Vec<TrajectoryDataset> = systems
        .iter()
        .map(|&sys| ensure_dataset(&args.data, sys, num, args.steps, args.dt, args.seed))
        .collect::<Result<_, _>>()?;
    let eval_sets: Vec<(String, &TrajectoryDataset)> = systems
        .iter()
        .zip(&datasets)
        .map(|(&(p, s, h), ds)| (format!("{p},{s},{h}"), ds))
        .collect();

    let base = TrainConfig {
        epochs: args.epochs,
        val_size: args.val_size,
        test_size: args.test_size,
        ..TrainConfig::default()
    };
    let mut cells = Vec::new();
    for &kind in &kinds {
        for &train_size in &args.train_sizes {
            for &seed in &args.seeds {
                cells.push(SweepCell { kind, train_size, seed });
            }
        }
    }

    let jobs = args.jobs.min(thread_cap()).max(1);
    eprintln!(
        "sweep: {} cells x {} eval systems, {} parallel",
        cells.len(),
        eval_sets.len(),
        jobs
    );
    let rows = sweep(&cells, &base, &datasets[0], &eval_sets, jobs);

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&args.out, &csv)?;
    // stdout carries the CSV as well, for piping
    print!("{csv}");
    std::io::stdout().flush()?;

    if rows.iter().all(|r| r.status != "ok") {
        return Err(CliError::new(1, "every sweep cell failed"));
    }
    Ok(())
}
