//! `gmnlab`: generate constrained N-body datasets, train and evaluate the
//! models, run the property-check suites, and sweep experiment grids.
//!
//! stdout carries machine-readable JSON/CSV only; progress goes to stderr.
//! Exit codes: 0 ok, 1 I/O, 2 usage, 3 simulator degeneracy, 4 divergence,
//! 5 property-check failure.

mod commands;
mod exit;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "gmnlab", version, about = "Constrained N-body simulation and graph mechanics networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a trajectory dataset and write it to a directory.
    Generate {
        /// Isolated particle count.
        #[arg(long, default_value_t = 3)]
        p: usize,
        /// Stick count.
        #[arg(long, default_value_t = 2)]
        s: usize,
        /// Hinge count.
        #[arg(long, default_value_t = 1)]
        hinges: usize,
        /// Number of trajectories.
        #[arg(long, default_value_t = 900)]
        num: usize,
        /// Integration steps per trajectory.
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Integration step size.
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Softening added to squared pair distances.
        #[arg(long, default_value_t = 1e-2)]
        softening: f64,
        /// Box side scale (side = box-scale * N^(1/3)).
        #[arg(long, default_value_t = 1.8)]
        box_scale: f64,
        /// Stick/hinge rest length range.
        #[arg(long, default_value_t = 0.5)]
        len_min: f64,
        #[arg(long, default_value_t = 1.5)]
        len_max: f64,
    },
    /// Train a model on a dataset directory and write a checkpoint.
    Train {
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 200)]
        batch: usize,
        #[arg(long, default_value_t = 5e-4)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 4)]
        layers: usize,
        /// Decoupled weight decay.
        #[arg(long, default_value_t = 1e-10)]
        wd: f64,
        /// Constraint-regularization factor (egnn-reg).
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint file (config.json and history.json are written next
        /// to it).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        train_size: usize,
        #[arg(long, default_value_t = 200)]
        val_size: usize,
        #[arg(long, default_value_t = 200)]
        test_size: usize,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Eval {
        #[arg(long)]
        model: String,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        batch: usize,
        #[arg(long, default_value_t = 500)]
        train_size: usize,
        #[arg(long, default_value_t = 200)]
        val_size: usize,
        #[arg(long, default_value_t = 200)]
        test_size: usize,
    },
    /// Run a property suite; exit 5 with a report if an invariant fails.
    Check {
        /// One of: equivariance, gradients, dynamics, reduction.
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train/evaluate a grid of cells and emit a metrics CSV.
    Sweep {
        /// Comma-separated training sizes, e.g. 100,300,500.
        #[arg(long, value_delimiter = ',', required = true)]
        train_sizes: Vec<usize>,
        /// Systems as p,s,h triples, e.g. --systems 3,2,1 --systems 2,4,0.
        /// Models train on the first and evaluate on all of them.
        #[arg(long, required = true, num_args = 1..)]
        systems: Vec<String>,
        /// Comma-separated model kinds.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Directory for generated (and cached) datasets.
        #[arg(long, default_value = "sweep-data")]
        data: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Dataset generation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        val_size: usize,
        #[arg(long, default_value_t = 200)]
        test_size: usize,
        /// Parallel training cells (capped by GMNLAB_THREADS).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { p, s, hinges, num, steps, dt, seed, out, softening, box_scale, len_min, len_max } => {
            commands::generate(p, s, hinges, num, steps, dt, seed, &out, softening, box_scale, (len_min, len_max))
        }
        Command::Train { model, data, epochs, batch, lr, hidden, layers, wd, lambda, seed, out, train_size, val_size, test_size } => {
            commands::train(
                &model, &data, epochs, batch, lr, hidden, layers, wd, lambda, seed, &out,
                (train_size, val_size, test_size),
            )
        }
        Command::Eval { model, params, data, batch, train_size, val_size, test_size } => {
            commands::eval(&model, &params, &data, batch, (train_size, val_size, test_size))
        }
        Command::Check { suite, seed } => commands::check(&suite, seed),
        Command::Sweep { train_sizes, systems, models, seeds, out, data, epochs, steps, dt, seed, val_size, test_size, jobs } => {
            commands::sweep_cmd(commands::SweepArgs {
                train_sizes,
                systems,
                models,
                seeds,
                out,
                data,
                epochs,
                steps,
                dt,
                seed,
                val_size,
                test_size,
                jobs,
            })
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.code());
    }
}
