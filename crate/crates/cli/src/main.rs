//! Command-line harness chaining ingest -> train -> recommend -> rerank ->
//! evaluate, plus sweeps, the privacy accountant, and report aggregation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure.

mod commands;

use clap::{Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "fairdp",
    version,
    about = "Differentially private collaborative filtering with fairness re-ranking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest an interaction log into a dataset bundle.
    Ingest {
        /// Interaction log: CSV with header user,item,value[,timestamp], or
        /// JSON-lines review dumps (reviewerID/asin/overall).
        #[arg(long)]
        input: PathBuf,
        /// How to binarize the value column.
        #[arg(long, value_parser = ["explicit", "implicit"])]
        feedback: String,
        /// Master seed for the split and negative sampling.
        #[arg(long)]
        seed: u64,
        /// Output dataset bundle (versioned JSON).
        #[arg(long)]
        out: PathBuf,
        /// Optional stats report path (defaults to stdout).
        #[arg(long)]
        out_stats: Option<PathBuf>,
    },
    /// Train the private model from an experiment config.
    Train {
        /// Experiment config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Dataset bundle; overrides the config's dataset path.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Output checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV (step,loss,epsilon_so_far).
        #[arg(long)]
        out_log: Option<PathBuf>,
        /// Run manifest JSON.
        #[arg(long)]
        out_manifest: Option<PathBuf>,
    },
    /// Produce top-K candidate lists from a checkpoint.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Pre-ranker list length K.
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the fairness-constrained re-ranking program.
    Rerank {
        /// Pre-built instance file; otherwise assemble from the pieces below.
        #[arg(long, conflicts_with_all = ["reclists", "dataset"])]
        instance: Option<PathBuf>,
        #[arg(long, requires = "dataset")]
        reclists: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Fairness budget (use "inf" to disable).
        #[arg(long, default_value = "inf")]
        alpha: String,
        /// Final list length k.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Split supplying the constraint's relevance labels.
        #[arg(long, default_value = "validation", value_parser = ["validation", "test"])]
        labels: String,
        /// Where to save the assembled instance, when assembling.
        #[arg(long)]
        out_instance: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate candidate lists (and optionally a re-rank solution) on the
    /// test split.
    Evaluate {
        #[arg(long)]
        reclists: PathBuf,
        #[arg(long)]
        solution: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Evaluation cutoff k.
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Dataset label for the report rows.
        #[arg(long, default_value = "dataset")]
        name: String,
        /// Scorer label for the report rows.
        #[arg(long, default_value = "mf")]
        scorer: String,
        /// Epsilon to record in the rows ("inf" for non-private).
        #[arg(long, default_value = "inf")]
        epsilon: String,
        /// Output CSV (defaults to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid sweep over the clip bound or the fairness budget.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Which grid from the config to sweep.
        #[arg(long, value_parser = ["clip", "alpha"])]
        axis: String,
        /// Output CSV (value column + report rows).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert between noise multiplier and privacy budget.
    Accountant {
        /// Sensitivity-1 noise multiplier charged to the accountant.
        #[arg(long, conflicts_with = "epsilon")]
        z: Option<f64>,
        /// Epsilon target to calibrate z for.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Privacy failure probability.
        #[arg(long, conflicts_with = "delta_exponent")]
        delta: Option<f64>,
        /// delta = n^(-exponent); requires --n.
        #[arg(long, requires = "n")]
        delta_exponent: Option<f64>,
        /// Training set size (with --delta-exponent).
        #[arg(long)]
        n: Option<usize>,
        /// Poisson sampling rate.
        #[arg(long)]
        q: f64,
        /// Number of steps.
        #[arg(long)]
        steps: usize,
    },
    /// Merge per-run report CSVs into one sorted table.
    Report {
        /// Input report CSVs.
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest {
            input,
            feedback,
            seed,
            out,
            out_stats,
        } => commands::ingest(&input, &feedback, seed, &out, out_stats.as_deref()),
        Command::Train {
            config,
            dataset,
            out,
            out_log,
            out_manifest,
        } => commands::train(
            &config,
            dataset.as_deref(),
            &out,
            out_log.as_deref(),
            out_manifest.as_deref(),
        ),
        Command::Recommend {
            checkpoint,
            dataset,
            k,
            out,
        } => commands::recommend(&checkpoint, &dataset, k, &out),
        Command::Rerank {
            instance,
            reclists,
            dataset,
            alpha,
            k,
            labels,
            out_instance,
            out,
        } => commands::rerank(
            instance.as_deref(),
            reclists.as_deref(),
            dataset.as_deref(),
            &alpha,
            k,
            &labels,
            out_instance.as_deref(),
            &out,
        ),
        Command::Evaluate {
            reclists,
            solution,
            dataset,
            k,
            name,
            scorer,
            epsilon,
            out,
        } => commands::evaluate(
            &reclists,
            solution.as_deref(),
            &dataset,
            k,
            &name,
            &scorer,
            &epsilon,
            out.as_deref(),
        ),
        Command::Sweep {
            config,
            dataset,
            axis,
            out,
        } => commands::sweep(&config, dataset.as_deref(), &axis, out.as_deref()),
        Command::Accountant {
            z,
            epsilon,
            delta,
            delta_exponent,
            n,
            q,
            steps,
        } => commands::accountant(z, epsilon, delta, delta_exponent, n, q, steps),
        Command::Report { inputs, out } => commands::report(&inputs, out.as_deref()),
    };

    match result {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {}", err.message);
            std::process::exit(err.code);
        }
    }
}
