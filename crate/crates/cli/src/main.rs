use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ptl_core::checkpoint::{sha256_hex, Checkpoint};
use ptl_core::experiments::{
    emit_plot_data, loss_history_table, run_comparison, run_p_sweep, solve_instance, Provenance, RunConfig,
    Workspace,
};
use ptl_core::ode::DuffingParams;
use ptl_core::training::{train_duffing_class, TrainStatus};
use ptl_core::Error;

/// Perturbation cascade plus one-shot transfer solver for Duffing-type ODEs.
#[derive(Debug, Parser)]
#[command(name = "ptl", version)]
struct Cli {
    /// TOML file with [train] and [experiment] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of both tables.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: experiment.out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the multi-head network on the Duffing class.
    Train {
        /// Overrides train.iterations.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Solve one Duffing equation by transfer.
    Solve(SolveArgs),
    /// Residual loss against the cascade length p.
    #[command(name = "sweep-p")]
    SweepP {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Transfer solutions against the reference integrator.
    Compare {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Overrides experiment.instance_count.
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Plot-ready data and SVG charts from the sweep and comparison outputs.
    Plot {
        #[arg(long)]
        sweep: Option<PathBuf>,
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[arg(long)]
        no_svg: bool,
    },
}

#[derive(Debug, Args)]
struct SolveArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    delta: f64,
    #[arg(long, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long, allow_hyphen_values = true)]
    beta: f64,
    #[arg(long, allow_hyphen_values = true)]
    gamma: f64,
    #[arg(long, allow_hyphen_values = true)]
    omega: f64,
    /// Initial position x(0); x'(0) is 0.
    #[arg(long, allow_hyphen_values = true)]
    x0: f64,
    #[arg(long, default_value_t = 12)]
    p: usize,
    /// Output CSV (default: <out>/solution.csv).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Skip the reference integrator.
    #[arg(long)]
    no_oracle: bool,
}

fn load_config(cli: &Cli) -> ptl_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg = cfg.with_out_dir(out);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn open_checkpoint(cfg: &RunConfig, explicit: Option<&Path>) -> ptl_core::Result<(Checkpoint, Provenance)> {
    let path = explicit.unwrap_or(&cfg.experiment.checkpoint);
    let ckpt = Checkpoint::load(path)?;
    let provenance = Provenance {
        config: cfg.hash()?,
        checkpoint: ckpt.hash()?,
    };
    Ok((ckpt, provenance))
}

fn run(cli: Cli) -> ptl_core::Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = cfg.experiment.out_dir.clone();
    match cli.command {
        Command::Train { iterations } => {
            if let Some(n) = iterations {
                cfg.train.iterations = n;
                cfg.validate()?;
            }
            let (sets, outcome) = train_duffing_class(&cfg.train)?;
            let ckpt = Checkpoint::new(cfg.train.clone(), sets, &outcome);
            let path = cfg.experiment.checkpoint.clone();
            ckpt.save(&path)?;
            let provenance = Provenance {
                config: cfg.hash()?,
                checkpoint: sha256_hex(&std::fs::read(&path)?),
            };
            let history = out.join("loss_history.csv");
            loss_history_table(&outcome.history).write(&history, &provenance)?;
            println!("checkpoint = {}", path.display());
            println!("loss_history = {}", history.display());
            if let Some(loss) = outcome.final_loss() {
                println!("final_loss = {loss:.6e}");
            }
            if let TrainStatus::Diverged { iteration, loss } = outcome.status {
                return Err(Error::Diverged { iteration, loss });
            }
        }
        Command::Solve(args) => {
            let (ckpt, provenance) = open_checkpoint(&cfg, args.checkpoint.as_deref())?;
            let ws = Workspace::new(&ckpt, &cfg.experiment)?;
            let params = DuffingParams {
                delta: args.delta,
                alpha: args.alpha,
                beta: args.beta,
                gamma: args.gamma,
                omega: args.omega,
                x0: args.x0,
            };
            let report = solve_instance(&ws, &params, args.p, !args.no_oracle, &cfg.experiment.integrator)?;
            let path = args.csv.unwrap_or_else(|| out.join("solution.csv"));
            report.table().write(&path, &provenance)?;
            println!("solution = {}", path.display());
            print!("{}", report.timing_summary());
        }
        Command::SweepP { checkpoint } => {
            let (ckpt, provenance) = open_checkpoint(&cfg, checkpoint.as_deref())?;
            let ws = Workspace::new(&ckpt, &cfg.experiment)?;
            let sweep = run_p_sweep(&ws, &cfg.experiment)?;
            let path = out.join("sweep.csv");
            sweep.table().write(&path, &provenance)?;
            println!("sweep = {}", path.display());
            for (p, m) in sweep.p_values.iter().zip(&sweep.median) {
                println!("p = {p:2}  median_log10_loss = {m:.4}");
            }
        }
        Command::Compare { checkpoint, instances } => {
            if let Some(n) = instances {
                cfg.experiment.instance_count = n;
                cfg.validate()?;
            }
            let (ckpt, provenance) = open_checkpoint(&cfg, checkpoint.as_deref())?;
            let ws = Workspace::new(&ckpt, &cfg.experiment)?;
            let result = run_comparison(&ws, &cfg.experiment)?;
            let metrics = out.join("comparison.csv");
            let traj = out.join("trajectories.csv");
            result.metrics_table().write(&metrics, &provenance)?;
            result.trajectory_table().write(&traj, &provenance)?;
            println!("comparison = {}", metrics.display());
            println!("trajectories = {}", traj.display());
            let ok: Vec<_> = result.rows.iter().filter(|r| r.error.is_none()).collect();
            println!("instances = {}  failed = {}", result.rows.len(), result.rows.len() - ok.len());
            if let Some(worst) = ok.iter().map(|r| r.rel_l2).max_by(f64::total_cmp) {
                println!("worst_rel_l2 = {worst:.3e}");
            }
            let secs: Vec<f64> = ok.iter().map(|r| r.solve_seconds).collect();
            if !secs.is_empty() {
                println!("mean_solve_seconds = {:.6}", secs.iter().sum::<f64>() / secs.len() as f64);
            }
        }
        Command::Plot {
            sweep,
            trajectories,
            no_svg,
        } => {
            let sweep = sweep.unwrap_or_else(|| out.join("sweep.csv"));
            let traj = trajectories.unwrap_or_else(|| out.join("trajectories.csv"));
            let outputs = emit_plot_data(&sweep, &traj, &out, !no_svg)?;
            println!("plot_data = {}", outputs.data.display());
            for svg in outputs.svgs {
                println!("svg = {}", svg.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
