use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use slowmap_cli::{cmd_dataset, cmd_eval, cmd_report, cmd_simulate, cmd_train, exit_code, EvalOptions, Run};

#[derive(Parser)]
#[command(name = "slowmap", version, about = "Learn slow variables of multiscale SDEs")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory of the observed system.
    Simulate,
    /// Build the (x, P(x), covariance) dataset.
    Dataset,
    /// Train the network, with pruning if configured.
    Train {
        /// Dataset file; defaults to the run directory's.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score a trained model.
    Eval {
        /// Checkpoint file; defaults to the run directory's.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Fit the encoder affinely to the true slow map.
        #[arg(long)]
        slow_map: bool,
        /// Export encoder level sets on a grid.
        #[arg(long)]
        grid: bool,
        /// Use every instance, not only the held-out ones.
        #[arg(long)]
        all: bool,
    },
    /// Summarize all runs below a directory.
    Report {
        #[arg(default_value = "runs")]
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let c = &cli.common;
    let prepare = || -> anyhow::Result<Run> {
        let path = c.config.as_ref().ok_or_else(|| slowmap::Error::Config("--config is required".into()))?;
        Run::prepare(path, c.seed, c.out.clone(), &c.overrides)
    };
    match &cli.command {
        Command::Simulate => {
            let p = cmd_simulate(&prepare()?)?;
            println!("trajectory written to {}", p.display());
        }
        Command::Dataset => {
            let p = cmd_dataset(&prepare()?)?;
            println!("dataset written to {}", p.display());
        }
        Command::Train { dataset } => {
            let s = cmd_train(&prepare()?, dataset.as_deref())?;
            println!(
                "{}: {} epochs, best epoch {}, min validation loss {:.6}",
                s.architecture, s.epochs_run, s.best_epoch, s.min_val_loss
            );
            if let Some(p) = &s.pruning {
                println!("sparsity per layer [%]: {}; total {:.1}%", p.report.per_layer_string(), p.report.total_percent);
            }
        }
        Command::Eval { model, dataset, slow_map, grid, all } => {
            let opts = EvalOptions {
                model: model.clone(),
                dataset: dataset.clone(),
                slow_map: *slow_map,
                grid: *grid,
                all: *all,
            };
            let s = cmd_eval(&prepare()?, &opts)?;
            println!("reconstruction MSE {:.6} on {} instances", s.reconstruction_mse, s.instances);
            if let Some(o) = s.ortho {
                println!("orthogonality error median {:.4} (IQR {:.4})", o.median, o.q3 - o.q1);
            }
            if let Some(f) = &s.affine_fit {
                println!("affine fit to the slow map R^2 = {:.4}", f.r2);
            }
        }
        Command::Report { dir } => {
            let out = c.out.clone().unwrap_or_else(|| dir.clone());
            let r = cmd_report(dir, &out)?;
            print!("{}", r.text);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match cli.common.threads {
        Some(0) => Err(anyhow!(slowmap::Error::Config("--threads must be at least 1".into()))),
        n => rayon::ThreadPoolBuilder::new()
            .num_threads(n.unwrap_or(0))
            .build()
            .context("cannot start worker threads"),
    };
    let result = pool.and_then(|p| p.install(|| run(cli)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
