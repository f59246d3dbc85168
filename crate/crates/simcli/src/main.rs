use std::path::{Path, PathBuf};
use std::process::ExitCode;

use abs_traj_cli::run::{self, CONFIG_FILE, METRICS_FILE, TRAJECTORY_FILE};
use abs_traj_cli::{plot, CliError, Config};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "abs-traj",
    version,
    about = "Train and inspect multi-ABS trajectory policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train Q-tables and write metrics, checkpoints, trajectory and manifest.
    Train {
        /// Configuration file; reference defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value = "run")]
        out_dir: PathBuf,
        /// Comma-separated seeds run in parallel, one subdirectory each.
        #[arg(long, value_delimiter = ',', conflicts_with = "seed")]
        seeds: Vec<u64>,
    },
    /// Greedy rollout from the checkpoints of a finished run.
    Rollout {
        #[arg(long)]
        run_dir: PathBuf,
        /// Defaults to the run's own config snapshot.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Trajectory CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn metrics and trajectory files into plot-ready CSV.
    PlotData {
        /// Run directory providing metrics.csv and trajectory.csv.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        window: usize,
        #[arg(long, default_value = "plots")]
        out_dir: PathBuf,
    },
    /// Check a configuration file and list every problem found.
    ValidateConfig {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Print the configuration with all defaults filled in.
        #[arg(long)]
        print: bool,
    },
}

fn load(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn report(outcome: &run::RunOutcome, dir: &Path) -> Result<(), CliError> {
    let last = outcome.metrics.last();
    println!(
        "{}: {} episodes, final mean sum-rate {:.3} bps/Hz",
        dir.display(),
        outcome.manifest.episodes,
        last.map_or(0.0, |m| m.mean_sum_rate)
    );
    let problems = outcome.diagnostics();
    if problems.is_empty() {
        let r = &outcome.rollout;
        println!(
            "greedy rollout: all ABSs reached their destinations ({} cells)",
            r.paths.iter().map(Vec::len).max().unwrap_or(0)
        );
        Ok(())
    } else {
        Err(CliError::Diagnostic(problems.join("\n")))
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Train {
            config,
            seed,
            episodes,
            out_dir,
            seeds,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(e) = episodes {
                cfg.run.episodes = e;
            }
            if seeds.is_empty() {
                let outcome = run::run_train(&cfg, &out_dir)?;
                return report(&outcome, &out_dir);
            }
            let mut first_err = None;
            for (s, res) in run::run_batch(&cfg, &seeds, &out_dir) {
                let res = res.and_then(|o| report(&o, &out_dir.join(format!("seed-{s}"))));
                if let Err(e) = res {
                    eprintln!("seed {s}: {e}");
                    first_err.get_or_insert(e);
                }
            }
            first_err.map_or(Ok(()), Err)
        }
        Command::Rollout {
            run_dir,
            config,
            out,
        } => {
            let cfg = Config::load(&config.unwrap_or_else(|| run_dir.join(CONFIG_FILE)))?;
            let rollout = run::rollout_from_dir(&cfg, &run_dir)?;
            let csv = run::trajectory_csv(&rollout);
            match out {
                Some(p) => std::fs::write(&p, csv).map_err(|e| CliError::io(&p, e))?,
                None => print!("{}", String::from_utf8_lossy(&csv)),
            }
            let problems = run::rollout_diagnostics(&rollout);
            if problems.is_empty() {
                Ok(())
            } else {
                Err(CliError::Diagnostic(problems.join("\n")))
            }
        }
        Command::PlotData {
            run_dir,
            metrics,
            trajectory,
            window,
            out_dir,
        } => {
            let metrics = metrics.or_else(|| run_dir.as_ref().map(|d| d.join(METRICS_FILE)));
            let trajectory =
                trajectory.or_else(|| run_dir.as_ref().map(|d| d.join(TRAJECTORY_FILE)));
            if metrics.is_none() && trajectory.is_none() {
                return Err(CliError::Validation(vec![
                    "give --run-dir, --metrics or --trajectory".into(),
                ]));
            }
            for p in
                plot::emit_plot_data(metrics.as_deref(), trajectory.as_deref(), window, &out_dir)?
            {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::ValidateConfig { config, print } => {
            let cfg = load(config.as_deref())?;
            cfg.validate()?;
            if print {
                print!("{}", cfg.to_toml());
            } else {
                println!("ok");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
