//! Training runs and their on-disk artifacts.
//!
//! A run directory holds:
//!
//! | file | content |
//! |------|---------|
//! | `config.toml` | full configuration, defaults filled in |
//! | `metrics.csv` | one row per episode |
//! | `trajectory.csv` | greedy rollout, one row per agent and step |
//! | `q_abs<j>.qtbl` | binary Q-table of ABS `j` |
//! | `manifest.json` | seed, version, timestamps, SHA-256 of every file above |

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use abs_traj::environment::{Environment, EpisodeMetrics, Rollout};
use abs_traj::qlearning::QTable;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn table_file(j: usize) -> String {
    format!("q_abs{j}.qtbl")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub reached: Vec<bool>,
    /// Cells visited including the start.
    pub path_cells: Vec<usize>,
    /// Smallest inter-ABS distance along the rollout; absent with one ABS.
    pub min_separation_m: Option<f64>,
    pub separation_violations: usize,
    /// Loop length for agents whose greedy policy cycles.
    pub cycle_lengths: Vec<Option<usize>>,
}

impl RolloutSummary {
    pub fn new(r: &Rollout) -> Self {
        Self {
            reached: r.reached.clone(),
            path_cells: r.paths.iter().map(Vec::len).collect(),
            min_separation_m: r.min_separation.is_finite().then_some(r.min_separation),
            separation_violations: r.violations.len(),
            cycle_lengths: r.cycles.iter().map(|c| c.as_ref().map(Vec::len)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software: String,
    pub version: String,
    pub seed: u64,
    pub episodes: usize,
    pub started_at: String,
    pub finished_at: String,
    pub config: Config,
    pub files: Vec<FileDigest>,
    pub rollout: RolloutSummary,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::parse(path, e.line(), e.to_string()))
    }

    /// Names of listed files whose current content no longer matches.
    pub fn stale_files(&self, dir: &Path) -> Result<Vec<String>, CliError> {
        let mut out = Vec::new();
        for f in &self.files {
            let path = dir.join(&f.name);
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            if sha256_hex(&bytes) != f.sha256 {
                out.push(f.name.clone());
            }
        }
        Ok(out)
    }
}

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub rollout: Rollout,
    pub metrics: Vec<EpisodeMetrics>,
}

impl RunOutcome {
    /// Rollout problems worth a nonzero exit.
    pub fn diagnostics(&self) -> Vec<String> {
        rollout_diagnostics(&self.rollout)
    }
}

pub fn rollout_diagnostics(r: &Rollout) -> Vec<String> {
    let mut out = Vec::new();
    for (j, reached) in r.reached.iter().enumerate() {
        if !reached {
            match &r.cycles[j] {
                Some(c) => {
                    let cells: Vec<String> =
                        c.iter().map(|s| format!("({},{})", s.k1, s.k2)).collect();
                    out.push(format!(
                        "abs {j}: greedy policy cycles through {}",
                        cells.join(" -> ")
                    ));
                }
                None => out.push(format!(
                    "abs {j}: did not reach its destination within the step cap"
                )),
            }
        }
    }
    for v in &r.violations {
        out.push(format!(
            "step {}: abs {} and abs {} are {:.3} m apart",
            v.step, v.first, v.second, v.distance
        ));
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Files written so far; removed again unless the run completes.
struct Staging {
    dir: PathBuf,
    written: Vec<PathBuf>,
    digests: Vec<FileDigest>,
    done: bool,
}

impl Staging {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            digests: Vec::new(),
            done: false,
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8], listed: bool) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path);
        if listed {
            self.digests.push(FileDigest {
                name: name.to_string(),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(bytes),
            });
        }
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        if !self.done {
            for p in &self.written {
                let _ = std::fs::remove_file(p);
            }
        }
    }
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn metrics_csv(metrics: &[EpisodeMetrics], num_agents: usize) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "episode".to_string(),
        "steps".into(),
        "mean_sum_rate_bps_hz".into(),
    ];
    for j in 0..num_agents {
        header.push(format!("avg_sum_rate_bps_hz_abs{j}"));
        header.push(format!("steps_to_terminal_abs{j}"));
        header.push(format!("collision_steps_abs{j}"));
        header.push(format!("cumulative_reward_abs{j}"));
    }
    w.write_record(&header).expect("in-memory write");
    for m in metrics {
        let mut row = vec![
            m.episode.to_string(),
            m.steps.to_string(),
            m.mean_sum_rate.to_string(),
        ];
        for j in 0..num_agents {
            row.push(m.avg_sum_rate[j].to_string());
            row.push(fmt_opt(m.steps_to_terminal[j]));
            row.push(m.collision_steps[j].to_string());
            row.push(m.cumulative_reward[j].to_string());
        }
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn trajectory_csv(r: &Rollout) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "abs",
        "step",
        "k1",
        "k2",
        "x_m",
        "y_m",
        "z_m",
        "sum_rate_bps_hz",
    ])
    .expect("in-memory write");
    for (j, path) in r.paths.iter().enumerate() {
        for (t, s) in path.iter().enumerate() {
            let p = r.positions[j][t];
            let rate = if t == 0 {
                String::new()
            } else {
                r.sum_rates[j][t - 1].to_string()
            };
            w.write_record([
                j.to_string(),
                t.to_string(),
                s.k1.to_string(),
                s.k2.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                p.z.to_string(),
                rate,
            ])
            .expect("in-memory write");
        }
    }
    w.into_inner().expect("in-memory flush")
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Train, roll out the greedy policies and write every artifact into
/// `out_dir`. On error nothing written by this call is left behind.
pub fn run_train(config: &Config, out_dir: &Path) -> Result<RunOutcome, CliError> {
    let (scenario, params) = config.validate()?;
    let started_at = now();
    let env = Environment::new(scenario)?;
    let mut staging = Staging::new(out_dir)?;
    staging.write(CONFIG_FILE, config.to_toml().as_bytes(), true)?;

    let outcome = env.train(&params, config.run.seed)?;
    let rollout = env.extract_trajectory(&outcome.tables)?;

    staging.write(
        METRICS_FILE,
        &metrics_csv(&outcome.metrics, env.num_agents()),
        true,
    )?;
    staging.write(TRAJECTORY_FILE, &trajectory_csv(&rollout), true)?;
    for (j, t) in outcome.tables.iter().enumerate() {
        staging.write(&table_file(j), &t.to_bytes(), true)?;
    }

    let manifest = RunManifest {
        software: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.run.seed,
        episodes: params.max_episodes,
        started_at,
        finished_at: now(),
        config: config.clone(),
        files: staging.digests.clone(),
        rollout: RolloutSummary::new(&rollout),
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    staging.write(MANIFEST_FILE, &json, false)?;
    staging.done = true;
    Ok(RunOutcome {
        manifest,
        rollout,
        metrics: outcome.metrics,
    })
}

/// Independent runs, one thread per seed, each into `out_dir/seed-<s>`.
pub fn run_batch(
    config: &Config,
    seeds: &[u64],
    out_dir: &Path,
) -> Vec<(u64, Result<RunOutcome, CliError>)> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let mut cfg = config.clone();
                cfg.run.seed = seed;
                let dir = out_dir.join(format!("seed-{seed}"));
                scope.spawn(move || (seed, run_train(&cfg, &dir)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    })
}

/// Load the checkpoints of a finished run.
pub fn load_tables(run_dir: &Path, num_agents: usize) -> Result<Vec<QTable>, CliError> {
    (0..num_agents)
        .map(|j| {
            let path = run_dir.join(table_file(j));
            let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            QTable::from_bytes(&bytes).map_err(|e| CliError::Parse {
                path: Some(path),
                line: None,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Greedy rollout from saved checkpoints.
pub fn rollout_from_dir(config: &Config, run_dir: &Path) -> Result<Rollout, CliError> {
    let (scenario, _) = config.validate()?;
    let env = Environment::new(scenario)?;
    let tables = load_tables(run_dir, env.num_agents())?;
    if let Some(t) = tables
        .iter()
        .find(|t| t.num_states() != env.config().area.num_states())
    {
        return Err(CliError::Validation(vec![format!(
            "checkpoint has {} states but the grid has {}",
            t.num_states(),
            env.config().area.num_states()
        )]));
    }
    Ok(env.extract_trajectory(&tables)?)
}
