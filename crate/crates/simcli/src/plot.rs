//! Plot-ready data derived from run artifacts.
//!
//! Outputs, all CSV with a header row:
//!
//! * `trajectory_abs<j>.csv`: `x_m,y_m`, one row per visited cell in order.
//! * `sum_rate_smoothed.csv`: `episode,mean_sum_rate_bps_hz,abs0_bps_hz,...`,
//!   trailing moving average over `window` episodes, valid mode, so a
//!   series of `E` episodes yields `E − window + 1` rows. `episode` is the
//!   last episode inside the window.

use std::path::{Path, PathBuf};

use crate::error::CliError;
use crate::run::{METRICS_FILE, TRAJECTORY_FILE};

pub const SMOOTHED_FILE: &str = "sum_rate_smoothed.csv";

pub fn trajectory_plot_file(j: usize) -> String {
    format!("trajectory_abs{j}.csv")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries {
    pub episodes: Vec<usize>,
    pub mean: Vec<f64>,
    /// `per_agent[j][i]` is ABS `j` in row `i`.
    pub per_agent: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryPoint {
    pub abs: usize,
    pub step: usize,
    pub x: f64,
    pub y: f64,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file))
}

fn column(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize, CliError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::parse(path, 1, format!("missing column `{name}`")))
}

fn field<T: std::str::FromStr>(
    path: &Path,
    rec: &csv::StringRecord,
    idx: usize,
    name: &str,
) -> Result<T, CliError> {
    let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
    let raw = rec
        .get(idx)
        .ok_or_else(|| CliError::parse(path, line, format!("missing field `{name}`")))?;
    raw.trim()
        .parse()
        .map_err(|_| CliError::parse(path, line, format!("cannot parse `{raw}` as {name}")))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    CliError::parse(path, line, e.to_string())
}

pub fn read_metrics(path: &Path) -> Result<MetricsSeries, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let ep = column(path, &headers, "episode")?;
    let mean = column(path, &headers, "mean_sum_rate_bps_hz")?;
    let mut agent_cols = Vec::new();
    while let Some(i) = headers
        .iter()
        .position(|h| h == format!("avg_sum_rate_bps_hz_abs{}", agent_cols.len()))
    {
        agent_cols.push(i);
    }
    let mut out = MetricsSeries {
        episodes: Vec::new(),
        mean: Vec::new(),
        per_agent: vec![Vec::new(); agent_cols.len()],
    };
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        out.episodes.push(field(path, &rec, ep, "episode")?);
        out.mean
            .push(field(path, &rec, mean, "mean_sum_rate_bps_hz")?);
        for (j, c) in agent_cols.iter().enumerate() {
            out.per_agent[j].push(field(path, &rec, *c, "avg_sum_rate_bps_hz")?);
        }
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryPoint>, CliError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let abs = column(path, &headers, "abs")?;
    let step = column(path, &headers, "step")?;
    let x = column(path, &headers, "x_m")?;
    let y = column(path, &headers, "y_m")?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        out.push(TrajectoryPoint {
            abs: field(path, &rec, abs, "abs")?,
            step: field(path, &rec, step, "step")?,
            x: field(path, &rec, x, "x_m")?,
            y: field(path, &rec, y, "y_m")?,
        });
    }
    Ok(out)
}

/// Trailing moving average, valid mode.
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || window > series.len() {
        return Vec::new();
    }
    series
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

fn write_csv(
    path: &Path,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e.into()))?;
    let io = |e: csv::Error| CliError::io(path, e.into());
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_trajectory_plots(
    points: &[TrajectoryPoint],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let agents = points.iter().map(|p| p.abs + 1).max().unwrap_or(0);
    let mut written = Vec::new();
    for j in 0..agents {
        let mut pts: Vec<&TrajectoryPoint> = points.iter().filter(|p| p.abs == j).collect();
        pts.sort_by_key(|p| p.step);
        let path = out_dir.join(trajectory_plot_file(j));
        write_csv(
            &path,
            &["x_m".into(), "y_m".into()],
            pts.iter().map(|p| vec![p.x.to_string(), p.y.to_string()]),
        )?;
        written.push(path);
    }
    Ok(written)
}

pub fn write_smoothed(
    series: &MetricsSeries,
    window: usize,
    out_dir: &Path,
) -> Result<PathBuf, CliError> {
    if window == 0 {
        return Err(CliError::Validation(vec![
            "smoothing window must be >= 1".into()
        ]));
    }
    if window > series.mean.len() {
        return Err(CliError::Validation(vec![format!(
            "smoothing window {window} exceeds the {} episodes available",
            series.mean.len()
        )]));
    }
    let mean = smooth(&series.mean, window);
    let agents: Vec<Vec<f64>> = series.per_agent.iter().map(|s| smooth(s, window)).collect();
    let mut header = vec!["episode".to_string(), "mean_sum_rate_bps_hz".into()];
    header.extend((0..agents.len()).map(|j| format!("abs{j}_bps_hz")));
    let rows = (0..mean.len()).map(|i| {
        let mut r = vec![
            series.episodes[i + window - 1].to_string(),
            mean[i].to_string(),
        ];
        r.extend(agents.iter().map(|a| a[i].to_string()));
        r
    });
    let path = out_dir.join(SMOOTHED_FILE);
    write_csv(&path, &header, rows)?;
    Ok(path)
}

/// Derive all plot files from a run directory's metrics and trajectory.
pub fn emit_plot_data(
    metrics: Option<&Path>,
    trajectory: Option<&Path>,
    window: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let mut written = Vec::new();
    if let Some(t) = trajectory {
        written.extend(write_trajectory_plots(&read_trajectory(t)?, out_dir)?);
    }
    if let Some(m) = metrics {
        written.push(write_smoothed(&read_metrics(m)?, window, out_dir)?);
    }
    Ok(written)
}

/// Plot data for a run directory with the standard file names.
pub fn emit_for_run(
    run_dir: &Path,
    window: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    emit_plot_data(
        Some(&run_dir.join(METRICS_FILE)),
        Some(&run_dir.join(TRAJECTORY_FILE)),
        window,
        out_dir,
    )
}
