//! Curve files, the cross-seed summary, and run metadata.
//!
//! * `curve_seed<N>.csv`: one row per episode with header
//!   `episode,cum_reward,mean_mig,mean_correction,model_loss,wall_ms`.
//!   Values are written in shortest round-trip form; undefined values are
//!   `nan`. `wall_ms` is 0 unless wall-time recording is switched on.
//! * `summary.json`: per-episode mean and population standard deviation
//!   across seeds of every CSV column, computed from the values exactly as
//!   written, plus the resolved configuration. A statistic is `null` when
//!   any seed's value is undefined.
//! * `run_meta.json`: timestamps and measured timings. This is the only
//!   file that differs between repeated runs.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use hybridctl::learner::EpisodeLog;
use serde::Serialize;

use crate::config::RunConfig;

pub const CURVE_HEADER: &str = "episode,cum_reward,mean_mig,mean_correction,model_loss,wall_ms";

/// One parsed or to-be-written row of a curve file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub episode: usize,
    pub cum_reward: f64,
    pub mean_mig: f64,
    pub mean_correction: f64,
    pub model_loss: f64,
    pub wall_ms: f64,
}

impl CurveRow {
    pub fn from_log(log: &EpisodeLog, record_wall_time: bool) -> Self {
        CurveRow {
            episode: log.episode,
            cum_reward: log.cum_reward,
            mean_mig: log.mean_insertion_gradient(),
            mean_correction: log.mean_correction(),
            model_loss: log.model_loss,
            wall_ms: if record_wall_time { log.wall_ms.round() } else { 0.0 },
        }
    }

    fn values(&self) -> [f64; 5] {
        [self.cum_reward, self.mean_mig, self.mean_correction, self.model_loss, self.wall_ms]
    }
}

pub fn format_value(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x}")
    }
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        write!(out, "{}", r.episode).unwrap();
        for v in r.values() {
            write!(out, ",{}", format_value(v)).unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum CurveParseError {
    #[error("missing or wrong header")]
    Header,
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurveRow>, CurveParseError> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_HEADER) {
        return Err(CurveParseError::Header);
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let row_err = |msg: String| CurveParseError::Row { line: i + 2, msg };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(row_err(format!("expected 6 fields, found {}", fields.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| row_err(format!("`{s}`: {e}")));
            Ok(CurveRow {
                episode: fields[0].parse().map_err(|e| row_err(format!("episode: {e}")))?,
                cum_reward: num(fields[1])?,
                mean_mig: num(fields[2])?,
                mean_correction: num(fields[3])?,
                model_loss: num(fields[4])?,
                wall_ms: num(fields[5])?,
            })
        })
        .collect()
}

pub fn curve_file_name(seed: u64) -> String {
    format!("curve_seed{seed}.csv")
}

/// Mean and population standard deviation across seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Stat { mean: None, std: None };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Stat {
            mean: Some(mean),
            std: Some(var.sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub cum_reward: Stat,
    pub mean_mig: Stat,
    pub mean_correction: Stat,
    pub model_loss: Stat,
    pub wall_ms: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub episodes: Vec<EpisodeSummary>,
    pub config: RunConfig,
}

/// Builds the summary from per-seed rows (in `seeds` order). The embedded
/// config omits `out_dir`, so reruns into another directory produce the
/// same bytes.
pub fn summarize(config: &RunConfig, seeds: &[u64], curves: &[Vec<CurveRow>]) -> Summary {
    let episodes = curves.iter().map(Vec::len).min().unwrap_or(0);
    let column = |ep: usize, f: fn(&CurveRow) -> f64| -> Stat {
        Stat::of(&curves.iter().map(|c| f(&c[ep])).collect::<Vec<_>>())
    };
    Summary {
        seeds: seeds.to_vec(),
        episodes: (0..episodes)
            .map(|ep| EpisodeSummary {
                episode: ep,
                cum_reward: column(ep, |r| r.cum_reward),
                mean_mig: column(ep, |r| r.mean_mig),
                mean_correction: column(ep, |r| r.mean_correction),
                model_loss: column(ep, |r| r.model_loss),
                wall_ms: column(ep, |r| r.wall_ms),
            })
            .collect(),
        config: RunConfig {
            out_dir: None,
            ..config.clone()
        },
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedMeta {
    pub seed: u64,
    pub wall_ms: f64,
    pub episode_wall_ms: Vec<f64>,
    pub fallback_steps: usize,
    pub failed_episodes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub threads: usize,
    pub seeds: Vec<SeedMeta>,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Writes every curve file and `summary.json`; returns the curve paths.
pub fn write_outputs(
    dir: &Path,
    config: &RunConfig,
    logs: &[(u64, Vec<EpisodeLog>)],
) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(logs.len());
    let mut curves = Vec::with_capacity(logs.len());
    for (seed, seed_logs) in logs {
        let rows: Vec<CurveRow> = seed_logs
            .iter()
            .map(|l| CurveRow::from_log(l, config.record_wall_time))
            .collect();
        let text = curve_csv(&rows);
        let path = dir.join(curve_file_name(*seed));
        fs::write(&path, &text)?;
        paths.push(path);
        // Summarize the values exactly as they appear in the file.
        curves.push(parse_curve_csv(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?);
    }
    let seeds: Vec<u64> = logs.iter().map(|(s, _)| *s).collect();
    let summary = summarize(config, &seeds, &curves);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(paths)
}

pub fn write_run_meta(dir: &Path, meta: &RunMeta) -> io::Result<()> {
    fs::write(dir.join("run_meta.json"), serde_json::to_string_pretty(meta)? + "\n")
}
