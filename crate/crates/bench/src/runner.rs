use std::path::Path;
use std::time::Instant;

use hybridctl::diffnet::Checkpoint;
use hybridctl::learner::{self, EpisodeLog, RunArtifacts};
use rayon::prelude::*;

use crate::config::RunConfig;

/// Environment variable capping the number of worker threads (0 = auto).
pub const THREADS_ENV: &str = "HYBRIDCTL_THREADS";

pub struct SeedRun {
    pub seed: u64,
    pub artifacts: RunArtifacts,
    pub wall_ms: f64,
}

impl SeedRun {
    pub fn logs(&self) -> &[EpisodeLog] {
        &self.artifacts.logs
    }
}

/// Worker count from [`THREADS_ENV`]; unset, empty or 0 means one worker
/// per available core.
pub fn thread_count() -> anyhow::Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a non-negative integer, got `{v}`"))?;
            Ok(if n == 0 { default_threads() } else { n })
        }
        _ => Ok(default_threads()),
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs every seed of `cfg` on a pool of `threads` workers. Results come
/// back in the order of `cfg.seeds`.
pub fn run_seeds(cfg: &RunConfig, threads: usize) -> anyhow::Result<Vec<SeedRun>> {
    let train = cfg.train_config();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1).min(cfg.seeds.len().max(1)))
        .build()?;
    pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let started = Instant::now();
                let artifacts = learner::run(&train, seed)
                    .map_err(|e| anyhow::anyhow!("seed {seed}: {e}"))?;
                Ok(SeedRun {
                    seed,
                    artifacts,
                    wall_ms: started.elapsed().as_secs_f64() * 1e3,
                })
            })
            .collect()
    })
}

/// Writes `dynamics.json`, `reward.json` and `policy.json` under
/// `dir/checkpoints/seed<N>/`.
pub fn save_checkpoints(dir: &Path, run: &SeedRun) -> anyhow::Result<()> {
    let d = dir.join("checkpoints").join(format!("seed{}", run.seed));
    std::fs::create_dir_all(&d)?;
    run.artifacts.dynamics.save_json(&d.join("dynamics.json"))?;
    run.artifacts.reward.save_json(&d.join("reward.json"))?;
    run.artifacts.policy.save_json(&d.join("policy.json"))?;
    Ok(())
}
