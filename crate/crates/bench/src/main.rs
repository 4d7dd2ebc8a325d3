use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hybridctl::env::EnvId;
use hybridctl::learner::Algorithm;
use hybridctl_bench::output::{self, RunMeta, SeedMeta};
use hybridctl_bench::{run_seeds, runner, thread_count, ConfigError, RunConfig};

const DEFAULT_OUT: &str = "hybridctl-out";

/// Run hybrid learning experiments and write learning curves.
///
/// Flags override the values in the config file.
#[derive(Debug, Parser)]
#[command(name = "hybridctl", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (default: the config's out_dir, else ./hybridctl-out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed to run; repeat for several seeds.
    #[arg(long = "seed", value_name = "N")]
    seeds: Vec<u64>,
    /// hybrid-det, hybrid-stoch, policy-only, model-only, imitation-hybrid or imitation-bc.
    #[arg(long, value_name = "NAME")]
    algo: Option<Algorithm>,
    /// pendulum or cartpole.
    #[arg(long, value_name = "NAME")]
    env: Option<EnvId>,
    #[arg(long, value_name = "N")]
    episodes: Option<usize>,
}

fn resolve(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if !cli.seeds.is_empty() {
        cfg.seeds = cli.seeds.clone();
    }
    if let Some(a) = cli.algo {
        cfg.algorithm = a;
    }
    if let Some(e) = cli.env {
        cfg.env = e;
    }
    if let Some(n) = cli.episodes {
        cfg.episodes = n;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.out_dir.get_or_insert_with(|| PathBuf::from(DEFAULT_OUT));
    cfg.validate()?;
    Ok(cfg)
}

fn run(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.out_dir.clone().expect("resolved config has an output directory");
    let threads = thread_count()?;
    let started = output::unix_ms();
    log::info!(
        "{} on {}: {} episodes x {} seeds, {threads} threads",
        cfg.algorithm.name(),
        cfg.env.name(),
        cfg.episodes,
        cfg.seeds.len()
    );
    let runs = run_seeds(cfg, threads)?;
    let logs: Vec<_> = runs.iter().map(|r| (r.seed, r.logs().to_vec())).collect();
    let paths = output::write_outputs(&out, cfg, &logs)
        .map_err(|e| anyhow::anyhow!("cannot write outputs to {}: {e}", out.display()))?;
    if cfg.save_checkpoints {
        for r in &runs {
            runner::save_checkpoints(&out, r)?;
        }
    }
    let meta = RunMeta {
        started_unix_ms: started,
        finished_unix_ms: output::unix_ms(),
        threads,
        seeds: runs
            .iter()
            .map(|r| SeedMeta {
                seed: r.seed,
                wall_ms: r.wall_ms,
                episode_wall_ms: r.logs().iter().map(|l| l.wall_ms).collect(),
                fallback_steps: r.logs().iter().map(|l| l.fallback_steps).sum(),
                failed_episodes: r.logs().iter().filter(|l| l.failed).count(),
            })
            .collect(),
    };
    output::write_run_meta(&out, &meta)?;
    for (path, r) in paths.iter().zip(&runs) {
        let last = r.logs().last().map_or(f64::NAN, |l| l.cum_reward);
        println!("seed {}: final reward {} -> {}", r.seed, output::format_value(last), path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, ConfigError::Missing { .. }) {
                eprintln!("\nUsage: hybridctl [--config PATH] [--out DIR] [--seed N]... [--algo NAME] [--env NAME] [--episodes N]");
            }
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
