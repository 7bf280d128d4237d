use std::fs::{self, File};
use std::io::BufWriter;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use log::{error, info};
use mohqa_core::agent::{run_seed, EpisodeRecord};
use mohqa_core::config::{AgentKind, ExperimentConfig};
use rayon::prelude::*;

use crate::aggregate::{aggregate_agent, write_aggregate};
use crate::{format_float, HarnessError, Result};

/// What to run and where to put it.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub config_path: Option<PathBuf>,
    pub config: ExperimentConfig,
    pub agents: Vec<AgentKind>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    /// Agents and seeds come from the config's `[run]` section.
    pub fn new(config: ExperimentConfig, out_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config_path: None,
            agents: config.run.agent_kind.clone(),
            seeds: config.run.seeds.clone(),
            config,
            out_dir: out_dir.into(),
        })
    }

    pub fn load(config_path: &Path, out_dir: impl Into<PathBuf>) -> Result<Self> {
        let text = fs::read_to_string(config_path)
            .map_err(|e| mohqa_core::Error::Config(format!("cannot read {}: {e}", config_path.display())))?;
        let mut spec = Self::new(ExperimentConfig::from_toml_str(&text)?, out_dir)?;
        spec.config_path = Some(config_path.to_path_buf());
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        if seeds.is_empty() || seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(mohqa_core::Error::Config("seed list must be non-empty and distinct".into()).into());
        }
        if self.agents.is_empty() {
            return Err(mohqa_core::Error::Config("no agent kinds selected".into()).into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub per_seed: Vec<PathBuf>,
    pub aggregates: Vec<PathBuf>,
}

pub fn seed_csv_path(dir: &Path, kind: AgentKind, seed: u64) -> PathBuf {
    dir.join(format!("{kind}_seed{seed}.csv"))
}

pub(crate) fn aggregate_csv_path(dir: &Path, kind: AgentKind) -> PathBuf {
    dir.join(format!("{kind}_aggregate.csv"))
}

/// Trains one `(agent, seed)` pair, streaming rows to its CSV so that an
/// aborted run still leaves the episodes it finished.
fn run_one(config: &ExperimentConfig, kind: AgentKind, seed: u64, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(HarnessError::io(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["episode", "reward", "length", "epsilon"]).map_err(HarnessError::csv(path))?;
    let mut write_err = None;
    let write_row = |w: &mut csv::Writer<_>, r: &EpisodeRecord| {
        w.write_record([r.episode.to_string(), format_float(r.reward), r.length.to_string(), format_float(r.epsilon)])
    };
    let outcome = run_seed(config, kind, seed, |r| match write_row(&mut w, r) {
        Ok(()) => ControlFlow::Continue(()),
        Err(e) => {
            write_err = Some(e);
            ControlFlow::Break(())
        }
    });
    w.flush().map_err(HarnessError::io(path))?;
    if let Some(e) = write_err {
        return Err(HarnessError::csv(path)(e));
    }
    outcome?;
    Ok(())
}

/// Runs every `(agent, seed)` pair on at most `jobs` threads, then writes
/// one aggregate per agent from the per-seed files.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentOutput> {
    spec.validate()?;
    spec.config.validate()?;
    fs::create_dir_all(&spec.out_dir).map_err(HarnessError::io(&spec.out_dir))?;

    let pairs: Vec<(AgentKind, u64)> =
        spec.agents.iter().flat_map(|&k| spec.seeds.iter().map(move |&s| (k, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Input(format!("thread pool: {e}")))?;
    let results: Vec<Result<PathBuf>> = pool.install(|| {
        pairs
            .par_iter()
            .map(|&(kind, seed)| {
                let path = seed_csv_path(&spec.out_dir, kind, seed);
                info!("start {kind} seed {seed}");
                match run_one(&spec.config, kind, seed, &path) {
                    Ok(()) => {
                        info!("done {kind} seed {seed}");
                        Ok(path)
                    }
                    Err(e) => {
                        error!("{kind} seed {seed} aborted: {e}");
                        Err(e)
                    }
                }
            })
            .collect()
    });

    let total = results.len();
    let mut out = ExperimentOutput::default();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(p) => out.per_seed.push(p),
            Err(e) => failures.push(e),
        }
    }
    if !failures.is_empty() {
        if failures.len() == 1 {
            return Err(failures.remove(0));
        }
        return Err(HarnessError::RunsAborted { failed: failures.len(), total });
    }

    for &kind in &spec.agents {
        let files: Vec<PathBuf> = spec.seeds.iter().map(|&s| seed_csv_path(&spec.out_dir, kind, s)).collect();
        let curve = aggregate_agent(&files)?;
        let path = aggregate_csv_path(&spec.out_dir, kind);
        write_aggregate(&path, &curve)?;
        out.aggregates.push(path);
    }
    Ok(out)
}
