use std::fs::{self, File};
use std::path::{Path, PathBuf};

use crate::{format_float, HarnessError, Result};

/// Smoothing window for learning curves, in episodes.
pub const WINDOW: usize = 100;

/// One point of a smoothed learning curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub episode: usize,
    /// Trailing-window mean reward, averaged over seeds.
    pub mean: f64,
    /// Population standard deviation of the per-seed trailing means.
    pub std: f64,
}

/// Mean of the last `window` values up to and including each index (fewer
/// at the start of the series).
pub fn trailing_mean(values: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for (i, v) in values.iter().enumerate() {
        sum += v;
        if i >= window {
            sum -= values[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    out
}

/// Rewards column of a per-seed CSV, in episode order.
pub fn read_run_csv(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(HarnessError::csv(path))?;
    let headers = r.headers().map_err(HarnessError::csv(path))?.clone();
    let col = headers
        .iter()
        .position(|h| h == "reward")
        .ok_or_else(|| HarnessError::Input(format!("{}: no reward column", path.display())))?;
    let mut rewards = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(HarnessError::csv(path))?;
        let v: f64 = rec[col]
            .parse()
            .map_err(|e| HarnessError::Input(format!("{}: bad reward {:?}: {e}", path.display(), &rec[col])))?;
        rewards.push(v);
    }
    Ok(rewards)
}

/// Smoothed curve across the given per-seed files, truncated to the
/// shortest run.
pub fn aggregate_agent(files: &[PathBuf]) -> Result<Vec<CurvePoint>> {
    if files.is_empty() {
        return Err(HarnessError::Input("no per-seed files to aggregate".into()));
    }
    let curves: Vec<Vec<f64>> =
        files.iter().map(|f| read_run_csv(f).map(|r| trailing_mean(&r, WINDOW))).collect::<Result<_>>()?;
    let len = curves.iter().map(Vec::len).min().unwrap_or(0);
    let n = curves.len() as f64;
    Ok((0..len)
        .map(|e| {
            let mean = curves.iter().map(|c| c[e]).sum::<f64>() / n;
            let var = curves.iter().map(|c| (c[e] - mean).powi(2)).sum::<f64>() / n;
            CurvePoint { episode: e, mean, std: var.sqrt() }
        })
        .collect())
}

pub(crate) fn write_aggregate(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(HarnessError::csv(path))?;
    w.write_record(["episode", "mean_reward_w100", "std_across_seeds"]).map_err(HarnessError::csv(path))?;
    for p in curve {
        w.write_record([p.episode.to_string(), format_float(p.mean), format_float(p.std)])
            .map_err(HarnessError::csv(path))?;
    }
    w.flush().map_err(HarnessError::io(path))
}

/// Merges every `<agent>_aggregate.csv` in `in_dir` into one long-format
/// file `agent,episode,mean,std`. Values are copied verbatim.
pub fn plotdata(in_dir: &Path, out: &Path) -> Result<usize> {
    let mut inputs: Vec<(String, PathBuf)> = fs::read_dir(in_dir)
        .map_err(HarnessError::io(in_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let agent = name.strip_suffix("_aggregate.csv")?.to_string();
            Some((agent, p))
        })
        .collect();
    if inputs.is_empty() {
        return Err(HarnessError::Input(format!("no *_aggregate.csv files in {}", in_dir.display())));
    }
    inputs.sort();

    let mut rows = Vec::new();
    for (agent, path) in &inputs {
        let mut r = csv::Reader::from_path(path).map_err(HarnessError::csv(path))?;
        for rec in r.records() {
            let rec = rec.map_err(HarnessError::csv(path))?;
            if rec.len() != 3 {
                return Err(HarnessError::Input(format!("{}: expected 3 columns", path.display())));
            }
            rows.push([agent.clone(), rec[0].to_string(), rec[1].to_string(), rec[2].to_string()]);
        }
    }

    let file = File::create(out).map_err(HarnessError::io(out))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["agent", "episode", "mean", "std"]).map_err(HarnessError::csv(out))?;
    for row in &rows {
        w.write_record(row).map_err(HarnessError::csv(out))?;
    }
    w.flush().map_err(HarnessError::io(out))?;
    Ok(rows.len())
}
