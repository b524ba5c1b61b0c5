//! `simulate`: one run or a one-parameter sweep, written to a run directory.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use repchain_core::epoch_sync::save_state_block;
use repchain_sim::trace::write_ndjson;
use repchain_sim::{run_batch, RunOutput, ScenarioConfig, SimError};
use serde::{Deserialize, Serialize};

use crate::CODE_VERSION;

pub const MANIFEST: &str = "manifest.json";
pub const REPORT: &str = "report.json";
pub const EPOCHS_CSV: &str = "epochs.csv";
pub const REPUTATION_CSV: &str = "reputation.csv";
pub const BYTES_CSV: &str = "bytes.csv";
pub const TRACE: &str = "trace.ndjson";
pub const CONFIG: &str = "config.json";
pub const STATE_DIR: &str = "state_blocks";
pub const SCALING_CSV: &str = "scaling.csv";

#[derive(Clone, Debug, Default)]
pub struct SimulateArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub overrides: Vec<String>,
    /// `key=v1,v2,...`
    pub sweep: Option<String>,
    pub out: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Empty when every check passed.
    pub violations: Vec<String>,
    pub artifacts: Vec<String>,
}

/// Whether every run came through its checks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Clean,
    Violated(Vec<String>),
}

pub fn load_config(args: &SimulateArgs) -> Result<ScenarioConfig> {
    let mut cfg = match &args.config {
        Some(p) => ScenarioConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Splits `key=v1,v2` and builds one config per value. Sweeping `k` keeps
/// the shard size fixed, so `n` grows with it.
pub fn sweep_configs(base: &ScenarioConfig, sweep: &str) -> Result<Vec<(String, ScenarioConfig)>> {
    let Some((key, values)) = sweep.split_once('=') else {
        bail!("sweep `{sweep}` is not key=v1,v2,...");
    };
    let key = key.trim();
    let m = base.m();
    let mut out = Vec::new();
    for v in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
        let mut cfg = base.clone();
        cfg.apply_override(&format!("{key}={v}"))?;
        if key == "k" {
            cfg.n = m * cfg.k;
        }
        cfg.validate().with_context(|| format!("sweep point {key}={v}"))?;
        out.push((format!("{key}-{v}"), cfg));
    }
    if out.is_empty() {
        bail!("sweep `{sweep}` lists no values");
    }
    Ok(out)
}

fn violations(res: &Result<RunOutput, SimError>) -> Vec<String> {
    match res {
        Err(e) => vec![e.to_string()],
        Ok(o) => {
            let s = &o.report.safety;
            let mut v = Vec::new();
            if !s.is_clean() {
                v.push(format!(
                    "invalid commits {}, atomicity violations {}, consolidation mismatches {}, engine faults {}",
                    s.invalid_commits, s.atomicity_violations, s.consolidation_mismatches, s.engine_faults
                ));
                v.extend(s.details.iter().cloned());
            }
            v
        }
    }
}

fn write_run(dir: &Path, cfg: &ScenarioConfig, res: &Result<RunOutput, SimError>) -> Result<Vec<String>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut artifacts = vec![CONFIG.to_string()];
    fs::write(dir.join(CONFIG), cfg.to_json())?;
    if let Ok(o) = res {
        let r = &o.report;
        for (name, body) in [
            (REPORT, r.to_json()),
            (EPOCHS_CSV, r.epochs_csv()),
            (REPUTATION_CSV, r.reputation_csv()),
            (BYTES_CSV, r.bytes_csv()),
        ] {
            fs::write(dir.join(name), body)?;
            artifacts.push(name.to_string());
        }
        let mut w = BufWriter::new(fs::File::create(dir.join(TRACE))?);
        write_ndjson(&mut w, &o.trace)?;
        artifacts.push(TRACE.to_string());
        let sb_dir = dir.join(STATE_DIR);
        fs::create_dir_all(&sb_dir)?;
        for sb in &o.state_blocks {
            let p = save_state_block(&sb_dir, sb)?;
            let name = p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            artifacts.push(format!("{STATE_DIR}/{name}"));
        }
    }
    let violations = violations(res);
    let manifest = Manifest {
        code_version: CODE_VERSION.to_string(),
        config_hash: cfg.hash().to_hex(),
        seed: cfg.seed,
        violations: violations.clone(),
        artifacts,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(violations)
}

fn scaling_row(out: &mut String, label: &str, cfg: &ScenarioConfig, res: &Result<RunOutput, SimError>) {
    match res {
        Ok(o) => {
            let r = &o.report;
            let _ = writeln!(
                out,
                "{label},{},{},{},{},{:.6},{:.3},{}",
                cfg.n,
                cfg.k,
                cfg.m(),
                r.committed,
                r.throughput,
                r.mean_latency_ticks,
                r.rolling_events
            );
        }
        Err(_) => {
            let _ = writeln!(out, "{label},{},{},{},,,,", cfg.n, cfg.k, cfg.m());
        }
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<Outcome> {
    let base = load_config(args)?;
    let points = match &args.sweep {
        None => vec![(String::new(), base)],
        Some(sweep) => sweep_configs(&base, sweep)?,
    };
    let cfgs: Vec<ScenarioConfig> = points.iter().map(|(_, c)| c.clone()).collect();
    let results = run_batch(&cfgs);

    let mut all = Vec::new();
    let mut scaling = String::from("point,n,k,m,committed,throughput,mean_latency_ticks,rolling_events\n");
    for ((label, cfg), res) in points.iter().zip(&results) {
        let dir = if label.is_empty() {
            args.out.clone()
        } else {
            args.out.join(label)
        };
        for v in write_run(&dir, cfg, res)? {
            all.push(if label.is_empty() { v } else { format!("{label}: {v}") });
        }
        scaling_row(&mut scaling, label, cfg, res);
    }
    if args.sweep.is_some() {
        fs::write(args.out.join(SCALING_CSV), scaling)?;
    }
    Ok(if all.is_empty() {
        Outcome::Clean
    } else {
        Outcome::Violated(all)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_sweep_keeps_shard_size() {
        let base = ScenarioConfig::default();
        let pts = sweep_configs(&base, "k=2,4,8").unwrap();
        let shape: Vec<(usize, usize)> = pts.iter().map(|(_, c)| (c.n, c.k)).collect();
        assert_eq!(shape, vec![(40, 2), (80, 4), (160, 8)]);
        assert_eq!(pts[1].0, "k-4");
    }

    #[test]
    fn other_sweeps_only_touch_their_key() {
        let pts = sweep_configs(&ScenarioConfig::default(), "rho=1,5").unwrap();
        assert_eq!(pts[1].1.rho, 5);
        assert_eq!(pts[1].1.n, 40);
        assert!(sweep_configs(&ScenarioConfig::default(), "rho").is_err());
        assert!(sweep_configs(&ScenarioConfig::default(), "bogus=1").is_err());
    }

    #[test]
    fn overrides_apply_after_the_seed() {
        let args = SimulateArgs {
            seed: Some(7),
            overrides: vec!["seed=9".into(), "adversary=simple".into(), "malicious=3".into()],
            ..Default::default()
        };
        let cfg = load_config(&args).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.malicious, 3);
    }
}
