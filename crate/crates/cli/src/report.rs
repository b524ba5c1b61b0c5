//! `report`: text tables from a finished run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use repchain_sim::MetricsReport;

use crate::simulate::{EPOCHS_CSV, MANIFEST, REPORT, REPUTATION_CSV};

pub const CAPABILITY_CSV: &str = "capability_reputation.csv";

/// Files `report` needs that are not in `dir`.
pub fn missing_artifacts(dir: &Path) -> Vec<PathBuf> {
    [MANIFEST, REPORT, EPOCHS_CSV, REPUTATION_CSV]
        .iter()
        .map(|f| dir.join(f))
        .filter(|p| !p.is_file())
        .collect()
}

fn epoch_table(r: &MetricsReport) -> String {
    let mut out = String::from("per-epoch throughput\n");
    let _ = writeln!(
        out,
        "{:>5} {:>8} {:>9} {:>10} {:>8} {:>10}",
        "epoch", "ticks", "committed", "tx/s", "rollings", "transition"
    );
    for e in &r.epochs {
        let tl = e.transition_latency.map_or("-".to_string(), |t| t.to_string());
        let _ = writeln!(
            out,
            "{:>5} {:>8} {:>9} {:>10.3} {:>8} {:>10}",
            e.epoch,
            e.end_tick - e.start_tick,
            e.committed,
            e.throughput,
            e.rollings,
            tl
        );
    }
    let _ = writeln!(
        out,
        "total: {} committed, {:.3} tx/s, mean latency {:.1} ticks, {} rollings",
        r.committed, r.throughput, r.mean_latency_ticks, r.rolling_events
    );
    out
}

/// Validators by capability with their final window score.
fn capability_rows(r: &MetricsReport) -> Vec<(u32, f64, bool, f64, f64)> {
    let mut rows: Vec<_> = r
        .validators
        .iter()
        .map(|v| {
            (
                v.id.0,
                v.capability,
                v.malicious,
                v.cumulative.last().copied().unwrap_or(0.0),
                v.rewards,
            )
        })
        .collect();
    rows.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    rows
}

fn capability_table(r: &MetricsReport) -> (String, String) {
    let mut text = String::from("capability vs reputation\n");
    let mut csv = String::from("validator,capability,malicious,final_cumulative,rewards\n");
    let _ = writeln!(
        text,
        "{:>9} {:>10} {:>9} {:>12} {:>10}",
        "validator", "capability", "malicious", "reputation", "rewards"
    );
    for (id, cap, bad, rep, rew) in capability_rows(r) {
        let _ = writeln!(text, "{id:>9} {cap:>10.3} {bad:>9} {rep:>12.3} {rew:>10.3}");
        let _ = writeln!(csv, "{id},{cap:.6},{bad},{rep:.6},{rew:.6}");
    }
    if let Some(rho) = r.capability_reputation_spearman {
        let _ = writeln!(text, "spearman(capability, reputation) over honest validators: {rho:.4}");
    }
    (text, csv)
}

/// Per-epoch reputation of honest and malicious validators, and where the
/// rollings fell.
fn rolling_table(r: &MetricsReport) -> String {
    let mut out = String::from("reputation and rollings by epoch\n");
    let _ = writeln!(
        out,
        "{:>5} {:>8} {:>13} {:>13} {:>14}",
        "epoch", "rollings", "honest median", "malicious max", "below median"
    );
    let bad: Vec<_> = r.validators.iter().filter(|v| v.malicious).collect();
    for e in &r.epochs {
        let i = e.epoch as usize;
        let med = r.honest_median(i);
        let worst = bad
            .iter()
            .filter_map(|v| v.cumulative.get(i - 1).copied())
            .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))));
        let below = match (med, worst) {
            (Some(m), Some(w)) => (w < m).to_string(),
            _ => "-".to_string(),
        };
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |x| format!("{x:.3}"));
        let _ = writeln!(
            out,
            "{:>5} {:>8} {:>13} {:>13} {:>14}",
            e.epoch,
            e.rollings,
            fmt(med),
            fmt(worst),
            below
        );
    }
    out
}

/// Renders the tables and writes the capability table as CSV next to the
/// run's other files.
pub fn report(dir: &Path) -> Result<String> {
    let text = fs::read_to_string(dir.join(REPORT))
        .with_context(|| format!("reading {}", dir.join(REPORT).display()))?;
    let r: MetricsReport = serde_json::from_str(&text).context("parsing the metrics report")?;
    let (cap_text, cap_csv) = capability_table(&r);
    fs::write(dir.join(CAPABILITY_CSV), cap_csv)?;
    let mut out = epoch_table(&r);
    out.push('\n');
    out.push_str(&cap_text);
    out.push('\n');
    out.push_str(&rolling_table(&r));
    let s = &r.safety;
    let _ = writeln!(
        out,
        "\nsafety: {} invalid commits, {} atomicity violations, {} engine faults",
        s.invalid_commits, s.atomicity_violations, s.engine_faults
    );
    Ok(out)
}
