//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use repchain_cli::simulate::{simulate, Outcome, SimulateArgs};
use repchain_core::assignment::{assign, select_leader};
use repchain_core::crypto::{Seed, SeededRng};
use repchain_core::{Score, ValidatorId};
use repchain_security::{
    brute_force_failure, camouflage, failure_probability, sweep_exposed, CamouflageBound,
};
use repchain_sim::config::{Adversary, Capability, LeaderSelection, ScenarioConfig};
use repchain_sim::trace::{write_ndjson, Event};
use repchain_sim::{run, MetricsReport};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Hypergeometric};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn c1_headline_value() -> Verdict {
    let t = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_repchain"))
        .args(["analyze", "--n", "1800", "--k", "8", "--g", "600"])
        .output()
        .expect("binary runs");
    let took = t.elapsed();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let first = stdout.lines().next().unwrap_or("").to_string();
    verdict(
        out.status.success() && first == "1.25553e-07" && took < Duration::from_secs(10),
        format!("printed {first} in {}", secs(took)),
    )
}

fn c2_oracle_grid() -> Verdict {
    let t = Instant::now();
    let mut checked = 0;
    let mut bad = Vec::new();
    for n in 1..=12u64 {
        for k in [2u64, 3] {
            if n % k != 0 {
                continue;
            }
            for g in 0..=n / 3 {
                for a in 0..=g {
                    let brute = brute_force_failure(n, k, g, a).expect("small instance");
                    let formula = camouflage(n, k, g, a, CamouflageBound::Capacity)
                        .expect("valid instance")
                        .failure;
                    let mut ok = brute == formula;
                    if a == 0 {
                        ok &= failure_probability(n, k, g).expect("valid instance") == brute;
                    }
                    if !ok {
                        bad.push(format!("(n={n},k={k},g={g},a={a})"));
                    }
                    checked += 1;
                }
            }
        }
    }
    let took = t.elapsed();
    verdict(
        bad.is_empty() && took < Duration::from_secs(60),
        format!("{checked} instances, {} mismatches {:?}, {}", bad.len(), bad, secs(took)),
    )
}

fn c3_camouflage_monotone() -> Verdict {
    let rows = sweep_exposed(60, 4, 20, CamouflageBound::Capacity).expect("valid instance");
    let monotone = rows.windows(2).all(|w| w[1].failure <= w[0].failure);
    let random = failure_probability(60, 4, 20).expect("valid instance");
    let base = rows[0].failure == random;
    verdict(
        monotone && base,
        format!(
            "non-increasing over a=0..20: {monotone}; a=0 equals random sharding ({}): {base}; a=20 gives {}",
            random, rows[20].failure
        ),
    )
}

struct SuiteRun {
    adversary: Adversary,
    seed: u64,
    report: MetricsReport,
    trace: Vec<Event>,
}

const SUITE_SEEDS: u64 = 1000;
const SUITE_MALICIOUS: usize = 9;

fn suite_config(adversary: Adversary, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        n: 40,
        k: 2,
        epochs: 3,
        adversary,
        malicious: if adversary == Adversary::None { 0 } else { SUITE_MALICIOUS },
        seed,
        ..ScenarioConfig::default()
    }
}

/// The seeded safety suite. Keeps only what later criteria need.
fn run_suite() -> (Vec<SuiteRun>, Duration, Vec<String>) {
    let t = Instant::now();
    let mut runs = Vec::new();
    let mut errors = Vec::new();
    for adversary in [Adversary::None, Adversary::Simple, Adversary::Camouflage, Adversary::ObserveAct] {
        for seed in 1..=SUITE_SEEDS {
            match run(&suite_config(adversary, seed)) {
                Ok(out) => runs.push(SuiteRun {
                    adversary,
                    seed,
                    report: out.report,
                    trace: if adversary == Adversary::ObserveAct {
                        out.trace
                    } else {
                        Vec::new()
                    },
                }),
                Err(e) => errors.push(format!("{adversary:?} seed {seed}: {e}")),
            }
        }
    }
    (runs, t.elapsed(), errors)
}

fn c4_safety(runs: &[SuiteRun], took: Duration, errors: &[String]) -> Verdict {
    let m = 20;
    let precondition = runs
        .iter()
        .all(|r| r.report.epochs.iter().all(|e| e.malicious_per_shard.iter().all(|&x| 2 * x < m)));
    let invalid: u64 = runs.iter().map(|r| r.report.safety.invalid_commits).sum();
    let atomicity: u64 = runs.iter().map(|r| r.report.safety.atomicity_violations).sum();
    let dirty: Vec<String> = runs
        .iter()
        .filter(|r| !r.report.safety.is_clean())
        .take(5)
        .map(|r| format!("{:?}/{}: {:?}", r.adversary, r.seed, r.report.safety.details))
        .collect();
    verdict(
        errors.is_empty() && precondition && invalid == 0 && atomicity == 0 && took < Duration::from_secs(300),
        format!(
            "{} runs (4 models x {SUITE_SEEDS}), per-shard malicious < m/2: {precondition}, invalid commits {invalid}, atomicity violations {atomicity}, run errors {}, {}{}",
            runs.len(),
            errors.len(),
            secs(took),
            if dirty.is_empty() { String::new() } else { format!(", first problems {dirty:?}") }
        ),
    )
}

fn c5_liveness(runs: &[SuiteRun]) -> Verdict {
    let (mut submitted, mut committed, mut late, mut uncommitted) = (0, 0, 0, 0);
    for r in runs
        .iter()
        .filter(|r| matches!(r.adversary, Adversary::None | Adversary::Simple))
    {
        let l = &r.report.liveness;
        submitted += l.valid_submitted;
        committed += l.committed;
        late += l.late;
        uncommitted += l.uncommitted;
    }
    verdict(
        submitted > 0 && late == 0 && uncommitted == 0,
        format!("{submitted} valid txs submitted, {committed} committed, {late} late, {uncommitted} never committed"),
    )
}

fn c6_leader_statistics() -> Verdict {
    let ids = [ValidatorId(0), ValidatorId(1), ValidatorId(2)];
    // lower median is 1, so validator 2 (score 1/2) is ineligible
    let scores: BTreeMap<ValidatorId, Score> = [
        (ids[0], Score::from_units(2)),
        (ids[1], Score::from_units(1)),
        (ids[2], Score::from_micros(500_000)),
    ]
    .into_iter()
    .collect();
    let trials = 10_000;
    let mut counts = [0u32; 3];
    for t in 0..trials {
        let mut rng = SeededRng::new(Seed::from_u64(t).child("leader-trial"));
        let v = select_leader(&ids, &scores, &mut rng).expect("non-empty shard");
        counts[v.0 as usize] += 1;
    }
    let freq = f64::from(counts[0]) / trials as f64;
    verdict(
        (freq - 0.75).abs() <= 0.02 && counts[2] == 0,
        format!("higher-scored member chosen {freq:.4} (oracle 0.75), below-median chosen {} times", counts[2]),
    )
}

fn c7_scaling() -> Verdict {
    let tput = |k: usize| {
        let cfg = ScenarioConfig {
            n: 20 * k,
            k,
            ..ScenarioConfig::default()
        };
        run(&cfg).expect("honest run").report.throughput
    };
    let (t2, t4) = (tput(2), tput(4));
    let ratio = t4 / t2;
    verdict(
        ratio >= 1.8,
        format!("m=20: k=2 {t2:.3} tx/s, k=4 {t4:.3} tx/s, ratio {ratio:.3}"),
    )
}

fn c8_heterogeneity() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let cfg = |sel| ScenarioConfig {
            capability: Capability::Uniform { lo: 0.05, hi: 1.0 },
            epochs: 15,
            leader_selection: sel,
            seed,
            ..ScenarioConfig::default()
        };
        let rep = run(&cfg(LeaderSelection::Reputation)).expect("run").report;
        let rnd = run(&cfg(LeaderSelection::Random)).expect("run").report;
        let ratio = rep.throughput_over(9, 15) / rnd.throughput_over(9, 15);
        let rho = rep.capability_reputation_spearman.unwrap_or(f64::NAN);
        pass &= ratio >= 1.2 && rho >= 0.9;
        parts.push(format!("seed {seed}: ratio {ratio:.3}, spearman {rho:.3}"));
    }
    verdict(pass, parts.join("; "))
}

fn attackers_below_median(r: &MetricsReport, from: usize) -> Result<usize, String> {
    let mut checked = 0;
    for e in from..=r.epochs.len() {
        let med = r.honest_median(e).ok_or("no honest validators")?;
        for v in r.validators.iter().filter(|v| v.malicious) {
            let c = v.cumulative[e - 1];
            if c >= med {
                return Err(format!("validator {} at epoch {e}: {c:.3} >= median {med:.3}", v.id.0));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

fn c9_simple_recovery(runs: &[SuiteRun]) -> Verdict {
    let mut checked = 0;
    let mut failures = Vec::new();
    for r in runs.iter().filter(|r| r.adversary == Adversary::Simple) {
        match attackers_below_median(&r.report, 3) {
            Ok(c) => checked += c,
            Err(e) => failures.push(format!("seed {}: {e}", r.seed)),
        }
    }
    let mut long = 0;
    for seed in 1..=20 {
        let cfg = ScenarioConfig {
            epochs: 8,
            ..suite_config(Adversary::Simple, seed)
        };
        let r = run(&cfg).expect("run").report;
        match attackers_below_median(&r, 3) {
            Ok(c) => checked += c,
            Err(e) => failures.push(format!("8-epoch seed {seed}: {e}")),
        }
        long += 1;
    }
    verdict(
        failures.is_empty(),
        format!(
            "{checked} attacker-epochs checked ({} suite runs, {long} eight-epoch runs), {} above the honest median {:?}",
            runs.iter().filter(|r| r.adversary == Adversary::Simple).count(),
            failures.len(),
            failures.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

fn ndjson(trace: &[Event]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_ndjson(&mut buf, trace).expect("in-memory write");
    buf
}

fn dirs_identical(a: &Path, b: &Path) -> bool {
    let mut files = Vec::new();
    let mut stack = vec![a.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push(p.strip_prefix(a).expect("under a").to_path_buf());
            }
        }
    }
    !files.is_empty()
        && files
            .iter()
            .all(|f| std::fs::read(a.join(f)).ok() == std::fs::read(b.join(f)).ok())
}

fn c10_determinism() -> Verdict {
    let cfgs = [
        suite_config(Adversary::Camouflage, 11),
        ScenarioConfig {
            capability: Capability::Uniform { lo: 0.05, hi: 1.0 },
            epochs: 5,
            ..suite_config(Adversary::Simple, 12)
        },
    ];
    let mut same = true;
    for cfg in &cfgs {
        let a = run(cfg).expect("run");
        let b = run(cfg).expect("run");
        same &= ndjson(&a.trace) == ndjson(&b.trace) && a.report.to_json() == b.report.to_json();
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let args = |name: &str| SimulateArgs {
        seed: Some(7),
        overrides: vec!["adversary=observe_act".into(), "malicious=9".into()],
        out: tmp.path().join(name),
        ..SimulateArgs::default()
    };
    let (x, y) = (args("a"), args("b"));
    let clean = simulate(&x).ok() == Some(Outcome::Clean) && simulate(&y).ok() == Some(Outcome::Clean);
    let cli_same = clean && dirs_identical(&x.out, &y.out);
    verdict(
        same && cli_same,
        format!("library traces and reports identical: {same}; simulate output dirs identical: {cli_same}"),
    )
}

/// Malicious counts in shard 0 under observe-act reputation, against the
/// random-sharding hypergeometric law.
fn observe_act_equivalence(runs: &[SuiteRun]) -> Verdict {
    const TARGET: usize = 10_000;
    let mut counts: Vec<usize> = Vec::with_capacity(TARGET);
    let oa: Vec<&SuiteRun> = runs.iter().filter(|r| r.adversary == Adversary::ObserveAct).collect();
    let mut last_states = Vec::new();
    for r in &oa {
        let bad: Vec<ValidatorId> = r.report.validators.iter().filter(|v| v.malicious).map(|v| v.id).collect();
        for e in &r.report.epochs {
            counts.push(e.malicious_per_shard[0]);
        }
        let last = r.trace.iter().rev().find_map(|ev| match ev {
            Event::EpochSealed { cumulative, .. } => Some(cumulative.clone()),
            _ => None,
        });
        if let Some(c) = last {
            let scores: BTreeMap<ValidatorId, Score> =
                c.into_iter().map(|(v, s)| (v, Score::from_micros(s))).collect();
            last_states.push((r.seed, scores, bad));
        }
    }
    let observed = counts.len();
    // top up with further assignment draws from each run's final reputation
    let mut draw = 0u64;
    while counts.len() < TARGET && !last_states.is_empty() {
        let (seed, scores, bad) = &last_states[draw as usize % last_states.len()];
        let s = Seed::from_u64(*seed).child(&format!("observe-act-draw/{draw}"));
        let a = assign(s, scores, 2).expect("assignment");
        counts.push(a.shards[0].iter().filter(|v| bad.contains(v)).count());
        draw += 1;
    }
    let total = counts.len() as f64;
    let h = Hypergeometric::new(40, SUITE_MALICIOUS as u64, 20).expect("valid law");
    let mut hist = [0usize; SUITE_MALICIOUS + 1];
    for c in &counts {
        hist[*c] += 1;
    }
    // merge sparse tails so every bin expects at least 5
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (x, &o) in hist.iter().enumerate() {
        acc.0 += o as f64;
        acc.1 += total * h.pmf(x as u64);
        if acc.1 >= 5.0 {
            bins.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if let Some(last) = bins.last_mut() {
        last.0 += acc.0;
        last.1 += acc.1;
    }
    let stat: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = (bins.len() - 1) as f64;
    let p = ChiSquared::new(df).expect("df > 0").sf(stat);
    verdict(
        p > 0.01 && counts.len() == TARGET,
        format!(
            "{} epochs ({observed} simulated, {} redrawn from final reputations), chi-square {stat:.2} on {df} df, p = {p:.4}",
            counts.len(),
            counts.len() - observed
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(String, Verdict)> = Vec::new();
    let mut record = |name: &str, v: Verdict| {
        println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        results.push((name.to_string(), v));
    };
    record("criterion 1 (analyze n=1800 k=8 g=600)", c1_headline_value());
    record("criterion 2 (formula vs enumeration grid)", c2_oracle_grid());
    record("criterion 3 (camouflage monotonicity)", c3_camouflage_monotone());
    let (runs, took, errors) = run_suite();
    record("criterion 4 (consensus safety suite)", c4_safety(&runs, took, &errors));
    record("criterion 5 (liveness within 2 epochs)", c5_liveness(&runs));
    record("criterion 6 (leader selection statistics)", c6_leader_statistics());
    record("criterion 7 (throughput scaling k=4 vs k=2)", c7_scaling());
    record("criterion 8 (heterogeneity benefit)", c8_heterogeneity());
    record("criterion 9 (simple-attack recovery)", c9_simple_recovery(&runs));
    record("criterion 10 (determinism)", c10_determinism());
    record("observe-act equivalence (chi-square)", observe_act_equivalence(&runs));
    let failed = results.iter().filter(|(_, v)| !v.pass).count();
    println!("{} of {} checks passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
