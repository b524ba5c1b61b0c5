use repchain_sim::config::{Adversary, Capability, LeaderSelection, ScenarioConfig};
use repchain_sim::trace::write_ndjson;
use repchain_sim::{run, run_batch, SimError};

fn cfg(adversary: Adversary, malicious: usize, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        adversary,
        malicious,
        seed,
        ..ScenarioConfig::default()
    }
}

#[test]
fn honest_run_commits_everything_without_rollings() {
    let r = run(&cfg(Adversary::None, 0, 1)).unwrap().report;
    assert!(r.safety.is_clean(), "{:?}", r.safety);
    assert_eq!(r.rolling_events, 0);
    assert!(r.liveness.holds(), "{:?}", r.liveness);
    assert!(r.committed > 100);
    assert!(r.cross_committed > 0);
    assert_eq!(r.epochs.len(), 3);
}

#[test]
fn every_adversary_stays_safe() {
    let cfgs: Vec<ScenarioConfig> = [Adversary::Simple, Adversary::Camouflage, Adversary::ObserveAct]
        .into_iter()
        .flat_map(|a| (1..=5).map(move |s| cfg(a, 9, s)))
        .collect();
    for (c, out) in cfgs.iter().zip(run_batch(&cfgs)) {
        let r = out.unwrap().report;
        assert!(r.safety.is_clean(), "{:?} seed {}: {:?}", c.adversary, c.seed, r.safety);
        if c.adversary == Adversary::Simple {
            assert!(r.liveness.holds(), "seed {}: {:?}", c.seed, r.liveness);
        }
    }
}

#[test]
fn forged_user_payments_never_commit() {
    let c = ScenarioConfig {
        invalid_fraction: 0.2,
        ..cfg(Adversary::None, 0, 4)
    };
    let r = run(&c).unwrap().report;
    assert!(r.liveness.invalid_submitted > 0);
    assert!(r.safety.is_clean(), "{:?}", r.safety);
    assert!(r.liveness.holds());
}

#[test]
fn simple_attackers_sink_below_the_honest_median() {
    let c = ScenarioConfig {
        epochs: 4,
        ..cfg(Adversary::Simple, 9, 2)
    };
    let r = run(&c).unwrap().report;
    for e in 3..=4 {
        let med = r.honest_median(e).unwrap();
        for v in r.validators.iter().filter(|v| v.malicious) {
            assert!(v.cumulative[e - 1] < med, "validator {:?} in epoch {e}", v.id);
        }
    }
}

#[test]
fn capability_shows_up_in_reputation() {
    let c = ScenarioConfig {
        capability: Capability::Uniform { lo: 0.05, hi: 1.0 },
        epochs: 6,
        leader_selection: LeaderSelection::Reputation,
        ..cfg(Adversary::None, 0, 3)
    };
    let r = run(&c).unwrap().report;
    assert!(r.capability_reputation_spearman.unwrap() > 0.8);
}

#[test]
fn same_seed_same_bytes() {
    let c = cfg(Adversary::Camouflage, 9, 7);
    let a = run(&c).unwrap();
    let b = run(&c).unwrap();
    let (mut ta, mut tb) = (Vec::new(), Vec::new());
    write_ndjson(&mut ta, &a.trace).unwrap();
    write_ndjson(&mut tb, &b.trace).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(a.report.to_json(), b.report.to_json());
    let other = run(&cfg(Adversary::Camouflage, 9, 8)).unwrap();
    assert_ne!(other.report.to_json(), a.report.to_json());
}

#[test]
fn invalid_configs_are_refused() {
    let c = ScenarioConfig {
        n: 41,
        ..ScenarioConfig::default()
    };
    assert!(matches!(run(&c), Err(SimError::Config(_))));
}
