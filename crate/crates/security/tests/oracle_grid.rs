use std::time::Instant;

use proptest::prelude::*;
use repchain_security::{
    brute_force_failure, camouflage, failure_probability, CamouflageBound,
};

fn grid() -> Vec<(u64, u64, u64, u64)> {
    let mut out = Vec::new();
    for n in 2..=12u64 {
        for k in [2u64, 3] {
            if n % k != 0 {
                continue;
            }
            for g in 0..=n / 3 {
                for a in 0..=g {
                    out.push((n, k, g, a));
                }
            }
        }
    }
    out
}

#[test]
fn paper_instance_prints_six_digits() {
    let t = Instant::now();
    let p = failure_probability(1800, 8, 600).unwrap();
    assert_eq!(p.render(6), "1.25553e-07");
    assert!(t.elapsed().as_secs() < 10);
}

#[test]
fn formula_matches_enumeration_on_small_grid() {
    for (n, k, g, a) in grid() {
        let brute = brute_force_failure(n, k, g, a).unwrap();
        let cam = camouflage(n, k, g, a, CamouflageBound::Capacity).unwrap();
        assert_eq!(cam.failure, brute, "n={n} k={k} g={g} a={a}");
        if a == 0 {
            assert_eq!(failure_probability(n, k, g).unwrap(), brute, "n={n} k={k} g={g}");
        }
    }
}

// The printed bound ignores the exposed nodes already sitting in each
// shard. It agrees with enumeration only when nothing is pre-placed
// beyond what the bound already subtracts.
#[test]
fn literal_bound_diverges_from_enumeration() {
    let mut diverging = Vec::new();
    for (n, k, g, a) in grid() {
        let brute = brute_force_failure(n, k, g, a).unwrap();
        let lit = camouflage(n, k, g, a, CamouflageBound::Literal).unwrap();
        if lit.failure != brute {
            diverging.push((n, k, g, a));
        }
    }
    assert!(!diverging.is_empty());
    assert!(diverging.iter().all(|&(_, k, _, a)| a >= k));
}

#[test]
fn camouflage_fixture_six_nodes() {
    let c = camouflage(6, 2, 2, 1, CamouflageBound::Capacity).unwrap();
    assert_eq!(c.failure.exact(), "2/5");
    assert_eq!(c.failure, brute_force_failure(6, 2, 2, 1).unwrap());
}

#[test]
fn exposure_never_hurts_at_sixty_nodes() {
    let base = failure_probability(60, 4, 20).unwrap();
    let mut prev = None;
    for a in 0..=20 {
        let f = camouflage(60, 4, 20, a, CamouflageBound::Capacity).unwrap().failure;
        if a == 0 {
            assert_eq!(f, base);
        }
        if let Some(p) = prev {
            assert!(f <= p, "a={a}");
        }
        prev = Some(f);
    }
    assert_eq!(prev.unwrap().render(6), "0");
}

proptest! {
    #[test]
    fn failure_grows_with_malicious_count(k in 2u64..5, m in 3u64..12, g in 0u64..20) {
        let n = k * m;
        prop_assume!(g < n);
        let lo = failure_probability(n, k, g).unwrap();
        let hi = failure_probability(n, k, g + 1).unwrap();
        prop_assert!(lo <= hi);
    }

    #[test]
    fn failure_shrinks_with_exposure(k in 2u64..5, m in 3u64..12, g in 0u64..15, a in 0u64..15) {
        let n = k * m;
        prop_assume!(g <= n && a < g);
        let lo = camouflage(n, k, g, a + 1, CamouflageBound::Capacity).unwrap().failure;
        let hi = camouflage(n, k, g, a, CamouflageBound::Capacity).unwrap().failure;
        prop_assert!(lo <= hi);
    }
}
