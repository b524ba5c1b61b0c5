use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::{Instance, Probability, SecurityError};

/// Largest number of malicious members a shard of `m` survives.
pub fn tolerance(m: u64) -> u64 {
    m.saturating_sub(1) / 2
}

pub fn binomial(n: u64, r: u64) -> BigUint {
    if r > n {
        return BigUint::zero();
    }
    let r = r.min(n - r);
    let mut acc = BigUint::one();
    for i in 0..r {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Row `C(slots, 0..=upto)`.
fn binomial_row(slots: u64, upto: u64) -> Vec<BigUint> {
    let mut row = Vec::with_capacity(upto as usize + 1);
    let mut c = BigUint::one();
    for s in 0..=upto {
        if s > slots {
            row.push(BigUint::zero());
            continue;
        }
        row.push(c.clone());
        c *= slots - s;
        c /= s + 1;
    }
    row
}

/// One level of the recursion: `slots` free places, of which at most `cap`
/// may take malicious nodes (`None` if the shard is already lost).
#[derive(Clone, Copy, Debug)]
struct Level {
    slots: u64,
    cap: Option<u64>,
}

/// `F(x, ·)` over the given levels, last level first in the recursion.
/// Rolling table of width `x+1`, one pass per level.
fn count_safe(levels: &[Level], x: u64) -> BigUint {
    let w = x as usize + 1;
    let mut prev = vec![BigUint::zero(); w];
    prev[0] = BigUint::one();
    for level in levels {
        let Some(cap) = level.cap else {
            return BigUint::zero();
        };
        let cap = cap.min(x);
        let row = binomial_row(level.slots, cap);
        let mut cur = vec![BigUint::zero(); w];
        for (j, slot) in cur.iter_mut().enumerate() {
            for s in 0..=(cap as usize).min(j) {
                if !prev[j - s].is_zero() && !row[s].is_zero() {
                    *slot += &prev[j - s] * &row[s];
                }
            }
        }
        prev = cur;
    }
    prev.pop().expect("width is at least one")
}

/// Number of ways to place `x` malicious nodes into `y` shards of size `m`
/// with none holding more than `⌊(m−1)/2⌋`.
pub fn safe_allocations(x: u64, y: u64, m: u64) -> BigUint {
    let level = Level {
        slots: m,
        cap: Some(tolerance(m)),
    };
    count_safe(&vec![level; y as usize], x)
}

/// `1 − F(g, k) / C(n, g)`.
pub fn failure_probability(n: u64, k: u64, g: u64) -> Result<Probability, SecurityError> {
    let inst = Instance::new(n, k, g)?;
    let safe = safe_allocations(g, k, inst.m);
    Ok(Probability::complement_of(safe, binomial(n, g)))
}

/// Which upper bound the camouflage recursion uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CamouflageBound {
    /// Per-shard capacity `d − p − u_l` over `m − p − u_l` free slots.
    #[default]
    Capacity,
    /// Bound `d − u_l` over `m − p − u_l` slots with base `C(m, x)·1{x ≤ d}`,
    /// exactly as printed.
    Literal,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Camouflage {
    pub p: u64,
    pub q: u64,
    /// `C(k, q) · F(g − a, k, q)`.
    pub safe: BigUint,
    /// `C(k, q) · C(n − a, g − a)`.
    pub total: BigUint,
    pub failure: Probability,
}

/// Failure probability when `a` malicious nodes are exposed and spread
/// evenly (`p = ⌊a/k⌋` each, one extra in `q = a mod k` shards) and the
/// other `g − a` land uniformly in the remaining slots.
pub fn camouflage(
    n: u64,
    k: u64,
    g: u64,
    a: u64,
    bound: CamouflageBound,
) -> Result<Camouflage, SecurityError> {
    let inst = Instance::new(n, k, g)?;
    if a > g {
        return Err(SecurityError::TooManyExposed { a, g });
    }
    let (m, d) = (inst.m, inst.d());
    let (p, q) = (a / k, a % k);
    // level l = k − y, so the first q levels carry the extra exposed node
    let levels: Vec<Level> = (0..k)
        .map(|l| {
            let u = u64::from(l < q);
            let slots = m.saturating_sub(p + u);
            match bound {
                CamouflageBound::Capacity => Level {
                    slots,
                    cap: d.checked_sub(p + u),
                },
                CamouflageBound::Literal if l + 1 == k => Level {
                    slots: m,
                    cap: Some(d),
                },
                CamouflageBound::Literal => Level {
                    slots,
                    cap: d.checked_sub(u),
                },
            }
        })
        .collect();
    // the table is filled from the last level (y = 1) upwards
    let rev: Vec<Level> = levels.into_iter().rev().collect();
    let f = count_safe(&rev, g - a);
    let ckq = binomial(k, q);
    let safe = &ckq * f;
    let total = &ckq * binomial(n - a, g - a);
    let failure = Probability::complement_of(safe.clone(), total.clone());
    Ok(Camouflage {
        p,
        q,
        safe,
        total,
        failure,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepRow {
    pub a: u64,
    pub failure: Probability,
}

/// Failure probability for every `a` in `0..=g`.
pub fn sweep_exposed(
    n: u64,
    k: u64,
    g: u64,
    bound: CamouflageBound,
) -> Result<Vec<SweepRow>, SecurityError> {
    (0..=g)
        .map(|a| {
            camouflage(n, k, g, a, bound).map(|c| SweepRow {
                a,
                failure: c.failure,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("exposed,failure,exact\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.a, r.failure.render(6), r.failure.exact()));
    }
    out
}

impl Probability {
    pub(crate) fn complement_of(safe: BigUint, total: BigUint) -> Probability {
        let total = BigRational::from_integer(total.into());
        let safe = BigRational::from_integer(safe.into());
        Probability((&total - safe) / total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(num: i64, den: i64) -> Probability {
        Probability(BigRational::new(num.into(), den.into()))
    }

    #[test]
    fn binomials() {
        assert_eq!(binomial(6, 2), BigUint::from(15u32));
        assert_eq!(binomial(3, 5), BigUint::zero());
        assert_eq!(binomial(52, 5), BigUint::from(2_598_960u32));
        assert_eq!(binomial_row(3, 5), [1u32, 3, 3, 1, 0, 0].map(BigUint::from).to_vec());
    }

    #[test]
    fn empty_placement_is_unique() {
        for y in 1..6 {
            assert_eq!(safe_allocations(0, y, 7), BigUint::one());
        }
    }

    #[test]
    fn six_nodes_two_shards() {
        assert_eq!(safe_allocations(2, 1, 3), BigUint::zero());
        assert_eq!(safe_allocations(1, 1, 3), BigUint::from(3u32));
        assert_eq!(safe_allocations(2, 2, 3), BigUint::from(9u32));
        assert_eq!(failure_probability(6, 2, 2).unwrap(), prob(2, 5));
    }

    #[test]
    fn trivial_cases() {
        assert_eq!(failure_probability(9, 3, 0).unwrap(), prob(0, 1));
        assert_eq!(failure_probability(4, 2, 1).unwrap(), prob(1, 1));
        assert_eq!(
            failure_probability(7, 2, 1),
            Err(SecurityError::Uneven { n: 7, k: 2 })
        );
        assert_eq!(
            camouflage(6, 2, 2, 3, CamouflageBound::Capacity),
            Err(SecurityError::TooManyExposed { a: 3, g: 2 })
        );
    }

    #[test]
    fn no_exposure_reduces_to_random_sharding() {
        for (n, k, g) in [(6, 2, 2), (12, 3, 4), (60, 4, 20), (90, 3, 30)] {
            let c = camouflage(n, k, g, 0, CamouflageBound::Capacity).unwrap();
            assert_eq!(c.failure, failure_probability(n, k, g).unwrap());
        }
    }

    #[test]
    fn fully_exposed_even_spread_is_safe() {
        // 20 exposed over 4 shards of 15: 5 each, under d = 7
        let c = camouflage(60, 4, 20, 20, CamouflageBound::Capacity).unwrap();
        assert_eq!(c.failure, prob(0, 1));
        assert_eq!((c.p, c.q), (5, 0));
    }

    #[test]
    fn sweep_rows_and_csv() {
        let rows = sweep_exposed(6, 2, 2, CamouflageBound::Capacity).unwrap();
        assert_eq!(rows.len(), 3);
        let csv = sweep_csv(&rows);
        assert!(csv.starts_with("exposed,failure,exact\n0,0.4,2/5\n"));
    }
}
