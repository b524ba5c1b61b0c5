use num_bigint::BigUint;
use num_traits::ToPrimitive;

use crate::{binomial, Instance, Probability, SecurityError};

/// Largest number of placements the enumerator will walk.
pub const BRUTE_FORCE_LIMIT: u64 = 10_000_000;

/// Enumerates every placement of the `g − a` unexposed malicious nodes
/// into the free slots of a fixed partition and counts the unsafe ones.
/// Exposed nodes sit `⌊a/k⌋` per shard, with one more in each of the last
/// `a mod k` shards.
pub fn brute_force_failure(n: u64, k: u64, g: u64, a: u64) -> Result<Probability, SecurityError> {
    let inst = Instance::new(n, k, g)?;
    if a > g {
        return Err(SecurityError::TooManyExposed { a, g });
    }
    let free = n - a;
    let pick = (g - a) as usize;
    let total = binomial(free, g - a);
    if total > BigUint::from(BRUTE_FORCE_LIMIT) {
        return Err(SecurityError::TooLarge {
            placements: total.to_string(),
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let d = inst.d() as usize;
    let (p, q) = (a / k, a % k);
    let exposed: Vec<usize> = (0..k)
        .map(|i| (p + u64::from(i >= k - q)) as usize)
        .collect();
    // shard of each free slot
    let slot_shard: Vec<usize> = exposed
        .iter()
        .enumerate()
        .flat_map(|(i, &e)| std::iter::repeat_n(i, inst.m as usize - e.min(inst.m as usize)))
        .collect();
    debug_assert_eq!(slot_shard.len() as u64, free);

    let mut unsafe_count: u64 = 0;
    let mut combo: Vec<usize> = (0..pick).collect();
    let mut load = vec![0usize; k as usize];
    loop {
        load.copy_from_slice(&exposed);
        for &c in &combo {
            load[slot_shard[c]] += 1;
        }
        if load.iter().any(|&x| x > d) {
            unsafe_count += 1;
        }
        // next combination in lexicographic order
        let Some(i) = (0..pick).rev().find(|&i| combo[i] < free as usize - pick + i) else {
            break;
        };
        combo[i] += 1;
        for j in i + 1..pick {
            combo[j] = combo[j - 1] + 1;
        }
    }
    let total_u = total.to_u64().expect("bounded by the limit");
    Ok(Probability::complement_of(
        BigUint::from(total_u - unsafe_count),
        total,
    ))
}
