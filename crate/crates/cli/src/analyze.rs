//! Front end to the exact failure-probability calculator.

use std::fmt::Write as _;
use std::str::FromStr;

use repchain_security::{
    brute_force_failure, camouflage, failure_probability, sweep_csv, sweep_exposed,
    CamouflageBound, Probability, SecurityError, SweepRow,
};

/// `a` or an inclusive range `lo..hi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exposed {
    pub lo: u64,
    pub hi: u64,
}

impl FromStr for Exposed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("`{t}`: {e}"));
        match s.split_once("..") {
            None => {
                let a = num(s)?;
                Ok(Exposed { lo: a, hi: a })
            }
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo)?, num(hi.trim_start_matches('='))?);
                if lo > hi {
                    return Err(format!("empty range {lo}..{hi}"));
                }
                Ok(Exposed { lo, hi })
            }
        }
    }
}

/// `exposed=lo..hi` for a CSV sweep; `hi` may be `g`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sweep {
    pub lo: u64,
    /// `None` stands for `g`.
    pub hi: Option<u64>,
}

impl Sweep {
    pub const FULL: Sweep = Sweep { lo: 0, hi: None };
}

impl FromStr for Sweep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let range = s.strip_prefix("exposed=").unwrap_or(s);
        let (lo, hi) = range
            .split_once("..")
            .ok_or_else(|| format!("sweep `{s}` is not exposed=lo..hi"))?;
        let lo = lo.trim().parse::<u64>().map_err(|e| format!("`{lo}`: {e}"))?;
        let hi = match hi.trim_start_matches('=').trim() {
            "g" => None,
            t => Some(t.parse::<u64>().map_err(|e| format!("`{t}`: {e}"))?),
        };
        if hi.is_some_and(|h| h < lo) {
            return Err(format!("empty sweep {range}"));
        }
        Ok(Sweep { lo, hi })
    }
}

#[derive(Clone, Debug, Default)]
pub struct AnalyzeArgs {
    pub n: u64,
    pub k: u64,
    pub g: u64,
    pub exposed: Option<Exposed>,
    pub paper_literal: bool,
    pub brute_force: bool,
    pub sweep: Option<Sweep>,
}

fn bound(args: &AnalyzeArgs) -> CamouflageBound {
    if args.paper_literal {
        CamouflageBound::Literal
    } else {
        CamouflageBound::Capacity
    }
}

fn single(args: &AnalyzeArgs, a: u64) -> Result<Probability, SecurityError> {
    if a == 0 && !args.paper_literal {
        failure_probability(args.n, args.k, args.g)
    } else {
        camouflage(args.n, args.k, args.g, a, bound(args)).map(|c| c.failure)
    }
}

/// What `analyze` prints. The first line is the failure probability to six
/// significant digits.
pub fn analyze(args: &AnalyzeArgs) -> Result<String, SecurityError> {
    let range = match args.sweep {
        Some(Sweep::FULL) => {
            return Ok(sweep_csv(&sweep_exposed(args.n, args.k, args.g, bound(args))?));
        }
        Some(Sweep { lo, hi }) => Exposed {
            lo,
            hi: hi.unwrap_or(args.g),
        },
        None => args.exposed.unwrap_or(Exposed { lo: 0, hi: 0 }),
    };
    if range.lo != range.hi {
        let rows = (range.lo..=range.hi)
            .map(|a| single(args, a).map(|failure| SweepRow { a, failure }))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(sweep_csv(&rows));
    }
    let a = range.lo;
    let p = single(args, a)?;
    let mut out = format!("{p}\n");
    let _ = writeln!(out, "exact {}", p.exact());
    if args.brute_force {
        let b = brute_force_failure(args.n, args.k, args.g, a)?;
        let marker = if b == p { "MATCH" } else { "MISMATCH" };
        let _ = writeln!(out, "brute force {b} [{marker}]");
    }
    Ok(out)
}
