//! Deterministic simulation of a sharded, reputation-driven blockchain.
//!
//! [`run`] executes one scenario and returns its event trace, the sealed
//! state blocks and a metrics report with the safety checker's verdict.

pub mod adversary;
pub mod checker;
pub mod config;
pub mod engine;
pub mod metrics;
pub mod net;
pub mod trace;
pub mod workload;

use rayon::prelude::*;
use repchain_core::types::StateBlock;

pub use config::ScenarioConfig;
pub use engine::SimError;
pub use metrics::MetricsReport;
pub use trace::Event;

pub struct RunOutput {
    pub report: MetricsReport,
    pub trace: Vec<Event>,
    pub state_blocks: Vec<StateBlock>,
}

pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let (trace, state_blocks) = engine::simulate(cfg)?;
    let report = metrics::collect_metrics(&trace);
    Ok(RunOutput {
        report,
        trace,
        state_blocks,
    })
}

/// Runs every config, in parallel where cores allow. Results keep the
/// input order.
pub fn run_batch(cfgs: &[ScenarioConfig]) -> Vec<Result<RunOutput, SimError>> {
    cfgs.par_iter().map(run).collect()
}
