use std::path::Path;

use repchain_core::crypto::{sha256, Hash32, Scheme};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    #[default]
    None,
    Simple,
    Camouflage,
    ObserveAct,
}

impl std::str::FromStr for Adversary {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Adversary::None),
            "simple" => Ok(Adversary::Simple),
            "camouflage" => Ok(Adversary::Camouflage),
            "observe_act" | "observe-act" => Ok(Adversary::ObserveAct),
            other => Err(format!("unknown adversary `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

impl Default for Capability {
    fn default() -> Self {
        Capability::Fixed(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LeaderSelection {
    #[default]
    Reputation,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CryptoMode {
    /// Hash-tag signatures with the real protocol shape. Used for sweeps.
    #[default]
    Fast,
    Schnorr,
}

impl CryptoMode {
    pub fn scheme(self) -> Scheme {
        match self {
            CryptoMode::Fast => Scheme::Fast,
            CryptoMode::Schnorr => Scheme::Schnorr,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n: usize,
    pub k: usize,
    /// Reputation window in epochs.
    pub w: u64,
    /// TxList capacity B.
    pub capacity: usize,
    /// TBs per reputation block.
    pub rho: usize,
    /// Honest one-hop delay Δ in ticks.
    pub delta: u64,
    pub epochs: u64,
    /// Ticks during which leaders may open new iterations.
    pub epoch_ticks: u64,
    pub pow_difficulty: u32,
    pub adversary: Adversary,
    pub malicious: usize,
    pub capability: Capability,
    pub cross_shard_fraction: f64,
    /// New payments per tick per validator.
    pub workload_rate: f64,
    /// Fraction of payments submitted with a forged signature.
    pub invalid_fraction: f64,
    pub leader_selection: LeaderSelection,
    /// Two latency regions; cross-region hops cost one extra tick.
    pub two_regions: bool,
    /// Ticks a leader of capability 1 needs to push out one proposal.
    pub leader_cost: u64,
    /// Ticks before a pending cross-shard transaction is aborted.
    pub t_abort: u64,
    /// New payments stop this many ticks before the last epoch closes.
    /// In every epoch, users hold back a cross-shard payment this close to
    /// the end of listing, since it could not finish in time.
    pub drain_ticks: u64,
    /// The same hold-back for payments that stay inside one shard.
    pub intra_drain_ticks: u64,
    pub users_per_validator: usize,
    pub genesis_utxos: usize,
    pub genesis_value: u64,
    /// Ticks charged for the state-block proof of work.
    pub pow_ticks: u64,
    pub seconds_per_tick: f64,
    pub crypto: CryptoMode,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n: 40,
            k: 2,
            w: 10,
            capacity: 16,
            rho: 3,
            delta: 1,
            epochs: 3,
            epoch_ticks: 80,
            pow_difficulty: 8,
            adversary: Adversary::None,
            malicious: 0,
            capability: Capability::Fixed(1.0),
            cross_shard_fraction: 0.2,
            workload_rate: 0.05,
            invalid_fraction: 0.0,
            leader_selection: LeaderSelection::Reputation,
            two_regions: true,
            leader_cost: 2,
            t_abort: 40,
            drain_ticks: 40,
            intra_drain_ticks: 20,
            users_per_validator: 2,
            genesis_utxos: 4,
            genesis_value: 4096,
            pow_ticks: 2,
            seconds_per_tick: 1.0,
            crypto: CryptoMode::Fast,
            seed: 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("unknown override key `{0}`")]
    UnknownKey(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

fn unit_interval(field: &'static str, x: f64) -> Result<(), ConfigError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(invalid(field, format!("{x} is outside [0, 1]")))
    }
}

impl ScenarioConfig {
    pub fn m(&self) -> usize {
        self.n / self.k
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(invalid("k", "must be positive"));
        }
        if self.n == 0 || !self.n.is_multiple_of(self.k) {
            return Err(invalid("n", format!("{} is not a positive multiple of k={}", self.n, self.k)));
        }
        if self.k > u32::MAX as usize || self.n > u32::MAX as usize {
            return Err(invalid("n", "too large"));
        }
        if 3 * self.malicious >= self.n {
            return Err(invalid(
                "malicious",
                format!("{} is not below n/3 = {:.2}", self.malicious, self.n as f64 / 3.0),
            ));
        }
        if self.malicious > 0 && self.adversary == Adversary::None {
            return Err(invalid("malicious", "needs an adversary model"));
        }
        for (field, v) in [
            ("w", self.w),
            ("epochs", self.epochs),
            ("delta", self.delta),
            ("leader_cost", self.leader_cost),
        ] {
            if v == 0 {
                return Err(invalid(field, "must be positive"));
            }
        }
        if self.capacity == 0 {
            return Err(invalid("capacity", "must be positive"));
        }
        if self.rho == 0 {
            return Err(invalid("rho", "must be positive"));
        }
        if self.drain_ticks >= self.epoch_ticks {
            return Err(invalid("drain_ticks", "must be shorter than epoch_ticks"));
        }
        if self.intra_drain_ticks > self.drain_ticks {
            return Err(invalid("intra_drain_ticks", "must not exceed drain_ticks"));
        }
        if self.pow_difficulty > repchain_core::crypto::MAX_DIFFICULTY_BITS {
            return Err(invalid("pow_difficulty", "at most 32 bits"));
        }
        unit_interval("cross_shard_fraction", self.cross_shard_fraction)?;
        unit_interval("invalid_fraction", self.invalid_fraction)?;
        if !(self.workload_rate >= 0.0 && self.workload_rate.is_finite()) {
            return Err(invalid("workload_rate", "must be a finite non-negative number"));
        }
        match self.capability {
            Capability::Fixed(c) if c > 0.0 && c <= 1.0 => {}
            Capability::Uniform { lo, hi } if lo > 0.0 && lo <= hi && hi <= 1.0 => {}
            _ => return Err(invalid("capability", "values must lie in (0, 1] with lo <= hi")),
        }
        if self.users_per_validator == 0 || self.genesis_utxos == 0 {
            return Err(invalid("users_per_validator", "need at least one funded user"));
        }
        if self.genesis_value < 8 {
            return Err(invalid("genesis_value", "too small to pay fees"));
        }
        if !(self.seconds_per_tick > 0.0) {
            return Err(invalid("seconds_per_tick", "must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Reads JSON or TOML, chosen by extension.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    /// `key=value`; the value is read as JSON, falling back to a string.
    pub fn apply_override(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (key, raw) = pair
            .split_once('=')
            .ok_or_else(|| ConfigError::Parse(format!("override `{pair}` is not key=value")))?;
        let key = key.trim();
        let value: serde_json::Value = serde_json::from_str(raw.trim())
            .unwrap_or_else(|_| serde_json::Value::String(raw.trim().to_string()));
        let mut doc = serde_json::to_value(&*self).expect("config serializes");
        let obj = doc.as_object_mut().expect("config is an object");
        if !obj.contains_key(key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        obj.insert(key.to_string(), value);
        *self = serde_json::from_value(doc).map_err(|e| ConfigError::Parse(format!("{key}: {e}")))?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> Hash32 {
        sha256(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}
