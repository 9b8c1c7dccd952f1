use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Timing parameters of the simulated NPU. Serialized as a flat JSON object
/// with exactly these field names; unknown keys are rejected and missing
/// keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MachineConfig {
    /// SIMD width in F32 elements.
    pub lanes: u32,
    /// Hardware threads (independent vector contexts).
    pub threads: u32,
    /// Cycles per scalar element-op.
    pub scalar_unit_cost: u64,
    /// Cycles per lanes-wide vector op.
    pub vector_unit_cost: u64,
    /// Bytes per cycle on the single DMA channel.
    pub dma_bandwidth: u64,
    /// Fixed cycles per transfer.
    pub dma_startup: u64,
    /// Cycles charged to the dispatching context per async launch.
    pub fork_cost: u64,
    /// Cycles charged at each await-all barrier.
    pub join_cost: u64,
    /// Scratchpad bytes.
    pub tcm_capacity: u64,
    pub clock_hz: f64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            lanes: 32,
            threads: 4,
            scalar_unit_cost: 1,
            vector_unit_cost: 1,
            dma_bandwidth: 384,
            dma_startup: 64,
            fork_cost: 16,
            join_cost: 32,
            tcm_capacity: 512 * 1024,
            clock_hz: 1e9,
        }
    }
}

impl MachineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let ints = [
            ("lanes", u64::from(self.lanes)),
            ("threads", u64::from(self.threads)),
            ("scalar_unit_cost", self.scalar_unit_cost),
            ("vector_unit_cost", self.vector_unit_cost),
            ("dma_bandwidth", self.dma_bandwidth),
            ("dma_startup", self.dma_startup),
            ("fork_cost", self.fork_cost),
            ("join_cost", self.join_cost),
            ("tcm_capacity", self.tcm_capacity),
        ];
        if let Some((name, _)) = ints.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::NonPositive(name));
        }
        if !(self.clock_hz.is_finite() && self.clock_hz > 0.0) {
            return Err(ConfigError::NonPositive("clock_hz"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: MachineConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Json(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Cycles one transfer of `bytes` occupies the DMA channel.
    pub fn transfer_cycles(&self, bytes: u64) -> u64 {
        self.dma_startup + bytes.div_ceil(self.dma_bandwidth)
    }

    /// Cycles for a compute region over `elements` at `vector_factor`.
    pub fn compute_cycles(&self, elements: u64, ops_per_element: u64, vector_factor: u32) -> u64 {
        let vf = u64::from(vector_factor.max(1));
        let unit = if vf == 1 {
            self.scalar_unit_cost
        } else {
            self.vector_unit_cost
        };
        elements.div_ceil(vf) * ops_per_element * unit
    }

    /// Short content hash used to tag reports.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let canonical = serde_json::to_string(self).expect("config serializes");
        let hash = Sha256::digest(canonical.as_bytes());
        hex::encode(&hash[..8])
    }
}

/// Converts cycles to microseconds, rounded half-to-even at 3 decimals.
///
/// Integral clock rates are handled with exact integer arithmetic so ties
/// such as 6.1725 round deterministically.
pub fn cycles_to_us(cycles: u64, cfg: &MachineConfig) -> f64 {
    let hz = cfg.clock_hz;
    if hz.fract() == 0.0 && hz > 0.0 && hz < 1.8e19 {
        // thousandths of a microsecond = cycles * 1e9 / hz
        let num = u128::from(cycles) * 1_000_000_000;
        let den = hz as u128;
        let (q, r) = (num / den, num % den);
        let q = match (2 * r).cmp(&den) {
            std::cmp::Ordering::Less => q,
            std::cmp::Ordering::Greater => q + 1,
            std::cmp::Ordering::Equal => q + (q & 1),
        };
        q as f64 / 1000.0
    } else {
        round3(cycles as f64 / hz * 1e6)
    }
}

/// Rounds to 3 decimals via the shortest-decimal formatter (half-to-even on
/// exact ties).
pub fn round3(x: f64) -> f64 {
    format!("{x:.3}").parse().expect("formatted float parses")
}
