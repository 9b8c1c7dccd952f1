use serde::Serialize;

use crate::error::PassError;
use crate::ir::{match_normal_form, TileModule, F32_BYTES};
use crate::passes::LadderRung;

use super::MachineConfig;

/// Size facts of an untransformed elementwise kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KernelStats {
    pub total_elements: u64,
    /// Expression nodes (inputs count as loads) plus the output store.
    pub ops_per_element: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
    pub tile_count: u64,
}

impl KernelStats {
    /// Derives stats from a module in single-buffered normal form.
    pub fn from_module(m: &TileModule) -> Result<Self, PassError> {
        let nf = match_normal_form(m).map_err(PassError::NotNormalForm)?;
        let tiles = u64::from(nf.tile_count);
        let per_tile = nf.output.subview.elements();
        let total = per_tile * tiles;
        Ok(KernelStats {
            total_elements: total,
            ops_per_element: nf.expr.ops_per_element(),
            bytes_in: nf.inputs.iter().map(|t| t.subview.elements()).sum::<u64>()
                * tiles
                * F32_BYTES,
            bytes_out: total * F32_BYTES,
            tile_count: tiles,
        })
    }

    /// DMA transfers of one tile-by-tile pass: one per input and output tile.
    pub fn transfers(&self) -> u64 {
        if self.total_elements == 0 {
            return 0;
        }
        let per_array = self.total_elements * F32_BYTES;
        self.tile_count * ((self.bytes_in + self.bytes_out) / per_array)
    }
}

/// Transfer-time floor: every byte crosses the single DMA channel.
pub fn dma_floor(stats: &KernelStats, cfg: &MachineConfig) -> u64 {
    stats.transfers() * cfg.dma_startup
        + (stats.bytes_in + stats.bytes_out).div_ceil(cfg.dma_bandwidth)
}

/// Compute-time floor at the rung's vector factor, spread over the contexts
/// the rung can use.
pub fn compute_floor(stats: &KernelStats, cfg: &MachineConfig, rung: LadderRung) -> u64 {
    let vf = if rung == LadderRung::Scalar {
        1
    } else {
        cfg.lanes
    };
    let serial = cfg.compute_cycles(stats.total_elements, stats.ops_per_element, vf);
    let threads = u64::from(cfg.threads);
    let spread = match rung {
        LadderRung::Scalar | LadderRung::Vec => 1,
        LadderRung::VecMt => threads.min(stats.tile_count).max(1),
        // Sub-tiles of each resident tile are spread over all threads.
        LadderRung::VecMtDb => threads,
    };
    serial / spread
}

/// Certified lower bound on simulated latency: `max(T_dma, T_compute)`.
pub fn latency_lower_bound(stats: &KernelStats, cfg: &MachineConfig, rung: LadderRung) -> u64 {
    dma_floor(stats, cfg).max(compute_floor(stats, cfg, rung))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_vec_add_2d, KernelSpec};

    #[test]
    fn vec_add_default_floors() {
        let m = build_vec_add_2d(&KernelSpec::vec_add_2d()).unwrap();
        let s = KernelStats::from_module(&m).unwrap();
        assert_eq!(s.total_elements, 1 << 20);
        assert_eq!(s.ops_per_element, 4);
        assert_eq!(s.bytes_in, 8 << 20);
        assert_eq!(s.bytes_out, 4 << 20);
        assert_eq!(s.transfers(), 192);
        let cfg = MachineConfig::default();
        // 192 startups + 12 MiB over 384 B/cycle.
        assert_eq!(dma_floor(&s, &cfg), 192 * 64 + (12 << 20) / 384);
        assert_eq!(compute_floor(&s, &cfg, LadderRung::Scalar), 4 << 20);
        assert_eq!(compute_floor(&s, &cfg, LadderRung::Vec), 131072);
        assert_eq!(compute_floor(&s, &cfg, LadderRung::VecMt), 32768);
    }

    #[test]
    fn limit_configs_select_the_expected_term() {
        let s = KernelStats::from_module(&build_vec_add_2d(&KernelSpec::vec_add_2d()).unwrap())
            .unwrap();
        let slow = MachineConfig {
            dma_bandwidth: 1,
            ..MachineConfig::default()
        };
        assert_eq!(
            latency_lower_bound(&s, &slow, LadderRung::Vec),
            dma_floor(&s, &slow)
        );
        let fast = MachineConfig {
            dma_bandwidth: 1_000_000,
            ..MachineConfig::default()
        };
        assert_eq!(
            latency_lower_bound(&s, &fast, LadderRung::Vec),
            compute_floor(&s, &fast, LadderRung::Vec)
        );
    }
}
