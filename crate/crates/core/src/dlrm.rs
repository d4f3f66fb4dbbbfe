//! Embedding pooling time for row-wise sharded tables versus a shared
//! fabric pool.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scalar::Real;
use crate::system::{roofline_parts, Pipe, SystemSpec, TierRole};
use crate::workload::{dlrm_pooling_bytes, DlrmSpec};

pub const NVLINK_BW: f64 = 900e9;
pub const PCIE_BW: f64 = 64e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementMode {
    DistributedRowwise,
    SharedFabric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interconnect {
    Nvlink,
    Pcie,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlrmPlacement<T> {
    pub mode: PlacementMode,
    pub device_count: u64,
    pub interconnect: Interconnect,
    pub bandwidth: T,
    pub per_message_latency: T,
    /// Remote gathers merged into one message.
    pub coalescing: T,
}

impl<T: Real> DlrmPlacement<T> {
    pub fn distributed(device_count: u64, interconnect: Interconnect, per_message_latency: T) -> Self {
        let bw = match interconnect {
            Interconnect::Nvlink => NVLINK_BW,
            Interconnect::Pcie => PCIE_BW,
        };
        DlrmPlacement {
            mode: PlacementMode::DistributedRowwise,
            device_count,
            interconnect,
            bandwidth: T::lit(bw),
            per_message_latency,
            coalescing: T::one(),
        }
    }

    pub fn shared_fabric() -> Self {
        DlrmPlacement {
            mode: PlacementMode::SharedFabric,
            device_count: 1,
            interconnect: Interconnect::Nvlink,
            bandwidth: T::lit(NVLINK_BW),
            per_message_latency: T::zero(),
            coalescing: T::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.device_count == 0 {
            return Err(SimError::invalid("placement.device_count", "must be >= 1"));
        }
        if self.bandwidth <= T::zero() {
            return Err(SimError::invalid("placement.bandwidth", "must be > 0"));
        }
        if self.per_message_latency < T::zero() {
            return Err(SimError::invalid("placement.per_message_latency", "must be >= 0"));
        }
        if self.coalescing < T::one() {
            return Err(SimError::invalid("placement.coalescing", "must be >= 1"));
        }
        Ok(())
    }
}

/// Devices needed to hold every table, rounded up to a power of two so rows
/// shard evenly.
pub fn required_devices(spec: &DlrmSpec, per_device_capacity: u64) -> Result<u64> {
    spec.validate()?;
    if per_device_capacity == 0 {
        return Err(SimError::invalid("per_device_capacity", "must be > 0"));
    }
    let n = spec.total_table_bytes().div_ceil(per_device_capacity as u128);
    u64::try_from(n.max(1))
        .ok()
        .and_then(u64::checked_next_power_of_two)
        .ok_or(SimError::Overflow("device count"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoolingTime<T> {
    pub local: T,
    pub remote: T,
    pub latency: T,
    pub total: T,
}

/// Bandwidth-bound pooling time; summing pooled rows is treated as free.
pub fn pooling_time<T: Real>(
    spec: &DlrmSpec,
    placement: &DlrmPlacement<T>,
    system: &SystemSpec<T>,
) -> Result<PoolingTime<T>> {
    placement.validate()?;
    let bytes = T::from_count(dlrm_pooling_bytes(spec)?);
    match placement.mode {
        PlacementMode::SharedFabric => {
            let tier = system
                .tier(TierRole::FabricShared)
                .ok_or(SimError::MissingTier("fabric-shared"))?;
            let r = roofline_parts(T::zero(), bytes, Pipe::Vector, system, tier)?;
            Ok(PoolingTime {
                local: r.memory,
                remote: T::zero(),
                latency: r.latency,
                total: r.total(),
            })
        }
        PlacementMode::DistributedRowwise => {
            let n = T::from_count(placement.device_count as u128);
            let remote_frac = (n - T::one()) / n;
            let r = roofline_parts(T::zero(), bytes / n, Pipe::Vector, system, system.local_hbm()?)?;
            let remote = bytes * remote_frac / placement.bandwidth;
            let gathers = T::from_count(spec.batch as u128 * spec.num_tables as u128);
            let latency = r.latency + placement.per_message_latency * gathers * remote_frac / placement.coalescing;
            Ok(PoolingTime {
                local: r.memory,
                remote,
                latency,
                total: r.memory + remote + latency,
            })
        }
    }
}

/// `t_reference / t_candidate`.
pub fn pooling_speedup<T: Real>(
    spec: &DlrmSpec,
    reference: (&DlrmPlacement<T>, &SystemSpec<T>),
    candidate: (&DlrmPlacement<T>, &SystemSpec<T>),
) -> Result<T> {
    Ok(pooling_time(spec, reference.0, reference.1)?.total / pooling_time(spec, candidate.0, candidate.1)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use crate::system::roofline_time;
    use crate::workload::Dtype;

    fn spec(tables: u64, batch: u64) -> DlrmSpec {
        DlrmSpec {
            num_tables: tables,
            rows_per_table: 1_000_000,
            embed_dim: 32,
            pooling_factor: 32,
            dtype_bytes: 2,
            batch,
        }
    }

    #[test]
    fn ten_terabytes_needs_128() {
        let s = DlrmSpec {
            num_tables: 1,
            rows_per_table: 156_250_000_000,
            embed_dim: 32,
            pooling_factor: 32,
            dtype_bytes: 2,
            batch: 1,
        };
        assert_eq!(s.total_table_bytes(), 10_000_000_000_000);
        assert_eq!(required_devices(&s, 80_000_000_000).unwrap(), 128);
        assert_eq!(required_devices(&spec(1, 1), 80_000_000_000).unwrap(), 1);
    }

    #[test]
    fn one_device_is_local_roofline() {
        let sys = presets::h100_dgx();
        let s = spec(64, 128);
        let t = pooling_time(&s, &DlrmPlacement::distributed(1, Interconnect::Nvlink, 1e-6), &sys).unwrap();
        let want = roofline_time(0.0, 16_777_216.0, Dtype::Fp16, &sys, sys.local_hbm().unwrap()).unwrap();
        assert_eq!(t.total, want);
    }

    #[test]
    fn shared_fabric_needs_tier() {
        let s = spec(1, 1);
        let p = DlrmPlacement::<f64>::shared_fabric();
        assert!(pooling_time(&s, &p, &presets::h100_dgx()).is_err());
        assert!(pooling_time(&s, &p, &presets::pfa()).is_ok());
    }

    #[test]
    fn linear_in_batch_without_latency() {
        let sys = presets::h100_dgx();
        let p = DlrmPlacement::distributed(16, Interconnect::Pcie, 0.0);
        let a = pooling_time(&spec(8, 128), &p, &sys).unwrap().total;
        let b = pooling_time(&spec(8, 256), &p, &sys).unwrap().total;
        assert!((b - 2.0 * a).abs() <= 1e-15 * b);
    }
}
