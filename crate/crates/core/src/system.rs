//! Hardware description and calibrated roofline timing.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Result, SimError};
use crate::scalar::{Real, Scalar};
use crate::workload::Dtype;

fn zero<T: Scalar>() -> T {
    T::zero()
}

fn one<T: Scalar>() -> T {
    T::one()
}

/// Accepts byte counts written either as integers or as integral floats
/// (`80e9`), which is how capacities are usually typed in config files.
pub(crate) fn de_byte_count<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<u64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Int(u64),
        Float(f64),
    }
    match Raw::deserialize(d)? {
        Raw::Int(v) => Ok(v),
        Raw::Float(f) if f >= 0.0 && f.fract() == 0.0 && f <= u64::MAX as f64 => Ok(f as u64),
        Raw::Float(f) => Err(serde::de::Error::custom(format!(
            "byte count must be a non-negative integer, got {f}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Scalar"))]
#[serde(deny_unknown_fields)]
pub struct ProcessorSpec<T> {
    /// Dense matrix-pipe peak per processor, keyed by dtype.
    pub peak_matrix_flops: BTreeMap<Dtype, T>,
    pub peak_vector_flops: T,
    pub count: u32,
}

impl<T: Scalar> ProcessorSpec<T> {
    pub fn peak(&self, dtype: Dtype) -> Result<T> {
        self.peak_matrix_flops
            .get(&dtype)
            .copied()
            .ok_or_else(|| SimError::UnknownDtype(dtype.name().to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(SimError::invalid("processor.count", "must be >= 1"));
        }
        if self.peak_matrix_flops.is_empty() {
            return Err(SimError::invalid("processor.peak_matrix_flops", "at least one dtype required"));
        }
        for (d, v) in &self.peak_matrix_flops {
            if *v <= T::zero() {
                return Err(SimError::invalid(
                    format!("processor.peak_matrix_flops.{}", d.name()),
                    "must be > 0",
                ));
            }
        }
        if self.peak_vector_flops <= T::zero() {
            return Err(SimError::invalid("processor.peak_vector_flops", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TierRole {
    LocalHbm,
    FabricShared,
    HostDdr,
}

impl TierRole {
    pub fn name(self) -> &'static str {
        match self {
            TierRole::LocalHbm => "local-hbm",
            TierRole::FabricShared => "fabric-shared",
            TierRole::HostDdr => "host-ddr",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Scalar"))]
#[serde(deny_unknown_fields)]
pub struct MemoryTier<T> {
    pub role: TierRole,
    #[serde(deserialize_with = "de_byte_count")]
    pub capacity: u64,
    /// Bandwidth seen by one processor, bytes/s.
    pub bandwidth: T,
    #[serde(default = "zero")]
    pub fixed_latency: T,
    /// Fraction of fabric accesses served by the HBM cache.
    #[serde(default = "one")]
    pub cache_hit_rate: T,
    /// Bandwidth of the backing store behind the cache (fabric tiers).
    #[serde(default)]
    pub backing_bandwidth: Option<T>,
}

impl<T: Scalar> MemoryTier<T> {
    pub fn new(role: TierRole, capacity: u64, bandwidth: T) -> Self {
        MemoryTier {
            role,
            capacity,
            bandwidth,
            fixed_latency: T::zero(),
            cache_hit_rate: T::one(),
            backing_bandwidth: None,
        }
    }

    /// Raw bandwidth after cache-hit blending.
    pub fn blended_bandwidth(&self) -> T {
        match (self.role, self.backing_bandwidth) {
            (TierRole::FabricShared, Some(backing)) => {
                self.cache_hit_rate * self.bandwidth + (T::one() - self.cache_hit_rate) * backing
            }
            _ => self.bandwidth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = |s: &str| format!("memory.{}.{s}", self.role.name());
        if self.capacity == 0 {
            return Err(SimError::invalid(f("capacity"), "must be > 0"));
        }
        if self.bandwidth <= T::zero() {
            return Err(SimError::invalid(f("bandwidth"), "must be > 0"));
        }
        if self.fixed_latency < T::zero() {
            return Err(SimError::invalid(f("fixed_latency"), "must be >= 0"));
        }
        if self.cache_hit_rate < T::zero() || self.cache_hit_rate > T::one() {
            return Err(SimError::invalid(f("cache_hit_rate"), "must lie in [0, 1]"));
        }
        if let Some(b) = self.backing_bandwidth {
            if b <= T::zero() {
                return Err(SimError::invalid(f("backing_bandwidth"), "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Scale-up / scale-out network seen by one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec<T> {
    /// Bytes/s per direction per device.
    pub link_bandwidth: T,
    pub per_message_latency: T,
    pub gpus_per_tray: u32,
    pub trays_per_rack: u32,
    pub racks: u32,
}

impl<T: Scalar> NetworkSpec<T> {
    pub fn device_count(&self) -> u64 {
        self.gpus_per_tray as u64 * self.trays_per_rack as u64 * self.racks as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.link_bandwidth <= T::zero() {
            return Err(SimError::invalid("network.link_bandwidth", "must be > 0"));
        }
        if self.per_message_latency < T::zero() {
            return Err(SimError::invalid("network.per_message_latency", "must be >= 0"));
        }
        for (f, v) in [
            ("network.gpus_per_tray", self.gpus_per_tray),
            ("network.trays_per_rack", self.trays_per_rack),
            ("network.racks", self.racks),
        ] {
            if v == 0 {
                return Err(SimError::invalid(f, "must be >= 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvePoint<T> {
    pub size: T,
    pub utilization: T,
}

/// Utilisation as a function of transfer size (bytes) or GEMM size (FLOPs),
/// interpolated linearly in log(size).
///
/// Above the last knot the last utilisation holds. Below the first knot the
/// `floor` applies when set, otherwise the first utilisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
#[serde(deny_unknown_fields)]
pub struct EfficiencyCurve<T> {
    #[serde(default)]
    pub points: Vec<CurvePoint<T>>,
    #[serde(default)]
    pub floor: Option<T>,
}

impl<T: Scalar> Default for EfficiencyCurve<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Scalar> EfficiencyCurve<T> {
    pub fn identity() -> Self {
        EfficiencyCurve {
            points: vec![CurvePoint {
                size: T::one(),
                utilization: T::one(),
            }],
            floor: None,
        }
    }

    pub fn from_points(points: impl IntoIterator<Item = (T, T)>) -> Result<Self> {
        let c = EfficiencyCurve {
            points: points
                .into_iter()
                .map(|(size, utilization)| CurvePoint { size, utilization })
                .collect(),
            floor: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_floor(mut self, floor: T) -> Result<Self> {
        self.floor = Some(floor);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |u: T| u > T::zero() && u <= T::one();
        for (i, p) in self.points.iter().enumerate() {
            if p.size <= T::zero() {
                return Err(SimError::Calibration(format!("size at row {} must be > 0", i + 1)));
            }
            if !unit(p.utilization) {
                return Err(SimError::Calibration(format!(
                    "utilization at row {} must lie in (0, 1]",
                    i + 1
                )));
            }
        }
        if self.points.windows(2).any(|w| w[1].size <= w[0].size) {
            return Err(SimError::Calibration("sizes must be strictly increasing".into()));
        }
        if let Some(f) = self.floor {
            if !unit(f) {
                return Err(SimError::Calibration("floor must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }
}

impl<T: Real> EfficiencyCurve<T> {
    pub fn evaluate(&self, size: T) -> T {
        let pts = &self.points;
        let Some(first) = pts.first() else {
            return T::one();
        };
        if size < first.size {
            return self.floor.unwrap_or(first.utilization);
        }
        let last = pts[pts.len() - 1];
        if size >= last.size {
            return last.utilization;
        }
        // first knot with size > requested
        let hi = pts.partition_point(|p| p.size <= size);
        let (a, b) = (pts[hi - 1], pts[hi]);
        let t = (size / a.size).ln() / (b.size / a.size).ln();
        a.utilization + t * (b.utilization - a.utilization)
    }

    /// Two-column CSV with a `size,utilization` header and ascending sizes.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| SimError::Calibration(e.to_string()))?
            .clone();
        let names: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
        if names != ["size", "utilization"] {
            return Err(SimError::Calibration(format!(
                "expected header `size,utilization`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut points = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| SimError::Calibration(e.to_string()))?;
            let row = i + 2;
            let size: u64 = rec[0]
                .parse()
                .map_err(|_| SimError::Calibration(format!("row {row}: size must be an integer")))?;
            let util: f64 = rec[1]
                .parse()
                .map_err(|_| SimError::Calibration(format!("row {row}: utilization must be a decimal")))?;
            points.push((T::from_count(size as u128), T::lit(util)));
        }
        if points.is_empty() {
            return Err(SimError::Calibration("curve has no rows".into()));
        }
        Self::from_points(points)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv_reader(f).map_err(|e| match e {
            SimError::Calibration(m) => SimError::Calibration(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de> + Scalar"))]
#[serde(deny_unknown_fields)]
pub struct SystemSpec<T> {
    #[serde(default)]
    pub name: String,
    pub processor: ProcessorSpec<T>,
    pub memory_tiers: Vec<MemoryTier<T>>,
    #[serde(default)]
    pub network: Option<NetworkSpec<T>>,
    #[serde(default)]
    pub bandwidth_curve: EfficiencyCurve<T>,
    #[serde(default)]
    pub flops_curve: EfficiencyCurve<T>,
}

impl<T: Scalar> SystemSpec<T> {
    pub fn validate(&self) -> Result<()> {
        self.processor.validate()?;
        if self.memory_tiers.is_empty() {
            return Err(SimError::invalid("memory_tiers", "at least one tier required"));
        }
        for t in &self.memory_tiers {
            t.validate()?;
        }
        let hbm = self
            .memory_tiers
            .iter()
            .filter(|t| t.role == TierRole::LocalHbm)
            .count();
        if hbm != 1 {
            return Err(SimError::invalid(
                "memory_tiers",
                format!("exactly one local-hbm tier required, found {hbm}"),
            ));
        }
        if let Some(n) = &self.network {
            n.validate()?;
        }
        self.bandwidth_curve.validate()?;
        self.flops_curve.validate()?;
        Ok(())
    }

    pub fn tier(&self, role: TierRole) -> Option<&MemoryTier<T>> {
        self.memory_tiers.iter().find(|t| t.role == role)
    }

    pub fn local_hbm(&self) -> Result<&MemoryTier<T>> {
        self.tier(TierRole::LocalHbm)
            .ok_or(SimError::MissingTier("local-hbm"))
    }

    /// Tier that holds weights and KV cache when serving: the shared fabric
    /// pool when present, local HBM otherwise.
    pub fn serving_tier(&self) -> Result<&MemoryTier<T>> {
        match self.tier(TierRole::FabricShared) {
            Some(t) => Ok(t),
            None => self.local_hbm(),
        }
    }

    /// Copy with every compute peak multiplied by `scale`.
    pub fn with_compute_scale(&self, scale: T) -> Self {
        let mut s = self.clone();
        for v in s.processor.peak_matrix_flops.values_mut() {
            *v = *v * scale;
        }
        s.processor.peak_vector_flops = s.processor.peak_vector_flops * scale;
        s
    }
}

pub fn effective_bandwidth<T: Real>(tier: &MemoryTier<T>, transfer_size: T, curve: &EfficiencyCurve<T>) -> T {
    tier.blended_bandwidth() * curve.evaluate(transfer_size)
}

pub fn effective_flops<T: Real>(
    proc: &ProcessorSpec<T>,
    dtype: Dtype,
    gemm_flops: T,
    curve: &EfficiencyCurve<T>,
) -> Result<T> {
    Ok(proc.peak(dtype)? * curve.evaluate(gemm_flops))
}

/// Which compute pipe a kernel runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipe {
    Matrix(Dtype),
    Vector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RooflineTime<T> {
    pub compute: T,
    pub memory: T,
    pub latency: T,
}

impl<T: Scalar> RooflineTime<T> {
    /// `max(compute, memory) + latency`.
    pub fn total(&self) -> T {
        self.compute.max_of(self.memory) + self.latency
    }

    pub fn is_memory_bound(&self) -> bool {
        self.memory > self.compute
    }
}

/// Roofline components for one kernel on one processor.
pub fn roofline_parts<T: Real>(
    flops: T,
    bytes: T,
    pipe: Pipe,
    system: &SystemSpec<T>,
    tier: &MemoryTier<T>,
) -> Result<RooflineTime<T>> {
    if flops < T::zero() || bytes < T::zero() {
        return Err(SimError::invalid("roofline", "flops and bytes must be >= 0"));
    }
    if flops == T::zero() && bytes == T::zero() {
        return Err(SimError::EmptyWork);
    }
    let rate = match pipe {
        Pipe::Matrix(d) => effective_flops(&system.processor, d, flops, &system.flops_curve)?,
        Pipe::Vector => system.processor.peak_vector_flops,
    };
    let compute = if flops > T::zero() { flops / rate } else { T::zero() };
    let memory = if bytes > T::zero() {
        bytes / effective_bandwidth(tier, bytes, &system.bandwidth_curve)
    } else {
        T::zero()
    };
    Ok(RooflineTime {
        compute,
        memory,
        latency: tier.fixed_latency,
    })
}

/// Matrix-pipe roofline time in seconds.
pub fn roofline_time<T: Real>(
    flops: T,
    bytes: T,
    dtype: Dtype,
    system: &SystemSpec<T>,
    tier: &MemoryTier<T>,
) -> Result<T> {
    Ok(roofline_parts(flops, bytes, Pipe::Matrix(dtype), system, tier)?.total())
}

/// Intensity (FLOPs/byte) at which compute and memory time are equal.
pub fn ridge_point<T: Real>(system: &SystemSpec<T>, dtype: Dtype, tier: &MemoryTier<T>) -> Result<T> {
    Ok(system.processor.peak(dtype)? / tier.blended_bandwidth())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use approx::assert_relative_eq;

    fn plain_system(peak: f64, bw: f64) -> SystemSpec<f64> {
        SystemSpec {
            name: "plain".into(),
            processor: ProcessorSpec {
                peak_matrix_flops: [(Dtype::Fp16, peak)].into_iter().collect(),
                peak_vector_flops: peak,
                count: 1,
            },
            memory_tiers: vec![MemoryTier::new(TierRole::LocalHbm, 80_000_000_000, bw)],
            network: None,
            bandwidth_curve: EfficiencyCurve::identity(),
            flops_curve: EfficiencyCurve::identity(),
        }
    }

    #[test]
    fn identity_curve_returns_raw_bandwidth() {
        let tier = MemoryTier::new(TierRole::LocalHbm, 1, 3350e9);
        assert_eq!(effective_bandwidth(&tier, 12345.0, &EfficiencyCurve::identity()), 3350e9);
    }

    #[test]
    fn log_linear_midpoint() {
        let kib = 1024.0;
        let c = EfficiencyCurve::from_points([(kib, 0.1), (kib * kib * kib, 0.9)]).unwrap();
        let tier = MemoryTier::new(TierRole::LocalHbm, 1, 1000.0);
        assert_relative_eq!(c.evaluate(kib * kib), 0.5, max_relative = 1e-12);
        assert_relative_eq!(effective_bandwidth(&tier, kib * kib, &c), 500.0, max_relative = 1e-12);
        // clamps at both ends
        assert_eq!(c.evaluate(1.0), 0.1);
        assert_eq!(c.evaluate(1e15), 0.9);
    }

    #[test]
    fn floor_applies_below_first_knot() {
        let c = EfficiencyCurve::from_points([(1e6, 0.4), (1e9, 0.8)])
            .unwrap()
            .with_floor(0.05)
            .unwrap();
        assert_eq!(c.evaluate(10.0), 0.05);
        assert_eq!(c.evaluate(1e6), 0.4);
        let proc = ProcessorSpec {
            peak_matrix_flops: [(Dtype::Fp16, 100.0)].into_iter().collect(),
            peak_vector_flops: 1.0,
            count: 1,
        };
        assert_relative_eq!(effective_flops(&proc, Dtype::Fp16, 10.0, &c).unwrap(), 5.0);
    }

    #[test]
    fn curve_validation() {
        assert!(EfficiencyCurve::from_points([(2.0, 0.5), (1.0, 0.6)]).is_err());
        assert!(EfficiencyCurve::from_points([(1.0, 0.0)]).is_err());
        assert!(EfficiencyCurve::from_points([(1.0, 1.5)]).is_err());
    }

    #[test]
    fn unknown_dtype() {
        let s = plain_system(1e12, 1e9);
        let r = effective_flops(&s.processor, Dtype::Fp8, 1.0, &s.flops_curve);
        assert!(matches!(r, Err(SimError::UnknownDtype(_))));
    }

    #[test]
    fn h100_fp8_half_utilisation() {
        let s = presets::h100_dgx();
        let half = EfficiencyCurve::from_points([(1.0, 0.5)]).unwrap();
        assert_relative_eq!(
            effective_flops(&s.processor, Dtype::Fp8, 1e12, &half).unwrap(),
            989.5e12,
            max_relative = 1e-15
        );
    }

    #[test]
    fn roofline_identities() {
        let s = plain_system(1e12, 3350e9);
        let t = &s.memory_tiers[0];
        assert_eq!(roofline_time(1e12, 0.0, Dtype::Fp16, &s, t).unwrap(), 1.0);
        assert_eq!(roofline_time(0.0, 3350e9, Dtype::Fp16, &s, t).unwrap(), 1.0);
        assert!(matches!(
            roofline_time(0.0, 0.0, Dtype::Fp16, &s, t),
            Err(SimError::EmptyWork)
        ));
    }

    #[test]
    fn ridge_balances_compute_and_memory() {
        let s = presets::h100_dgx();
        let t = s.local_hbm().unwrap();
        let ridge = ridge_point(&s, Dtype::Fp16, t).unwrap();
        assert_relative_eq!(ridge, 989e12 / 3350e9, max_relative = 1e-15);
        let bytes = 1e9;
        let p = roofline_parts(ridge * bytes, bytes, Pipe::Matrix(Dtype::Fp16), &s, t).unwrap();
        assert_relative_eq!(p.compute, p.memory, max_relative = 1e-12);
    }

    #[test]
    fn fabric_blending() {
        let mut fabric = MemoryTier::new(TierRole::FabricShared, 1, 26800e9);
        fabric.backing_bandwidth = Some(1000e9);
        assert_eq!(fabric.blended_bandwidth(), 26800e9);
        fabric.cache_hit_rate = 0.5;
        assert_relative_eq!(fabric.blended_bandwidth(), 13900e9);
    }

    #[test]
    fn csv_loading() {
        let c = EfficiencyCurve::<f64>::from_csv_reader("size,utilization\n1024,0.1\n1073741824,0.9\n".as_bytes())
            .unwrap();
        assert_eq!(c.points.len(), 2);
        assert!(EfficiencyCurve::<f64>::from_csv_reader("1024,0.1\n2048,0.2\n".as_bytes()).is_err());
        assert!(EfficiencyCurve::<f64>::from_csv_reader("size,utilization\n2048,0.1\n1024,0.2\n".as_bytes()).is_err());
        assert!(EfficiencyCurve::<f64>::from_csv_reader("size,utilization\n1.5,0.1\n".as_bytes()).is_err());
    }

    #[test]
    fn system_needs_exactly_one_hbm_tier() {
        let mut s = plain_system(1.0, 1.0);
        s.memory_tiers.push(MemoryTier::new(TierRole::LocalHbm, 1, 1.0));
        assert!(s.validate().is_err());
        s.memory_tiers.clear();
        assert!(s.validate().is_err());
    }
}
