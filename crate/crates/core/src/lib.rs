//! Analytical performance, memory and energy model for LLM inference and
//! training on GPU clusters and shared-memory fabrics.
//!
//! The model is generic over the scalar type. Counting code accepts any
//! [`Scalar`] (including exact rationals); code that interpolates
//! efficiency curves needs a floating-point [`Real`]. Concrete aliases for
//! `f64` and `f32` are exported at the crate root.

pub mod dlrm;
pub mod energy;
pub mod error;
pub mod inference;
pub mod parallel;
pub mod presets;
pub mod report;
pub mod scalar;
pub mod system;
pub mod training;
pub mod workload;

pub use error::{Result, SimError};
pub use scalar::{Real, Scalar};

pub use dlrm::{pooling_time, required_devices, DlrmPlacement, Interconnect, PlacementMode};
pub use energy::{
    expected_per_bit, path_energy, scenario_profile, workload_energy, EnergyParams, PathProfile, Scenario,
    ScenarioMix, Technology, TrafficClass,
};
pub use inference::{
    max_batch, run_inference, speedup_matrix, tp_overhead_curve, InferenceOptions, InferenceResult,
    TimingBreakdown,
};
pub use parallel::{
    allreduce_time, p2p_time, pipeline_time, shard_sizes, traffic_ledger, ParallelismPlan, Pass, TrafficLedger,
};
pub use report::{mape, r_squared, Format, MeasurementSet, RunReport};
pub use system::{
    effective_bandwidth, effective_flops, roofline_time, EfficiencyCurve, MemoryTier, NetworkSpec,
    ProcessorSpec, SystemSpec, TierRole,
};
pub use training::{search_plan, train_memory, train_step_time, SearchConstraints, TrainOptions, TrainStepResult};
pub use workload::{
    arithmetic_intensity_curve, dlrm_pooling_bytes, layer_bytes, layer_flops, param_count, CostOptions,
    DlrmSpec, Dtype, ModelSpec, Phase, WorkloadShape,
};

pub type SystemSpecF64 = SystemSpec<f64>;
pub type SystemSpecF32 = SystemSpec<f32>;
pub type EfficiencyCurveF64 = EfficiencyCurve<f64>;
pub type EfficiencyCurveF32 = EfficiencyCurve<f32>;
pub type InferenceResultF64 = InferenceResult<f64>;
pub type InferenceResultF32 = InferenceResult<f32>;
pub type TrainStepResultF64 = TrainStepResult<f64>;
pub type TrainStepResultF32 = TrainStepResult<f32>;
pub type EnergyParamsF64 = EnergyParams<f64>;
pub type EnergyParamsF32 = EnergyParams<f32>;
pub type TrafficLedgerF64 = TrafficLedger<f64>;
pub type TrafficLedgerF32 = TrafficLedger<f32>;
