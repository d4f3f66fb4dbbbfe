//! Tensor / pipeline / data parallel sharding, collective costs, and the
//! per-class traffic ledger.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scalar::Scalar;
use crate::system::NetworkSpec;
use crate::workload::{param_count, ModelSpec};

fn one_u64() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelismPlan {
    pub tp: u32,
    pub pp: u32,
    pub dp: u32,
    /// Sequences per microbatch.
    #[serde(default = "one_u64")]
    pub microbatch: u64,
    #[serde(default = "one_u64")]
    pub num_microbatches: u64,
    #[serde(default)]
    pub sequence_parallel: bool,
    #[serde(default)]
    pub dp_overlap: bool,
}

impl Default for ParallelismPlan {
    fn default() -> Self {
        ParallelismPlan::single()
    }
}

impl ParallelismPlan {
    pub fn single() -> Self {
        ParallelismPlan::new(1, 1, 1)
    }

    pub fn new(tp: u32, pp: u32, dp: u32) -> Self {
        ParallelismPlan {
            tp,
            pp,
            dp,
            microbatch: 1,
            num_microbatches: 1,
            sequence_parallel: false,
            dp_overlap: false,
        }
    }

    pub fn with_batching(mut self, microbatch: u64, num_microbatches: u64) -> Self {
        self.microbatch = microbatch;
        self.num_microbatches = num_microbatches;
        self
    }

    pub fn devices(&self) -> u64 {
        self.tp as u64 * self.pp as u64 * self.dp as u64
    }

    pub fn global_batch(&self) -> u64 {
        self.dp as u64 * self.num_microbatches * self.microbatch
    }

    pub fn validate(&self) -> Result<()> {
        for (f, v) in [
            ("plan.tp", self.tp as u64),
            ("plan.pp", self.pp as u64),
            ("plan.dp", self.dp as u64),
            ("plan.microbatch", self.microbatch),
            ("plan.num_microbatches", self.num_microbatches),
        ] {
            if v == 0 {
                return Err(SimError::invalid(f, "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn validate_devices(&self, devices: u64) -> Result<()> {
        self.validate()?;
        if self.devices() != devices {
            return Err(SimError::invalid(
                "plan",
                format!(
                    "tp x pp x dp = {} x {} x {} = {} must equal the device count {devices}",
                    self.tp,
                    self.pp,
                    self.dp,
                    self.devices()
                ),
            ));
        }
        Ok(())
    }
}

/// Per-device memory of a sharded model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShardSizes {
    /// Weight bytes for each of the `tp * pp` model-parallel ranks.
    pub weight_bytes: Vec<u128>,
    /// KV-cache bytes one token of one sequence occupies on a device.
    pub kv_bytes_per_token: u128,
    pub layers_per_stage: u64,
    pub kv_heads_per_rank: u64,
}

impl ShardSizes {
    pub fn max_weight_bytes(&self) -> u128 {
        self.weight_bytes.iter().copied().max().unwrap_or(0)
    }

    pub fn total_weight_bytes(&self) -> u128 {
        self.weight_bytes.iter().sum()
    }
}

/// KV heads stored per TP rank; ranks replicate heads when `tp > kv_heads`.
pub fn kv_heads_per_rank(model: &ModelSpec, tp: u32) -> Result<u64> {
    let (kv, tp) = (model.num_kv_heads, tp as u64);
    if kv % tp == 0 {
        Ok(kv / tp)
    } else if tp % kv == 0 {
        Ok(1)
    } else {
        Err(SimError::Indivisible {
            dimension: "num_kv_heads".into(),
            value: kv,
            divisor: tp,
        })
    }
}

pub fn check_divisibility(model: &ModelSpec, plan: &ParallelismPlan) -> Result<()> {
    if !model.num_layers.is_multiple_of(plan.pp as u64) {
        return Err(SimError::Indivisible {
            dimension: "num_layers".into(),
            value: model.num_layers,
            divisor: plan.pp as u64,
        });
    }
    if !model.num_heads.is_multiple_of(plan.tp as u64) {
        return Err(SimError::Indivisible {
            dimension: "num_heads".into(),
            value: model.num_heads,
            divisor: plan.tp as u64,
        });
    }
    kv_heads_per_rank(model, plan.tp)?;
    Ok(())
}

pub fn shard_sizes(model: &ModelSpec, plan: &ParallelismPlan) -> Result<ShardSizes> {
    plan.validate()?;
    let total = param_count(model)? * model.weight_dtype_bytes as u128;
    check_divisibility(model, plan)?;
    let ranks = plan.tp as u128 * plan.pp as u128;
    let (base, rem) = (total / ranks, total % ranks);
    let weight_bytes = (0..ranks).map(|r| base + u128::from(r < rem)).collect();
    let kv_heads = kv_heads_per_rank(model, plan.tp)?;
    let layers_per_stage = model.num_layers / plan.pp as u64;
    Ok(ShardSizes {
        weight_bytes,
        kv_bytes_per_token: 2
            * kv_heads as u128
            * model.head_dim as u128
            * model.kv_dtype_bytes as u128
            * layers_per_stage as u128,
        layers_per_stage,
        kv_heads_per_rank: kv_heads,
    })
}

/// Layer input/output bytes touched across all TP ranks of the model for
/// `tokens` tokens. Each rank reads the replicated tensors at full size, so
/// the total is exactly proportional to `tp`.
pub fn tp_replicated_activation_bytes(model: &ModelSpec, tp: u32, tokens: u128) -> u128 {
    tp as u128
        * 2
        * model.hidden_size as u128
        * model.activation_dtype_bytes as u128
        * model.num_layers as u128
        * tokens
}

/// Ring all-reduce over `n` ranks: `2(n-1)/n * bytes / bw + 2(n-1) * latency`.
pub fn allreduce_time<T: Scalar>(bytes: T, n: u32, net: &NetworkSpec<T>) -> T {
    if n <= 1 {
        return T::zero();
    }
    let n = T::from_count(n as u128);
    let two = T::one() + T::one();
    let rounds = two * (n - T::one());
    rounds / n * bytes / net.link_bandwidth + rounds * net.per_message_latency
}

/// Point-to-point transfer at a pipeline stage boundary.
pub fn p2p_time<T: Scalar>(bytes: T, net: &NetworkSpec<T>) -> T {
    bytes / net.link_bandwidth + net.per_message_latency
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PipelineTiming<T> {
    pub total: T,
    /// Idle time relative to the ideal `m * stage_time`.
    pub bubble_fraction: T,
}

/// 1F1B schedule time for `m` microbatches over `p` uniform stages.
pub fn pipeline_time<T: Scalar>(stage_time: T, p: u32, m: u64) -> Result<PipelineTiming<T>> {
    if p == 0 || m == 0 {
        return Err(SimError::invalid("pipeline", "p and m must be >= 1"));
    }
    let slots = T::from_count(m as u128 + p as u128 - 1);
    Ok(PipelineTiming {
        total: slots * stage_time,
        bubble_fraction: T::from_count(p as u128 - 1) / T::from_count(m as u128),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Train,
    Prefill,
    Decode,
}

/// Bits moved per communication class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficLedger<T> {
    pub tp_comm: T,
    pub pp_comm: T,
    pub dp_comm: T,
    pub offload_tray: T,
    pub offload_external: T,
}

impl<T: Scalar> TrafficLedger<T> {
    pub fn zero() -> Self {
        TrafficLedger {
            tp_comm: T::zero(),
            pp_comm: T::zero(),
            dp_comm: T::zero(),
            offload_tray: T::zero(),
            offload_external: T::zero(),
        }
    }

    pub fn total(&self) -> T {
        self.tp_comm + self.pp_comm + self.dp_comm + self.offload_tray + self.offload_external
    }

    pub fn scaled(&self, k: T) -> Self {
        TrafficLedger {
            tp_comm: self.tp_comm * k,
            pp_comm: self.pp_comm * k,
            dp_comm: self.dp_comm * k,
            offload_tray: self.offload_tray * k,
            offload_external: self.offload_external * k,
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        TrafficLedger {
            tp_comm: self.tp_comm + o.tp_comm,
            pp_comm: self.pp_comm + o.pp_comm,
            dp_comm: self.dp_comm + o.dp_comm,
            offload_tray: self.offload_tray + o.offload_tray,
            offload_external: self.offload_external + o.offload_external,
        }
    }
}

/// Where offloaded state travels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffloadClass {
    /// Tray-local memory or the shared fabric pool.
    Tray,
    /// External store across the front-end network.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Offload {
    pub bytes: u128,
    pub class: OffloadClass,
}

impl Offload {
    pub fn none() -> Self {
        Offload {
            bytes: 0,
            class: OffloadClass::Tray,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct CommOptions {
    /// All-reduce-equivalent TP volumes per layer per training step
    /// (forward, input gradient, weight-gradient path).
    pub train_tp_passes: u64,
}

impl Default for CommOptions {
    fn default() -> Self {
        CommOptions { train_tp_passes: 3 }
    }
}

/// Bits per communication class for `tokens` processed tokens.
///
/// TP: two all-reduces of the layer activations per layer per pass. PP:
/// boundary activations per pipeline edge (forward and backward when
/// training). DP: one gradient all-reduce of every replica's weights per
/// training step; the number of steps is `tokens / (global_batch * seq_len)`.
/// Volumes are payload sizes, not per-algorithm wire bytes.
pub fn traffic_ledger<T: Scalar>(
    model: &ModelSpec,
    plan: &ParallelismPlan,
    tokens: u128,
    seq_len: u64,
    pass: Pass,
    offload: Offload,
    opts: &CommOptions,
) -> Result<TrafficLedger<T>> {
    plan.validate()?;
    model.validate()?;
    let bits = |bytes: u128| T::from_count(bytes) * T::from_count(8);
    let act = tokens * model.hidden_size as u128 * model.activation_dtype_bytes as u128;
    let training = pass == Pass::Train;
    let mut ledger = TrafficLedger::zero();
    if plan.tp > 1 {
        let passes = if training { opts.train_tp_passes as u128 } else { 1 };
        ledger.tp_comm = bits(2 * model.num_layers as u128 * passes * act);
    }
    if plan.pp > 1 {
        let dirs = if training { 2 } else { 1 };
        ledger.pp_comm = bits((plan.pp as u128 - 1) * dirs * act);
    }
    if plan.dp > 1 && training {
        if seq_len == 0 {
            return Err(SimError::invalid("seq_len", "must be >= 1"));
        }
        let grad_bytes = param_count(model)? * model.weight_dtype_bytes as u128;
        let tokens_per_step = plan.global_batch() as u128 * seq_len as u128;
        ledger.dp_comm = bits(plan.dp as u128 * grad_bytes) * T::from_count(tokens)
            / T::from_count(tokens_per_step);
    }
    match offload.class {
        OffloadClass::Tray => ledger.offload_tray = bits(offload.bytes),
        OffloadClass::External => ledger.offload_external = bits(offload.bytes),
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn net(bw: f64, lat: f64) -> NetworkSpec<f64> {
        NetworkSpec {
            link_bandwidth: bw,
            per_message_latency: lat,
            gpus_per_tray: 8,
            trays_per_rack: 1,
            racks: 1,
        }
    }

    #[test]
    fn identity_plan_keeps_whole_model() {
        let m = presets::llama31_8b();
        let s = shard_sizes(&m, &ParallelismPlan::single()).unwrap();
        assert_eq!(s.weight_bytes, vec![param_count(&m).unwrap() * 2]);
        assert_eq!(s.kv_bytes_per_token, m.kv_bytes_per_token_layer() * m.num_layers as u128);
    }

    #[test]
    fn eight_way_tp_split() {
        // 64e9 weight bytes: 32e9 params at 2 bytes
        let mut m = presets::llama31_70b();
        m.weight_dtype_bytes = 2;
        let s = shard_sizes(&m, &ParallelismPlan::new(8, 1, 1)).unwrap();
        assert_eq!(s.weight_bytes.len(), 8);
        assert_eq!(s.total_weight_bytes(), param_count(&m).unwrap() * 2);
        let total: u128 = 64_000_000_000;
        let ranks = 8u128;
        assert_eq!(total / ranks, 8_000_000_000);
    }

    #[test]
    fn indivisible_heads_named() {
        let mut m = presets::tiny_model();
        m.hidden_size = 16;
        m.num_heads = 4;
        m.num_kv_heads = 4;
        m.head_dim = 4;
        match shard_sizes(&m, &ParallelismPlan::new(8, 1, 1)) {
            Err(SimError::Indivisible { dimension, .. }) => assert_eq!(dimension, "num_heads"),
            other => panic!("{other:?}"),
        }
        match shard_sizes(&m, &ParallelismPlan::new(1, 3, 1)) {
            Err(SimError::Indivisible { dimension, .. }) => assert_eq!(dimension, "num_layers"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn allreduce_examples() {
        assert_eq!(allreduce_time(1e9, 1, &net(1e9, 3.0)), 0.0);
        assert_eq!(allreduce_time(1e9, 2, &net(1e9, 0.0)), 1.0);
        assert_eq!(allreduce_time(0.0, 8, &net(1e9, 1e-6)), 14.0 * 1e-6);
    }

    #[test]
    fn p2p_examples() {
        let t0 = 2e-6;
        assert_eq!(p2p_time(0.0, &net(900e9, t0)), t0);
        assert_eq!(p2p_time(9e11, &net(900e9, 0.0)), 1.0);
        let a = p2p_time(1e9, &net(900e9, t0)) - t0;
        let b = p2p_time(2e9, &net(900e9, t0)) - t0;
        assert!((b - 2.0 * a).abs() < 1e-18);
    }

    #[test]
    fn pipeline_examples() {
        let t = pipeline_time(2.0, 1, 5).unwrap();
        assert_eq!((t.total, t.bubble_fraction), (10.0, 0.0));
        assert_eq!(pipeline_time(1.0, 4, 8).unwrap().bubble_fraction, 0.375);
        assert!(pipeline_time(1.0, 4, 1_000_000).unwrap().bubble_fraction < 1e-5);
        assert!(pipeline_time(1.0, 0, 1).is_err());
    }

    #[test]
    fn single_device_ledger_is_zero() {
        let l: TrafficLedger<f64> = traffic_ledger(
            &presets::tiny_model(),
            &ParallelismPlan::single(),
            1000,
            10,
            Pass::Train,
            Offload::none(),
            &CommOptions::default(),
        )
        .unwrap();
        assert_eq!(l.total(), 0.0);
    }

    #[test]
    fn tp_payload_per_layer() {
        let mut m = presets::llama31_8b();
        m.hidden_size = 1024;
        m.num_heads = 8;
        m.head_dim = 128;
        m.num_layers = 1;
        let l: TrafficLedger<f64> = traffic_ledger(
            &m,
            &ParallelismPlan::new(2, 1, 1),
            128,
            128,
            Pass::Prefill,
            Offload::none(),
            &CommOptions::default(),
        )
        .unwrap();
        assert_eq!(l.tp_comm, 524_288.0 * 8.0);
    }

    #[test]
    fn sequence_parallel_keeps_volume() {
        let m = presets::llama31_8b();
        let mut plan = ParallelismPlan::new(4, 1, 1);
        let go = |p: &ParallelismPlan| {
            traffic_ledger::<f64>(&m, p, 4096, 4096, Pass::Train, Offload::none(), &CommOptions::default())
                .unwrap()
        };
        let a = go(&plan);
        plan.sequence_parallel = true;
        assert_eq!(a, go(&plan));
    }
}
