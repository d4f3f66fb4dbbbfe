//! Static-batch inference: prefill plus step-by-step decode on a sharded
//! model, with latency breakdowns, throughput, MFU and the memory-capacity
//! batch limit.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::parallel::{
    allreduce_time, kv_heads_per_rank, p2p_time, shard_sizes, traffic_ledger, CommOptions, Offload,
    ParallelismPlan, Pass, TrafficLedger,
};
use crate::scalar::Real;
use crate::system::{roofline_parts, MemoryTier, Pipe, SystemSpec, TierRole};
use crate::workload::{layer_kernels, logits_kernel, CostOptions, Kernel, KernelKind, ModelSpec, Phase, WorkloadShape};

/// Seconds per latency category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown<T> {
    pub gemm: T,
    pub attention: T,
    pub norm_residual_other: T,
    pub tp_comm: T,
    pub pp_comm: T,
    /// Fixed access latency of a non-local serving tier.
    pub memory_offload: T,
}

impl<T: Real> TimingBreakdown<T> {
    pub fn zero() -> Self {
        TimingBreakdown {
            gemm: T::zero(),
            attention: T::zero(),
            norm_residual_other: T::zero(),
            tp_comm: T::zero(),
            pp_comm: T::zero(),
            memory_offload: T::zero(),
        }
    }

    pub fn total(&self) -> T {
        self.gemm + self.attention + self.norm_residual_other + self.tp_comm + self.pp_comm + self.memory_offload
    }

    pub fn add(&self, o: &Self) -> Self {
        TimingBreakdown {
            gemm: self.gemm + o.gemm,
            attention: self.attention + o.attention,
            norm_residual_other: self.norm_residual_other + o.norm_residual_other,
            tp_comm: self.tp_comm + o.tp_comm,
            pp_comm: self.pp_comm + o.pp_comm,
            memory_offload: self.memory_offload + o.memory_offload,
        }
    }

    pub fn scaled(&self, k: T) -> Self {
        TimingBreakdown {
            gemm: self.gemm * k,
            attention: self.attention * k,
            norm_residual_other: self.norm_residual_other * k,
            tp_comm: self.tp_comm * k,
            pp_comm: self.pp_comm * k,
            memory_offload: self.memory_offload * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct InferenceOptions {
    pub cost: CostOptions,
    /// Fraction of serving-tier capacity held back from weights and KV.
    pub reserve_fraction: f64,
}

impl Default for InferenceOptions {
    fn default() -> Self {
        InferenceOptions {
            cost: CostOptions::default(),
            reserve_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceResult<T> {
    pub batch: u64,
    pub prefill_time: T,
    pub decode_time: T,
    pub e2e_latency: T,
    /// Generated tokens per second across the whole batch.
    pub throughput: T,
    pub mfu: T,
    pub max_batch_used: u64,
    pub model_flops: u128,
    /// Activation bytes read by TP ranks beyond the first (zero when tp = 1).
    pub redundant_activation_bytes: u128,
    pub prefill_breakdown: TimingBreakdown<T>,
    pub decode_breakdown: TimingBreakdown<T>,
    pub breakdown: TimingBreakdown<T>,
    pub ledger: TrafficLedger<T>,
}

/// Largest batch (summed over DP replicas) whose weights and full-length KV
/// cache fit the serving tier of every device. Transient activations are
/// not reserved.
///
/// A fabric-shared tier is split evenly across the plan's devices.
pub fn max_batch<T: Real>(
    model: &ModelSpec,
    system: &SystemSpec<T>,
    plan: &ParallelismPlan,
    shape: &WorkloadShape,
    reserve_fraction: f64,
) -> Result<u64> {
    if !(0.0..1.0).contains(&reserve_fraction) {
        return Err(SimError::invalid("reserve_fraction", "must be in [0, 1)"));
    }
    let tier = system.serving_tier()?;
    let shards = shard_sizes(model, plan)?;
    let mut capacity = tier.capacity as u128;
    if tier.role == TierRole::FabricShared {
        capacity /= plan.devices() as u128;
    }
    let budget = ((1.0 - reserve_fraction) * capacity as f64).floor() as u128;
    let weights = shards.max_weight_bytes();
    if weights > budget {
        return Ok(0);
    }
    let per_seq = per_sequence_bytes(model, plan, shape)?;
    let per_replica = (budget - weights) / per_seq;
    Ok(u64::try_from(per_replica * plan.dp as u128).unwrap_or(u64::MAX))
}

/// Per-device KV-cache bytes of one sequence at its final length.
pub fn per_sequence_bytes(model: &ModelSpec, plan: &ParallelismPlan, shape: &WorkloadShape) -> Result<u128> {
    let shards = shard_sizes(model, plan)?;
    let tokens = shape.input_len as u128 + shape.output_len as u128;
    Ok(shards.kv_bytes_per_token * tokens)
}

pub(crate) struct Ctx<'a, T> {
    model: &'a ModelSpec,
    system: &'a SystemSpec<T>,
    plan: &'a ParallelismPlan,
    tier: &'a MemoryTier<T>,
    opts: &'a CostOptions,
    kv_ratio: T,
    q_ratio: T,
    tp: T,
}

#[derive(Debug, Clone, Copy)]
struct DeviceKernel<T> {
    kind: KernelKind,
    flops: T,
    bytes: T,
    activation_bytes: u128,
}

impl<'a, T: Real> Ctx<'a, T> {
    pub(crate) fn new(
        model: &'a ModelSpec,
        system: &'a SystemSpec<T>,
        plan: &'a ParallelismPlan,
        tier: &'a MemoryTier<T>,
        opts: &'a CostOptions,
    ) -> Result<Self> {
        let kvh = kv_heads_per_rank(model, plan.tp)?;
        let tp = T::from_count(plan.tp as u128);
        let h = T::from_count(model.hidden_size as u128);
        let kvw_rank = T::from_count(kvh as u128 * model.head_dim as u128);
        let kvw = T::from_count(model.kv_width());
        let two = T::lit(2.0);
        Ok(Ctx {
            model,
            system,
            plan,
            tier,
            opts,
            kv_ratio: T::from_count(kvh as u128) / T::from_count(model.num_kv_heads as u128),
            q_ratio: (h / tp + two * kvw_rank) / (h + two * kvw),
            tp,
        })
    }

    /// Per-device share of one kernel.
    fn shard(&self, k: &Kernel) -> DeviceKernel<T> {
        let c = |v: u128| T::from_count(v);
        let b = &k.bytes;
        let (flops, bytes) = match k.kind {
            KernelKind::QkvProj => (
                c(k.flops) * self.q_ratio,
                c(b.weights) * self.q_ratio + c(b.activations),
            ),
            KernelKind::Attention => (
                c(k.flops) / self.tp,
                c(b.kv_cache) * self.kv_ratio + c(b.attention_scratch) / self.tp + c(b.activations),
            ),
            KernelKind::OutProj | KernelKind::Ffn | KernelKind::Logits => (
                c(k.flops) / self.tp,
                c(b.weights) / self.tp + c(b.activations),
            ),
            KernelKind::NormResidual => (c(k.flops), c(k.total_bytes())),
        };
        DeviceKernel {
            kind: k.kind,
            flops,
            bytes,
            activation_bytes: b.activations,
        }
    }

    fn kernel_time(&self, k: &DeviceKernel<T>, into: &mut TimingBreakdown<T>) -> Result<()> {
        if k.flops == T::zero() && k.bytes == T::zero() {
            return Ok(());
        }
        let pipe = if k.kind.is_vector() {
            Pipe::Vector
        } else {
            Pipe::Matrix(self.model.compute_dtype()?)
        };
        let r = roofline_parts(k.flops, k.bytes, pipe, self.system, self.tier)?;
        let body = r.compute.max_of(r.memory);
        let slot = match k.kind {
            KernelKind::Attention => &mut into.attention,
            KernelKind::NormResidual => &mut into.norm_residual_other,
            _ => &mut into.gemm,
        };
        *slot = *slot + body;
        if self.tier.role == TierRole::LocalHbm {
            *slot = *slot + r.latency;
        } else {
            into.memory_offload = into.memory_offload + r.latency;
        }
        Ok(())
    }

    /// Per-device time of a set of kernels, without communication.
    pub(crate) fn kernels_time(&self, kernels: &[Kernel]) -> Result<TimingBreakdown<T>> {
        let mut t = TimingBreakdown::zero();
        for k in kernels {
            self.kernel_time(&self.shard(k), &mut t)?;
        }
        Ok(t)
    }

    /// One forward pass of a replica's batch through every stage.
    /// Returns the timing and the redundant activation bytes.
    fn pass(&self, phase: Phase, shape: &WorkloadShape) -> Result<(TimingBreakdown<T>, u128)> {
        let kernels = layer_kernels(self.model, phase, shape, self.opts)?;
        let mut layer = TimingBreakdown::zero();
        let mut act = 0u128;
        for k in &kernels {
            let d = self.shard(k);
            self.kernel_time(&d, &mut layer)?;
            act += d.activation_bytes;
        }
        let net = self.system.network.as_ref();
        let tokens = shape.batch as u128 * if phase == Phase::Prefill { shape.input_len as u128 } else { 1 };
        let payload = T::from_count(
            tokens * self.model.hidden_size as u128 * self.model.activation_dtype_bytes as u128,
        );
        if self.plan.tp > 1 {
            let net = net.ok_or(SimError::MissingNetwork(self.plan.tp))?;
            layer.tp_comm = T::lit(2.0) * allreduce_time(payload, self.plan.tp, net);
        }
        let layers = self.model.num_layers;
        let mut total = layer.scaled(T::from_count(layers as u128));

        let logits = self.shard(&logits_kernel(self.model, shape.batch, 1)?);
        self.kernel_time(&logits, &mut total)?;

        if self.plan.pp > 1 {
            let net = net.ok_or(SimError::MissingNetwork(self.plan.pp))?;
            total.pp_comm = T::from_count(self.plan.pp as u128 - 1) * p2p_time(payload, net);
        }
        let redundant = (self.plan.tp as u128 - 1) * (act * layers as u128 + logits.activation_bytes);
        Ok((total, redundant))
    }
}

/// Per-step decode timing for a replica of `shape.batch` sequences; step `i`
/// (0-based) attends over `input_len + i + 1` positions.
pub fn decode_step_times<T: Real>(
    model: &ModelSpec,
    system: &SystemSpec<T>,
    plan: &ParallelismPlan,
    shape: &WorkloadShape,
    opts: &CostOptions,
) -> Result<Vec<TimingBreakdown<T>>> {
    let ctx = Ctx::new(model, system, plan, system.serving_tier()?, opts)?;
    (0..shape.output_len)
        .map(|i| {
            let step = WorkloadShape::decode_at(shape.batch, shape.input_len, shape.input_len + i + 1);
            Ok(ctx.pass(Phase::Decode, &step)?.0)
        })
        .collect()
}

fn model_flops(model: &ModelSpec, shape: &WorkloadShape, opts: &CostOptions) -> Result<u128> {
    let l = model.num_layers as u128;
    let of = |f: u128| f.checked_mul(l).ok_or(SimError::Overflow("model flops"));
    let layer = |phase, s: &WorkloadShape| -> Result<u128> {
        Ok(layer_kernels(model, phase, s, opts)?.iter().map(|k| k.flops).sum())
    };
    let head = logits_kernel(model, shape.batch, 1)?.flops;
    let mut total = of(layer(Phase::Prefill, shape)?)? + head;
    for i in 0..shape.output_len {
        let step = WorkloadShape::decode_at(shape.batch, shape.input_len, shape.input_len + i + 1);
        total += of(layer(Phase::Decode, &step)?)? + head;
    }
    Ok(total)
}

/// End-to-end inference of `shape.batch` sequences (split evenly over DP
/// replicas). Pipeline stages are traversed sequentially for every token.
pub fn run_inference<T: Real>(
    model: &ModelSpec,
    system: &SystemSpec<T>,
    plan: &ParallelismPlan,
    shape: &WorkloadShape,
    opts: &InferenceOptions,
) -> Result<InferenceResult<T>> {
    model.validate()?;
    system.validate()?;
    shape.validate()?;
    plan.validate()?;
    if plan.devices() > system.processor.count as u64 {
        return Err(SimError::invalid(
            "plan",
            format!(
                "needs {} devices but the system has {}",
                plan.devices(),
                system.processor.count
            ),
        ));
    }
    if !shape.batch.is_multiple_of(plan.dp as u64) {
        return Err(SimError::Indivisible {
            dimension: "batch".into(),
            value: shape.batch,
            divisor: plan.dp as u64,
        });
    }
    let limit = max_batch(model, system, plan, shape, opts.reserve_fraction)?;
    if shape.batch > limit {
        return Err(SimError::BatchOverflow {
            requested: shape.batch,
            max_batch: limit,
        });
    }

    let replica = WorkloadShape::new(shape.batch / plan.dp as u64, shape.input_len, shape.output_len);
    let ctx = Ctx::new(model, system, plan, system.serving_tier()?, &opts.cost)?;
    let (prefill, mut redundant) = ctx.pass(Phase::Prefill, &replica)?;
    let mut decode = TimingBreakdown::zero();
    for i in 0..replica.output_len {
        let step = WorkloadShape::decode_at(replica.batch, replica.input_len, replica.input_len + i + 1);
        let (t, r) = ctx.pass(Phase::Decode, &step)?;
        decode = decode.add(&t);
        redundant += r;
    }
    redundant *= plan.dp as u128;

    let prefill_time = prefill.total();
    let decode_time = decode.total();
    let e2e = prefill_time + decode_time;
    let flops = model_flops(model, shape, &opts.cost)?;
    let peak = system.processor.peak(model.compute_dtype()?)? * T::from_count(plan.devices() as u128);
    let generated = T::from_count(shape.batch as u128 * shape.output_len as u128);

    let comm = CommOptions::default();
    let b = shape.batch as u128;
    let ledger = traffic_ledger::<T>(
        model,
        plan,
        b * shape.input_len as u128,
        shape.input_len,
        Pass::Prefill,
        Offload::none(),
        &comm,
    )?
    .add(&traffic_ledger(
        model,
        plan,
        b * shape.output_len as u128,
        shape.input_len,
        Pass::Decode,
        Offload::none(),
        &comm,
    )?);

    Ok(InferenceResult {
        batch: shape.batch,
        prefill_time,
        decode_time,
        e2e_latency: e2e,
        throughput: generated / e2e,
        mfu: T::from_count(flops) / (e2e * peak),
        max_batch_used: limit,
        model_flops: flops,
        redundant_activation_bytes: redundant,
        prefill_breakdown: prefill,
        decode_breakdown: decode,
        breakdown: prefill.add(&decode),
        ledger,
    })
}

/// Largest batch not above `max_batch`, rounded down to a multiple of `dp`
/// and optionally capped.
pub fn feasible_batch<T: Real>(
    model: &ModelSpec,
    system: &SystemSpec<T>,
    plan: &ParallelismPlan,
    input_len: u64,
    output_len: u64,
    cap: Option<u64>,
    reserve_fraction: f64,
) -> Result<u64> {
    let shape = WorkloadShape::new(1, input_len, output_len);
    let mut b = max_batch(model, system, plan, &shape, reserve_fraction)?;
    if let Some(c) = cap {
        b = b.min(c);
    }
    Ok(b - b % plan.dp as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow<T> {
    pub compute_scale: T,
    pub input_len: u64,
    pub output_len: u64,
    pub base_batch: u64,
    pub candidate_batch: u64,
    pub base_throughput: T,
    pub candidate_throughput: T,
    pub throughput_speedup: T,
    pub base_latency: T,
    pub candidate_latency: T,
    pub latency_speedup: T,
    pub base_mfu: T,
    pub candidate_mfu: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedupSide<'a, T> {
    pub system: &'a SystemSpec<T>,
    pub plan: ParallelismPlan,
}

/// Throughput (each side at its own feasible maximum batch) and b = 1
/// latency ratios, candidate over base, for every shape and compute scale.
/// The scale multiplies the candidate's peak FLOPs.
#[allow(clippy::too_many_arguments)]
pub fn speedup_matrix<T: Real>(
    model: &ModelSpec,
    base: &SpeedupSide<'_, T>,
    candidate: &SpeedupSide<'_, T>,
    shapes: &[(u64, u64)],
    compute_scales: &[T],
    batch_cap: Option<u64>,
    opts: &InferenceOptions,
) -> Result<Vec<SpeedupRow<T>>> {
    let at = |side: &SpeedupSide<'_, T>, sys: &SystemSpec<T>, b: u64, i: u64, o: u64| {
        if b == 0 {
            return Err(SimError::BatchOverflow {
                requested: side.plan.dp as u64,
                max_batch: 0,
            });
        }
        run_inference(model, sys, &side.plan, &WorkloadShape::new(b, i, o), opts)
    };
    let mut rows = Vec::new();
    for &scale in compute_scales {
        let cand_sys = candidate.system.with_compute_scale(scale);
        for &(i, o) in shapes {
            let bb = feasible_batch(model, base.system, &base.plan, i, o, batch_cap, opts.reserve_fraction)?;
            let cb = feasible_batch(model, &cand_sys, &candidate.plan, i, o, batch_cap, opts.reserve_fraction)?;
            let bt = at(base, base.system, bb, i, o)?;
            let ct = at(candidate, &cand_sys, cb, i, o)?;
            let bl = at(base, base.system, base.plan.dp as u64, i, o)?;
            let cl = at(candidate, &cand_sys, candidate.plan.dp as u64, i, o)?;
            rows.push(SpeedupRow {
                compute_scale: scale,
                input_len: i,
                output_len: o,
                base_batch: bb,
                candidate_batch: cb,
                base_throughput: bt.throughput,
                candidate_throughput: ct.throughput,
                throughput_speedup: ct.throughput / bt.throughput,
                base_latency: bl.e2e_latency,
                candidate_latency: cl.e2e_latency,
                latency_speedup: bl.e2e_latency / cl.e2e_latency,
                base_mfu: bt.mfu,
                candidate_mfu: ct.mfu,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TpOverheadRow<T> {
    pub tp: u32,
    pub time: T,
    /// `t(1) / tp`.
    pub ideal_time: T,
    pub overhead_pct: T,
    /// Fraction of the added time spent in all-reduce.
    pub allreduce_share: T,
}

/// Decode-phase TP overhead relative to an ideally scaled single device.
pub fn tp_overhead_curve<T: Real>(
    model: &ModelSpec,
    system: &SystemSpec<T>,
    shape: &WorkloadShape,
    tps: &[u32],
    opts: &InferenceOptions,
) -> Result<Vec<TpOverheadRow<T>>> {
    if !tps.contains(&1) {
        return Err(SimError::invalid("tp list", "must contain the tp = 1 baseline"));
    }
    let decode = |tp: u32| -> Result<TimingBreakdown<T>> {
        Ok(run_inference(model, system, &ParallelismPlan::new(tp, 1, 1), shape, opts)?.decode_breakdown)
    };
    let base = decode(1)?.total();
    tps.iter()
        .map(|&tp| {
            let t = decode(tp)?;
            let ideal = base / T::from_count(tp as u128);
            let added = t.total() - ideal;
            let share = if added > T::zero() { t.tp_comm / added } else { T::zero() };
            Ok(TpOverheadRow {
                tp,
                time: t.total(),
                ideal_time: ideal,
                overhead_pct: added / ideal * T::lit(100.0),
                allreduce_share: share,
            })
        })
        .collect()
}
