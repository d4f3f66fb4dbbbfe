//! Training step time, per-device memory, offload volume and MFU-optimal
//! plan search.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::inference::{Ctx, TimingBreakdown};
use crate::parallel::{
    allreduce_time, check_divisibility, p2p_time, pipeline_time, traffic_ledger, CommOptions, Offload,
    OffloadClass, ParallelismPlan, Pass, TrafficLedger,
};
use crate::scalar::Real;
use crate::system::{MemoryTier, SystemSpec, TierRole};
use crate::workload::{layer_kernels, logits_kernel, param_count, CostOptions, ModelSpec, Phase, WorkloadShape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct TrainOptions {
    pub seq_len: u64,
    pub recompute_activations: bool,
    pub mixed_precision: bool,
    /// Overrides the 12 (mixed) / 8 (full precision) Adam bytes per parameter.
    pub optimizer_bytes_per_param: Option<u64>,
    /// Traffic class billed for offload; defaults to the tray class.
    pub offload_class: Option<OffloadClass>,
    pub cost: CostOptions,
    pub comm: CommOptions,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            seq_len: 2048,
            recompute_activations: false,
            mixed_precision: true,
            optimizer_bytes_per_param: None,
            offload_class: None,
            cost: CostOptions::default(),
            comm: CommOptions::default(),
        }
    }
}

impl TrainOptions {
    pub fn optimizer_bytes(&self) -> u64 {
        self.optimizer_bytes_per_param
            .unwrap_or(if self.mixed_precision { 12 } else { 8 })
    }
}

/// Per-device bytes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainMemoryBreakdown<T> {
    pub params: T,
    pub gradients: T,
    pub optimizer_states: T,
    pub activations: T,
}

impl<T: Real> TrainMemoryBreakdown<T> {
    pub fn total(&self) -> T {
        self.params + self.gradients + self.optimizer_states + self.activations
    }
}

/// Activation bytes one layer stores for one microbatch: the Megatron
/// estimate `sbh * (34 + 5as/h)` at 2-byte activations, scaled for other
/// widths and split by TP as the plan allows.
pub fn layer_activation_bytes<T: Real>(model: &ModelSpec, plan: &ParallelismPlan, opts: &TrainOptions) -> T {
    let c = |v: u64| T::from_count(v as u128);
    let (s, b, h, a) = (c(opts.seq_len), c(plan.microbatch), c(model.hidden_size), c(model.num_heads));
    let t = c(plan.tp as u64);
    let sbh = s * b * h;
    let width = c(model.activation_dtype_bytes) / T::lit(2.0);
    let attn = T::lit(5.0) * a * s / h;
    let per = if opts.recompute_activations {
        // only the layer input is kept at the checkpoint boundary
        let kept = T::lit(2.0) * sbh;
        if plan.sequence_parallel {
            kept / t
        } else {
            kept
        }
    } else if plan.sequence_parallel {
        sbh * (T::lit(34.0) + attn) / t
    } else {
        sbh * (T::lit(10.0) + (T::lit(24.0) + attn) / t)
    };
    per * width
}

pub fn train_memory<T: Real>(
    model: &ModelSpec,
    plan: &ParallelismPlan,
    opts: &TrainOptions,
) -> Result<TrainMemoryBreakdown<T>> {
    model.validate()?;
    plan.validate()?;
    check_divisibility(model, plan)?;
    if opts.seq_len == 0 {
        return Err(SimError::invalid("train.seq_len", "must be >= 1"));
    }
    let params = T::from_count(param_count(model)?);
    let shard = T::from_count(plan.tp as u128 * plan.pp as u128);
    let weight = params * T::from_count(model.weight_dtype_bytes as u128) / shard;
    let layers = T::from_count((model.num_layers / plan.pp as u64) as u128);
    let in_flight = T::from_count(plan.num_microbatches.min(plan.pp as u64) as u128);
    Ok(TrainMemoryBreakdown {
        params: weight,
        gradients: weight,
        optimizer_states: params * T::from_count(opts.optimizer_bytes() as u128) / shard,
        activations: layer_activation_bytes::<T>(model, plan, opts) * layers * in_flight,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadPlan<'a, T> {
    /// Bytes moved per step (eviction plus fetch).
    pub bytes: T,
    pub destination: Option<&'a MemoryTier<T>>,
}

/// Twice the per-device excess over local HBM, sent to the fabric tier if
/// present, else host DDR.
pub fn offload_volume<'a, T: Real>(
    memory: &TrainMemoryBreakdown<T>,
    system: &'a SystemSpec<T>,
) -> Result<OffloadPlan<'a, T>> {
    let cap = T::from_count(system.local_hbm()?.capacity as u128);
    let excess = memory.total() - cap;
    if excess <= T::zero() {
        return Ok(OffloadPlan {
            bytes: T::zero(),
            destination: None,
        });
    }
    let dest = system
        .tier(TierRole::FabricShared)
        .or_else(|| system.tier(TierRole::HostDdr))
        .ok_or(SimError::NoOverflowTier {
            excess: excess.to_f64().unwrap_or(f64::INFINITY),
        })?;
    Ok(OffloadPlan {
        bytes: T::lit(2.0) * excess,
        destination: Some(dest),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainStepResult<T> {
    pub plan: ParallelismPlan,
    pub step_time: T,
    pub mfu: T,
    pub bubble_fraction: T,
    pub stage_time: T,
    pub dp_time: T,
    pub offload_time: T,
    pub ledger: TrafficLedger<T>,
    pub memory: TrainMemoryBreakdown<T>,
    pub offload_bytes_per_step: T,
    pub offload_destination: Option<TierRole>,
    pub model_flops: u128,
}

/// One optimizer step of `plan.global_batch()` sequences.
///
/// Stage time per microbatch is three forward passes of its layers (the
/// backward pass costs twice the forward), TP all-reduces per layer, the
/// output head on the last stage and two boundary transfers when pipelined.
/// No optimizer-update time is charged.
pub fn train_step_time<T: Real>(
    model: &ModelSpec,
    system: &SystemSpec<T>,
    plan: &ParallelismPlan,
    opts: &TrainOptions,
) -> Result<TrainStepResult<T>> {
    system.validate()?;
    let memory = train_memory::<T>(model, plan, opts)?;
    let offload = offload_volume(&memory, system)?;
    let multi = plan.devices() > 1;
    let net = match (&system.network, multi) {
        (Some(n), _) => Some(n),
        (None, false) => None,
        (None, true) => return Err(SimError::MissingNetwork(plan.devices() as u32)),
    };
    if let Some(n) = net {
        if multi && plan.devices() > n.device_count() {
            return Err(SimError::invalid(
                "plan",
                format!("needs {} devices but the topology has {}", plan.devices(), n.device_count()),
            ));
        }
    }

    let hbm = system.local_hbm()?;
    let ctx = Ctx::new(model, system, plan, hbm, &opts.cost)?;
    let mb = WorkloadShape::new(plan.microbatch, opts.seq_len, 0);
    let three = T::lit(3.0);
    let layer: TimingBreakdown<T> = ctx.kernels_time(&layer_kernels(model, Phase::Prefill, &mb, &opts.cost)?)?;
    let mut layer_time = layer.total() * three;
    let payload = T::from_count(
        plan.microbatch as u128
            * opts.seq_len as u128
            * model.hidden_size as u128
            * model.activation_dtype_bytes as u128,
    );
    if plan.tp > 1 {
        let n = net.expect("checked");
        layer_time = layer_time
            + T::from_count(2 * opts.comm.train_tp_passes as u128) * allreduce_time(payload, plan.tp, n);
    }
    let layers_per_stage = T::from_count((model.num_layers / plan.pp as u64) as u128);
    let head = ctx.kernels_time(&[logits_kernel(model, plan.microbatch, opts.seq_len)?])?.total() * three;
    let mut stage = layers_per_stage * layer_time + head;
    if plan.pp > 1 {
        stage = stage + T::lit(2.0) * p2p_time(payload, net.expect("checked"));
    }
    let pipe = pipeline_time(stage, plan.pp, plan.num_microbatches)?;

    let grad_bytes = memory.gradients;
    let dp_time = if plan.dp > 1 && !plan.dp_overlap {
        allreduce_time(grad_bytes, plan.dp, net.expect("checked"))
    } else {
        T::zero()
    };
    let offload_time = match offload.destination {
        Some(t) => offload.bytes / t.blended_bandwidth() + t.fixed_latency,
        None => T::zero(),
    };
    let step_time = pipe.total + dp_time + offload_time;

    let gb = plan.global_batch();
    let full = WorkloadShape::new(gb, opts.seq_len, 0);
    let fwd_layer: u128 = layer_kernels(model, Phase::Prefill, &full, &opts.cost)?
        .iter()
        .map(|k| k.flops)
        .sum();
    let fwd = fwd_layer
        .checked_mul(model.num_layers as u128)
        .ok_or(SimError::Overflow("model flops"))?
        + logits_kernel(model, gb, opts.seq_len)?.flops;
    let model_flops = fwd.checked_mul(3).ok_or(SimError::Overflow("model flops"))?;
    let peak = system.processor.peak(model.compute_dtype()?)? * T::from_count(plan.devices() as u128);

    let offload_bytes = offload.bytes.to_u128().unwrap_or(u128::MAX);
    let ledger = traffic_ledger(
        model,
        plan,
        gb as u128 * opts.seq_len as u128,
        opts.seq_len,
        Pass::Train,
        Offload {
            bytes: offload_bytes * plan.devices() as u128,
            class: opts.offload_class.unwrap_or(OffloadClass::Tray),
        },
        &opts.comm,
    )?;

    Ok(TrainStepResult {
        plan: *plan,
        step_time,
        mfu: T::from_count(model_flops) / (step_time * peak),
        bubble_fraction: pipe.bubble_fraction,
        stage_time: stage,
        dp_time,
        offload_time,
        ledger,
        memory,
        offload_bytes_per_step: offload.bytes,
        offload_destination: offload.destination.map(|t| t.role),
        model_flops,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct SearchConstraints {
    pub global_batch: u64,
    /// Microbatch sizes to try; empty means every divisor of the per-replica batch.
    pub microbatch_options: Vec<u64>,
    pub max_tp: Option<u32>,
    pub max_pp: Option<u32>,
    pub sequence_parallel: bool,
    pub dp_overlap: bool,
}

impl Default for SearchConstraints {
    fn default() -> Self {
        SearchConstraints {
            global_batch: 1,
            microbatch_options: Vec::new(),
            max_tp: None,
            max_pp: None,
            sequence_parallel: false,
            dp_overlap: false,
        }
    }
}

fn divisors(n: u64) -> Vec<u64> {
    (1..=n).filter(|d| n.is_multiple_of(*d)).collect()
}

/// Orders results best first: higher MFU, then smaller tp, pp, microbatch.
pub fn compare_results<T: Real>(a: &TrainStepResult<T>, b: &TrainStepResult<T>) -> Ordering {
    b.mfu
        .partial_cmp(&a.mfu)
        .unwrap_or(Ordering::Equal)
        .then(a.plan.tp.cmp(&b.plan.tp))
        .then(a.plan.pp.cmp(&b.plan.pp))
        .then(a.plan.microbatch.cmp(&b.plan.microbatch))
}

/// Every plan using exactly `device_budget` devices that passes the
/// structural constraints, plus counts of rejections by reason.
pub fn candidate_plans<T: Real>(
    model: &ModelSpec,
    system: &SystemSpec<T>,
    device_budget: u64,
    c: &SearchConstraints,
) -> (Vec<ParallelismPlan>, BTreeMap<String, usize>) {
    let mut plans = Vec::new();
    let mut rejected: BTreeMap<String, usize> = BTreeMap::new();
    let mut reject = |why: &str| *rejected.entry(why.to_string()).or_default() += 1;
    let tray = system.network.as_ref().map(|n| n.gpus_per_tray as u64);
    for tp in divisors(device_budget) {
        for pp in divisors(device_budget / tp) {
            let dp = device_budget / (tp * pp);
            if tray.is_some_and(|g| tp > g) || c.max_tp.is_some_and(|m| tp > m as u64) {
                reject("tp <= gpus_per_tray");
                continue;
            }
            if c.max_pp.is_some_and(|m| pp > m as u64) || pp > model.num_layers {
                reject("pp <= max_pp and num_layers");
                continue;
            }
            let base = ParallelismPlan::new(tp as u32, pp as u32, dp as u32);
            if let Err(e) = check_divisibility(model, &base) {
                reject(&e.to_string());
                continue;
            }
            if !c.global_batch.is_multiple_of(dp) {
                reject("global_batch divisible by dp");
                continue;
            }
            let per_replica = c.global_batch / dp;
            let options = if c.microbatch_options.is_empty() {
                divisors(per_replica)
            } else {
                c.microbatch_options.clone()
            };
            for mb in options {
                if mb == 0 || !per_replica.is_multiple_of(mb) {
                    reject("microbatch divides global_batch / dp");
                    continue;
                }
                let mut plan = base.with_batching(mb, per_replica / mb);
                plan.sequence_parallel = c.sequence_parallel;
                plan.dp_overlap = c.dp_overlap;
                plans.push(plan);
            }
        }
    }
    (plans, rejected)
}

/// Exhaustive MFU-optimal plan over `tp * pp * dp = device_budget`.
pub fn search_plan<T: Real>(
    model: &ModelSpec,
    system: &SystemSpec<T>,
    device_budget: u64,
    constraints: &SearchConstraints,
    opts: &TrainOptions,
) -> Result<TrainStepResult<T>> {
    if device_budget == 0 {
        return Err(SimError::invalid("device_budget", "must be >= 1"));
    }
    if constraints.global_batch == 0 {
        return Err(SimError::invalid("global_batch", "must be >= 1"));
    }
    let (plans, mut rejected) = candidate_plans(model, system, device_budget, constraints);
    let evaluated: Vec<_> = plans
        .par_iter()
        .map(|p| train_step_time::<T>(model, system, p, opts))
        .collect();
    let mut best: Option<TrainStepResult<T>> = None;
    for r in evaluated {
        match r {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| compare_results(&r, b) == Ordering::Less) {
                    best = Some(r);
                }
            }
            Err(e) => *rejected.entry(e.to_string()).or_default() += 1,
        }
    }
    best.ok_or_else(|| {
        let reasons: Vec<String> = rejected.iter().map(|(k, v)| format!("{k} ({v} plans)")).collect();
        SimError::NoFeasiblePlan(format!(
            "{device_budget} devices: {}",
            if reasons.is_empty() { "no candidates".to_string() } else { reasons.join("; ") }
        ))
    })
}
