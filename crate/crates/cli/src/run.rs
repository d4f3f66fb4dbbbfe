//! Mode dispatch: turns a [`RunConfig`] into a [`RunReport`].

use std::collections::BTreeMap;

use fabricsim::dlrm::{pooling_time, required_devices, DlrmPlacement, Interconnect};
use fabricsim::energy::{workload_energy, Technology};
use fabricsim::inference::{
    max_batch, run_inference, speedup_matrix, tp_overhead_curve, InferenceOptions, InferenceResult, SpeedupSide,
};
use fabricsim::parallel::{ParallelismPlan, TrafficLedger};
use fabricsim::report::{Cell, Measurement, MeasurementSet, Row, RunReport};
use fabricsim::system::SystemSpec;
use fabricsim::training::{search_plan, train_step_time, SearchConstraints, TrainOptions, TrainStepResult};
use fabricsim::workload::{arithmetic_intensity_curve, DlrmSpec, ModelSpec, Phase, WorkloadShape};
use rayon::prelude::*;

use crate::config::{LedgerSource, Mode, RunConfig, SweepSection};
use crate::CliError;

fn rt(ctx: impl std::fmt::Display, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{ctx}: {e}"))
}

fn inference_opts(cfg: &RunConfig) -> InferenceOptions {
    InferenceOptions {
        cost: cfg.cost,
        reserve_fraction: cfg.inference.reserve_fraction,
    }
}

fn train_opts(cfg: &RunConfig) -> TrainOptions {
    let t = cfg.train.clone().unwrap_or_default();
    let mut comm = fabricsim::parallel::CommOptions::default();
    comm.train_tp_passes = t.train_tp_passes;
    TrainOptions {
        seq_len: t.seq_len,
        recompute_activations: t.recompute_activations,
        mixed_precision: t.mixed_precision,
        optimizer_bytes_per_param: Some(t.optimizer_bytes_per_param),
        offload_class: Some(t.offload_class),
        cost: cfg.cost,
        comm,
    }
}

fn ledger_fields(row: Row, l: &TrafficLedger<f64>) -> Row {
    row.with("tp_comm_bits", l.tp_comm)
        .with("pp_comm_bits", l.pp_comm)
        .with("dp_comm_bits", l.dp_comm)
        .with("offload_tray_bits", l.offload_tray)
        .with("offload_external_bits", l.offload_external)
}

fn plan_fields(row: Row, p: &ParallelismPlan) -> Row {
    row.with("tp", p.tp).with("pp", p.pp).with("dp", p.dp)
}

/// Runs the configured mode. `jobs` bounds the worker threads used by grid
/// sweeps; results never depend on it.
pub fn run(cfg: &RunConfig, jobs: usize) -> Result<RunReport, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| rt("thread pool", e))?;
    let mut report = RunReport::new(cfg.mode.name(), cfg.echo());
    pool.install(|| match cfg.mode {
        Mode::Infer => infer(cfg, &mut report),
        Mode::Train => train(cfg, &mut report),
        Mode::Power => power(cfg, &mut report),
        Mode::Dlrm => dlrm(cfg, &mut report),
        Mode::Validate => validate(cfg, &mut report),
        Mode::Sweep => sweep(cfg, &mut report),
    })?;
    Ok(report)
}

fn inference_row(id: String, system: &str, plan: &ParallelismPlan, r: &InferenceResult<f64>, shape: &WorkloadShape) -> Row {
    let row = Row::new("inference", id).with("system", system);
    let b = &r.breakdown;
    let row = plan_fields(row, plan)
        .with("batch", shape.batch)
        .with("input_len", shape.input_len)
        .with("output_len", shape.output_len)
        .with("max_batch", r.max_batch_used)
        .with("prefill_s", r.prefill_time)
        .with("decode_s", r.decode_time)
        .with("e2e_latency_s", r.e2e_latency)
        .with("throughput_tok_s", r.throughput)
        .with("mfu", r.mfu)
        .with("gemm_s", b.gemm)
        .with("attention_s", b.attention)
        .with("norm_residual_other_s", b.norm_residual_other)
        .with("tp_comm_s", b.tp_comm)
        .with("pp_comm_s", b.pp_comm)
        .with("memory_offload_s", b.memory_offload)
        .with("redundant_activation_bytes", r.redundant_activation_bytes);
    ledger_fields(row, &r.ledger)
}

fn infer(cfg: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    let model = cfg.model()?;
    let opts = inference_opts(cfg);
    if let Some(shape) = &cfg.workload {
        let (name, sys) = cfg.pick_system(cfg.inference.system.as_deref(), "inference")?;
        let r = run_inference(model, sys, &cfg.plan, shape, &opts).map_err(|e| rt(format!("inference on `{name}`"), e))?;
        report
            .rows
            .push(inference_row(format!("infer-{name}"), name, &cfg.plan, &r, shape));
    }
    if let Some(s) = &cfg.speedup {
        let base = SpeedupSide {
            system: cfg.system(&s.base_system)?,
            plan: s.base_plan,
        };
        let cand = SpeedupSide {
            system: cfg.system(&s.candidate_system)?,
            plan: s.candidate_plan,
        };
        for (ci, &scale) in s.compute_scales.iter().enumerate() {
            let shapes: Vec<(u64, u64)> = s.shapes.iter().map(|[i, o]| (*i, *o)).collect();
            let rows = speedup_matrix(model, &base, &cand, &shapes, &[scale], s.batch_cap, &opts)
                .map_err(|e| rt(format!("speedup at compute_scale {scale}"), e))?;
            for r in rows {
                let id = format!("speedup-c{ci:02}-in{:05}-out{:05}", r.input_len, r.output_len);
                report.rows.push(
                    Row::new("speedup", id)
                        .with("base_system", s.base_system.as_str())
                        .with("candidate_system", s.candidate_system.as_str())
                        .with("compute_scale", r.compute_scale)
                        .with("input_len", r.input_len)
                        .with("output_len", r.output_len)
                        .with("base_batch", r.base_batch)
                        .with("candidate_batch", r.candidate_batch)
                        .with("base_throughput_tok_s", r.base_throughput)
                        .with("candidate_throughput_tok_s", r.candidate_throughput)
                        .with("throughput_speedup", r.throughput_speedup)
                        .with("base_latency_s", r.base_latency)
                        .with("candidate_latency_s", r.candidate_latency)
                        .with("latency_speedup", r.latency_speedup)
                        .with("base_mfu", r.base_mfu)
                        .with("candidate_mfu", r.candidate_mfu),
                );
            }
        }
    }
    if let (Some(t), Some(shape)) = (&cfg.tp_overhead, &cfg.workload) {
        let (name, sys) = cfg.pick_system(t.system.as_deref(), "tp_overhead")?;
        let rows = tp_overhead_curve(model, sys, shape, &t.tp, &opts).map_err(|e| rt("tp_overhead", e))?;
        for r in rows {
            report.rows.push(
                Row::new("tp_overhead", format!("tp-overhead-tp{:02}", r.tp))
                    .with("system", name)
                    .with("tp", r.tp)
                    .with("decode_s", r.time)
                    .with("ideal_s", r.ideal_time)
                    .with("overhead_pct", r.overhead_pct)
                    .with("allreduce_share", r.allreduce_share),
            );
        }
    }
    if let Some(i) = &cfg.intensity {
        let pts = arithmetic_intensity_curve::<f64>(model, i.phase, &i.batch, &i.length, &cfg.cost)
            .map_err(|e| rt("intensity", e))?;
        let phase = match i.phase {
            Phase::Prefill => "prefill",
            Phase::Decode => "decode",
        };
        for p in pts {
            report.rows.push(
                Row::new("intensity", format!("intensity-{phase}-b{:05}-len{:06}", p.batch, p.length))
                    .with("phase", phase)
                    .with("batch", p.batch)
                    .with("length", p.length)
                    .with("flops", p.flops)
                    .with("bytes", p.bytes)
                    .with("intensity", p.intensity),
            );
        }
    }
    Ok(())
}

fn run_train(cfg: &RunConfig) -> Result<(String, TrainStepResult<f64>), CliError> {
    let model = cfg.model()?;
    let t = cfg.train.clone().unwrap_or_default();
    let (name, sys) = cfg.pick_system(t.system.as_deref(), "train")?;
    let opts = train_opts(cfg);
    let r = if t.search {
        let c = SearchConstraints {
            global_batch: t.global_batch.unwrap_or(1),
            microbatch_options: t.microbatch_options.clone(),
            max_tp: t.max_tp,
            max_pp: t.max_pp,
            sequence_parallel: cfg.plan.sequence_parallel,
            dp_overlap: cfg.plan.dp_overlap,
        };
        search_plan(model, sys, t.device_budget.unwrap_or(1), &c, &opts)
    } else {
        train_step_time(model, sys, &cfg.plan, &opts)
    };
    Ok((name.to_string(), r.map_err(|e| rt(format!("training on `{name}`"), e))?))
}

fn train(cfg: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    let (name, r) = run_train(cfg)?;
    let p = &r.plan;
    let seq_len = cfg.train.as_ref().map_or(2048, |t| t.seq_len);
    let id = format!(
        "train-tp{:02}-pp{:02}-dp{:04}-mb{:04}",
        p.tp, p.pp, p.dp, p.microbatch
    );
    let tokens = p.global_batch() as f64 * seq_len as f64;
    let row = plan_fields(Row::new("train", id).with("system", name.as_str()), p)
        .with("microbatch", p.microbatch)
        .with("num_microbatches", p.num_microbatches)
        .with("global_batch", p.global_batch())
        .with("step_time_s", r.step_time)
        .with("tokens_per_s", tokens / r.step_time)
        .with("mfu", r.mfu)
        .with("bubble_fraction", r.bubble_fraction)
        .with("stage_time_s", r.stage_time)
        .with("dp_time_s", r.dp_time)
        .with("offload_time_s", r.offload_time)
        .with("params_bytes", r.memory.params)
        .with("gradients_bytes", r.memory.gradients)
        .with("optimizer_bytes", r.memory.optimizer_states)
        .with("activation_bytes", r.memory.activations)
        .with("offload_bytes_per_step", r.offload_bytes_per_step)
        .with(
            "offload_destination",
            r.offload_destination.map_or("none", |t| t.name()),
        )
        .with("model_flops", r.model_flops);
    report.rows.push(ledger_fields(row, &r.ledger));
    Ok(())
}

fn power(cfg: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    let e = &cfg.energy;
    let source = match e.source {
        LedgerSource::Auto if e.ledger.is_some() => LedgerSource::Explicit,
        LedgerSource::Auto if cfg.train.is_some() && cfg.model.is_some() => LedgerSource::Train,
        LedgerSource::Auto if cfg.workload.is_some() && cfg.model.is_some() => LedgerSource::Infer,
        LedgerSource::Auto => LedgerSource::None,
        s => s,
    };
    let ledger = match source {
        LedgerSource::Explicit => e.ledger.unwrap_or_default(),
        LedgerSource::Train => run_train(cfg)?.1.ledger,
        LedgerSource::Infer => {
            let shape = cfg
                .workload
                .as_ref()
                .ok_or_else(|| CliError::Validation("energy.source = \"infer\" requires [workload]".into()))?;
            let (name, sys) = cfg.pick_system(cfg.inference.system.as_deref(), "inference")?;
            run_inference(cfg.model()?, sys, &cfg.plan, shape, &inference_opts(cfg))
                .map_err(|err| rt(format!("inference on `{name}`"), err))?
                .ledger
        }
        LedgerSource::None | LedgerSource::Auto => TrafficLedger::zero(),
    };
    let topology = match &e.topology_system {
        Some(n) => cfg.system(n)?.network.as_ref(),
        None => None,
    };
    let table = workload_energy(
        &ledger,
        &cfg.mix(),
        &e.params.technology(Technology::Electronic),
        &e.params.technology(Technology::Photonic),
        topology,
        &e.switch_counts,
    )
    .map_err(|err| rt("energy", err))?;
    for r in &table.rows {
        let class = r.class.name();
        report.rows.push(
            Row::new("energy", format!("energy-{class}"))
                .with("class", class)
                .with("bits", r.bits)
                .with("electronic_pj_per_bit", r.baseline_pj_per_bit)
                .with("photonic_pj_per_bit", r.candidate_pj_per_bit)
                .with("electronic_j", r.baseline_joules)
                .with("photonic_j", r.candidate_joules)
                .with("savings", r.savings)
                .with("remaining_pct", r.remaining_pct),
        );
    }
    let (bj, cj) = (table.baseline_joules, table.candidate_joules);
    report.metrics.push(("ledger_source".into(), Cell::from(format!("{source:?}").to_lowercase())));
    report.metrics.push(("electronic_j".into(), bj.into()));
    report.metrics.push(("photonic_j".into(), cj.into()));
    if bj > 0.0 {
        report.metrics.push(("total_savings".into(), (1.0 - cj / bj).into()));
    }
    report.warnings.extend(table.warnings);
    Ok(())
}

struct DlrmPoint {
    interconnect: Interconnect,
    tables: u64,
    batch: u64,
    pooling: u64,
    devices: Option<u64>,
}

fn dlrm(cfg: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    let d = cfg.dlrm.as_ref().expect("checked");
    let reference = cfg.system(&d.reference_system)?;
    let fabric = cfg.system(&d.fabric_system)?;
    let capacity = match d.per_device_capacity {
        Some(c) => c,
        None => reference.local_hbm().map_err(|e| rt("dlrm", e))?.capacity,
    };
    let mut points = Vec::new();
    for ic in [Interconnect::Nvlink, Interconnect::Pcie] {
        for &tables in &d.tables {
            for &batch in &d.batch {
                for &pooling in &d.pooling {
                    if d.device_counts.is_empty() {
                        points.push(DlrmPoint { interconnect: ic, tables, batch, pooling, devices: None });
                    }
                    for &n in &d.device_counts {
                        points.push(DlrmPoint { interconnect: ic, tables, batch, pooling, devices: Some(n) });
                    }
                }
            }
        }
    }
    let row_bytes = d.embed_dim * d.dtype_bytes;
    let eval = |p: &DlrmPoint| -> Result<Row, CliError> {
        let rows_per_table = match (d.rows_per_table, d.total_table_bytes) {
            (Some(r), _) => r,
            (None, Some(t)) => t / p.tables / row_bytes.max(1),
            (None, None) => unreachable!("checked"),
        };
        let spec = DlrmSpec {
            num_tables: p.tables,
            rows_per_table,
            embed_dim: d.embed_dim,
            pooling_factor: p.pooling,
            dtype_bytes: d.dtype_bytes,
            batch: p.batch,
        };
        let ctx = format!("dlrm tables={} batch={} pooling={}", p.tables, p.batch, p.pooling);
        let n = match p.devices {
            Some(n) => n,
            None => required_devices(&spec, capacity).map_err(|e| rt(&ctx, e))?,
        };
        let (bw, lat, name) = match p.interconnect {
            Interconnect::Nvlink => (d.nvlink_bandwidth, d.nvlink_latency, "nvlink"),
            Interconnect::Pcie => (d.pcie_bandwidth, d.pcie_latency, "pcie"),
        };
        let mut place = DlrmPlacement::distributed(n, p.interconnect, lat);
        place.bandwidth = bw;
        place.coalescing = d.coalescing;
        let t_ref = pooling_time(&spec, &place, reference).map_err(|e| rt(&ctx, e))?;
        let t_fab = pooling_time(&spec, &DlrmPlacement::shared_fabric(), fabric).map_err(|e| rt(&ctx, e))?;
        let id = format!(
            "dlrm-{name}-t{:03}-b{:05}-p{:03}-n{:05}",
            p.tables, p.batch, p.pooling, n
        );
        Ok(Row::new("dlrm", id)
            .with("interconnect", name)
            .with("tables", p.tables)
            .with("rows_per_table", rows_per_table)
            .with("batch", p.batch)
            .with("pooling", p.pooling)
            .with("devices", n)
            .with("table_bytes", spec.total_table_bytes())
            .with("distributed_local_s", t_ref.local)
            .with("distributed_remote_s", t_ref.remote)
            .with("distributed_latency_s", t_ref.latency)
            .with("distributed_s", t_ref.total)
            .with("fabric_s", t_fab.total)
            .with("speedup", t_ref.total / t_fab.total))
    };
    let rows: Result<Vec<Row>, CliError> = points.par_iter().map(eval).collect();
    report.rows.extend(rows?);
    Ok(())
}

/// Sweep rows plus a map from config id to predicted end-to-end latency.
fn sweep_rows(model: &ModelSpec, cfg: &RunConfig, s: &SweepSection) -> Result<Vec<(Row, Option<f64>)>, CliError> {
    struct Point<'a> {
        system: &'a str,
        spec: &'a SystemSpec<f64>,
        plan: ParallelismPlan,
        sweep: &'a str,
        shape: WorkloadShape,
    }
    let mut points = Vec::new();
    for t in &s.targets {
        let spec = cfg.system(&t.system)?;
        for &tp in &t.tp {
            for l in &s.lengths {
                for &b in &s.batch {
                    for &i in &l.input_len {
                        for &o in &l.output_len {
                            points.push(Point {
                                system: &t.system,
                                spec,
                                plan: ParallelismPlan::new(tp, t.pp, 1),
                                sweep: &l.name,
                                shape: WorkloadShape::new(b, i, o),
                            });
                        }
                    }
                }
            }
        }
    }
    let opts = inference_opts(cfg);
    let eval = |p: &Point<'_>| -> (Row, Option<f64>) {
        let id = format!(
            "{}-tp{:02}-{}-b{:04}-in{:05}-out{:05}",
            p.system, p.plan.tp, p.sweep, p.shape.batch, p.shape.input_len, p.shape.output_len
        );
        let base = plan_fields(Row::new("sweep", id).with("system", p.system), &p.plan)
            .with("sweep", p.sweep)
            .with("batch", p.shape.batch)
            .with("input_len", p.shape.input_len)
            .with("output_len", p.shape.output_len);
        let mb = max_batch(model, p.spec, &p.plan, &p.shape, opts.reserve_fraction);
        match run_inference(model, p.spec, &p.plan, &p.shape, &opts) {
            Ok(r) => (
                base.with("status", "ok")
                    .with("max_batch", mb.unwrap_or(0))
                    .with("prefill_s", r.prefill_time)
                    .with("decode_s", r.decode_time)
                    .with("e2e_latency_s", r.e2e_latency)
                    .with("throughput_tok_s", r.throughput)
                    .with("mfu", r.mfu),
                Some(r.e2e_latency),
            ),
            Err(e) => (base.with("status", format!("infeasible: {e}")), None),
        }
    };
    Ok(points.par_iter().map(eval).collect())
}

fn sweep(cfg: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    let s = cfg.sweep.as_ref().expect("checked");
    let rows = sweep_rows(cfg.model()?, cfg, s)?;
    let feasible = rows.iter().filter(|(_, p)| p.is_some()).count();
    report.metrics.push(("grid_points".into(), (rows.len() as u64).into()));
    report.metrics.push(("feasible_points".into(), (feasible as u64).into()));
    report.rows.extend(rows.into_iter().map(|(r, _)| r));
    Ok(())
}

fn validate(cfg: &RunConfig, report: &mut RunReport) -> Result<(), CliError> {
    let v = cfg.validate.as_ref().expect("checked");
    let path = cfg.base_dir.join(&v.measurements);
    let set = MeasurementSet::from_csv_path(&path)
        .map_err(|e| CliError::Validation(format!("validate.measurements: {e}")))?;
    let predictions: Option<BTreeMap<String, Option<f64>>> = match (&cfg.sweep, &cfg.model) {
        (Some(s), Some(m)) => Some(
            sweep_rows(m, cfg, s)?
                .into_iter()
                .map(|(r, p)| (r.config_id, p))
                .collect(),
        ),
        _ => None,
    };
    let mut rows = Vec::with_capacity(set.rows.len());
    for m in &set.rows {
        let predicted = match &predictions {
            None => m.predicted_s,
            Some(p) => match p.get(&m.config_id) {
                Some(Some(t)) => *t,
                Some(None) => {
                    return Err(rt(&m.config_id, "measured point is infeasible in the model"));
                }
                None => {
                    return Err(CliError::Validation(format!(
                        "validate.measurements: config_id `{}` is not a sweep point",
                        m.config_id
                    )))
                }
            },
        };
        rows.push(Measurement {
            config_id: m.config_id.clone(),
            predicted_s: predicted,
            measured_s: m.measured_s,
        });
    }
    let set = MeasurementSet::new(rows).map_err(|e| rt("validate", e))?;
    for m in &set.rows {
        report.rows.push(
            Row::new("validation", m.config_id.clone())
                .with("predicted_s", m.predicted_s)
                .with("measured_s", m.measured_s)
                .with("abs_pct_error", (m.predicted_s - m.measured_s).abs() / m.measured_s * 100.0),
        );
    }
    report.metrics.push(("points".into(), (set.rows.len() as u64).into()));
    report.metrics.push(("mape".into(), set.mape().map_err(|e| rt("mape", e))?.into()));
    report.metrics.push(("r_squared".into(), set.r_squared().map_err(|e| rt("r_squared", e))?.into()));
    Ok(())
}
