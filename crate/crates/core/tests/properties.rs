use fabricsim::dlrm::{pooling_time, DlrmPlacement, Interconnect};
use fabricsim::energy::{
    path_energy, workload_energy, Endpoint, EnergyParams, PathProfile, Scenario, ScenarioMix, SwitchOverrides,
    Technology, TechnologyParams,
};
use fabricsim::parallel::{
    allreduce_time, pipeline_time, traffic_ledger, CommOptions, Offload, OffloadClass, ParallelismPlan, Pass,
    TrafficLedger,
};
use fabricsim::presets;
use fabricsim::report::{mape, r_squared};
use fabricsim::system::{roofline_time, EfficiencyCurve, NetworkSpec};
use fabricsim::workload::{
    arithmetic_intensity_curve, layer_costs, CostOptions, Dtype, DlrmSpec, ModelSpec, Phase, WorkloadShape,
};
use proptest::prelude::*;

fn model_strategy() -> impl Strategy<Value = ModelSpec> {
    (1u64..=8, 0u32..=3, 1u64..=6, 1u64..=4, 2u64..=3, prop::sample::select(vec![1u64, 2, 4]))
        .prop_map(|(heads_unit, kv_shift, head_dim_unit, layers, mats, wb)| {
            let heads = heads_unit * 8;
            let kv = (heads >> kv_shift).max(1);
            let head_dim = head_dim_unit * 16;
            let h = heads * head_dim;
            ModelSpec {
                name: String::new(),
                hidden_size: h,
                num_layers: layers,
                num_heads: heads,
                num_kv_heads: kv,
                head_dim,
                ffn_size: 4 * h,
                ffn_mat_count: mats,
                vocab_size: 1000,
                weight_dtype_bytes: wb,
                activation_dtype_bytes: 2,
                kv_dtype_bytes: 2,
                norm_has_bias: false,
                tied_embeddings: false,
                compute_dtype: None,
            }
        })
}

fn mha(m: ModelSpec) -> ModelSpec {
    ModelSpec {
        num_kv_heads: m.num_heads,
        ..m
    }
}

fn net(bw: f64, lat: f64) -> NetworkSpec<f64> {
    NetworkSpec {
        link_bandwidth: bw,
        per_message_latency: lat,
        gpus_per_tray: 8,
        trays_per_rack: 4,
        racks: 4,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flops_linear_in_batch(m in model_strategy(), b in 1u64..32, k in 2u64..8, s in 1u64..512, decode in any::<bool>()) {
        let opts = CostOptions::default();
        let (phase, one, many) = if decode {
            (Phase::Decode, WorkloadShape::decode_at(b, s, s + 1), WorkloadShape::decode_at(b * k, s, s + 1))
        } else {
            (Phase::Prefill, WorkloadShape::new(b, s, 0), WorkloadShape::new(b * k, s, 0))
        };
        let a = layer_costs(&m, phase, &one, &opts).unwrap();
        let c = layer_costs(&m, phase, &many, &opts).unwrap();
        prop_assert_eq!(c.total_flops(), a.total_flops() * k as u128);
        // weights are read once regardless of batch
        prop_assert_eq!(c.bytes.weights, a.bytes.weights);
        prop_assert_eq!(c.bytes.kv_cache, a.bytes.kv_cache * k as u128);
    }

    #[test]
    fn costs_are_sums_of_components(m in model_strategy(), b in 1u64..16, s in 1u64..256) {
        let c = layer_costs(&m, Phase::Prefill, &WorkloadShape::new(b, s, 0), &CostOptions::default()).unwrap();
        let f = c.flops;
        prop_assert_eq!(c.total_flops(), f.qkv_proj + f.attention + f.out_proj + f.ffn + f.logits + f.norm_residual);
        let y = c.bytes;
        prop_assert_eq!(c.total_bytes(), y.weights + y.activations + y.kv_cache + y.attention_scratch);
    }

    #[test]
    fn roofline_monotone(f in 0.0f64..1e15, df in 0.0f64..1e14, y in 0.0f64..1e12, dy in 0.0f64..1e11) {
        let mut sys = presets::h100_dgx();
        sys.bandwidth_curve = EfficiencyCurve::from_points([(1e3, 0.1), (1e6, 0.6), (1e9, 0.9)]).unwrap();
        sys.flops_curve = EfficiencyCurve::from_points([(1e6, 0.05), (1e12, 0.8)]).unwrap();
        let tier = sys.local_hbm().unwrap().clone();
        let t = |f, y| roofline_time(f, y, Dtype::Fp16, &sys, &tier).unwrap();
        let base = t(f, y);
        prop_assert!(base >= 0.0);
        prop_assert!(t(f + df, y) >= base);
        prop_assert!(t(f, y + dy) >= base);
    }

    #[test]
    fn allreduce_grows_with_size_and_ranks(bytes in 1.0f64..1e10, n in 1u32..64, lat in 0.0f64..1e-5) {
        let nw = net(450e9, lat);
        let t = allreduce_time(bytes, n, &nw);
        prop_assert!(t >= 0.0);
        prop_assert!(allreduce_time(bytes * 2.0, n, &nw) >= t);
        prop_assert!(allreduce_time(bytes, n + 1, &nw) >= t);
        // bandwidth term never exceeds two full copies
        prop_assert!(t <= 2.0 * bytes / nw.link_bandwidth + 2.0 * (n as f64) * lat + 1e-18);
    }

    #[test]
    fn pipeline_at_least_ideal(stage in 1e-6f64..1.0, p in 1u32..16, m in 1u64..64) {
        let r = pipeline_time(stage, p, m).unwrap();
        prop_assert!(r.total >= m as f64 * stage * (1.0 - 1e-12));
        prop_assert!(r.bubble_fraction >= 0.0);
        if m >= p as u64 {
            prop_assert!(r.bubble_fraction < 1.0);
        }
    }

    #[test]
    fn ledger_linear_in_tokens(m in model_strategy(), tp in 0u32..3, pp in 1u32..3, dp in 1u32..4, steps in 1u128..5, k in 2u128..5) {
        let mut plan = ParallelismPlan::new(1 << tp, pp, dp).with_batching(2, 2);
        plan.sequence_parallel = false;
        let seq = 128u64;
        let tokens = steps * plan.global_batch() as u128 * seq as u128;
        let off = Offload { bytes: 1000, class: OffloadClass::Tray };
        let one: TrafficLedger<f64> =
            traffic_ledger(&m, &plan, tokens, seq, Pass::Train, off, &CommOptions::default()).unwrap();
        let many: TrafficLedger<f64> =
            traffic_ledger(&m, &plan, tokens * k, seq, Pass::Train, off, &CommOptions::default()).unwrap();
        let kf = k as f64;
        for (a, b) in [
            (one.tp_comm, many.tp_comm),
            (one.pp_comm, many.pp_comm),
            (one.dp_comm, many.dp_comm),
        ] {
            prop_assert!((b - kf * a).abs() <= 1e-9 * b.abs().max(1.0));
        }
        // offload volume is supplied by the caller, not derived from tokens
        prop_assert_eq!(one.offload_tray, 8000.0);
        prop_assert_eq!(many.offload_tray, 8000.0);
        prop_assert!(one.tp_comm >= 0.0 && one.pp_comm >= 0.0 && one.dp_comm >= 0.0);
        if plan.tp == 1 { prop_assert_eq!(one.tp_comm, 0.0); }
        if plan.pp == 1 { prop_assert_eq!(one.pp_comm, 0.0); }
        if plan.dp == 1 { prop_assert_eq!(one.dp_comm, 0.0); }
    }

    #[test]
    fn energy_linear_and_photonic_cheaper(bits in prop::array::uniform5(0.0f64..1e15), k in 0.5f64..10.0) {
        let l = TrafficLedger {
            tp_comm: bits[0], pp_comm: bits[1], dp_comm: bits[2], offload_tray: bits[3], offload_external: bits[4],
        };
        let p = EnergyParams::<f64>::default();
        let (e, ph) = (p.technology(Technology::Electronic), p.technology(Technology::Photonic));
        let ov = SwitchOverrides::new();
        let mix = ScenarioMix::default();
        let a = workload_energy(&l, &mix, &e, &ph, None, &ov).unwrap();
        let b = workload_energy(&l.scaled(k), &mix, &e, &ph, None, &ov).unwrap();
        prop_assert!((b.baseline_joules - k * a.baseline_joules).abs() <= 1e-9 * b.baseline_joules.max(1.0));
        prop_assert!((b.candidate_joules - k * a.candidate_joules).abs() <= 1e-9 * b.candidate_joules.max(1.0));
        prop_assert!(a.candidate_joules <= a.baseline_joules);
        for r in &a.rows {
            prop_assert!(r.candidate_pj_per_bit < r.baseline_pj_per_bit);
            prop_assert!((r.savings + r.remaining_pct / 100.0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn path_energy_symmetric_in_endpoints(src in 0usize..3, dst in 0usize..3, n in 0u32..16, e in 1u64..100, sw in 1u64..100, tray in 1u64..100) {
        let ends = [Endpoint::None, Endpoint::Adapter, Endpoint::IntraTrayLink];
        let params = TechnologyParams { technology: Technology::Electronic, endpoint: e, switch: sw, intra_tray: tray };
        let prof = |a, b| PathProfile { scenario: Scenario::InterRack, source: a, switch_count: n, dest: b };
        let fwd = path_energy(&prof(ends[src], ends[dst]), &params);
        prop_assert_eq!(fwd, path_energy(&prof(ends[dst], ends[src]), &params));
        let cost = |i: usize| [0, e, tray][i];
        prop_assert_eq!(fwd, cost(src) + n as u64 * sw + cost(dst));
    }

    #[test]
    fn decode_intensity_trends(m in model_strategy(), b in 2u64..32, len in 64u64..4096) {
        let m = mha(m);
        let opts = CostOptions::default();
        let pts = arithmetic_intensity_curve::<f64>(&m, Phase::Decode, &[b, b * 2], &[len, len * 2], &opts).unwrap();
        // [b,len], [b,2len], [2b,len], [2b,2len]
        prop_assert!(pts[1].intensity < pts[0].intensity);
        prop_assert!(pts[3].intensity < pts[2].intensity);
        prop_assert!(pts[2].intensity > pts[0].intensity);
        prop_assert!(pts[3].intensity > pts[1].intensity);
    }

    #[test]
    fn dlrm_distributed_slower_with_more_devices(tables in 1u64..64, batch in 1u64..4096, pool in 1u64..128, n in 1u64..256) {
        let s = DlrmSpec { num_tables: tables, rows_per_table: 1 << 20, embed_dim: 32, pooling_factor: pool, dtype_bytes: 2, batch };
        let sys = presets::h100_dgx();
        for ic in [Interconnect::Nvlink, Interconnect::Pcie] {
            let a = pooling_time(&s, &DlrmPlacement::distributed(n, ic, 1e-6), &sys).unwrap().total;
            let b = pooling_time(&s, &DlrmPlacement::distributed(n * 2, ic, 1e-6), &sys).unwrap().total;
            prop_assert!(b >= a);
        }
        let nv = pooling_time(&s, &DlrmPlacement::distributed(n, Interconnect::Nvlink, 0.0), &sys).unwrap().total;
        let pc = pooling_time(&s, &DlrmPlacement::distributed(n, Interconnect::Pcie, 0.0), &sys).unwrap().total;
        prop_assert!(pc >= nv);
    }

    #[test]
    fn metrics_perfect_prediction(meas in prop::collection::vec(1e-3f64..1e3, 2..40)) {
        prop_assume!(meas.iter().any(|m| *m != meas[0]));
        let pairs: Vec<(f64, f64)> = meas.iter().map(|m| (*m, *m)).collect();
        prop_assert_eq!(mape(&pairs).unwrap(), 0.0);
        prop_assert!((r_squared(&pairs).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mape_scales_with_uniform_bias(meas in prop::collection::vec(1e-3f64..1e3, 1..40), bias in 0.0f64..0.5) {
        let pairs: Vec<(f64, f64)> = meas.iter().map(|m| (m * (1.0 + bias), *m)).collect();
        prop_assert!((mape(&pairs).unwrap() - bias).abs() < 1e-9);
    }
}
