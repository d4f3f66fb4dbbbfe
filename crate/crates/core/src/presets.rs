//! Published architectures and reference systems.
//!
//! System presets carry identity efficiency curves and zero fixed
//! latencies; calibration comes from CSV files at run time.

use crate::system::{EfficiencyCurve, MemoryTier, NetworkSpec, ProcessorSpec, SystemSpec, TierRole};
use crate::workload::{Dtype, ModelSpec};

pub const H100_FP16_FLOPS: f64 = 989e12;
pub const H100_FP8_FLOPS: f64 = 1979e12;
pub const H100_VECTOR_FLOPS: f64 = 67e12;
pub const H100_HBM_BYTES: u64 = 80_000_000_000;
pub const H100_HBM_BW: f64 = 3350e9;
pub const H200_HBM_BYTES: u64 = 141_000_000_000;
pub const H200_HBM_BW: f64 = 4800e9;
pub const NVLINK_BW: f64 = 900e9;
pub const PFA_BW: f64 = 26800e9;
pub const PFA_CAPACITY: u64 = 32_000_000_000_000;

#[allow(clippy::too_many_arguments)]
fn llama_like(
    name: &str,
    hidden: u64,
    layers: u64,
    heads: u64,
    kv_heads: u64,
    ffn: u64,
    vocab: u64,
    weight_bytes: u64,
) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        hidden_size: hidden,
        num_layers: layers,
        num_heads: heads,
        num_kv_heads: kv_heads,
        head_dim: hidden / heads,
        ffn_size: ffn,
        ffn_mat_count: 3,
        vocab_size: vocab,
        weight_dtype_bytes: weight_bytes,
        activation_dtype_bytes: 2,
        kv_dtype_bytes: weight_bytes,
        norm_has_bias: false,
        tied_embeddings: false,
        compute_dtype: None,
    }
}

/// h=4, one head, two layers, plain two-matrix MLP, vocabulary of 10.
pub fn tiny_model() -> ModelSpec {
    ModelSpec {
        name: "tiny".into(),
        hidden_size: 4,
        num_layers: 2,
        num_heads: 1,
        num_kv_heads: 1,
        head_dim: 4,
        ffn_size: 8,
        ffn_mat_count: 2,
        vocab_size: 10,
        weight_dtype_bytes: 2,
        activation_dtype_bytes: 2,
        kv_dtype_bytes: 2,
        norm_has_bias: false,
        tied_embeddings: false,
        compute_dtype: None,
    }
}

pub fn llama31_8b() -> ModelSpec {
    llama_like("llama-3.1-8b", 4096, 32, 32, 8, 14336, 128256, 2)
}

pub fn llama31_70b() -> ModelSpec {
    llama_like("llama-3.1-70b", 8192, 80, 64, 8, 28672, 128256, 2)
}

/// 70B-class dimensions with full multi-head KV (no grouped queries).
pub fn llama_70b_mha() -> ModelSpec {
    llama_like("llama-70b-mha", 8192, 80, 64, 64, 28672, 32000, 2)
}

/// 405B served in fp8.
pub fn llama31_405b() -> ModelSpec {
    llama_like("llama-3.1-405b", 16384, 126, 128, 8, 53248, 128256, 1)
}

/// Synthetic ~1T model in fp8 (118 layers so it splits over two stages).
pub fn synthetic_1t() -> ModelSpec {
    llama_like("synthetic-1t", 24576, 118, 192, 8, 98304, 128256, 1)
}

pub fn model_by_name(name: &str) -> Option<ModelSpec> {
    Some(match name {
        "tiny" => tiny_model(),
        "llama-3.1-8b" => llama31_8b(),
        "llama-3.1-70b" => llama31_70b(),
        "llama-70b-mha" => llama_70b_mha(),
        "llama-3.1-405b" => llama31_405b(),
        "synthetic-1t" => synthetic_1t(),
        _ => return None,
    })
}

fn hopper(count: u32, scale: f64) -> ProcessorSpec<f64> {
    ProcessorSpec {
        peak_matrix_flops: [
            (Dtype::Fp8, H100_FP8_FLOPS * scale),
            (Dtype::Fp16, H100_FP16_FLOPS * scale),
            (Dtype::Bf16, H100_FP16_FLOPS * scale),
        ]
        .into_iter()
        .collect(),
        peak_vector_flops: H100_VECTOR_FLOPS * scale,
        count,
    }
}

fn dgx_network() -> NetworkSpec<f64> {
    NetworkSpec {
        link_bandwidth: NVLINK_BW,
        per_message_latency: 0.0,
        gpus_per_tray: 8,
        trays_per_rack: 1,
        racks: 1,
    }
}

/// Eight H100 SXM GPUs on NVLink/NVSwitch.
pub fn h100_dgx() -> SystemSpec<f64> {
    SystemSpec {
        name: "h100-dgx".into(),
        processor: hopper(8, 1.0),
        memory_tiers: vec![MemoryTier::new(TierRole::LocalHbm, H100_HBM_BYTES, H100_HBM_BW)],
        network: Some(dgx_network()),
        bandwidth_curve: EfficiencyCurve::identity(),
        flops_curve: EfficiencyCurve::identity(),
    }
}

pub fn h200_dgx() -> SystemSpec<f64> {
    SystemSpec {
        name: "h200-dgx".into(),
        processor: hopper(8, 1.0),
        memory_tiers: vec![MemoryTier::new(TierRole::LocalHbm, H200_HBM_BYTES, H200_HBM_BW)],
        network: Some(dgx_network()),
        bandwidth_curve: EfficiencyCurve::identity(),
        flops_curve: EfficiencyCurve::identity(),
    }
}

/// One logical processor with the compute of eight H100s in front of the
/// shared photonic memory pool. Scale compute down with
/// [`SystemSpec::with_compute_scale`].
pub fn pfa() -> SystemSpec<f64> {
    SystemSpec {
        name: "pfa".into(),
        processor: hopper(1, 8.0),
        memory_tiers: vec![
            MemoryTier::new(TierRole::LocalHbm, 8 * H100_HBM_BYTES, PFA_BW),
            MemoryTier::new(TierRole::FabricShared, PFA_CAPACITY, PFA_BW),
        ],
        network: None,
        bandwidth_curve: EfficiencyCurve::identity(),
        flops_curve: EfficiencyCurve::identity(),
    }
}

pub fn system_by_name(name: &str) -> Option<SystemSpec<f64>> {
    Some(match name {
        "h100-dgx" => h100_dgx(),
        "h200-dgx" => h200_dgx(),
        "pfa" => pfa(),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::param_count;

    #[test]
    fn presets_validate() {
        for m in ["tiny", "llama-3.1-8b", "llama-3.1-70b", "llama-70b-mha", "llama-3.1-405b", "synthetic-1t"] {
            model_by_name(m).unwrap().validate().unwrap();
        }
        for s in ["h100-dgx", "h200-dgx", "pfa"] {
            system_by_name(s).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn published_sizes() {
        let p = |m: ModelSpec| param_count(&m).unwrap() as f64;
        assert!((p(llama31_405b()) / 405.8e9 - 1.0).abs() < 0.01);
        assert!((p(synthetic_1t()) / 1e12 - 1.0).abs() < 0.05);
        assert!((p(llama31_8b()) / 8.03e9 - 1.0).abs() < 0.01);
    }
}
