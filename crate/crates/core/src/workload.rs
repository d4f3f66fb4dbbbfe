//! Workload descriptions and exact FLOP / byte accounting.
//!
//! Counts are kept in `u128` with checked arithmetic: a trillion-parameter
//! model at long context easily passes 2^64 FLOPs per step.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::scalar::Scalar;

/// Numeric format of a tensor or of a compute pipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Fp32,
    Bf16,
    Fp16,
    Fp8,
    Int8,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::Fp32 => "fp32",
            Dtype::Bf16 => "bf16",
            Dtype::Fp16 => "fp16",
            Dtype::Fp8 => "fp8",
            Dtype::Int8 => "int8",
        }
    }

    /// Default compute format for a weight element width.
    pub fn for_width(bytes: u64) -> Option<Dtype> {
        match bytes {
            1 => Some(Dtype::Fp8),
            2 => Some(Dtype::Fp16),
            4 => Some(Dtype::Fp32),
            _ => None,
        }
    }
}

/// Decoder-only transformer architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    pub hidden_size: u64,
    pub num_layers: u64,
    pub num_heads: u64,
    pub num_kv_heads: u64,
    pub head_dim: u64,
    pub ffn_size: u64,
    /// 2 for a classic MLP, 3 for gated (SwiGLU) feed-forward blocks.
    pub ffn_mat_count: u64,
    pub vocab_size: u64,
    pub weight_dtype_bytes: u64,
    pub activation_dtype_bytes: u64,
    pub kv_dtype_bytes: u64,
    #[serde(default)]
    pub norm_has_bias: bool,
    #[serde(default)]
    pub tied_embeddings: bool,
    /// Matrix pipe used for GEMMs; defaults from the weight width.
    #[serde(default)]
    pub compute_dtype: Option<Dtype>,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("hidden_size", self.hidden_size),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("num_kv_heads", self.num_kv_heads),
            ("head_dim", self.head_dim),
            ("ffn_size", self.ffn_size),
            ("vocab_size", self.vocab_size),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(SimError::invalid(field, "must be >= 1"));
            }
        }
        if self.num_heads.checked_mul(self.head_dim) != Some(self.hidden_size) {
            return Err(SimError::invalid(
                "hidden_size",
                format!(
                    "must equal num_heads x head_dim ({} x {})",
                    self.num_heads, self.head_dim
                ),
            ));
        }
        if !self.num_heads.is_multiple_of(self.num_kv_heads) {
            return Err(SimError::invalid(
                "num_kv_heads",
                format!("must divide num_heads ({})", self.num_heads),
            ));
        }
        if !(2..=3).contains(&self.ffn_mat_count) {
            return Err(SimError::invalid("ffn_mat_count", "must be 2 or 3"));
        }
        for (field, v) in [
            ("weight_dtype_bytes", self.weight_dtype_bytes),
            ("activation_dtype_bytes", self.activation_dtype_bytes),
            ("kv_dtype_bytes", self.kv_dtype_bytes),
        ] {
            if ![1, 2, 4].contains(&v) {
                return Err(SimError::invalid(field, "must be 1, 2 or 4"));
            }
        }
        self.compute_dtype()?;
        Ok(())
    }

    pub fn compute_dtype(&self) -> Result<Dtype> {
        match self.compute_dtype {
            Some(d) => Ok(d),
            None => Dtype::for_width(self.weight_dtype_bytes)
                .ok_or_else(|| SimError::invalid("weight_dtype_bytes", "must be 1, 2 or 4")),
        }
    }

    /// Key/value projection width (`num_kv_heads * head_dim`).
    pub fn kv_width(&self) -> u128 {
        self.num_kv_heads as u128 * self.head_dim as u128
    }

    fn norm_params(&self) -> u128 {
        let h = self.hidden_size as u128;
        if self.norm_has_bias {
            2 * h
        } else {
            h
        }
    }

    /// Parameter tensors of the whole model, in execution order.
    pub fn tensor_shapes(&self) -> Vec<(&'static str, u128)> {
        let h = self.hidden_size as u128;
        let v = self.vocab_size as u128;
        let mut out = vec![("embedding", v * h)];
        for _ in 0..self.num_layers {
            out.extend(self.layer_tensor_shapes());
        }
        out.push(("final_norm", self.norm_params()));
        if !self.tied_embeddings {
            out.push(("lm_head", v * h));
        }
        out
    }

    /// Parameter tensors of one transformer block.
    pub fn layer_tensor_shapes(&self) -> [(&'static str, u128); 5] {
        let h = self.hidden_size as u128;
        let f = self.ffn_size as u128;
        [
            ("attn_norm", self.norm_params()),
            ("qkv_proj", h * (h + 2 * self.kv_width())),
            ("out_proj", h * h),
            ("ffn_norm", self.norm_params()),
            ("ffn", self.ffn_mat_count as u128 * h * f),
        ]
    }

    pub fn layer_params(&self) -> u128 {
        self.layer_tensor_shapes().iter().map(|(_, n)| n).sum()
    }

    /// Bytes of K and V cached per token per layer.
    pub fn kv_bytes_per_token_layer(&self) -> u128 {
        2 * self.kv_width() * self.kv_dtype_bytes as u128
    }
}

/// Total parameter count, enumerated from the tensor shapes.
pub fn param_count(model: &ModelSpec) -> Result<u128> {
    model.validate()?;
    Ok(model.tensor_shapes().iter().map(|(_, n)| n).sum())
}

/// Batch and sequence lengths of a static-batch request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadShape {
    pub batch: u64,
    pub input_len: u64,
    #[serde(default)]
    pub output_len: u64,
    /// Tokens already in the KV cache (decode only).
    #[serde(default)]
    pub kv_len: Option<u64>,
}

impl WorkloadShape {
    pub fn new(batch: u64, input_len: u64, output_len: u64) -> Self {
        WorkloadShape {
            batch,
            input_len,
            output_len,
            kv_len: None,
        }
    }

    pub fn decode_at(batch: u64, input_len: u64, kv_len: u64) -> Self {
        WorkloadShape {
            batch,
            input_len,
            output_len: 0,
            kv_len: Some(kv_len),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(SimError::invalid("batch", "must be >= 1"));
        }
        if self.input_len == 0 {
            return Err(SimError::invalid("input_len", "must be >= 1"));
        }
        if let Some(kv) = self.kv_len {
            if kv < self.input_len {
                return Err(SimError::invalid(
                    "kv_len",
                    format!("must be >= input_len ({})", self.input_len),
                ));
            }
        }
        Ok(())
    }

    /// `(tokens per sequence in this pass, attention context)` for a phase.
    fn extents(&self, phase: Phase) -> Result<(u128, u128)> {
        self.validate()?;
        match phase {
            Phase::Prefill => Ok((self.input_len as u128, self.input_len as u128)),
            Phase::Decode => {
                let kv = self
                    .kv_len
                    .ok_or_else(|| SimError::invalid("kv_len", "required for decode"))?;
                Ok((1, kv as u128))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

/// Accounting knobs that the architecture alone does not determine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct CostOptions {
    /// Passes over the materialised attention score matrix (0 = fused).
    pub attention_scratch_passes: u64,
    /// Vector FLOPs per hidden element per layer for norms and residual adds.
    pub norm_residual_flops_per_element: u64,
    /// Charge embedding-row gathers to intensity curves.
    pub include_embedding_reads: bool,
}

impl Default for CostOptions {
    fn default() -> Self {
        CostOptions {
            attention_scratch_passes: 2,
            norm_residual_flops_per_element: 8,
            include_embedding_reads: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounts {
    pub qkv_proj: u128,
    pub attention: u128,
    pub out_proj: u128,
    pub ffn: u128,
    pub logits: u128,
    pub norm_residual: u128,
}

impl FlopCounts {
    pub fn total(&self) -> u128 {
        self.qkv_proj + self.attention + self.out_proj + self.ffn + self.logits + self.norm_residual
    }

    /// FLOPs issued on the matrix pipe.
    pub fn matrix(&self) -> u128 {
        self.total() - self.norm_residual
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteCounts {
    pub weights: u128,
    pub activations: u128,
    pub kv_cache: u128,
    pub attention_scratch: u128,
}

impl ByteCounts {
    pub fn total(&self) -> u128 {
        self.weights + self.activations + self.kv_cache + self.attention_scratch
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub flops: FlopCounts,
    pub bytes: ByteCounts,
}

impl CostBreakdown {
    pub fn total_flops(&self) -> u128 {
        self.flops.total()
    }

    pub fn total_bytes(&self) -> u128 {
        self.bytes.total()
    }

    pub fn checked_add(&self, o: &CostBreakdown) -> Result<CostBreakdown> {
        let a = |x: u128, y: u128| x.checked_add(y).ok_or(SimError::Overflow("costs"));
        Ok(CostBreakdown {
            flops: FlopCounts {
                qkv_proj: a(self.flops.qkv_proj, o.flops.qkv_proj)?,
                attention: a(self.flops.attention, o.flops.attention)?,
                out_proj: a(self.flops.out_proj, o.flops.out_proj)?,
                ffn: a(self.flops.ffn, o.flops.ffn)?,
                logits: a(self.flops.logits, o.flops.logits)?,
                norm_residual: a(self.flops.norm_residual, o.flops.norm_residual)?,
            },
            bytes: ByteCounts {
                weights: a(self.bytes.weights, o.bytes.weights)?,
                activations: a(self.bytes.activations, o.bytes.activations)?,
                kv_cache: a(self.bytes.kv_cache, o.bytes.kv_cache)?,
                attention_scratch: a(self.bytes.attention_scratch, o.bytes.attention_scratch)?,
            },
        })
    }

    pub fn checked_scale(&self, k: u128) -> Result<CostBreakdown> {
        let m = |x: u128| x.checked_mul(k).ok_or(SimError::Overflow("costs"));
        Ok(CostBreakdown {
            flops: FlopCounts {
                qkv_proj: m(self.flops.qkv_proj)?,
                attention: m(self.flops.attention)?,
                out_proj: m(self.flops.out_proj)?,
                ffn: m(self.flops.ffn)?,
                logits: m(self.flops.logits)?,
                norm_residual: m(self.flops.norm_residual)?,
            },
            bytes: ByteCounts {
                weights: m(self.bytes.weights)?,
                activations: m(self.bytes.activations)?,
                kv_cache: m(self.bytes.kv_cache)?,
                attention_scratch: m(self.bytes.attention_scratch)?,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    QkvProj,
    Attention,
    OutProj,
    Ffn,
    NormResidual,
    Logits,
}

impl KernelKind {
    /// Runs on the vector pipe rather than the matrix pipe.
    pub fn is_vector(self) -> bool {
        matches!(self, KernelKind::NormResidual)
    }
}

/// One kernel launch with its work and traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Kernel {
    pub kind: KernelKind,
    pub flops: u128,
    pub bytes: ByteCounts,
}

impl Kernel {
    fn new(kind: KernelKind, flops: u128) -> Self {
        Kernel {
            kind,
            flops,
            bytes: ByteCounts::default(),
        }
    }

    pub fn total_bytes(&self) -> u128 {
        self.bytes.total()
    }

    fn into_breakdown(self) -> CostBreakdown {
        let mut c = CostBreakdown {
            bytes: self.bytes,
            ..Default::default()
        };
        match self.kind {
            KernelKind::QkvProj => c.flops.qkv_proj = self.flops,
            KernelKind::Attention => c.flops.attention = self.flops,
            KernelKind::OutProj => c.flops.out_proj = self.flops,
            KernelKind::Ffn => c.flops.ffn = self.flops,
            KernelKind::NormResidual => c.flops.norm_residual = self.flops,
            KernelKind::Logits => c.flops.logits = self.flops,
        }
        c
    }
}

fn prod(factors: &[u128]) -> Result<u128> {
    factors
        .iter()
        .try_fold(1u128, |acc, &f| acc.checked_mul(f))
        .ok_or(SimError::Overflow("flops or bytes"))
}

/// The kernels of one transformer block, forward pass.
///
/// Weights are charged once per kernel invocation. The layer input is
/// charged to the QKV projection and the layer output to the norm/residual
/// kernel, so the activation total is one input plus one output tensor.
pub fn layer_kernels(
    model: &ModelSpec,
    phase: Phase,
    shape: &WorkloadShape,
    opts: &CostOptions,
) -> Result<[Kernel; 5]> {
    model.validate()?;
    let (s, ctx) = shape.extents(phase)?;
    let b = shape.batch as u128;
    let h = model.hidden_size as u128;
    let f = model.ffn_size as u128;
    let kvw = model.kv_width();
    let wb = model.weight_dtype_bytes as u128;
    let ab = model.activation_dtype_bytes as u128;
    let kb = model.kv_dtype_bytes as u128;

    let mut qkv = Kernel::new(KernelKind::QkvProj, prod(&[2, b, s, h, h + 2 * kvw])?);
    qkv.bytes.weights = prod(&[h, h + 2 * kvw, wb])?;
    qkv.bytes.activations = prod(&[b, s, h, ab])?;

    let mut attn = Kernel::new(KernelKind::Attention, prod(&[4, b, s, ctx, h])?);
    attn.bytes.kv_cache = match phase {
        // K and V written for every prompt token
        Phase::Prefill => prod(&[2, kvw, kb, b, s])?,
        // full cache read every step
        Phase::Decode => prod(&[2, kvw, kb, b, ctx])?,
    };
    attn.bytes.attention_scratch = prod(&[
        opts.attention_scratch_passes as u128,
        b,
        model.num_heads as u128,
        s,
        ctx,
        ab,
    ])?;

    let mut out = Kernel::new(KernelKind::OutProj, prod(&[2, b, s, h, h])?);
    out.bytes.weights = prod(&[h, h, wb])?;

    let mut ffn = Kernel::new(
        KernelKind::Ffn,
        prod(&[2, b, s, h, f, model.ffn_mat_count as u128])?,
    );
    ffn.bytes.weights = prod(&[model.ffn_mat_count as u128, h, f, wb])?;

    let mut norm = Kernel::new(
        KernelKind::NormResidual,
        prod(&[opts.norm_residual_flops_per_element as u128, b, s, h])?,
    );
    norm.bytes.weights = prod(&[2, model.norm_params(), wb])?;
    norm.bytes.activations = prod(&[b, s, h, ab])?;

    Ok([qkv, attn, out, ffn, norm])
}

/// Output-head GEMM over `positions` tokens per sequence.
pub fn logits_kernel(model: &ModelSpec, batch: u64, positions: u64) -> Result<Kernel> {
    model.validate()?;
    let b = batch as u128;
    let p = positions as u128;
    let h = model.hidden_size as u128;
    let v = model.vocab_size as u128;
    let mut k = Kernel::new(KernelKind::Logits, prod(&[2, b, p, h, v])?);
    k.bytes.weights = prod(&[v, h, model.weight_dtype_bytes as u128])?;
    k.bytes.activations = prod(&[b, p, h + v, model.activation_dtype_bytes as u128])?;
    Ok(k)
}

fn sum_kernels(kernels: &[Kernel]) -> Result<CostBreakdown> {
    kernels
        .iter()
        .try_fold(CostBreakdown::default(), |acc, k| acc.checked_add(&k.into_breakdown()))
}

/// Per-layer forward costs (FLOPs and bytes) of one transformer block.
pub fn layer_costs(
    model: &ModelSpec,
    phase: Phase,
    shape: &WorkloadShape,
    opts: &CostOptions,
) -> Result<CostBreakdown> {
    sum_kernels(&layer_kernels(model, phase, shape, opts)?)
}

/// Per-layer forward FLOPs; multiply-add counts as two FLOPs.
pub fn layer_flops(
    model: &ModelSpec,
    phase: Phase,
    shape: &WorkloadShape,
    opts: &CostOptions,
) -> Result<CostBreakdown> {
    let c = layer_costs(model, phase, shape, opts)?;
    Ok(CostBreakdown {
        flops: c.flops,
        bytes: ByteCounts::default(),
    })
}

/// Per-layer bytes moved between memory and the processor.
pub fn layer_bytes(
    model: &ModelSpec,
    phase: Phase,
    shape: &WorkloadShape,
    attention_scratch_passes: u64,
) -> Result<CostBreakdown> {
    let opts = CostOptions {
        attention_scratch_passes,
        ..CostOptions::default()
    };
    let c = layer_costs(model, phase, shape, &opts)?;
    Ok(CostBreakdown {
        flops: FlopCounts::default(),
        bytes: c.bytes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntensityPoint<T> {
    pub batch: u64,
    /// Input length for prefill, KV length for decode.
    pub length: u64,
    pub flops: u128,
    pub bytes: u128,
    pub intensity: T,
}

/// FLOPs per byte over all transformer layers on a batch x length grid.
///
/// The output head is excluded; embedding gathers are included only when
/// `opts.include_embedding_reads` is set.
pub fn arithmetic_intensity_curve<T: Scalar>(
    model: &ModelSpec,
    phase: Phase,
    batch_grid: &[u64],
    length_grid: &[u64],
    opts: &CostOptions,
) -> Result<Vec<IntensityPoint<T>>> {
    if batch_grid.is_empty() || length_grid.is_empty() {
        return Err(SimError::invalid("grid", "batch and length grids must be non-empty"));
    }
    let layers = model.num_layers as u128;
    let mut out = Vec::with_capacity(batch_grid.len() * length_grid.len());
    for &b in batch_grid {
        for &len in length_grid {
            let shape = match phase {
                Phase::Prefill => WorkloadShape::new(b, len, 0),
                Phase::Decode => WorkloadShape::decode_at(b, 1, len),
            };
            let c = layer_costs(model, phase, &shape, opts)?.checked_scale(layers)?;
            let mut bytes = c.total_bytes();
            if opts.include_embedding_reads {
                let tokens = match phase {
                    Phase::Prefill => len as u128,
                    Phase::Decode => 1,
                };
                bytes += prod(&[
                    b as u128,
                    tokens,
                    model.hidden_size as u128,
                    model.weight_dtype_bytes as u128,
                ])?;
            }
            if bytes == 0 {
                return Err(SimError::invalid("model", "zero bytes moved"));
            }
            let flops = c.total_flops();
            out.push(IntensityPoint {
                batch: b,
                length: len,
                flops,
                bytes,
                intensity: T::from_count(flops) / T::from_count(bytes),
            });
        }
    }
    Ok(out)
}

/// Embedding-bag recommendation workload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlrmSpec {
    pub num_tables: u64,
    pub rows_per_table: u64,
    pub embed_dim: u64,
    pub pooling_factor: u64,
    pub dtype_bytes: u64,
    pub batch: u64,
}

impl DlrmSpec {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("num_tables", self.num_tables),
            ("rows_per_table", self.rows_per_table),
            ("embed_dim", self.embed_dim),
            ("pooling_factor", self.pooling_factor),
            ("dtype_bytes", self.dtype_bytes),
            ("batch", self.batch),
        ] {
            if v == 0 {
                return Err(SimError::invalid(field, "must be >= 1"));
            }
        }
        Ok(())
    }

    /// Bytes of a single table.
    pub fn table_bytes(&self) -> u128 {
        self.rows_per_table as u128 * self.embed_dim as u128 * self.dtype_bytes as u128
    }

    pub fn total_table_bytes(&self) -> u128 {
        self.table_bytes() * self.num_tables as u128
    }

    /// Embedding rows gathered per batch, one per (sample, table, pooled id).
    pub fn lookups(&self) -> u128 {
        self.batch as u128 * self.num_tables as u128 * self.pooling_factor as u128
    }
}

/// Bytes gathered by one pooled embedding lookup over the whole batch.
pub fn dlrm_pooling_bytes(spec: &DlrmSpec) -> Result<u128> {
    spec.validate()?;
    prod(&[
        spec.lookups(),
        spec.embed_dim as u128,
        spec.dtype_bytes as u128,
    ])
}
