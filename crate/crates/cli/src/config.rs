//! TOML run configuration: parsing, presets, dotted-path overrides and
//! validation. The resolved [`RunConfig`] serializes with every default
//! filled in and is echoed into each report.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fabricsim::energy::{Scenario, ScenarioMix, SwitchOverrides, TrafficClass};
use fabricsim::parallel::{OffloadClass, ParallelismPlan, TrafficLedger};
use fabricsim::report::Format;
use fabricsim::system::{EfficiencyCurve, SystemSpec};
use fabricsim::workload::{CostOptions, ModelSpec, Phase, WorkloadShape};
use fabricsim::{presets, EnergyParams};
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Infer,
    Train,
    Power,
    Dlrm,
    Validate,
    Sweep,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Infer => "infer",
            Mode::Train => "train",
            Mode::Power => "power",
            Mode::Dlrm => "dlrm",
            Mode::Validate => "validate",
            Mode::Sweep => "sweep",
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    /// System for the single-point run; defaults to the only system.
    pub system: Option<String>,
    pub reserve_fraction: f64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            system: None,
            reserve_fraction: 0.0,
        }
    }
}

fn one_plan() -> ParallelismPlan {
    ParallelismPlan::single()
}

fn unit_scale() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedupSection {
    pub base_system: String,
    #[serde(default = "one_plan")]
    pub base_plan: ParallelismPlan,
    pub candidate_system: String,
    #[serde(default = "one_plan")]
    pub candidate_plan: ParallelismPlan,
    /// `[input_len, output_len]` pairs.
    pub shapes: Vec<[u64; 2]>,
    #[serde(default = "unit_scale")]
    pub compute_scales: Vec<f64>,
    #[serde(default)]
    pub batch_cap: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TpOverheadSection {
    #[serde(default)]
    pub system: Option<String>,
    pub tp: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntensitySection {
    pub phase: Phase,
    pub batch: Vec<u64>,
    /// Input length (prefill) or KV length (decode).
    pub length: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub system: Option<String>,
    pub seq_len: u64,
    pub recompute_activations: bool,
    pub mixed_precision: bool,
    pub optimizer_bytes_per_param: u64,
    pub offload_class: OffloadClass,
    pub train_tp_passes: u64,
    /// Search for the MFU-optimal plan instead of using `[plan]`.
    pub search: bool,
    pub device_budget: Option<u64>,
    pub global_batch: Option<u64>,
    pub microbatch_options: Vec<u64>,
    pub max_tp: Option<u32>,
    pub max_pp: Option<u32>,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            system: None,
            seq_len: 2048,
            recompute_activations: false,
            mixed_precision: true,
            optimizer_bytes_per_param: 0,
            offload_class: OffloadClass::Tray,
            train_tp_passes: 3,
            search: false,
            device_budget: None,
            global_batch: None,
            microbatch_options: Vec::new(),
            max_tp: None,
            max_pp: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LedgerSource {
    /// `ledger` if given, else training if `[train]` exists, else inference
    /// if `[workload]` exists, else an empty ledger.
    Auto,
    Explicit,
    Train,
    Infer,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySection {
    pub source: LedgerSource,
    pub params: EnergyParams<f64>,
    pub mix: BTreeMap<TrafficClass, BTreeMap<Scenario, f64>>,
    pub switch_counts: SwitchOverrides,
    /// Bits per class, used by the explicit source.
    pub ledger: Option<TrafficLedger<f64>>,
    /// System whose topology is checked against the mix.
    pub topology_system: Option<String>,
}

impl Default for EnergySection {
    fn default() -> Self {
        EnergySection {
            source: LedgerSource::Auto,
            params: EnergyParams::default(),
            mix: BTreeMap::new(),
            switch_counts: SwitchOverrides::new(),
            ledger: None,
            topology_system: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DlrmSection {
    pub reference_system: String,
    pub fabric_system: String,
    /// Either `rows_per_table` or `total_table_bytes` (split over tables).
    pub rows_per_table: Option<u64>,
    pub total_table_bytes: Option<u64>,
    pub embed_dim: u64,
    pub dtype_bytes: u64,
    pub tables: Vec<u64>,
    pub batch: Vec<u64>,
    pub pooling: Vec<u64>,
    /// Empty: the power-of-two device count that holds the tables.
    pub device_counts: Vec<u64>,
    pub per_device_capacity: Option<u64>,
    pub nvlink_bandwidth: f64,
    pub pcie_bandwidth: f64,
    pub nvlink_latency: f64,
    pub pcie_latency: f64,
    pub coalescing: f64,
}

impl Default for DlrmSection {
    fn default() -> Self {
        DlrmSection {
            reference_system: "dgx".into(),
            fabric_system: "pfa".into(),
            rows_per_table: None,
            total_table_bytes: None,
            embed_dim: 32,
            dtype_bytes: 2,
            tables: vec![1, 2, 4, 8, 16, 32, 64],
            batch: vec![128, 1024, 4096],
            pooling: vec![32, 64],
            device_counts: Vec::new(),
            per_device_capacity: None,
            nvlink_bandwidth: fabricsim::dlrm::NVLINK_BW,
            pcie_bandwidth: fabricsim::dlrm::PCIE_BW,
            nvlink_latency: 0.0,
            pcie_latency: 0.0,
            coalescing: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthSweep {
    pub name: String,
    pub input_len: Vec<u64>,
    pub output_len: Vec<u64>,
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepTarget {
    pub system: String,
    pub tp: Vec<u32>,
    #[serde(default = "one_u32")]
    pub pp: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub batch: Vec<u64>,
    pub lengths: Vec<LengthSweep>,
    pub targets: Vec<SweepTarget>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSection {
    /// CSV with `config_id,predicted_s,measured_s`.
    pub measurements: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub path: Option<String>,
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedSystem {
    pub preset: Option<String>,
    pub bandwidth_curve_csv: Option<String>,
    pub flops_curve_csv: Option<String>,
    pub compute_scale: f64,
    pub spec: SystemSpec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub model: Option<ModelSpec>,
    pub systems: BTreeMap<String, ResolvedSystem>,
    pub plan: ParallelismPlan,
    pub devices: Option<u64>,
    pub workload: Option<WorkloadShape>,
    pub cost: CostOptions,
    pub inference: InferenceSection,
    pub speedup: Option<SpeedupSection>,
    pub tp_overhead: Option<TpOverheadSection>,
    pub intensity: Option<IntensitySection>,
    pub train: Option<TrainSection>,
    pub energy: EnergySection,
    pub dlrm: Option<DlrmSection>,
    pub sweep: Option<SweepSection>,
    pub validate: Option<ValidateSection>,
    #[serde(skip)]
    pub output: OutputSection,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Mode>,
    model: Option<Json>,
    system: Option<Json>,
    #[serde(default)]
    systems: BTreeMap<String, Json>,
    plan: Option<RawPlan>,
    workload: Option<WorkloadShape>,
    #[serde(default)]
    cost: CostOptions,
    #[serde(default)]
    inference: InferenceSection,
    speedup: Option<SpeedupSection>,
    tp_overhead: Option<TpOverheadSection>,
    intensity: Option<IntensitySection>,
    train: Option<TrainSection>,
    #[serde(default)]
    energy: EnergySection,
    dlrm: Option<DlrmSection>,
    sweep: Option<SweepSection>,
    validate: Option<ValidateSection>,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlan {
    #[serde(default = "one_u32")]
    tp: u32,
    #[serde(default = "one_u32")]
    pp: u32,
    #[serde(default = "one_u32")]
    dp: u32,
    #[serde(default = "one_u64")]
    microbatch: u64,
    #[serde(default = "one_u64")]
    num_microbatches: u64,
    #[serde(default)]
    sequence_parallel: bool,
    #[serde(default)]
    dp_overlap: bool,
    /// When set, `tp * pp * dp` must equal it.
    devices: Option<u64>,
}

fn one_u64() -> u64 {
    1
}

/// Sets `key.path = value` in a TOML table; the value is parsed as TOML and
/// falls back to a bare string.
pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{spec}` must be KEY=VALUE")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(invalid(format!("override key `{key}` is not a dotted path")));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Recursive merge: objects merge key by key, anything else replaces.
fn merge(base: &mut Json, over: Json) {
    match (base, over) {
        (Json::Object(b), Json::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn take_str(obj: &mut serde_json::Map<String, Json>, key: &str, ctx: &str) -> Result<Option<String>, CliError> {
    match obj.remove(key) {
        None => Ok(None),
        Some(Json::String(s)) => Ok(Some(s)),
        Some(_) => Err(invalid(format!("{ctx}.{key} must be a string"))),
    }
}

fn resolve_model(raw: Json) -> Result<ModelSpec, CliError> {
    let Json::Object(mut obj) = raw else {
        return Err(invalid("[model] must be a table"));
    };
    let mut base = match take_str(&mut obj, "preset", "model")? {
        Some(p) => serde_json::to_value(
            presets::model_by_name(&p).ok_or_else(|| invalid(format!("model.preset: unknown model `{p}`")))?,
        )
        .map_err(|e| invalid(e.to_string()))?,
        None => Json::Object(Default::default()),
    };
    merge(&mut base, Json::Object(obj));
    let m: ModelSpec = serde_json::from_value(base).map_err(|e| invalid(format!("[model]: {e}")))?;
    m.validate().map_err(|e| invalid(format!("[model]: {e}")))?;
    Ok(m)
}

fn resolve_system(name: &str, raw: Json, base_dir: &Path) -> Result<ResolvedSystem, CliError> {
    let ctx = format!("systems.{name}");
    let Json::Object(mut obj) = raw else {
        return Err(invalid(format!("[{ctx}] must be a table")));
    };
    let preset = take_str(&mut obj, "preset", &ctx)?;
    let bw_csv = take_str(&mut obj, "bandwidth_curve_csv", &ctx)?;
    let fl_csv = take_str(&mut obj, "flops_curve_csv", &ctx)?;
    let scale = match obj.remove("compute_scale") {
        None => 1.0,
        Some(v) => v
            .as_f64()
            .filter(|s| *s > 0.0)
            .ok_or_else(|| invalid(format!("{ctx}.compute_scale must be a number > 0")))?,
    };
    let mut base = match &preset {
        Some(p) => serde_json::to_value(
            presets::system_by_name(p).ok_or_else(|| invalid(format!("{ctx}.preset: unknown system `{p}`")))?,
        )
        .map_err(|e| invalid(e.to_string()))?,
        None => Json::Object(Default::default()),
    };
    merge(&mut base, Json::Object(obj));
    let mut spec: SystemSpec<f64> = serde_json::from_value(base).map_err(|e| invalid(format!("[{ctx}]: {e}")))?;
    let load = |rel: &str, what: &str| -> Result<EfficiencyCurve<f64>, CliError> {
        let path = base_dir.join(rel);
        if !path.is_file() {
            return Err(invalid(format!("{ctx}.{what}: file not found: {}", path.display())));
        }
        EfficiencyCurve::from_csv_path(&path).map_err(|e| invalid(format!("{ctx}.{what}: {e}")))
    };
    if let Some(p) = &bw_csv {
        spec.bandwidth_curve = load(p, "bandwidth_curve_csv")?;
    }
    if let Some(p) = &fl_csv {
        spec.flops_curve = load(p, "flops_curve_csv")?;
    }
    if spec.name.is_empty() {
        spec.name = name.to_string();
    }
    if scale != 1.0 {
        spec = spec.with_compute_scale(scale);
    }
    spec.validate().map_err(|e| invalid(format!("[{ctx}]: {e}")))?;
    Ok(ResolvedSystem {
        preset,
        bandwidth_curve_csv: bw_csv,
        flops_curve_csv: fl_csv,
        compute_scale: scale,
        spec,
    })
}

impl RunConfig {
    pub fn system(&self, name: &str) -> Result<&SystemSpec<f64>, CliError> {
        self.systems
            .get(name)
            .map(|s| &s.spec)
            .ok_or_else(|| invalid(format!("unknown system `{name}`")))
    }

    /// The named system, or the only / `main` system when unnamed.
    pub fn pick_system(&self, name: Option<&str>, section: &str) -> Result<(&str, &SystemSpec<f64>), CliError> {
        let key = match name {
            Some(n) => n,
            None if self.systems.len() == 1 => self.systems.keys().next().expect("one").as_str(),
            None if self.systems.contains_key("main") => "main",
            None => {
                return Err(invalid(format!(
                    "{section}: several systems are defined; name one with `{section}.system`"
                )))
            }
        };
        let (k, s) = self
            .systems
            .get_key_value(key)
            .ok_or_else(|| invalid(format!("{section}: unknown system `{key}`")))?;
        Ok((k.as_str(), &s.spec))
    }

    pub fn model(&self) -> Result<&ModelSpec, CliError> {
        self.model.as_ref().ok_or_else(|| invalid("[model] is required for this mode"))
    }

    pub fn mix(&self) -> ScenarioMix<f64> {
        ScenarioMix(self.energy.mix.clone())
    }

    /// The resolved configuration as JSON, defaults included.
    pub fn echo(&self) -> Json {
        serde_json::to_value(self).unwrap_or(Json::Null)
    }

    fn check(&self) -> Result<(), CliError> {
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(invalid(format!("{} mode requires {what}", self.mode.name())))
            }
        };
        match self.mode {
            Mode::Infer => {
                need(self.model.is_some(), "[model]")?;
                need(
                    self.workload.is_some() || self.speedup.is_some() || self.intensity.is_some(),
                    "[workload], [speedup] or [intensity]",
                )?;
                need(
                    self.tp_overhead.is_none() || self.workload.is_some(),
                    "[workload] for [tp_overhead]",
                )?;
            }
            Mode::Train => {
                need(self.model.is_some(), "[model]")?;
                need(self.train.is_some(), "[train]")?;
            }
            Mode::Power => {}
            Mode::Dlrm => need(self.dlrm.is_some(), "[dlrm]")?,
            Mode::Validate => need(self.validate.is_some(), "[validate]")?,
            Mode::Sweep => {
                need(self.model.is_some(), "[model]")?;
                need(self.sweep.is_some(), "[sweep]")?;
            }
        }
        if let Some(d) = self.devices {
            self.plan
                .validate_devices(d)
                .map_err(|e| invalid(format!("[plan]: {e}")))?;
        }
        self.plan.validate().map_err(|e| invalid(format!("[plan]: {e}")))?;
        if let Some(w) = &self.workload {
            w.validate().map_err(|e| invalid(format!("[workload]: {e}")))?;
        }
        if !(0.0..1.0).contains(&self.inference.reserve_fraction) {
            return Err(invalid("inference.reserve_fraction must be in [0, 1)"));
        }
        if self.mode == Mode::Infer && self.workload.is_some() {
            let (name, sys) = self.pick_system(self.inference.system.as_deref(), "inference")?;
            if self.plan.devices() > sys.processor.count as u64 {
                return Err(invalid(format!(
                    "[plan]: tp x pp x dp = {} exceeds the {} processors of system `{name}`",
                    self.plan.devices(),
                    sys.processor.count
                )));
            }
        }
        if let Some(s) = &self.speedup {
            self.system(&s.base_system)?;
            self.system(&s.candidate_system)?;
            if s.shapes.is_empty() || s.compute_scales.iter().any(|c| *c <= 0.0) {
                return Err(invalid("[speedup]: shapes must be non-empty and compute_scales > 0"));
            }
        }
        if let Some(t) = &self.tp_overhead {
            self.pick_system(t.system.as_deref(), "tp_overhead")?;
            if !t.tp.contains(&1) {
                return Err(invalid("tp_overhead.tp must include 1 as the baseline"));
            }
        }
        if let Some(i) = &self.intensity {
            if i.batch.is_empty() || i.length.is_empty() {
                return Err(invalid("[intensity]: batch and length must be non-empty"));
            }
        }
        if let Some(t) = &self.train {
            if self.mode == Mode::Train {
                self.pick_system(t.system.as_deref(), "train")?;
            }
            if t.seq_len == 0 {
                return Err(invalid("train.seq_len must be >= 1"));
            }
            if t.search && (t.device_budget.is_none() || t.global_batch.is_none()) {
                return Err(invalid("train.search requires train.device_budget and train.global_batch"));
            }
        }
        self.energy.params.validate().map_err(|e| invalid(e.to_string()))?;
        self.mix().validate().map_err(|e| invalid(format!("[energy.mix]: {e}")))?;
        if self.energy.source == LedgerSource::Explicit && self.energy.ledger.is_none() {
            return Err(invalid("energy.source = \"explicit\" requires [energy.ledger]"));
        }
        if let Some(n) = &self.energy.topology_system {
            self.system(n)?;
        }
        if let Some(d) = &self.dlrm {
            self.system(&d.reference_system)?;
            self.system(&d.fabric_system)?;
            if d.rows_per_table.is_some() == d.total_table_bytes.is_some() {
                return Err(invalid("[dlrm]: set exactly one of rows_per_table or total_table_bytes"));
            }
            if d.tables.is_empty() || d.batch.is_empty() || d.pooling.is_empty() {
                return Err(invalid("[dlrm]: tables, batch and pooling must be non-empty"));
            }
        }
        if let Some(s) = &self.sweep {
            if s.batch.is_empty() || s.lengths.is_empty() || s.targets.is_empty() {
                return Err(invalid("[sweep]: batch, lengths and targets must be non-empty"));
            }
            let mut names: Vec<&str> = s.lengths.iter().map(|l| l.name.as_str()).collect();
            names.sort_unstable();
            if names.windows(2).any(|w| w[0] == w[1]) {
                return Err(invalid("[sweep]: length sweep names must be unique"));
            }
            for t in &s.targets {
                self.system(&t.system)?;
            }
        }
        if let Some(v) = &self.validate {
            let p = self.base_dir.join(&v.measurements);
            if !p.is_file() {
                return Err(invalid(format!("validate.measurements: file not found: {}", p.display())));
            }
        }
        Ok(())
    }
}

/// Parses configuration text. Relative paths resolve against `base_dir`.
pub fn parse_config_str(
    text: &str,
    base_dir: &Path,
    mode: Option<Mode>,
    overrides: &[String],
) -> Result<RunConfig, CliError> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| invalid(format!("TOML syntax: {e}")))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let json = serde_json::to_value(&doc).map_err(|e| invalid(e.to_string()))?;
    let raw: RawConfig = serde_json::from_value(json).map_err(|e| invalid(e.to_string()))?;

    let mode = match (mode, raw.mode) {
        (Some(a), Some(b)) if a != b => {
            return Err(invalid(format!(
                "config declares mode `{}` but `{}` was requested",
                b.name(),
                a.name()
            )))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(invalid("no mode given")),
    };

    let mut systems = BTreeMap::new();
    if let Some(s) = raw.system {
        systems.insert("main".to_string(), resolve_system("main", s, base_dir)?);
    }
    for (name, s) in raw.systems {
        if systems.contains_key(&name) {
            return Err(invalid(format!("system `{name}` is defined twice")));
        }
        let r = resolve_system(&name, s, base_dir)?;
        systems.insert(name, r);
    }

    let (plan, devices) = match raw.plan {
        Some(p) => (
            ParallelismPlan {
                tp: p.tp,
                pp: p.pp,
                dp: p.dp,
                microbatch: p.microbatch,
                num_microbatches: p.num_microbatches,
                sequence_parallel: p.sequence_parallel,
                dp_overlap: p.dp_overlap,
            },
            p.devices,
        ),
        None => (ParallelismPlan::single(), None),
    };

    let mut energy = raw.energy;
    energy.mix = ScenarioMix::with_overrides(energy.mix).0;

    let mut train = raw.train;
    if let Some(t) = train.as_mut() {
        if t.optimizer_bytes_per_param == 0 {
            t.optimizer_bytes_per_param = if t.mixed_precision { 12 } else { 8 };
        }
    }

    let cfg = RunConfig {
        mode,
        model: raw.model.map(resolve_model).transpose()?,
        systems,
        plan,
        devices,
        workload: raw.workload,
        cost: raw.cost,
        inference: raw.inference,
        speedup: raw.speedup,
        tp_overhead: raw.tp_overhead,
        intensity: raw.intensity,
        train,
        energy,
        dlrm: raw.dlrm,
        sweep: raw.sweep,
        validate: raw.validate,
        output: raw.output,
        base_dir: base_dir.to_path_buf(),
    };
    cfg.check()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path, mode: Option<Mode>, overrides: &[String]) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, dir, mode, overrides)
}
