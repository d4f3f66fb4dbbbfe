//! Per-bit data-movement energy over a Clos-style topology.
//!
//! A path costs `E_src + N * E_switch + E_dst` pJ/bit. Intra-tray links are
//! a single per-bit figure with no adapters or switches.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::parallel::TrafficLedger;
use crate::scalar::Scalar;
use crate::system::NetworkSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technology {
    Electronic,
    Photonic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    IntraTray,
    IntraRack,
    InterRack,
    OffloadTray,
    OffloadExternal,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::IntraTray,
        Scenario::IntraRack,
        Scenario::InterRack,
        Scenario::OffloadTray,
        Scenario::OffloadExternal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::IntraTray => "intra_tray",
            Scenario::IntraRack => "intra_rack",
            Scenario::InterRack => "inter_rack",
            Scenario::OffloadTray => "offload_tray",
            Scenario::OffloadExternal => "offload_external",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficClass {
    Tp,
    Pp,
    Dp,
    OffloadTray,
    OffloadExternal,
}

impl TrafficClass {
    pub const ALL: [TrafficClass; 5] = [
        TrafficClass::Tp,
        TrafficClass::Pp,
        TrafficClass::Dp,
        TrafficClass::OffloadTray,
        TrafficClass::OffloadExternal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrafficClass::Tp => "tp",
            TrafficClass::Pp => "pp",
            TrafficClass::Dp => "dp",
            TrafficClass::OffloadTray => "offload_tray",
            TrafficClass::OffloadExternal => "offload_external",
        }
    }

    pub fn bits<T: Scalar>(self, ledger: &TrafficLedger<T>) -> T {
        match self {
            TrafficClass::Tp => ledger.tp_comm,
            TrafficClass::Pp => ledger.pp_comm,
            TrafficClass::Dp => ledger.dp_comm,
            TrafficClass::OffloadTray => ledger.offload_tray,
            TrafficClass::OffloadExternal => ledger.offload_external,
        }
    }
}

/// Per-bit costs in pJ/bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[serde(deny_unknown_fields)]
pub struct EnergyParams<T> {
    pub adapter: T,
    pub switch: T,
    pub nvlink_intra_tray: T,
    pub photonic_transceiver: T,
    pub photonic_switch: T,
    pub photonic_intra_tray: T,
}

impl<T: Scalar> Default for EnergyParams<T> {
    fn default() -> Self {
        EnergyParams {
            adapter: T::lit(65.0),
            switch: T::lit(35.0),
            nvlink_intra_tray: T::lit(50.0),
            photonic_transceiver: T::lit(5.0),
            photonic_switch: T::lit(25.0),
            photonic_intra_tray: T::lit(10.0),
        }
    }
}

impl<T: Scalar> EnergyParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (f, v) in [
            ("energy.adapter", self.adapter),
            ("energy.switch", self.switch),
            ("energy.nvlink_intra_tray", self.nvlink_intra_tray),
            ("energy.photonic_transceiver", self.photonic_transceiver),
            ("energy.photonic_switch", self.photonic_switch),
            ("energy.photonic_intra_tray", self.photonic_intra_tray),
        ] {
            if v < T::zero() {
                return Err(SimError::invalid(f, "must be >= 0 pJ/bit"));
            }
        }
        Ok(())
    }

    pub fn technology(&self, tech: Technology) -> TechnologyParams<T> {
        match tech {
            Technology::Electronic => TechnologyParams {
                technology: tech,
                endpoint: self.adapter,
                switch: self.switch,
                intra_tray: self.nvlink_intra_tray,
            },
            Technology::Photonic => TechnologyParams {
                technology: tech,
                endpoint: self.photonic_transceiver,
                switch: self.photonic_switch,
                intra_tray: self.photonic_intra_tray,
            },
        }
    }
}

/// The three per-bit costs one technology uses, plus the technology that
/// selects its default path shapes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TechnologyParams<T> {
    pub technology: Technology,
    pub endpoint: T,
    pub switch: T,
    pub intra_tray: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    None,
    /// Network adapter or photonic transceiver.
    Adapter,
    /// Direct intra-tray link, billed once for the whole hop.
    IntraTrayLink,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathProfile {
    pub scenario: Scenario,
    pub source: Endpoint,
    pub switch_count: u32,
    pub dest: Endpoint,
}

fn endpoint_cost<T: Scalar>(e: Endpoint, p: &TechnologyParams<T>) -> T {
    match e {
        Endpoint::None => T::zero(),
        Endpoint::Adapter => p.endpoint,
        Endpoint::IntraTrayLink => p.intra_tray,
    }
}

/// pJ/bit along one path.
pub fn path_energy<T: Scalar>(profile: &PathProfile, params: &TechnologyParams<T>) -> T {
    endpoint_cost(profile.source, params)
        + T::from_count(profile.switch_count as u128) * params.switch
        + endpoint_cost(profile.dest, params)
}

/// Switch-count overrides keyed by technology then scenario.
pub type SwitchOverrides = BTreeMap<Technology, BTreeMap<Scenario, u32>>;

/// Default switch count for a scenario.
pub fn default_switch_count(scenario: Scenario, tech: Technology) -> u32 {
    match (scenario, tech) {
        (Scenario::IntraTray, _) => 0,
        (Scenario::IntraRack, _) => 1,
        (Scenario::InterRack, _) => 3,
        (Scenario::OffloadTray, Technology::Electronic) => 0,
        (Scenario::OffloadTray, Technology::Photonic) => 1,
        (Scenario::OffloadExternal, Technology::Electronic) => 8,
        // the fabric appliance is a single all-to-all switch stage
        (Scenario::OffloadExternal, Technology::Photonic) => 1,
    }
}

/// Switch counts accepted without a warning.
pub fn documented_switch_range(scenario: Scenario, tech: Technology) -> (u32, u32) {
    match (scenario, tech) {
        (Scenario::IntraTray, _) => (0, 0),
        (Scenario::IntraRack, _) => (1, 2),
        (Scenario::InterRack, _) => (2, 5),
        (Scenario::OffloadTray, _) => (0, 1),
        (Scenario::OffloadExternal, Technology::Electronic) => (4, 12),
        (Scenario::OffloadExternal, Technology::Photonic) => (1, 12),
    }
}

/// Path shape for a scenario. Out-of-range overrides are honoured and
/// reported in `warnings`.
pub fn scenario_profile<T: Scalar>(
    scenario: Scenario,
    tech: Technology,
    topology: Option<&NetworkSpec<T>>,
    overrides: &SwitchOverrides,
    warnings: &mut Vec<String>,
) -> PathProfile {
    let n = overrides
        .get(&tech)
        .and_then(|m| m.get(&scenario))
        .copied()
        .unwrap_or_else(|| default_switch_count(scenario, tech));
    let (lo, hi) = documented_switch_range(scenario, tech);
    if n < lo || n > hi {
        warnings.push(format!(
            "{} {} switch count {n} is outside the documented range [{lo}, {hi}]",
            tech_name(tech),
            scenario.name()
        ));
    }
    if let Some(t) = topology {
        let absent = match scenario {
            Scenario::IntraRack => t.trays_per_rack < 2,
            Scenario::InterRack => t.racks < 2,
            _ => false,
        };
        if absent {
            warnings.push(format!(
                "{} traffic is modelled but the topology has no such path",
                scenario.name()
            ));
        }
    }
    if scenario == Scenario::IntraTray && n == 0 {
        return PathProfile {
            scenario,
            source: Endpoint::IntraTrayLink,
            switch_count: 0,
            dest: Endpoint::None,
        };
    }
    PathProfile {
        scenario,
        source: Endpoint::Adapter,
        switch_count: n,
        dest: Endpoint::Adapter,
    }
}

fn tech_name(t: Technology) -> &'static str {
    match t {
        Technology::Electronic => "electronic",
        Technology::Photonic => "photonic",
    }
}

/// Probability of each scenario per traffic class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScenarioMix<T>(pub BTreeMap<TrafficClass, BTreeMap<Scenario, T>>);

impl<T: Scalar> Default for ScenarioMix<T> {
    fn default() -> Self {
        let point = |s| [(s, T::one())].into_iter().collect();
        ScenarioMix(
            [
                (TrafficClass::Tp, point(Scenario::IntraTray)),
                (TrafficClass::Pp, point(Scenario::IntraRack)),
                (TrafficClass::Dp, point(Scenario::InterRack)),
                (TrafficClass::OffloadTray, point(Scenario::OffloadTray)),
                (TrafficClass::OffloadExternal, point(Scenario::OffloadExternal)),
            ]
            .into_iter()
            .collect(),
        )
    }
}

impl<T: Scalar> ScenarioMix<T> {
    /// Default mix with the given classes replaced.
    pub fn with_overrides(overrides: BTreeMap<TrafficClass, BTreeMap<Scenario, T>>) -> Self {
        let mut mix = Self::default();
        mix.0.extend(overrides);
        mix
    }

    pub fn weights(&self, class: TrafficClass) -> Result<&BTreeMap<Scenario, T>> {
        let w = self.0.get(&class).ok_or_else(|| SimError::BadMix {
            class: class.name().into(),
            sum: 0.0,
        })?;
        let mut sum = T::zero();
        for &v in w.values() {
            if v < T::zero() {
                return Err(SimError::invalid(
                    format!("energy.mix.{}", class.name()),
                    "weights must be >= 0",
                ));
            }
            sum = sum + v;
        }
        if (sum - T::one()).abs_val() > T::lit(1e-9) {
            return Err(SimError::BadMix {
                class: class.name().into(),
                sum: sum.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for c in TrafficClass::ALL {
            self.weights(c)?;
        }
        Ok(())
    }
}

/// Mix-weighted pJ/bit for one traffic class.
pub fn expected_per_bit<T: Scalar>(
    mix: &ScenarioMix<T>,
    class: TrafficClass,
    params: &TechnologyParams<T>,
    topology: Option<&NetworkSpec<T>>,
    overrides: &SwitchOverrides,
    warnings: &mut Vec<String>,
) -> Result<T> {
    let mut total = T::zero();
    for (&s, &w) in mix.weights(class)? {
        let p = scenario_profile(s, params.technology, topology, overrides, warnings);
        total = total + w * path_energy(&p, params);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyRow<T> {
    pub class: TrafficClass,
    pub bits: T,
    pub baseline_pj_per_bit: T,
    pub candidate_pj_per_bit: T,
    pub baseline_joules: T,
    pub candidate_joules: T,
    /// `1 - candidate / baseline` per bit.
    pub savings: T,
    /// Candidate energy as a percentage of the baseline.
    pub remaining_pct: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTable<T> {
    pub rows: Vec<EnergyRow<T>>,
    pub baseline_joules: T,
    pub candidate_joules: T,
    pub warnings: Vec<String>,
}

/// Joules per traffic class under both technologies.
pub fn workload_energy<T: Scalar>(
    ledger: &TrafficLedger<T>,
    mix: &ScenarioMix<T>,
    baseline: &TechnologyParams<T>,
    candidate: &TechnologyParams<T>,
    topology: Option<&NetworkSpec<T>>,
    overrides: &SwitchOverrides,
) -> Result<EnergyTable<T>> {
    let pico = T::lit(1e-12);
    let hundred = T::from_count(100);
    let mut warnings = Vec::new();
    let mut rows = Vec::new();
    let (mut bj, mut cj) = (T::zero(), T::zero());
    for class in TrafficClass::ALL {
        let bits = class.bits(ledger);
        let b = expected_per_bit(mix, class, baseline, topology, overrides, &mut warnings)?;
        let c = expected_per_bit(mix, class, candidate, topology, overrides, &mut warnings)?;
        let ratio = if b > T::zero() { c / b } else { T::one() };
        let row = EnergyRow {
            class,
            bits,
            baseline_pj_per_bit: b,
            candidate_pj_per_bit: c,
            baseline_joules: bits * b * pico,
            candidate_joules: bits * c * pico,
            savings: T::one() - ratio,
            remaining_pct: ratio * hundred,
        };
        bj = bj + row.baseline_joules;
        cj = cj + row.candidate_joules;
        rows.push(row);
    }
    warnings.dedup();
    Ok(EnergyTable {
        rows,
        baseline_joules: bj,
        candidate_joules: cj,
        warnings,
    })
}
