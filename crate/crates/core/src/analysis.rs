//! Minimum-capacitance solving and parameter sweeps.

use std::collections::HashSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{
    load_segments, next_states_after_tx, CurrentTable, DeviceError, DeviceState, DownlinkReply,
    LorawanParams, Segment,
};
use crate::energy::{
    harvester_resistance, voltage_extremes_along, CapacitorParams, EnergyError, Resistance,
    SegmentDynamics,
};
use crate::engine::{self, results_row, EngineError, OffPacketPolicy, ScenarioConfig};
use crate::harvester::HarvestConfig;
use crate::time::{SimDuration, SimTime};

/// Application payload of the downlink in an UL+DL cycle, in bytes.
pub const CYCLE_DL_PAYLOAD_BYTES: u32 = 39;

pub const MIN_CAP_HEADER: &str = "dr,payload_bytes,P_harvest_W,kind,min_C_farads";

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("minimum voltage is not monotone in capacitance: feasible at {feasible} F but not at {infeasible} F")]
    NonMonotone { feasible: f64, infeasible: f64 },
    #[error("invalid bracket [{lo}, {hi}] F")]
    Bracket { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CycleKind {
    #[serde(rename = "UL")]
    Ul,
    #[serde(rename = "UL+DL")]
    UlDl,
}

impl fmt::Display for CycleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CycleKind::Ul => "UL",
            CycleKind::UlDl => "UL+DL",
        })
    }
}

/// The load sequence of one UL or UL+DL cycle and the conditions it runs in.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleSpec {
    pub kind: CycleKind,
    pub segments: Vec<Segment>,
    pub currents: CurrentTable,
    /// Capacitor parameters; the capacitance is replaced per evaluation.
    pub capacitor: CapacitorParams,
    pub harvest_power: f64,
    /// Steady-state voltage under the Off load, clamped to the regulator ceiling.
    pub initial_voltage: f64,
    /// The device parameters the segments were built from.
    pub lorawan: LorawanParams,
}

impl CycleSpec {
    /// A transmission, ending when the uplink has been sent.
    pub fn uplink(
        lorawan: &LorawanParams,
        currents: &CurrentTable,
        capacitor: &CapacitorParams,
        harvest_power: f64,
    ) -> Result<Self, AnalysisError> {
        let lorawan = LorawanParams {
            confirmed: false,
            ..lorawan.clone()
        };
        let segments = vec![Segment::new(DeviceState::Tx, lorawan.ul_time_on_air()?)];
        Self::build(CycleKind::Ul, segments, lorawan, currents, capacitor, harvest_power)
    }

    /// A transmission followed by reception of a downlink in RX1, ending
    /// when the downlink has been received.
    pub fn uplink_downlink(
        lorawan: &LorawanParams,
        currents: &CurrentTable,
        capacitor: &CapacitorParams,
        harvest_power: f64,
    ) -> Result<Self, AnalysisError> {
        let lorawan = LorawanParams {
            confirmed: true,
            dl_payload_bytes: CYCLE_DL_PAYLOAD_BYTES,
            ..lorawan.clone()
        };
        let mut segments = vec![Segment::new(DeviceState::Tx, lorawan.ul_time_on_air()?)];
        let after = next_states_after_tx(&lorawan, DownlinkReply::Rx1)?;
        let rx_end = after
            .iter()
            .position(|s| s.state == DeviceState::Rx)
            .expect("an RX1 reply always contains an Rx segment");
        segments.extend_from_slice(&after[..=rx_end]);
        Self::build(CycleKind::UlDl, segments, lorawan, currents, capacitor, harvest_power)
    }

    pub fn for_kind(
        kind: CycleKind,
        lorawan: &LorawanParams,
        currents: &CurrentTable,
        capacitor: &CapacitorParams,
        harvest_power: f64,
    ) -> Result<Self, AnalysisError> {
        match kind {
            CycleKind::Ul => Self::uplink(lorawan, currents, capacitor, harvest_power),
            CycleKind::UlDl => Self::uplink_downlink(lorawan, currents, capacitor, harvest_power),
        }
    }

    fn build(
        kind: CycleKind,
        segments: Vec<Segment>,
        lorawan: LorawanParams,
        currents: &CurrentTable,
        capacitor: &CapacitorParams,
        harvest_power: f64,
    ) -> Result<Self, AnalysisError> {
        let r_i = harvester_resistance(harvest_power, capacitor.rail_voltage)?;
        let off = currents.profile(DeviceState::Off).resistance(capacitor.rail_voltage)?;
        let dyn_ = SegmentDynamics::new(off, r_i, capacitor.rail_voltage, capacitor.capacitance);
        let initial_voltage = if dyn_.time_constant.is_none() {
            capacitor.initial_voltage
        } else {
            dyn_.steady_state.clamp(0.0, capacitor.max_voltage)
        };
        Ok(CycleSpec {
            kind,
            segments,
            currents: currents.clone(),
            capacitor: capacitor.clone(),
            harvest_power,
            initial_voltage,
            lorawan,
        })
    }

    pub fn duration(&self) -> SimDuration {
        self.segments.iter().map(|s| s.duration).sum()
    }

    fn harvest_resistance(&self) -> Result<Resistance, EnergyError> {
        harvester_resistance(self.harvest_power, self.capacitor.rail_voltage)
    }
}

/// Lowest voltage over the cycle for capacitance `c`.
///
/// Each segment relaxes monotonically toward its steady state, so the
/// minimum is attained at a segment boundary.
pub fn min_voltage_over_cycle(c: f64, cycle: &CycleSpec) -> Result<f64, AnalysisError> {
    let params = cycle.capacitor.with_capacitance(c);
    let (min, _) = voltage_extremes_along(
        cycle.initial_voltage,
        load_segments(&cycle.segments, &cycle.currents),
        cycle.harvest_resistance()?,
        &params,
    )?;
    Ok(min)
}

pub fn is_feasible(c: f64, cycle: &CycleSpec) -> Result<bool, AnalysisError> {
    Ok(min_voltage_over_cycle(c, cycle)? >= cycle.capacitor.v_th_low())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MinCapacitance {
    Feasible(f64),
    Infeasible,
}

impl MinCapacitance {
    pub fn value(self) -> Option<f64> {
        match self {
            MinCapacitance::Feasible(c) => Some(c),
            MinCapacitance::Infeasible => None,
        }
    }
}

impl fmt::Display for MinCapacitance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MinCapacitance::Feasible(c) => write!(f, "{c:e}"),
            MinCapacitance::Infeasible => f.write_str("infeasible"),
        }
    }
}

/// Search bracket and relative tolerance for [`min_capacitance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub rel_tol: f64,
}

impl Default for Bracket {
    fn default() -> Self {
        Bracket {
            lo: 1e-6,
            hi: 10.0,
            rel_tol: 0.01,
        }
    }
}

const MONOTONICITY_PROBES: usize = 25;

/// Smallest capacitance in the bracket that completes the cycle without
/// dropping below the low threshold, to within `rel_tol`.
///
/// Bisects in log space for a fixed number of steps, so the answer for a
/// given bracket depends only on where the feasibility boundary lies.
/// Feasibility is checked to be monotone at log-spaced probes first.
pub fn min_capacitance(cycle: &CycleSpec, bracket: Bracket) -> Result<MinCapacitance, AnalysisError> {
    let Bracket { lo, hi, rel_tol } = bracket;
    if !(lo > 0.0 && hi > lo && rel_tol > 0.0) {
        return Err(AnalysisError::Bracket { lo, hi });
    }
    let ratio = hi / lo;
    let mut first_feasible: Option<f64> = None;
    for k in 0..MONOTONICITY_PROBES {
        let c = lo * ratio.powf(k as f64 / (MONOTONICITY_PROBES - 1) as f64);
        match (is_feasible(c, cycle)?, first_feasible) {
            (true, None) => first_feasible = Some(c),
            (false, Some(f)) => {
                return Err(AnalysisError::NonMonotone {
                    feasible: f,
                    infeasible: c,
                })
            }
            _ => {}
        }
    }
    if !is_feasible(hi, cycle)? {
        return Ok(MinCapacitance::Infeasible);
    }
    if is_feasible(lo, cycle)? {
        return Ok(MinCapacitance::Feasible(lo));
    }
    let steps = (ratio.ln() / (1.0 + rel_tol).ln()).log2().ceil().max(0.0) as u32;
    let (mut a, mut b) = (lo, hi);
    for _ in 0..steps {
        let mid = (a * b).sqrt();
        if is_feasible(mid, cycle)? {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(MinCapacitance::Feasible(b))
}

/// Engine scenario that replays exactly one cycle of `cycle` at capacitance `c`.
pub fn single_cycle_scenario(c: f64, cycle: &CycleSpec) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.capacitor = CapacitorParams {
        capacitance: c,
        initial_voltage: cycle.initial_voltage,
        ..cycle.capacitor.clone()
    };
    cfg.currents = cycle.currents.clone();
    cfg.harvester = HarvestConfig::constant(cycle.harvest_power);
    cfg.lorawan = LorawanParams {
        smart_guard: false,
        max_transmissions: 1,
        ..cycle.lorawan.clone()
    };
    // a little past the cycle so that its final segment end is processed
    let duration = (cycle.duration() + SimDuration::from_millis(1)).as_secs_f64();
    cfg.scenario.duration = duration;
    cfg.scenario.packet_period = 2.0 * duration;
    cfg.scenario.first_packet_offset = Some(0.0);
    cfg.scenario.periodic_updates = false;
    cfg.scenario.off_packet_policy = OffPacketPolicy::Drop;
    cfg.trace.voltage = true;
    cfg
}

/// Result of replaying one cycle in the engine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineCycle {
    /// Whether the cycle's goal (UL sent, or DL received) was reached.
    pub completed: bool,
    /// Lowest traced voltage up to the end of the cycle.
    pub min_voltage: f64,
}

pub fn simulate_cycle(c: f64, cycle: &CycleSpec) -> Result<EngineCycle, AnalysisError> {
    let cfg = single_cycle_scenario(c, cycle);
    let out = engine::run(&cfg)?;
    let end = SimTime::ZERO + cycle.duration();
    let min_voltage = out
        .trace
        .as_deref()
        .unwrap_or_default()
        .iter()
        .filter(|r| r.time <= end)
        .map(|r| r.voltage)
        .fold(f64::INFINITY, f64::min);
    let completed = match cycle.kind {
        CycleKind::Ul => out.metrics.delivered_ul == 1,
        CycleKind::UlDl => out.metrics.acked == 1,
    };
    Ok(EngineCycle {
        completed,
        min_voltage,
    })
}

/// Axes of a minimum-capacitance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinCapGrid {
    pub data_rates: Vec<u8>,
    pub payloads: Vec<u32>,
    pub powers: Vec<f64>,
    pub kinds: Vec<CycleKind>,
}

impl Default for MinCapGrid {
    fn default() -> Self {
        MinCapGrid {
            data_rates: (0..=5).collect(),
            payloads: vec![10, 20, 30, 40, 50],
            powers: vec![0.0001, 0.001, 0.01],
            kinds: vec![CycleKind::Ul, CycleKind::UlDl],
        }
    }
}

impl MinCapGrid {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        for name in [
            ("data_rates", self.data_rates.is_empty()),
            ("payloads", self.payloads.is_empty()),
            ("powers", self.powers.is_empty()),
            ("kinds", self.kinds.is_empty()),
        ]
        .iter()
        .filter(|(_, empty)| *empty)
        .map(|(n, _)| n)
        {
            v.push(format!("mincap.{name} must not be empty"));
        }
        if let Some(dr) = self.data_rates.iter().find(|&&d| d > 5) {
            v.push(format!("mincap.data_rates entries must lie in 0..=5, got {dr}"));
        }
        if let Some(p) = self.powers.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
            v.push(format!("mincap.powers entries must be positive, got {p}"));
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinCapRow {
    pub data_rate: u8,
    pub payload_bytes: u32,
    pub power: f64,
    pub kind: CycleKind,
    pub min_c: MinCapacitance,
}

impl fmt::Display for MinCapRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.data_rate, self.payload_bytes, self.power, self.kind, self.min_c
        )
    }
}

/// Minimum capacitance at every grid point, in grid order.
pub fn min_capacitance_table(
    grid: &MinCapGrid,
    base: &ScenarioConfig,
    bracket: Bracket,
) -> Result<Vec<MinCapRow>, AnalysisError> {
    let mut points = Vec::new();
    for &dr in &grid.data_rates {
        for &payload in &grid.payloads {
            for &power in &grid.powers {
                for &kind in &grid.kinds {
                    points.push((dr, payload, power, kind));
                }
            }
        }
    }
    points
        .into_par_iter()
        .map(|(dr, payload, power, kind)| {
            let lorawan = LorawanParams {
                data_rate: dr,
                ul_payload_bytes: payload,
                ..base.lorawan.clone()
            };
            let cycle = CycleSpec::for_kind(kind, &lorawan, &base.currents, &base.capacitor, power)?;
            Ok(MinCapRow {
                data_rate: dr,
                payload_bytes: payload,
                power,
                kind,
                min_c: min_capacitance(&cycle, bracket)?,
            })
        })
        .collect()
}

/// Axes of a success-probability sweep; everything else comes from the base scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub capacitances: Vec<f64>,
    pub powers: Vec<f64>,
    pub data_rates: Vec<u8>,
    pub periods: Vec<f64>,
    pub confirmed: Vec<bool>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            capacitances: (0..=20).map(|k| 1e-3 * 10f64.powf(k as f64 / 10.0)).collect(),
            powers: vec![0.001],
            data_rates: vec![3],
            periods: vec![60.0, 300.0],
            confirmed: vec![false],
        }
    }
}

impl SweepGrid {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.capacitances.is_empty()
            || self.powers.is_empty()
            || self.data_rates.is_empty()
            || self.periods.is_empty()
            || self.confirmed.is_empty()
        {
            v.push("every sweep axis needs at least one value".to_string());
        }
        if let Some(c) = self.capacitances.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
            v.push(format!("sweep.capacitances entries must be positive, got {c}"));
        }
        if let Some(p) = self.powers.iter().find(|&&p| !(p >= 0.0 && p.is_finite())) {
            v.push(format!("sweep.powers entries must be non-negative, got {p}"));
        }
        if let Some(dr) = self.data_rates.iter().find(|&&d| d > 5) {
            v.push(format!("sweep.data_rates entries must lie in 0..=5, got {dr}"));
        }
        if let Some(p) = self.periods.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
            v.push(format!("sweep.periods entries must be positive, got {p}"));
        }
        v
    }

    /// Scenario for every grid point, in grid order.
    pub fn scenarios(&self, base: &ScenarioConfig) -> Vec<ScenarioConfig> {
        let mut out = Vec::new();
        for &confirmed in &self.confirmed {
            for &dr in &self.data_rates {
                for &period in &self.periods {
                    for &power in &self.powers {
                        for &c in &self.capacitances {
                            let mut cfg = base.clone();
                            cfg.capacitor.capacitance = c;
                            cfg.harvester = HarvestConfig {
                                power,
                                ..base.harvester.clone()
                            };
                            cfg.lorawan.data_rate = dr;
                            cfg.lorawan.confirmed = confirmed;
                            cfg.scenario.packet_period = period;
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Grid coordinates of a results row: its first five fields.
pub fn row_key(row: &str) -> String {
    row.splitn(6, ',').take(5).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub key: String,
    pub line: String,
    /// Set when the run failed or was flagged invalid.
    pub error: Option<String>,
}

/// Runs every grid point not already in `done` (keys from [`row_key`]).
///
/// Rows come back in grid order. A failed run yields a row with `nan`
/// success probabilities and the error attached; the sweep carries on.
pub fn sweep(grid: &SweepGrid, base: &ScenarioConfig, done: &HashSet<String>) -> Vec<SweepRow> {
    grid.scenarios(base)
        .into_par_iter()
        .filter_map(|cfg| {
            let key = row_key(&results_row(&cfg, &engine::Metrics::default()));
            if done.contains(&key) {
                return None;
            }
            Some(match engine::run(&cfg) {
                Ok(out) => SweepRow {
                    key,
                    line: results_row(&cfg, &out.metrics),
                    error: out.metrics.abort_reason.clone(),
                },
                Err(e) => SweepRow {
                    line: format!("{key},0,0,0,nan,nan"),
                    key,
                    error: Some(e.to_string()),
                },
            })
        })
        .collect()
}
