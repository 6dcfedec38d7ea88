//! Closed-form model of the harvester, capacitor and load circuit.
//!
//! The harvester is an ideal source `E` behind a series resistance `r_i`,
//! the load a state-dependent resistance `R_L`, and the capacitor voltage
//! within a segment of constant `r_i` and `R_L` follows
//!
//! ```text
//! v(t) = v_inf + (V0 - v_inf) * exp(-t / (R_eq * C))
//! v_inf = E * R_eq / r_i,   R_eq = R_L * r_i / (R_L + r_i)
//! ```
//!
//! Zero harvested power and zero load current are open circuits and are
//! handled through their analytic limits rather than infinite floats.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::DeviceState;
use crate::time::{SimDuration, SimTime};
use crate::trace::{TraceRecord, TraceSink};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnergyError {
    #[error("harvested power must be non-negative and finite, got {0} W")]
    NegativePower(f64),
    #[error("load current must be non-negative and finite, got {0} A")]
    NegativeCurrent(f64),
    #[error("rail voltage must be positive, got {0} V")]
    NonPositiveRail(f64),
    #[error("elapsed time must be non-negative, got {0} s")]
    NegativeElapsed(f64),
    #[error("capacitor update requested at {now} but last update was at {last}")]
    TimeRegression { last: SimTime, now: SimTime },
    #[error("invalid capacitor parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
}

/// A resistance in ohms, or an open circuit (infinite resistance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Resistance {
    Ohms(f64),
    Open,
}

impl Resistance {
    pub fn ohms(self) -> Option<f64> {
        match self {
            Resistance::Ohms(r) => Some(r),
            Resistance::Open => None,
        }
    }

    pub fn is_open(self) -> bool {
        matches!(self, Resistance::Open)
    }
}

/// `r_i = E^2 / P`; zero power disconnects the harvester.
pub fn harvester_resistance(power_w: f64, rail_voltage: f64) -> Result<Resistance, EnergyError> {
    if !(power_w >= 0.0) || !power_w.is_finite() {
        return Err(EnergyError::NegativePower(power_w));
    }
    if !(rail_voltage > 0.0) {
        return Err(EnergyError::NonPositiveRail(rail_voltage));
    }
    if power_w == 0.0 {
        Ok(Resistance::Open)
    } else {
        Ok(Resistance::Ohms(rail_voltage * rail_voltage / power_w))
    }
}

/// `R_L = E / I_load`; zero current is an open circuit.
pub fn load_resistance(current_a: f64, rail_voltage: f64) -> Result<Resistance, EnergyError> {
    if !(current_a >= 0.0) || !current_a.is_finite() {
        return Err(EnergyError::NegativeCurrent(current_a));
    }
    if !(rail_voltage > 0.0) {
        return Err(EnergyError::NonPositiveRail(rail_voltage));
    }
    if current_a == 0.0 {
        Ok(Resistance::Open)
    } else {
        Ok(Resistance::Ohms(rail_voltage / current_a))
    }
}

/// Parallel combination of the load and harvester resistances.
pub fn equivalent_resistance(load: Resistance, harvest: Resistance) -> Resistance {
    match (load, harvest) {
        (Resistance::Ohms(rl), Resistance::Ohms(ri)) => Resistance::Ohms(rl * ri / (rl + ri)),
        (Resistance::Ohms(r), Resistance::Open) | (Resistance::Open, Resistance::Ohms(r)) => {
            Resistance::Ohms(r)
        }
        (Resistance::Open, Resistance::Open) => Resistance::Open,
    }
}

/// First-order dynamics of one constant-load, constant-harvest segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentDynamics {
    /// Voltage the capacitor tends to as `t -> inf`.
    pub steady_state: f64,
    /// `R_eq * C`; `None` when both branches are open and the voltage is frozen.
    pub time_constant: Option<f64>,
}

impl SegmentDynamics {
    pub fn new(load: Resistance, harvest: Resistance, rail_voltage: f64, capacitance: f64) -> Self {
        match (load, harvest) {
            (Resistance::Open, Resistance::Open) => SegmentDynamics {
                steady_state: f64::NAN,
                time_constant: None,
            },
            (Resistance::Ohms(rl), Resistance::Open) => SegmentDynamics {
                steady_state: 0.0,
                time_constant: Some(rl * capacitance),
            },
            (Resistance::Open, Resistance::Ohms(ri)) => SegmentDynamics {
                steady_state: rail_voltage,
                time_constant: Some(ri * capacitance),
            },
            (Resistance::Ohms(rl), Resistance::Ohms(ri)) => {
                let req = rl * ri / (rl + ri);
                SegmentDynamics {
                    // E * R_eq / r_i written without the cancellation-prone division
                    steady_state: rail_voltage * rl / (rl + ri),
                    time_constant: Some(req * capacitance),
                }
            }
        }
    }

    /// Unclamped voltage after `t` seconds starting from `v0`.
    pub fn voltage_after(&self, v0: f64, t: f64) -> f64 {
        match self.time_constant {
            None => v0,
            Some(tau) => {
                let decay = (-t / tau).exp();
                self.steady_state + (v0 - self.steady_state) * decay
            }
        }
    }

    /// Time at which the trajectory from `v0` reaches `target`, if `target`
    /// lies strictly between `v0` and the steady state.
    pub fn time_to_reach(&self, v0: f64, target: f64) -> Option<f64> {
        let tau = self.time_constant?;
        let vinf = self.steady_state;
        let between = (v0 > target && target > vinf) || (v0 < target && target < vinf);
        if !between {
            return None;
        }
        Some(tau * ((v0 - vinf) / (target - vinf)).ln())
    }
}

/// Attributes of a capacitor energy source. Thresholds are fractions of
/// `max_voltage`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacitorParams {
    /// Capacitance in farads.
    pub capacitance: f64,
    /// Regulated harvester voltage `E` in volts.
    pub rail_voltage: f64,
    /// Maximum supply voltage; charging saturates here.
    pub max_voltage: f64,
    pub v_th_low_fraction: f64,
    pub v_th_high_fraction: f64,
    pub initial_voltage: f64,
    /// Period of the voltage refresh in seconds.
    pub update_interval: f64,
}

impl Default for CapacitorParams {
    fn default() -> Self {
        CapacitorParams {
            capacitance: 0.006,
            rail_voltage: 3.3,
            max_voltage: 3.3,
            v_th_low_fraction: 1.8 / 3.3,
            v_th_high_fraction: 3.0 / 3.3,
            initial_voltage: 3.3,
            update_interval: 1.0,
        }
    }
}

impl CapacitorParams {
    pub fn v_th_low(&self) -> f64 {
        self.v_th_low_fraction * self.max_voltage
    }

    pub fn v_th_high(&self) -> f64 {
        self.v_th_high_fraction * self.max_voltage
    }

    pub fn with_capacitance(&self, capacitance: f64) -> Self {
        CapacitorParams {
            capacitance,
            ..self.clone()
        }
    }

    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.capacitance > 0.0) || !self.capacitance.is_finite() {
            v.push(format!("capacitance must be positive, got {}", self.capacitance));
        }
        if !(self.rail_voltage > 0.0) || !self.rail_voltage.is_finite() {
            v.push(format!("rail_voltage must be positive, got {}", self.rail_voltage));
        }
        if !(self.max_voltage > 0.0) || !self.max_voltage.is_finite() {
            v.push(format!("max_voltage must be positive, got {}", self.max_voltage));
        }
        if !(self.v_th_low_fraction > 0.0 && self.v_th_low_fraction < 1.0) {
            v.push(format!(
                "v_th_low_fraction must lie in (0, 1), got {}",
                self.v_th_low_fraction
            ));
        }
        if !(self.v_th_high_fraction > 0.0 && self.v_th_high_fraction <= 1.0) {
            v.push(format!(
                "v_th_high_fraction must lie in (0, 1], got {}",
                self.v_th_high_fraction
            ));
        }
        if !(self.v_th_low_fraction < self.v_th_high_fraction) {
            v.push(format!(
                "v_th_low_fraction ({}) must be below v_th_high_fraction ({})",
                self.v_th_low_fraction, self.v_th_high_fraction
            ));
        }
        if !(self.initial_voltage >= 0.0 && self.initial_voltage <= self.max_voltage) {
            v.push(format!(
                "initial_voltage must lie in [0, max_voltage = {}], got {}",
                self.max_voltage, self.initial_voltage
            ));
        }
        if !(self.update_interval > 0.0) || !self.update_interval.is_finite() {
            v.push(format!(
                "update_interval must be positive, got {}",
                self.update_interval
            ));
        }
        v
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(EnergyError::InvalidParams(v))
        }
    }
}

/// The load drawn in one device state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadProfile {
    pub state: DeviceState,
    /// Total current at the rail voltage, in amperes.
    pub current: f64,
}

impl LoadProfile {
    pub fn new(state: DeviceState, current: f64) -> Self {
        LoadProfile { state, current }
    }

    pub fn resistance(&self, rail_voltage: f64) -> Result<Resistance, EnergyError> {
        load_resistance(self.current, rail_voltage)
    }
}

/// Capacitor voltage after `elapsed` seconds in a segment, clamped to `[0, max_voltage]`.
pub fn propagate_voltage(
    v0: f64,
    elapsed: f64,
    load: Resistance,
    harvest: Resistance,
    params: &CapacitorParams,
) -> Result<f64, EnergyError> {
    if !(elapsed >= 0.0) {
        return Err(EnergyError::NegativeElapsed(elapsed));
    }
    let dynamics = SegmentDynamics::new(load, harvest, params.rail_voltage, params.capacitance);
    Ok(dynamics
        .voltage_after(v0, elapsed)
        .clamp(0.0, params.max_voltage))
}

/// `∫ v(t)^2 / R_L dt` over `[0, t]` for `v = a + b e^{-t/tau}`.
fn exp_square_integral(a: f64, b: f64, tau: f64, t: f64) -> f64 {
    let one_minus = -(-t / tau).exp_m1();
    let one_minus_2 = -(-2.0 * t / tau).exp_m1();
    a * a * t + 2.0 * a * b * tau * one_minus + b * b * 0.5 * tau * one_minus_2
}

/// Energy in joules delivered to the load during a segment of `duration`
/// seconds that starts at `v0`.
///
/// The load is the resistance `R_L = E / load_current`, so the current it
/// draws is `v(t) / R_L`; energy exchanged with the harvester is excluded.
/// Segments that saturate at `max_voltage` are integrated piecewise.
pub fn compute_load_energy_consumption(
    v0: f64,
    load_current: f64,
    duration: f64,
    harvest: Resistance,
    params: &CapacitorParams,
) -> Result<f64, EnergyError> {
    if !(duration >= 0.0) {
        return Err(EnergyError::NegativeElapsed(duration));
    }
    let load = load_resistance(load_current, params.rail_voltage)?;
    let Some(rl) = load.ohms() else {
        return Ok(0.0);
    };
    if duration == 0.0 {
        return Ok(0.0);
    }
    let dyn_ = SegmentDynamics::new(load, harvest, params.rail_voltage, params.capacitance);
    let tau = dyn_.time_constant.expect("finite load always has a time constant");
    let vmax = params.max_voltage;
    let vinf = dyn_.steady_state;

    // time spent below the regulator ceiling before saturating
    let free_time = if v0 >= vmax && vinf >= vmax {
        0.0
    } else if vinf > vmax {
        dyn_.time_to_reach(v0, vmax).unwrap_or(0.0).min(duration)
    } else {
        duration
    };
    let free = exp_square_integral(vinf, v0 - vinf, tau, free_time);
    let clamped = vmax * vmax * (duration - free_time);
    Ok((free + clamped) / rl)
}

/// Which hysteresis threshold was crossed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdKind {
    /// Voltage fell below `V_th_low`.
    Depleted,
    /// Voltage rose to `V_th_high` while depleted.
    Recharged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdEvent {
    pub kind: ThresholdKind,
    /// Instant of the crossing, rounded up to the next nanosecond.
    pub at: SimTime,
}

/// Snapshot of a capacitor's mutable state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapacitorState {
    pub voltage: f64,
    pub last_update: SimTime,
    pub depleted: bool,
}

/// A capacitor energy source driven by piecewise-constant load and harvest.
///
/// The voltage is advanced lazily: [`Capacitor::update`] applies the closed
/// form over everything since the previous update, using the load and
/// harvester resistance in effect since then. Call it (or one of the
/// setters, which call it) before every change of load or harvest.
#[derive(Debug, Clone)]
pub struct Capacitor {
    params: CapacitorParams,
    voltage: f64,
    last_update: SimTime,
    depleted: bool,
    load: LoadProfile,
    load_r: Resistance,
    harvest: Resistance,
    load_energy: f64,
}

impl Capacitor {
    pub fn new(
        params: CapacitorParams,
        load: LoadProfile,
        harvest: Resistance,
    ) -> Result<Self, EnergyError> {
        params.validate()?;
        let load_r = load.resistance(params.rail_voltage)?;
        let voltage = params.initial_voltage;
        // a device starting between the thresholds is considered operational
        let depleted = voltage < params.v_th_low();
        Ok(Capacitor {
            params,
            voltage,
            last_update: SimTime::ZERO,
            depleted,
            load,
            load_r,
            harvest,
            load_energy: 0.0,
        })
    }

    pub fn params(&self) -> &CapacitorParams {
        &self.params
    }

    pub fn voltage(&self) -> f64 {
        self.voltage
    }

    pub fn last_update(&self) -> SimTime {
        self.last_update
    }

    pub fn load(&self) -> LoadProfile {
        self.load
    }

    pub fn load_resistance(&self) -> Resistance {
        self.load_r
    }

    pub fn harvest_resistance(&self) -> Resistance {
        self.harvest
    }

    /// Energy delivered to the load since construction, in joules.
    pub fn load_energy(&self) -> f64 {
        self.load_energy
    }

    pub fn state(&self) -> CapacitorState {
        CapacitorState {
            voltage: self.voltage,
            last_update: self.last_update,
            depleted: self.depleted,
        }
    }

    /// Hysteresis-aware depletion flag: a voltage between the thresholds
    /// keeps whatever flag it had.
    pub fn is_depleted(&self) -> bool {
        self.depleted
    }

    fn dynamics(&self) -> SegmentDynamics {
        SegmentDynamics::new(
            self.load_r,
            self.harvest,
            self.params.rail_voltage,
            self.params.capacitance,
        )
    }

    fn active_threshold(&self) -> f64 {
        if self.depleted {
            self.params.v_th_high()
        } else {
            self.params.v_th_low()
        }
    }

    /// Offset from the last update at which the active threshold is
    /// crossed under the current segment, if it ever is.
    fn crossing_offset(&self) -> Option<SimDuration> {
        let target = self.active_threshold();
        let dyn_ = self.dynamics();
        // sitting exactly on the threshold and heading past it
        let heading_past = match dyn_.time_constant {
            Some(_) if self.depleted => self.voltage >= target && dyn_.steady_state > self.voltage,
            Some(_) => self.voltage <= target && dyn_.steady_state < self.voltage,
            None => false,
        };
        if heading_past {
            return Some(SimDuration::from_nanos(1));
        }
        let t = dyn_.time_to_reach(self.voltage, target)?;
        // recharge only counts if the regulator ceiling lets us get there
        if self.depleted && target > self.params.max_voltage {
            return None;
        }
        Some(SimDuration::from_secs_f64_ceil(t).max(SimDuration::from_nanos(1)))
    }

    /// Absolute time of the next threshold crossing under the current
    /// load and harvest, or `None` if the trajectory never reaches it.
    pub fn next_crossing(&self) -> Option<SimTime> {
        self.crossing_offset().map(|d| self.last_update + d)
    }

    /// Advances the voltage to `now` and re-evaluates the depleted flag.
    ///
    /// Returns the threshold transition, if one happened in `(last_update, now]`.
    pub fn update(&mut self, now: SimTime) -> Result<Option<ThresholdEvent>, EnergyError> {
        let elapsed = now
            .checked_since(self.last_update)
            .ok_or(EnergyError::TimeRegression {
                last: self.last_update,
                now,
            })?;
        if elapsed.is_zero() {
            return Ok(None);
        }
        let start = self.last_update;
        let secs = elapsed.as_secs_f64();
        let crossing = self.crossing_offset().filter(|&d| d <= elapsed);
        let v0 = self.voltage;
        self.load_energy +=
            compute_load_energy_consumption(v0, self.load.current, secs, self.harvest, &self.params)?;
        self.voltage = propagate_voltage(v0, secs, self.load_r, self.harvest, &self.params)?;
        self.last_update = now;

        let event = if !self.depleted {
            if crossing.is_some() || self.voltage < self.params.v_th_low() {
                self.depleted = true;
                Some(ThresholdKind::Depleted)
            } else {
                None
            }
        } else if crossing.is_some() || self.voltage >= self.params.v_th_high() {
            self.depleted = false;
            Some(ThresholdKind::Recharged)
        } else {
            None
        };
        Ok(event.map(|kind| ThresholdEvent {
            kind,
            at: crossing.map_or(now, |d| start + d),
        }))
    }

    /// Updates to `now`, then switches the load.
    pub fn set_load(
        &mut self,
        now: SimTime,
        load: LoadProfile,
    ) -> Result<Option<ThresholdEvent>, EnergyError> {
        let event = self.update(now)?;
        self.load_r = load.resistance(self.params.rail_voltage)?;
        self.load = load;
        Ok(event)
    }

    /// Updates to `now`, then switches the harvester resistance.
    pub fn set_harvest(
        &mut self,
        now: SimTime,
        harvest: Resistance,
    ) -> Result<Option<ThresholdEvent>, EnergyError> {
        let event = self.update(now)?;
        self.harvest = harvest;
        Ok(event)
    }

    /// Appends the current `(time, voltage, state)` to a trace.
    pub fn track_voltage(&self, sink: &mut dyn TraceSink) -> std::io::Result<()> {
        sink.record(TraceRecord {
            time: self.last_update,
            voltage: self.voltage,
            state: self.load.state,
        })
    }
}

/// Minimum and final voltage along a sequence of `(load, duration)` segments
/// under constant harvest, computed with the closed form.
///
/// Each segment is monotone toward its steady state, so the minimum over a
/// segment is at one of its endpoints.
pub fn voltage_extremes_along<I>(
    v0: f64,
    segments: I,
    harvest: Resistance,
    params: &CapacitorParams,
) -> Result<(f64, f64), EnergyError>
where
    I: IntoIterator<Item = (LoadProfile, SimDuration)>,
{
    let mut v = v0;
    let mut min = v0;
    for (load, duration) in segments {
        let rl = load.resistance(params.rail_voltage)?;
        v = propagate_voltage(v, duration.as_secs_f64(), rl, harvest, params)?;
        min = min.min(v);
    }
    Ok((min, v))
}
