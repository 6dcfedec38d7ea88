//! LoRaWAN Class-A end-device model: load states, airtime, receive
//! windows, duty-cycle budgets and the pre-transmission energy guard.

mod duty_cycle;
mod guard;
mod lora;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::energy::LoadProfile;
use crate::time::SimDuration;

pub use duty_cycle::{DutyCycleBudget, GateDecision};
pub use guard::{guard_horizon_segments, smart_tx_guard, GuardDecision, GuardHorizon};
pub use lora::{
    next_states_after_tx, rx_window_duration, sf_for_data_rate, symbol_time, time_on_air,
    DownlinkReply, LorawanParams, RX2_SPREADING_FACTOR,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("spreading factor {0} outside 7..=12")]
    SpreadingFactor(u8),
    #[error("data rate {0} outside 0..=5")]
    DataRate(u8),
    #[error("unknown device state '{0}'")]
    UnknownState(String),
    #[error("invalid LoRaWAN parameters: {}", .0.join("; "))]
    InvalidParams(Vec<String>),
}

/// Load state of the end device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceState {
    Off,
    TurnOn,
    Sleep,
    Tx,
    Idle,
    Standby,
    Rx,
}

impl DeviceState {
    pub const ALL: [DeviceState; 7] = [
        DeviceState::Off,
        DeviceState::TurnOn,
        DeviceState::Sleep,
        DeviceState::Tx,
        DeviceState::Idle,
        DeviceState::Standby,
        DeviceState::Rx,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DeviceState::Off => "Off",
            DeviceState::TurnOn => "TurnOn",
            DeviceState::Sleep => "Sleep",
            DeviceState::Tx => "Tx",
            DeviceState::Idle => "Idle",
            DeviceState::Standby => "Standby",
            DeviceState::Rx => "Rx",
        }
    }

    /// Off and TurnOn both mean the radio cannot be used.
    pub fn is_powered_down(self) -> bool {
        matches!(self, DeviceState::Off | DeviceState::TurnOn)
    }
}

impl fmt::Display for DeviceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DeviceState {
    type Err = DeviceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DeviceState::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| DeviceError::UnknownState(s.to_string()))
    }
}

/// Total current drawn in each state, in amperes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurrentTable {
    pub off: f64,
    pub turn_on: f64,
    pub sleep: f64,
    pub tx: f64,
    pub idle: f64,
    pub standby: f64,
    pub rx: f64,
}

impl Default for CurrentTable {
    fn default() -> Self {
        CurrentTable {
            off: 5.5e-6,
            turn_on: 15e-3,
            sleep: 5.6e-6,
            tx: 28.011e-3,
            idle: 7e-6,
            standby: 10.5055e-3,
            rx: 11.011e-3,
        }
    }
}

impl CurrentTable {
    pub fn current(&self, state: DeviceState) -> f64 {
        match state {
            DeviceState::Off => self.off,
            DeviceState::TurnOn => self.turn_on,
            DeviceState::Sleep => self.sleep,
            DeviceState::Tx => self.tx,
            DeviceState::Idle => self.idle,
            DeviceState::Standby => self.standby,
            DeviceState::Rx => self.rx,
        }
    }

    pub fn profile(&self, state: DeviceState) -> LoadProfile {
        LoadProfile::new(state, self.current(state))
    }

    pub fn violations(&self) -> Vec<String> {
        DeviceState::ALL
            .into_iter()
            .filter(|&s| !(self.current(s) >= 0.0 && self.current(s).is_finite()))
            .map(|s| format!("current for {s} must be non-negative, got {}", self.current(s)))
            .collect()
    }
}

/// One constant-load stretch of a device timeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub state: DeviceState,
    pub duration: SimDuration,
}

impl Segment {
    pub fn new(state: DeviceState, duration: SimDuration) -> Self {
        Segment { state, duration }
    }
}

/// Maps segments to `(load, duration)` pairs for the voltage helpers.
pub fn load_segments<'a>(
    segments: &'a [Segment],
    currents: &'a CurrentTable,
) -> impl Iterator<Item = (LoadProfile, SimDuration)> + 'a {
    segments
        .iter()
        .map(move |s| (currents.profile(s.state), s.duration))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_names_round_trip() {
        for s in DeviceState::ALL {
            assert_eq!(s.name().parse::<DeviceState>().unwrap(), s);
        }
        assert!("Hibernate".parse::<DeviceState>().is_err());
    }

    #[test]
    fn default_currents() {
        let c = CurrentTable::default();
        assert_eq!(c.current(DeviceState::Tx), 28.011e-3);
        assert_eq!(c.current(DeviceState::Off), 5.5e-6);
        assert_eq!(c.current(DeviceState::Standby), 10.5055e-3);
        assert!(c.violations().is_empty());
        let bad = CurrentTable { rx: -1.0, ..c };
        assert_eq!(bad.violations().len(), 1);
    }
}
