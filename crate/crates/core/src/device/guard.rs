use serde::{Deserialize, Serialize};

use super::{load_segments, next_states_after_tx, CurrentTable, DeviceError, DeviceState, DownlinkReply, LorawanParams, Segment};
use crate::energy::{voltage_extremes_along, Capacitor, EnergyError};

/// How much of the upcoming activity the guard checks before transmitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardHorizon {
    /// Only the transmission itself.
    TxOnly,
    /// Transmission plus both receive windows, assuming no downlink.
    FullCycle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GuardDecision {
    Proceed { predicted_min: f64 },
    Skip { predicted_min: f64 },
}

impl GuardDecision {
    pub fn proceeds(self) -> bool {
        matches!(self, GuardDecision::Proceed { .. })
    }
}

/// Segments the guard predicts over.
pub fn guard_horizon_segments(
    params: &LorawanParams,
    horizon: GuardHorizon,
) -> Result<Vec<Segment>, DeviceError> {
    let mut segs = vec![Segment::new(DeviceState::Tx, params.ul_time_on_air()?)];
    if horizon == GuardHorizon::FullCycle {
        segs.extend(next_states_after_tx(params, DownlinkReply::None)?);
    }
    Ok(segs)
}

/// Predicts the lowest voltage over `segments` from the capacitor's present
/// state and harvest, and skips the transmission if it would fall below the
/// low threshold. The capacitor must already be updated to the current time.
pub fn smart_tx_guard(
    capacitor: &Capacitor,
    segments: &[Segment],
    currents: &CurrentTable,
) -> Result<GuardDecision, EnergyError> {
    let (min, _) = voltage_extremes_along(
        capacitor.voltage(),
        load_segments(segments, currents),
        capacitor.harvest_resistance(),
        capacitor.params(),
    )?;
    Ok(if min < capacitor.params().v_th_low() {
        GuardDecision::Skip { predicted_min: min }
    } else {
        GuardDecision::Proceed { predicted_min: min }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{harvester_resistance, CapacitorParams, LoadProfile};

    fn cap(c: f64, v0: f64) -> Capacitor {
        let params = CapacitorParams {
            capacitance: c,
            initial_voltage: v0,
            ..CapacitorParams::default()
        };
        Capacitor::new(
            params,
            LoadProfile::new(DeviceState::Sleep, 5.6e-6),
            harvester_resistance(0.001, 3.3).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn full_capacitor_proceeds() {
        let p = LorawanParams::default();
        let segs = guard_horizon_segments(&p, GuardHorizon::TxOnly).unwrap();
        let d = smart_tx_guard(&cap(1.0, 3.3), &segs, &CurrentTable::default()).unwrap();
        assert!(d.proceeds());
    }

    #[test]
    fn marginal_capacitor_skips() {
        let p = LorawanParams::default();
        let segs = guard_horizon_segments(&p, GuardHorizon::TxOnly).unwrap();
        let d = smart_tx_guard(&cap(0.001, 1.81), &segs, &CurrentTable::default()).unwrap();
        assert!(!d.proceeds());
    }

    #[test]
    fn full_cycle_horizon_is_stricter() {
        let p = LorawanParams::default();
        let tx = guard_horizon_segments(&p, GuardHorizon::TxOnly).unwrap();
        let full = guard_horizon_segments(&p, GuardHorizon::FullCycle).unwrap();
        assert!(full.len() > tx.len());
        let c = cap(0.004, 2.6);
        let currents = CurrentTable::default();
        let a = match smart_tx_guard(&c, &tx, &currents).unwrap() {
            GuardDecision::Proceed { predicted_min } | GuardDecision::Skip { predicted_min } => predicted_min,
        };
        let b = match smart_tx_guard(&c, &full, &currents).unwrap() {
            GuardDecision::Proceed { predicted_min } | GuardDecision::Skip { predicted_min } => predicted_min,
        };
        assert!(b <= a);
    }
}
