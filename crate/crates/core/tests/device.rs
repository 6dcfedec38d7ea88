mod common;

use capsim::device::{
    guard_horizon_segments, next_states_after_tx, rx_window_duration, smart_tx_guard,
    time_on_air, DownlinkReply, GuardHorizon,
};
use capsim::energy::{harvester_resistance, Capacitor, CapacitorParams};
use capsim::{CurrentTable, DeviceState, LorawanParams, SimDuration, SimTime};
use proptest::prelude::*;

#[test]
fn airtime_matches_reference_formula() {
    for sf in 7..=12u8 {
        for payload in 0..=255u32 {
            let got = time_on_air(payload, sf, 125_000).unwrap().as_secs_f64();
            let want = common::lora_airtime(payload, sf as u32, 125_000.0);
            assert!((got - want).abs() < 1e-6, "SF{sf} {payload} B: {got} vs {want}");
        }
    }
}

#[test]
fn airtime_frozen_values() {
    // 10 B application payload + 13 B MAC overhead
    assert_eq!(time_on_air(23, 7, 125_000).unwrap(), SimDuration::from_nanos(61_696_000));
    assert_eq!(time_on_air(23, 9, 125_000).unwrap(), SimDuration::from_nanos(205_824_000));
    assert_eq!(time_on_air(10, 9, 125_000).unwrap(), SimDuration::from_nanos(144_384_000));
    assert!(time_on_air(10, 13, 125_000).is_err());
}

#[test]
fn rx2_window_is_symbol_ratio_longer_than_rx1() {
    let rx1 = rx_window_duration(9, 8, 125_000).unwrap();
    let rx2 = rx_window_duration(12, 8, 125_000).unwrap();
    assert_eq!(rx2.as_nanos(), 8 * rx1.as_nanos());
}

#[test]
fn windows_open_at_configured_delays_for_every_data_rate() {
    for dr in 0..=5 {
        let p = LorawanParams { data_rate: dr, ..LorawanParams::default() };
        for reply in [DownlinkReply::None, DownlinkReply::Rx2] {
            let segs = next_states_after_tx(&p, reply).unwrap();
            let to_rx2: SimDuration = segs[..4].iter().map(|s| s.duration).sum();
            assert_eq!(to_rx2, SimDuration::from_secs(2), "DR{dr}");
        }
        let segs = next_states_after_tx(&p, DownlinkReply::Rx1).unwrap();
        assert!(segs.iter().all(|s| s.state != DeviceState::Tx));
        assert_eq!(segs.iter().filter(|s| s.state == DeviceState::Rx).count(), 1);
    }
}

fn brute_force_survives(cap: &Capacitor, horizon: &[capsim::device::Segment], currents: &CurrentTable) -> bool {
    let mut cap = cap.clone();
    let mut now = cap.last_update();
    for seg in horizon {
        cap.set_load(now, currents.profile(seg.state)).unwrap();
        now = now + seg.duration;
        cap.update(now).unwrap();
        if cap.is_depleted() {
            return false;
        }
    }
    true
}

proptest! {
    #[test]
    fn guard_agrees_with_brute_force(
        c in 1e-3f64..0.05,
        v0 in 1.81f64..3.3,
        dr in 0u8..=5,
        payload in 0u32..=50,
        full in any::<bool>(),
        power in prop::sample::select(vec![0.0, 1e-4, 1e-3, 1e-2]),
    ) {
        let params = CapacitorParams { capacitance: c, initial_voltage: v0, ..CapacitorParams::default() };
        let currents = CurrentTable::default();
        let cap = Capacitor::new(
            params,
            currents.profile(DeviceState::Sleep),
            harvester_resistance(power, 3.3).unwrap(),
        )
        .unwrap();
        let lw = LorawanParams { data_rate: dr, ul_payload_bytes: payload, ..LorawanParams::default() };
        let horizon = if full { GuardHorizon::FullCycle } else { GuardHorizon::TxOnly };
        let segs = guard_horizon_segments(&lw, horizon).unwrap();
        let decision = smart_tx_guard(&cap, &segs, &currents).unwrap();
        prop_assert_eq!(decision.proceeds(), brute_force_survives(&cap, &segs, &currents));
        prop_assert_eq!(cap.last_update(), SimTime::ZERO);
    }
}
