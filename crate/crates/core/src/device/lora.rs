use serde::{Deserialize, Serialize};

use super::{DeviceError, DeviceState, GuardHorizon, Segment};
use crate::time::SimDuration;

/// RX2 always runs at DR0.
pub const RX2_SPREADING_FACTOR: u8 = 12;

/// Symbols in the preamble of a LoRa frame, times four.
const PREAMBLE_QUARTER_SYMBOLS: u64 = 4 * 8 + 17;

/// DR n at 125 kHz uses SF 12 - n.
pub fn sf_for_data_rate(dr: u8) -> Result<u8, DeviceError> {
    if dr > 5 {
        return Err(DeviceError::DataRate(dr));
    }
    Ok(12 - dr)
}

fn check_sf(sf: u8) -> Result<(), DeviceError> {
    if (7..=12).contains(&sf) {
        Ok(())
    } else {
        Err(DeviceError::SpreadingFactor(sf))
    }
}

/// `2^sf / bandwidth`.
pub fn symbol_time(sf: u8, bandwidth_hz: u32) -> Result<SimDuration, DeviceError> {
    check_sf(sf)?;
    Ok(quarter_symbols_to_duration(4, sf, bandwidth_hz))
}

fn quarter_symbols_to_duration(quarters: u64, sf: u8, bandwidth_hz: u32) -> SimDuration {
    // exact for the usual bandwidths; rounds up otherwise
    let num = quarters as u128 * (1u128 << sf) * 1_000_000_000;
    let den = 4 * bandwidth_hz as u128;
    SimDuration::from_nanos(num.div_ceil(den) as u64)
}

/// Airtime of a LoRa frame with explicit header, CRC on and coding rate 4/5.
/// Low-data-rate optimization is on for SF11 and SF12.
pub fn time_on_air(payload_bytes: u32, sf: u8, bandwidth_hz: u32) -> Result<SimDuration, DeviceError> {
    check_sf(sf)?;
    let sf_i = sf as i64;
    let de = if sf >= 11 { 1 } else { 0 };
    let cr = 1;
    let num = 8 * payload_bytes as i64 - 4 * sf_i + 28 + 16;
    let den = 4 * (sf_i - 2 * de);
    let blocks = if num > 0 { (num + den - 1) / den } else { 0 };
    let payload_symbols = 8 + blocks * (cr + 4);
    let quarters = PREAMBLE_QUARTER_SYMBOLS + 4 * payload_symbols as u64;
    Ok(quarter_symbols_to_duration(quarters, sf, bandwidth_hz))
}

/// Length of a receive window that detects no preamble.
pub fn rx_window_duration(sf: u8, n_symbols: u32, bandwidth_hz: u32) -> Result<SimDuration, DeviceError> {
    check_sf(sf)?;
    Ok(quarter_symbols_to_duration(4 * n_symbols as u64, sf, bandwidth_hz))
}

/// Radio and MAC parameters of a Class-A device and its gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LorawanParams {
    pub data_rate: u8,
    pub bandwidth_hz: u32,
    /// Uplink channels in MHz; they share one aggregated budget.
    pub ul_channels_mhz: Vec<f64>,
    pub dl_channel_mhz: f64,
    pub ul_duty_cycle: f64,
    pub dl_duty_cycle: f64,
    /// Seconds from end of Tx to the opening of RX1.
    pub rx1_delay: f64,
    /// Seconds from end of Tx to the opening of RX2.
    pub rx2_delay: f64,
    pub rx_window_symbols: u32,
    /// Brief Standby after Tx and after the last receive window, in seconds.
    pub standby_duration: f64,
    pub turn_on_duration: f64,
    pub max_transmissions: u32,
    pub confirmed: bool,
    pub ul_payload_bytes: u32,
    pub dl_payload_bytes: u32,
    /// Frame header, port and MIC added to application payloads.
    pub mac_overhead_bytes: u32,
    pub smart_guard: bool,
    pub guard_horizon: GuardHorizon,
}

impl Default for LorawanParams {
    fn default() -> Self {
        LorawanParams {
            data_rate: 3,
            bandwidth_hz: 125_000,
            ul_channels_mhz: vec![868.1, 868.3, 868.5],
            dl_channel_mhz: 869.525,
            ul_duty_cycle: 0.01,
            dl_duty_cycle: 0.1,
            rx1_delay: 1.0,
            rx2_delay: 2.0,
            rx_window_symbols: 8,
            standby_duration: 0.01,
            turn_on_duration: 0.3,
            max_transmissions: 1,
            confirmed: false,
            ul_payload_bytes: 10,
            dl_payload_bytes: 0,
            mac_overhead_bytes: 13,
            smart_guard: true,
            guard_horizon: GuardHorizon::TxOnly,
        }
    }
}

impl LorawanParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.data_rate > 5 {
            v.push(format!("data_rate must lie in 0..=5, got {}", self.data_rate));
        }
        if self.bandwidth_hz == 0 {
            v.push("bandwidth_hz must be positive".to_string());
        }
        if self.ul_channels_mhz.is_empty() {
            v.push("ul_channels_mhz must list at least one channel".to_string());
        }
        for (name, d) in [("ul_duty_cycle", self.ul_duty_cycle), ("dl_duty_cycle", self.dl_duty_cycle)] {
            if !(d > 0.0 && d <= 1.0) {
                v.push(format!("{name} must lie in (0, 1], got {d}"));
            }
        }
        if !(self.standby_duration >= 0.0) {
            v.push(format!("standby_duration must be non-negative, got {}", self.standby_duration));
        }
        if !(self.rx1_delay > self.standby_duration) {
            v.push(format!(
                "rx1_delay ({}) must exceed standby_duration ({})",
                self.rx1_delay, self.standby_duration
            ));
        }
        if !(self.rx2_delay > self.rx1_delay) {
            v.push(format!(
                "rx2_delay ({}) must exceed rx1_delay ({})",
                self.rx2_delay, self.rx1_delay
            ));
        }
        if self.rx_window_symbols == 0 {
            v.push("rx_window_symbols must be at least 1".to_string());
        }
        if !(self.turn_on_duration >= 0.0) {
            v.push(format!("turn_on_duration must be non-negative, got {}", self.turn_on_duration));
        }
        if self.max_transmissions == 0 {
            v.push("max_transmissions must be at least 1".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(DeviceError::InvalidParams(v))
        }
    }

    pub fn ul_sf(&self) -> Result<u8, DeviceError> {
        sf_for_data_rate(self.data_rate)
    }

    pub fn ul_phy_bytes(&self) -> u32 {
        self.ul_payload_bytes + self.mac_overhead_bytes
    }

    pub fn dl_phy_bytes(&self) -> u32 {
        self.dl_payload_bytes + self.mac_overhead_bytes
    }

    pub fn ul_time_on_air(&self) -> Result<SimDuration, DeviceError> {
        time_on_air(self.ul_phy_bytes(), self.ul_sf()?, self.bandwidth_hz)
    }

    pub fn dl_time_on_air(&self, window: DownlinkReply) -> Result<SimDuration, DeviceError> {
        let sf = match window {
            DownlinkReply::Rx2 => RX2_SPREADING_FACTOR,
            _ => self.ul_sf()?,
        };
        time_on_air(self.dl_phy_bytes(), sf, self.bandwidth_hz)
    }

    pub fn standby(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.standby_duration)
    }

    pub fn turn_on(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.turn_on_duration)
    }
}

/// Where, if anywhere, the gateway's downlink lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownlinkReply {
    None,
    Rx1,
    Rx2,
}

/// Device timeline from the end of an uplink until it falls back to Sleep.
///
/// Empty windows are spent in Standby for `rx_window_symbols` symbols; a
/// received downlink keeps the radio in Rx for the downlink airtime. A
/// reply in RX1 means RX2 is never opened. Sleep after the last segment is
/// implicit.
pub fn next_states_after_tx(
    params: &LorawanParams,
    reply: DownlinkReply,
) -> Result<Vec<Segment>, DeviceError> {
    let bw = params.bandwidth_hz;
    let ul_sf = params.ul_sf()?;
    let short = params.standby();
    let rx1_delay = SimDuration::from_secs_f64(params.rx1_delay);
    let rx2_delay = SimDuration::from_secs_f64(params.rx2_delay);

    let mut out = Vec::with_capacity(7);
    let mut push = |state, duration: SimDuration| {
        if !duration.is_zero() {
            out.push(Segment::new(state, duration));
        }
    };
    push(DeviceState::Standby, short);
    push(DeviceState::Idle, rx1_delay.saturating_sub(short));

    if reply == DownlinkReply::Rx1 {
        push(DeviceState::Rx, params.dl_time_on_air(DownlinkReply::Rx1)?);
        push(DeviceState::Standby, short);
        return Ok(out);
    }

    let rx1 = rx_window_duration(ul_sf, params.rx_window_symbols, bw)?;
    push(DeviceState::Standby, rx1);
    push(
        DeviceState::Idle,
        rx2_delay.saturating_sub(rx1_delay).saturating_sub(rx1),
    );
    if reply == DownlinkReply::Rx2 {
        push(DeviceState::Rx, params.dl_time_on_air(DownlinkReply::Rx2)?);
    } else {
        push(
            DeviceState::Standby,
            rx_window_duration(RX2_SPREADING_FACTOR, params.rx_window_symbols, bw)?,
        );
    }
    push(DeviceState::Standby, short);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ms(d: SimDuration) -> f64 {
        d.as_secs_f64() * 1e3
    }

    #[test]
    fn symbol_times() {
        assert_eq!(symbol_time(12, 125_000).unwrap(), SimDuration::from_nanos(32_768_000));
        assert_eq!(symbol_time(9, 125_000).unwrap(), SimDuration::from_nanos(4_096_000));
        assert!(symbol_time(6, 125_000).is_err());
        assert!(symbol_time(13, 125_000).is_err());
    }

    #[test]
    fn window_durations() {
        assert_eq!(rx_window_duration(9, 8, 125_000).unwrap(), SimDuration::from_nanos(32_768_000));
        assert_eq!(rx_window_duration(12, 8, 125_000).unwrap(), SimDuration::from_nanos(262_144_000));
        let r = rx_window_duration(12, 8, 125_000).unwrap().as_nanos()
            / rx_window_duration(9, 8, 125_000).unwrap().as_nanos();
        assert_eq!(r, 8);
    }

    #[test]
    fn data_rate_mapping() {
        assert_eq!(sf_for_data_rate(0).unwrap(), 12);
        assert_eq!(sf_for_data_rate(5).unwrap(), 7);
        assert!(sf_for_data_rate(6).is_err());
    }

    #[test]
    fn unconfirmed_opens_both_windows() {
        let p = LorawanParams::default();
        let segs = next_states_after_tx(&p, DownlinkReply::None).unwrap();
        let states: Vec<_> = segs.iter().map(|s| s.state).collect();
        use DeviceState::*;
        assert_eq!(states, vec![Standby, Idle, Standby, Idle, Standby, Standby]);
        // RX1 opens at exactly rx1_delay, RX2 at rx2_delay
        let rx1_open: SimDuration = segs[..2].iter().map(|s| s.duration).sum();
        let rx2_open: SimDuration = segs[..4].iter().map(|s| s.duration).sum();
        assert_eq!(rx1_open, SimDuration::from_secs(1));
        assert_eq!(rx2_open, SimDuration::from_secs(2));
        assert!((ms(segs[4].duration) - 262.144).abs() < 1e-9);
    }

    #[test]
    fn reply_in_rx1_skips_rx2() {
        let p = LorawanParams { confirmed: true, ..LorawanParams::default() };
        let segs = next_states_after_tx(&p, DownlinkReply::Rx1).unwrap();
        use DeviceState::*;
        let states: Vec<_> = segs.iter().map(|s| s.state).collect();
        assert_eq!(states, vec![Standby, Idle, Rx, Standby]);
        assert_eq!(segs[2].duration, p.dl_time_on_air(DownlinkReply::Rx1).unwrap());
    }

    #[test]
    fn reply_in_rx2_receives_at_sf12() {
        let p = LorawanParams { confirmed: true, ..LorawanParams::default() };
        let segs = next_states_after_tx(&p, DownlinkReply::Rx2).unwrap();
        use DeviceState::*;
        let states: Vec<_> = segs.iter().map(|s| s.state).collect();
        assert_eq!(states, vec![Standby, Idle, Standby, Idle, Rx, Standby]);
        assert_eq!(segs[4].duration, time_on_air(13, 12, 125_000).unwrap());
    }

    #[test]
    fn validation_lists_all_problems() {
        let p = LorawanParams {
            data_rate: 9,
            rx2_delay: 0.5,
            ul_duty_cycle: 0.0,
            ..LorawanParams::default()
        };
        assert_eq!(p.violations().len(), 3);
    }
}
