use crate::time::{SimDuration, SimTime};

/// Outcome of asking a budget whether a transmission may start now.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Allowed,
    BlockedUntil(SimTime),
}

/// Per-band duty-cycle budget. After a transmission of airtime `T` starting
/// at `t0` the band is closed until `t0 + T / fraction`, i.e. for
/// `T * (1 / fraction - 1)` after the transmission ends.
#[derive(Debug, Clone, PartialEq)]
pub struct DutyCycleBudget {
    fraction: f64,
    blocked_until: SimTime,
    airtime: SimDuration,
    max_airtime: SimDuration,
}

impl DutyCycleBudget {
    /// `fraction` must lie in `(0, 1]`.
    pub fn new(fraction: f64) -> Self {
        assert!(fraction > 0.0 && fraction <= 1.0, "duty cycle {fraction} outside (0, 1]");
        DutyCycleBudget {
            fraction,
            blocked_until: SimTime::ZERO,
            airtime: SimDuration::ZERO,
            max_airtime: SimDuration::ZERO,
        }
    }

    pub fn gate(&self, now: SimTime) -> GateDecision {
        if now >= self.blocked_until {
            GateDecision::Allowed
        } else {
            GateDecision::BlockedUntil(self.blocked_until)
        }
    }

    /// Books a transmission. The caller must have checked [`Self::gate`].
    pub fn register(&mut self, start: SimTime, toa: SimDuration) {
        debug_assert!(start >= self.blocked_until);
        let period_ns = (toa.as_nanos() as f64 / self.fraction).ceil() as u64;
        self.blocked_until = start + SimDuration::from_nanos(period_ns.max(toa.as_nanos()));
        self.airtime += toa;
        self.max_airtime = self.max_airtime.max(toa);
    }

    pub fn blocked_until(&self) -> SimTime {
        self.blocked_until
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    /// Total airtime booked so far.
    pub fn airtime(&self) -> SimDuration {
        self.airtime
    }

    pub fn max_airtime(&self) -> SimDuration {
        self.max_airtime
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_second_on_one_percent_blocks_99_s_after_end() {
        let mut b = DutyCycleBudget::new(0.01);
        b.register(SimTime::ZERO, SimDuration::from_secs(1));
        assert_eq!(b.blocked_until(), SimTime::from_secs_f64(100.0));
        assert_eq!(
            b.gate(SimTime::from_secs_f64(50.0)),
            GateDecision::BlockedUntil(SimTime::from_secs_f64(100.0))
        );
        assert_eq!(b.gate(SimTime::from_secs_f64(100.0)), GateDecision::Allowed);
    }

    #[test]
    fn ten_percent_blocks_9_s_after_end() {
        let mut b = DutyCycleBudget::new(0.1);
        b.register(SimTime::ZERO, SimDuration::from_secs(1));
        assert_eq!(b.blocked_until(), SimTime::from_secs_f64(10.0));
    }

    #[test]
    fn requests_60_s_apart_with_short_airtime_pass() {
        let mut b = DutyCycleBudget::new(0.01);
        let toa = SimDuration::from_millis(300);
        b.register(SimTime::ZERO, toa);
        assert_eq!(b.gate(SimTime::from_secs_f64(60.0)), GateDecision::Allowed);
        b.register(SimTime::from_secs_f64(60.0), toa);
        assert_eq!(b.airtime(), SimDuration::from_millis(600));
    }
}
