//! Deterministic discrete-event engine for a single end device.
//!
//! Events run in `(time, sequence)` order. The capacitor is brought up to
//! date at the start of every event, so each state change sees the exact
//! voltage, and threshold crossings are scheduled as events of their own at
//! the analytic crossing instant.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{
    guard_horizon_segments, next_states_after_tx, smart_tx_guard, CurrentTable, DeviceError,
    DeviceState, DownlinkReply, DutyCycleBudget, GateDecision, LorawanParams, Segment,
};
use crate::energy::{
    harvester_resistance, Capacitor, CapacitorParams, EnergyError, ThresholdKind,
};
use crate::harvester::{HarvestConfig, HarvestError, HarvestKind, HarvestSource};
use crate::time::{SimDuration, SimTime};
use crate::trace::TraceRecord;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid scenario: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Harvest(#[from] HarvestError),
    #[error("success probability undefined: no packets generated")]
    UndefinedRate,
}

/// What happens to a packet generated while the device is off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffPacketPolicy {
    /// Counted as generated and failed.
    Drop,
    /// Held until the device is back on; a newer packet replaces it.
    Defer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    /// Simulated seconds.
    pub duration: f64,
    /// Seconds between application packets.
    pub packet_period: f64,
    /// Time of the first packet; drawn uniformly from `[0, packet_period)` when unset.
    pub first_packet_offset: Option<f64>,
    pub seed: u64,
    pub off_packet_policy: OffPacketPolicy,
    /// Refresh the voltage every `update_interval` even without state changes.
    pub periodic_updates: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            duration: 21_600.0,
            packet_period: 60.0,
            first_packet_offset: None,
            seed: 1,
            off_packet_policy: OffPacketPolicy::Drop,
            periodic_updates: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceSettings {
    /// Collect the `(time, voltage, state)` trace.
    pub voltage: bool,
}

/// Everything a run needs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub scenario: RunSettings,
    pub capacitor: CapacitorParams,
    pub harvester: HarvestConfig,
    pub lorawan: LorawanParams,
    pub currents: CurrentTable,
    pub trace: TraceSettings,
}

impl ScenarioConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let s = &self.scenario;
        if !(s.duration > 0.0 && s.duration.is_finite()) {
            v.push(format!("duration must be positive, got {}", s.duration));
        }
        if !(s.packet_period > 0.0 && s.packet_period.is_finite()) {
            v.push(format!("packet_period must be positive, got {}", s.packet_period));
        }
        if let Some(off) = s.first_packet_offset {
            if !(off >= 0.0 && off.is_finite()) {
                v.push(format!("first_packet_offset must be non-negative, got {off}"));
            }
        }
        v.extend(self.capacitor.violations());
        v.extend(self.harvester.violations());
        v.extend(self.lorawan.violations());
        v.extend(self.currents.violations());
        v
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(EngineError::InvalidConfig(v))
        }
    }

    /// Nominal harvested power for result rows; NaN for trace-driven runs.
    pub fn nominal_power(&self) -> f64 {
        let h = &self.harvester;
        match h.kind {
            HarvestKind::Constant => h.power,
            HarvestKind::Uniform => 0.5 * (h.lo + h.hi),
            HarvestKind::Exponential => h.mean,
            HarvestKind::Trace => f64::NAN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleKind {
    Ul,
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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleOutcome {
    Delivered,
    Acked,
    FailedEnergy,
    SkippedGuard,
    FailedDutyCycle,
    /// Waited behind an earlier packet and was replaced by a newer one.
    Superseded,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleRecord {
    pub packet: u64,
    pub kind: CycleKind,
    pub start: SimTime,
    pub end: SimTime,
    pub outcome: CycleOutcome,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Metrics {
    pub generated: u64,
    pub delivered_ul: u64,
    pub acked: u64,
    pub skipped_by_guard: u64,
    pub energy_depletion_events: u64,
    pub transmissions: u64,
    pub off_time_total: SimDuration,
    pub ul_airtime: SimDuration,
    pub dl_airtime: SimDuration,
    pub max_ul_toa: SimDuration,
    pub max_dl_toa: SimDuration,
    /// Energy delivered to the load over the run, in joules.
    pub load_energy: f64,
    pub final_voltage: f64,
    /// Simulated time actually covered; shorter than the duration on abort.
    pub simulated: SimDuration,
    pub valid: bool,
    pub abort_reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuccessKind {
    Ul,
    UlDl,
}

/// Delivered (UL) or acknowledged (UL+DL) packets over generated ones.
pub fn success_probability(m: &Metrics, kind: SuccessKind) -> Result<f64, EngineError> {
    if m.generated == 0 {
        return Err(EngineError::UndefinedRate);
    }
    let ok = match kind {
        SuccessKind::Ul => m.delivered_ul,
        SuccessKind::UlDl => m.acked,
    };
    Ok(ok as f64 / m.generated as f64)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub cycles: Vec<CycleRecord>,
    /// Present when [`TraceSettings::voltage`] is set.
    pub trace: Option<Vec<TraceRecord>>,
}

pub const RESULTS_HEADER: &str =
    "C_farads,P_harvest_W,data_rate,period_s,confirmed,generated,delivered,acked,psucc_ul,psucc_uldl";

/// One results row for `RESULTS_HEADER`.
pub fn results_row(config: &ScenarioConfig, m: &Metrics) -> String {
    let rate = |k| {
        success_probability(m, k)
            .ok()
            .filter(|_| m.valid)
            .map_or_else(|| "nan".to_string(), |p| format!("{p:.6}"))
    };
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        config.capacitor.capacitance,
        config.nominal_power(),
        config.lorawan.data_rate,
        config.scenario.packet_period,
        config.lorawan.confirmed,
        m.generated,
        m.delivered_ul,
        m.acked,
        rate(SuccessKind::Ul),
        rate(SuccessKind::UlDl),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Generate,
    SegmentEnd(u64),
    VoltageTick,
    HarvestChange,
    Crossing(u64),
    DutyCycleRelease,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl Ord for Event {
    // reversed so that BinaryHeap pops the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PendingReason {
    DutyCycle,
    PoweredDown,
    Busy,
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    id: u64,
    attempts: u32,
    delivered: bool,
}

#[derive(Debug, Clone)]
struct Activity {
    packet: Packet,
    start: SimTime,
    segments: Vec<Segment>,
    index: usize,
    acked: bool,
}

#[derive(Debug, Clone)]
enum Phase {
    Off,
    TurnOn,
    Sleep,
    Active(Activity),
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    queue: BinaryHeap<Event>,
    seq: u64,
    end: SimTime,
    cap: Capacitor,
    harvest: HarvestSource,
    phase: Phase,
    segment_token: u64,
    crossing_token: u64,
    scheduled_crossing: Option<SimTime>,
    pending: Option<(Packet, PendingReason)>,
    next_packet_id: u64,
    ul_budget: DutyCycleBudget,
    dl_budget: DutyCycleBudget,
    ul_toa: SimDuration,
    guard_segments: Vec<Segment>,
    off_since: Option<SimTime>,
    metrics: Metrics,
    cycles: Vec<CycleRecord>,
    trace: Option<Vec<TraceRecord>>,
}

/// Runs a scenario to completion.
pub fn run(config: &ScenarioConfig) -> Result<RunOutput, EngineError> {
    config.validate()?;
    let harvest = config.harvester.build()?;
    let mut engine = Engine::new(config, harvest)?;
    engine.run()?;
    Ok(engine.finish())
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ScenarioConfig, harvest: HarvestSource) -> Result<Self, EngineError> {
        let p0 = harvest.power_at(SimTime::ZERO)?;
        let r_i = harvester_resistance(p0, cfg.capacitor.rail_voltage)?;
        let initial_load = cfg.currents.profile(DeviceState::Sleep);
        let cap = Capacitor::new(cfg.capacitor.clone(), initial_load, r_i)?;
        let lw = &cfg.lorawan;
        let mut engine = Engine {
            cfg,
            queue: BinaryHeap::new(),
            seq: 0,
            end: SimTime::from_secs_f64(cfg.scenario.duration),
            cap,
            harvest,
            phase: Phase::Sleep,
            segment_token: 0,
            crossing_token: 0,
            scheduled_crossing: None,
            pending: None,
            next_packet_id: 0,
            ul_budget: DutyCycleBudget::new(lw.ul_duty_cycle),
            dl_budget: DutyCycleBudget::new(lw.dl_duty_cycle),
            ul_toa: lw.ul_time_on_air()?,
            guard_segments: guard_horizon_segments(lw, lw.guard_horizon)?,
            off_since: None,
            metrics: Metrics {
                valid: true,
                ..Metrics::default()
            },
            cycles: Vec::new(),
            trace: cfg.trace.voltage.then(Vec::new),
        };
        if engine.cap.is_depleted() {
            engine.phase = Phase::Off;
            engine.off_since = Some(SimTime::ZERO);
            engine.cap.set_load(SimTime::ZERO, cfg.currents.profile(DeviceState::Off))?;
        }
        engine.record();
        Ok(engine)
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        if time > self.end {
            return;
        }
        self.seq += 1;
        self.queue.push(Event {
            time,
            seq: self.seq,
            kind,
        });
    }

    fn state(&self) -> DeviceState {
        match &self.phase {
            Phase::Off => DeviceState::Off,
            Phase::TurnOn => DeviceState::TurnOn,
            Phase::Sleep => DeviceState::Sleep,
            Phase::Active(a) => a.segments[a.index].state,
        }
    }

    fn record(&mut self) {
        let Some(trace) = self.trace.as_mut() else {
            return;
        };
        let rec = TraceRecord {
            time: self.cap.last_update(),
            voltage: self.cap.voltage(),
            state: match &self.phase {
                Phase::Off => DeviceState::Off,
                Phase::TurnOn => DeviceState::TurnOn,
                Phase::Sleep => DeviceState::Sleep,
                Phase::Active(a) => a.segments[a.index].state,
            },
        };
        if trace.last() != Some(&rec) {
            trace.push(rec);
        }
    }

    fn set_state(&mut self, now: SimTime, phase: Phase) -> Result<(), EngineError> {
        self.phase = phase;
        let profile = self.cfg.currents.profile(self.state());
        self.cap.set_load(now, profile)?;
        self.record();
        Ok(())
    }

    fn first_packet_time(&self) -> SimTime {
        let s = &self.cfg.scenario;
        let offset = s.first_packet_offset.unwrap_or_else(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            rng.random_range(0.0..s.packet_period)
        });
        SimTime::from_secs_f64(offset)
    }

    fn run(&mut self) -> Result<(), EngineError> {
        let first = self.first_packet_time();
        if first < self.end {
            self.schedule(first, EventKind::Generate);
        }
        if let Some(t) = self.harvest.next_change_after(SimTime::ZERO) {
            self.schedule(t, EventKind::HarvestChange);
        }
        if self.cfg.scenario.periodic_updates {
            let dt = SimDuration::from_secs_f64(self.cfg.capacitor.update_interval);
            self.schedule(SimTime::ZERO + dt, EventKind::VoltageTick);
        }
        self.schedule(self.end, EventKind::End);
        self.reschedule_crossing();

        while let Some(ev) = self.queue.pop() {
            let stale = match ev.kind {
                EventKind::SegmentEnd(tok) => tok != self.segment_token,
                EventKind::Crossing(tok) => tok != self.crossing_token,
                _ => false,
            };
            if stale {
                continue;
            }
            let now = ev.time;
            if ev.kind == EventKind::HarvestChange {
                // the power change applies from `now`, so the old segment closes first
                match self.harvest.power_at(now) {
                    Ok(p) => {
                        self.advance(now)?;
                        let r = harvester_resistance(p, self.cfg.capacitor.rail_voltage)?;
                        self.cap.set_harvest(now, r)?;
                        if let Some(t) = self.harvest.next_change_after(now) {
                            self.schedule(t, EventKind::HarvestChange);
                        }
                    }
                    Err(e) => {
                        self.advance(now)?;
                        self.metrics.valid = false;
                        self.metrics.abort_reason = Some(e.to_string());
                        break;
                    }
                }
            } else {
                self.advance(now)?;
                match ev.kind {
                    EventKind::Generate => self.on_generate(now)?,
                    EventKind::SegmentEnd(_) => self.on_segment_end(now)?,
                    EventKind::VoltageTick => {
                        let dt = SimDuration::from_secs_f64(self.cfg.capacitor.update_interval);
                        self.schedule(now + dt, EventKind::VoltageTick);
                    }
                    EventKind::DutyCycleRelease => {
                        if matches!(self.phase, Phase::Sleep) {
                            self.try_send_pending(now)?;
                        }
                    }
                    EventKind::Crossing(_) => {}
                    EventKind::End => break,
                    EventKind::HarvestChange => unreachable!(),
                }
            }
            self.reschedule_crossing();
        }
        Ok(())
    }

    fn reschedule_crossing(&mut self) {
        let next = self.cap.next_crossing().filter(|&t| t <= self.end);
        if next == self.scheduled_crossing {
            return;
        }
        self.crossing_token += 1;
        self.scheduled_crossing = next;
        if let Some(t) = next {
            let tok = self.crossing_token;
            self.schedule(t, EventKind::Crossing(tok));
        }
    }

    /// Brings the capacitor to `now` and reacts to threshold crossings.
    fn advance(&mut self, now: SimTime) -> Result<(), EngineError> {
        let event = self.cap.update(now)?;
        self.record();
        if let Some(ev) = event {
            // the crossing has been consumed
            self.scheduled_crossing = None;
            self.crossing_token += 1;
            match ev.kind {
                ThresholdKind::Depleted => self.on_depleted(now)?,
                ThresholdKind::Recharged => self.on_recharged(now)?,
            }
        }
        Ok(())
    }

    fn on_depleted(&mut self, now: SimTime) -> Result<(), EngineError> {
        match std::mem::replace(&mut self.phase, Phase::Sleep) {
            Phase::Off => {
                self.phase = Phase::Off;
                return Ok(());
            }
            Phase::Active(a) => {
                let outcome = if a.packet.delivered && !self.cfg.lorawan.confirmed {
                    CycleOutcome::Delivered
                } else {
                    CycleOutcome::FailedEnergy
                };
                self.close_cycle(&a, now, outcome);
            }
            Phase::TurnOn | Phase::Sleep => {}
        }
        self.segment_token += 1;
        self.metrics.energy_depletion_events += 1;
        if self.off_since.is_none() {
            self.off_since = Some(now);
        }
        self.set_state(now, Phase::Off)
    }

    fn on_recharged(&mut self, now: SimTime) -> Result<(), EngineError> {
        if !matches!(self.phase, Phase::Off) {
            return Ok(());
        }
        let turn_on = self.cfg.lorawan.turn_on();
        if turn_on.is_zero() {
            return self.wake(now);
        }
        self.segment_token += 1;
        let tok = self.segment_token;
        self.set_state(now, Phase::TurnOn)?;
        self.schedule(now + turn_on, EventKind::SegmentEnd(tok));
        Ok(())
    }

    fn wake(&mut self, now: SimTime) -> Result<(), EngineError> {
        if let Some(since) = self.off_since.take() {
            self.metrics.off_time_total += now - since;
        }
        self.set_state(now, Phase::Sleep)?;
        self.try_send_pending(now)
    }

    fn new_packet(&mut self) -> Packet {
        self.next_packet_id += 1;
        Packet {
            id: self.next_packet_id,
            attempts: 0,
            delivered: false,
        }
    }

    fn cycle_kind(&self) -> CycleKind {
        if self.cfg.lorawan.confirmed {
            CycleKind::UlDl
        } else {
            CycleKind::Ul
        }
    }

    fn fail_packet(&mut self, packet: Packet, now: SimTime, outcome: CycleOutcome) {
        self.cycles.push(CycleRecord {
            packet: packet.id,
            kind: self.cycle_kind(),
            start: now,
            end: now,
            outcome,
        });
    }

    fn set_pending(&mut self, packet: Packet, reason: PendingReason, now: SimTime) {
        if let Some((old, old_reason)) = self.pending.take() {
            if old.id != packet.id {
                let outcome = match old_reason {
                    PendingReason::DutyCycle => CycleOutcome::FailedDutyCycle,
                    PendingReason::PoweredDown => CycleOutcome::FailedEnergy,
                    PendingReason::Busy => CycleOutcome::Superseded,
                };
                self.fail_packet(old, now, outcome);
            }
        }
        self.pending = Some((packet, reason));
    }

    fn on_generate(&mut self, now: SimTime) -> Result<(), EngineError> {
        self.metrics.generated += 1;
        let period = SimDuration::from_secs_f64(self.cfg.scenario.packet_period);
        let next = now + period;
        if next < self.end {
            self.schedule(next, EventKind::Generate);
        }
        let packet = self.new_packet();
        match self.phase {
            Phase::Off | Phase::TurnOn => self.powered_down(packet, now),
            Phase::Active(_) => self.set_pending(packet, PendingReason::Busy, now),
            Phase::Sleep => self.try_send(packet, now)?,
        }
        Ok(())
    }

    fn powered_down(&mut self, packet: Packet, now: SimTime) {
        match self.cfg.scenario.off_packet_policy {
            OffPacketPolicy::Drop => self.fail_packet(packet, now, CycleOutcome::FailedEnergy),
            OffPacketPolicy::Defer => self.set_pending(packet, PendingReason::PoweredDown, now),
        }
    }

    fn try_send_pending(&mut self, now: SimTime) -> Result<(), EngineError> {
        if let Some((packet, _)) = self.pending.take() {
            self.try_send(packet, now)?;
        }
        Ok(())
    }

    fn try_send(&mut self, packet: Packet, now: SimTime) -> Result<(), EngineError> {
        debug_assert!(matches!(self.phase, Phase::Sleep));
        if let GateDecision::BlockedUntil(t) = self.ul_budget.gate(now) {
            self.set_pending(packet, PendingReason::DutyCycle, now);
            self.schedule(t, EventKind::DutyCycleRelease);
            return Ok(());
        }
        if self.cfg.lorawan.smart_guard {
            let decision = smart_tx_guard(&self.cap, &self.guard_segments, &self.cfg.currents)?;
            if !decision.proceeds() {
                self.metrics.skipped_by_guard += 1;
                self.fail_packet(packet, now, CycleOutcome::SkippedGuard);
                return Ok(());
            }
        }
        self.start_tx(packet, now)
    }

    fn start_tx(&mut self, mut packet: Packet, now: SimTime) -> Result<(), EngineError> {
        let toa = self.ul_toa;
        packet.attempts += 1;
        self.ul_budget.register(now, toa);
        self.metrics.transmissions += 1;
        self.metrics.ul_airtime += toa;
        self.metrics.max_ul_toa = self.metrics.max_ul_toa.max(toa);
        let activity = Activity {
            packet,
            start: now,
            segments: vec![Segment::new(DeviceState::Tx, toa)],
            index: 0,
            acked: false,
        };
        self.segment_token += 1;
        let tok = self.segment_token;
        self.set_state(now, Phase::Active(activity))?;
        self.schedule(now + toa, EventKind::SegmentEnd(tok));
        Ok(())
    }

    /// Gateway side: reply in RX1 if its downlink budget allows, else RX2.
    fn gateway_reply(&mut self, tx_end: SimTime) -> Result<DownlinkReply, EngineError> {
        let lw = &self.cfg.lorawan;
        if !lw.confirmed {
            return Ok(DownlinkReply::None);
        }
        for (window, delay) in [(DownlinkReply::Rx1, lw.rx1_delay), (DownlinkReply::Rx2, lw.rx2_delay)] {
            let open = tx_end + SimDuration::from_secs_f64(delay);
            if self.dl_budget.gate(open) == GateDecision::Allowed {
                let toa = lw.dl_time_on_air(window)?;
                self.dl_budget.register(open, toa);
                self.metrics.dl_airtime += toa;
                self.metrics.max_dl_toa = self.metrics.max_dl_toa.max(toa);
                return Ok(window);
            }
        }
        Ok(DownlinkReply::None)
    }

    fn on_segment_end(&mut self, now: SimTime) -> Result<(), EngineError> {
        match std::mem::replace(&mut self.phase, Phase::Sleep) {
            Phase::TurnOn => self.wake(now),
            Phase::Active(mut a) => {
                let finished = a.segments[a.index].state;
                match finished {
                    DeviceState::Tx => {
                        if !a.packet.delivered {
                            a.packet.delivered = true;
                            self.metrics.delivered_ul += 1;
                        }
                        let reply = self.gateway_reply(now)?;
                        a.segments.extend(next_states_after_tx(&self.cfg.lorawan, reply)?);
                    }
                    DeviceState::Rx => {
                        if !a.acked {
                            a.acked = true;
                            self.metrics.acked += 1;
                        }
                    }
                    _ => {}
                }
                a.index += 1;
                if a.index < a.segments.len() {
                    let d = a.segments[a.index].duration;
                    self.segment_token += 1;
                    let tok = self.segment_token;
                    self.set_state(now, Phase::Active(a))?;
                    self.schedule(now + d, EventKind::SegmentEnd(tok));
                    return Ok(());
                }
                self.finish_cycle(a, now)
            }
            other => {
                self.phase = other;
                Ok(())
            }
        }
    }

    fn close_cycle(&mut self, a: &Activity, now: SimTime, outcome: CycleOutcome) {
        self.cycles.push(CycleRecord {
            packet: a.packet.id,
            kind: self.cycle_kind(),
            start: a.start,
            end: now,
            outcome,
        });
    }

    fn finish_cycle(&mut self, a: Activity, now: SimTime) -> Result<(), EngineError> {
        let confirmed = self.cfg.lorawan.confirmed;
        let outcome = if a.acked {
            CycleOutcome::Acked
        } else if !confirmed {
            CycleOutcome::Delivered
        } else {
            CycleOutcome::FailedDutyCycle
        };
        self.close_cycle(&a, now, outcome);
        self.set_state(now, Phase::Sleep)?;
        let retry = confirmed && !a.acked && a.packet.attempts < self.cfg.lorawan.max_transmissions;
        match self.pending.take() {
            // a newer packet replaces the one awaiting retransmission
            Some((newer, _)) => self.try_send(newer, now),
            None if retry => self.try_send(a.packet, now),
            None => Ok(()),
        }
    }

    fn finish(mut self) -> RunOutput {
        let at = self.cap.last_update();
        if let Some(since) = self.off_since.take() {
            self.metrics.off_time_total += at - since;
        }
        self.metrics.load_energy = self.cap.load_energy();
        self.metrics.final_voltage = self.cap.voltage();
        self.metrics.simulated = at - SimTime::ZERO;
        RunOutput {
            metrics: self.metrics,
            cycles: self.cycles,
            trace: self.trace,
        }
    }
}
