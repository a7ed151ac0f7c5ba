//! Scenario execution: an event loop over frame attempts and idle spans,
//! with exact piecewise-constant stepping of devices and damage inside.

use std::collections::{HashMap, HashSet};

use crate::attacks::{AttackKind, AttackSpec, PulseTiming};
use crate::electrical::{extends_recovery, solve_bus, BusNode, BusTopology, Drive, PinMode, PinTap, VidsTaps};
use crate::irs::{Device, DeviceEvent};
use crate::link::{
    decide_bit, encode_frame, AttemptOutcome, BitDecision, BusAction, EncodedFrame, LinkEvent, LinkState, TxSlot,
    ERROR_DELIMITER_BITS, ERROR_FLAG_BITS, INTERMISSION_BITS,
};
use crate::params::ModelParams;
use crate::time::SimTime;

use super::config::{Role, ScenarioConfig};
use super::damage::EcuDamage;
use super::summary::{DeviceTrip, Summary};
use super::trace::{Trace, TraceKind};
use super::waveform::{delayed_pieces, evaluate_bit, Analog, Piece};
use super::EngineError;

const LINES: [&str; 2] = ["canh", "canl"];
const HISTORY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct ElecKey {
    drivers: u8,
    ph: u64,
    pl: u64,
    conn: [bool; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Elec {
    v_canh: f64,
    v_canl: f64,
    i: [f64; 2],
    extends: bool,
}

impl Elec {
    fn v_diff(&self) -> f64 {
        self.v_canh - self.v_canl
    }
}

fn level_key(m: PinMode) -> u64 {
    match m {
        PinMode::Input => u64::MAX,
        PinMode::OutputLow => u64::MAX - 1,
        PinMode::OutputHigh(v) => v.to_bits(),
        PinMode::Pulse(_) => unreachable!("pulses are resolved before solving"),
    }
}

/// Operating point of one segment plus the currents the devices and the
/// microcontroller see.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Operating {
    elec: Elec,
    /// Current reaching each pin.
    actual: [f64; 2],
    /// Current each device integrates (closed-circuit demand for an open
    /// resettable fuse).
    input: [f64; 2],
}

/// State compared between attempt starts to detect exact repetition.
#[derive(Debug, Clone, PartialEq)]
struct Snapshot {
    devices: [Option<Device>; 2],
    damage: EcuDamage,
    analog: Analog,
    attack_active: bool,
    phase: u64,
}

#[derive(Debug, Clone)]
struct Attempt {
    start: SimTime,
    snap: Snapshot,
    ecu: usize,
    instance: u64,
    failed: bool,
    delivered: bool,
}

#[derive(Debug, Clone, Copy)]
struct Fold {
    instance: u64,
    first: SimTime,
    count: u64,
}

struct Sender {
    ecu: usize,
    period: u64,
    offset: u64,
    encoded: EncodedFrame,
    acknowledged: Vec<BitDecision>,
    next_instance: u64,
    /// Delivery time of each instance, if delivered.
    delivered_at: Vec<Option<SimTime>>,
}

impl Sender {
    fn queue_time(&self, instance: u64) -> SimTime {
        SimTime(self.offset + instance * self.period)
    }
}

#[derive(Debug, Default)]
struct Stats {
    queued: u64,
    sent: u64,
    received: u64,
    duplicates: u64,
    dropped: u64,
    error_frames: u64,
    window_retransmissions: u64,
    first_failure: Option<String>,
    device_events: Vec<DeviceTrip>,
    damage_time: Option<SimTime>,
    peak: f64,
}

pub(crate) struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    params: ModelParams,
    bit: u64,
    end: SimTime,
    topo: BusTopology,
    vids: usize,
    receivers: Vec<usize>,
    attack: Option<AttackSpec>,
    pulse: Option<PulseTiming>,
    devices: [Option<Device>; 2],
    damage: EcuDamage,
    cache: HashMap<ElecKey, Elec>,
    sampled: HashSet<ElecKey>,
    analog: Analog,
    link: LinkState,
    senders: Vec<Sender>,
    /// Index into `senders` per ECU.
    sender_of: Vec<Option<usize>>,
    trace: Trace,
    stats: Stats,
    folds: Vec<Option<Fold>>,
    history: Vec<Attempt>,
    pieces: Vec<Piece>,
}

impl<'a> Sim<'a> {
    pub(crate) fn new(cfg: &'a ScenarioConfig, params: &ModelParams) -> Result<Self, EngineError> {
        let mut params = *params;
        params.timing.bus_speed = cfg.bus.speed;
        let vids = cfg
            .vids_index()
            .ok_or_else(|| EngineError::invalid("ecu", "exactly one ECU must have role \"vids\""))?;
        let (source_resistance, current_limit) = cfg
            .attack
            .as_ref()
            .map_or((0.0, None), |a| (a.source_resistance, a.source_limit));
        let topo = BusTopology {
            termination: cfg.bus.termination,
            nodes: cfg
                .ecus
                .iter()
                .enumerate()
                .map(|(k, e)| BusNode {
                    name: e.name.clone(),
                    taps: (k == vids).then_some(VidsTaps {
                        ph: PinTap::WIRE,
                        pl: PinTap::WIRE,
                        source_resistance,
                        current_limit,
                    }),
                })
                .collect(),
        };
        let attack = match &cfg.attack {
            Some(a) => Some(
                AttackSpec::new(a.kind, SimTime::from_secs_f64(a.t_start), SimTime::from_secs_f64(a.t_end))?
                    .with_phase_offset(SimTime::from_secs_f64(a.phase_offset).nanos()),
            ),
            None => None,
        };
        let pulse = attack.as_ref().and_then(|a| a.pulse_timing());
        if pulse.is_some_and(|p| p.period == 0 || p.high == 0 || p.high >= p.period) {
            return Err(EngineError::invalid(
                "attack.period",
                "pulse phases must each last at least 1 ns",
            ));
        }
        let devices = match &cfg.irs {
            Some(irs) => [0, 1].map(|k| irs.pins.covers(line_of(k)).then(|| irs.kind.device())),
            None => [None, None],
        };
        let mut receivers: Vec<usize> = cfg
            .ecus
            .iter()
            .enumerate()
            .filter(|(_, e)| e.role == Role::Logger)
            .map(|(k, _)| k)
            .collect();
        if receivers.is_empty() {
            receivers.push(vids);
        }
        let mut sender_of = vec![None; cfg.ecus.len()];
        let senders = cfg
            .senders()
            .map(|(ecu, e)| {
                let t = e.traffic.expect("senders have traffic");
                let encoded = encode_frame(&t.frame);
                Sender {
                    ecu,
                    period: SimTime::from_secs_f64(t.period).nanos().max(1),
                    offset: SimTime::from_secs_f64(t.offset).nanos(),
                    acknowledged: encoded.acknowledged(),
                    encoded,
                    next_instance: 0,
                    delivered_at: Vec::new(),
                }
            })
            .collect::<Vec<_>>();
        for (j, s) in senders.iter().enumerate() {
            sender_of[s.ecu] = Some(j);
        }
        Ok(Self {
            cfg,
            bit: params.timing.bit_nanos(),
            params,
            end: SimTime::from_secs_f64(cfg.duration),
            topo,
            vids,
            receivers,
            attack,
            pulse,
            devices,
            damage: EcuDamage::new(cfg.damage.i_max, cfg.damage.damage_time),
            cache: HashMap::new(),
            sampled: HashSet::new(),
            analog: Analog {
                v_diff: 0.0,
                raw: BitDecision::Recessive,
            },
            link: LinkState::new(cfg.ecus.len()),
            senders,
            sender_of,
            trace: Trace::new(),
            stats: Stats::default(),
            folds: vec![None; cfg.ecus.len()],
            history: Vec::new(),
            pieces: Vec::new(),
        })
    }

    fn vids_name(&self) -> &'a str {
        &self.cfg.ecus[self.vids].name
    }

    fn name(&self, ecu: usize) -> &'a str {
        &self.cfg.ecus[ecu].name
    }

    fn attack_active(&self, t: SimTime) -> bool {
        self.attack.as_ref().is_some_and(|a| a.is_active(t))
    }

    /// Resolved pin modes at `t`.
    fn pin_modes(&self, t: SimTime) -> [PinMode; 2] {
        let Some(a) = &self.attack else {
            return [PinMode::Input; 2];
        };
        let (ph, pl) = a.pin_override(t);
        [ph, pl].map(|m| match m {
            PinMode::Pulse(s) => {
                if self.pulse.is_none_or(|p| p.is_high(t)) {
                    PinMode::OutputHigh(s.v_high)
                } else if s.v_low == 0.0 {
                    PinMode::OutputLow
                } else {
                    PinMode::OutputHigh(s.v_low)
                }
            }
            m => m,
        })
    }

    /// The pin modes of the opposite pulse phase, if a pulse is running.
    fn other_phase(&self, t: SimTime) -> Option<[PinMode; 2]> {
        let p = self.pulse?;
        if !self.attack_active(t) {
            return None;
        }
        Some(self.pin_modes(p.next_edge(t)))
    }

    fn solve(&mut self, drivers: usize, modes: [PinMode; 2], conn: [bool; 2]) -> Result<Elec, EngineError> {
        let key = ElecKey {
            drivers: drivers as u8,
            ph: level_key(modes[0]),
            pl: level_key(modes[1]),
            conn,
        };
        if let Some(e) = self.cache.get(&key) {
            return Ok(*e);
        }
        let taps = self.topo.nodes[self.vids].taps.as_mut().expect("VIDS node has taps");
        for (k, tap) in [&mut taps.ph, &mut taps.pl].into_iter().enumerate() {
            *tap = PinTap {
                connected: conn[k],
                series_resistance: self.devices[k].map_or(0.0, |d| d.series_resistance()),
            };
        }
        let n = self.topo.nodes.len();
        let drive: Vec<Drive> = (0..n)
            .map(|k| if k < drivers { Drive::Dominant } else { Drive::Recessive })
            .collect();
        let mut pins = vec![(PinMode::Input, PinMode::Input); n];
        pins[self.vids] = (modes[0], modes[1]);
        let sol = solve_bus(&drive, &pins, &self.topo, &self.params.transceiver)?;
        let p = sol.pins[self.vids];
        let extends = conn[0]
            && matches!(modes[0], PinMode::OutputHigh(v) if extends_recovery(v, &self.params.transceiver));
        let e = Elec {
            v_canh: sol.voltages.v_canh(),
            v_canl: sol.voltages.v_canl(),
            i: [p.i_ph, p.i_pl],
            extends,
        };
        self.cache.insert(key, e);
        Ok(e)
    }

    fn operating(&mut self, drivers: usize, modes: [PinMode; 2]) -> Result<(Operating, ElecKey), EngineError> {
        let conn = [0, 1].map(|k| self.devices[k].is_none_or(|d| d.conducts()));
        let elec = self.solve(drivers, modes, conn)?;
        let mut actual = elec.i;
        let mut input = elec.i;
        for k in 0..2 {
            let Some(d) = self.devices[k] else { continue };
            if d.conducts() {
                continue;
            }
            // an open resettable fuse still carries leakage, so the source
            // sees every such pin as connected
            let mut c = conn;
            for j in 0..2 {
                c[j] |= j == k || matches!(self.devices[j], Some(Device::Resettable(_)));
            }
            let demand = self.solve(drivers, modes, c)?.i[k];
            actual[k] = d.series_current(demand);
            input[k] = match d {
                Device::Resettable(_) => demand,
                _ => actual[k],
            };
        }
        let key = ElecKey {
            drivers: drivers as u8,
            ph: level_key(modes[0]),
            pl: level_key(modes[1]),
            conn,
        };
        Ok((Operating { elec, actual, input }, key))
    }

    /// First instant after `t` (capped at `limit`) where the attack changes.
    fn next_boundary(&self, t: SimTime, limit: SimTime, skip_pulse: bool) -> SimTime {
        let mut b = limit;
        if let Some(a) = &self.attack {
            for e in [a.t_start(), a.t_end()] {
                if e > t {
                    b = b.min(e);
                }
            }
            if a.is_active(t) && !skip_pulse {
                if let Some(p) = &self.pulse {
                    b = b.min(p.next_edge(t));
                }
            }
        }
        b
    }

    /// Steps devices and damage over `[t0, t1)` with `drivers` transceivers
    /// dominant. The bus operating points are left in `self.pieces`,
    /// relative to `t0`.
    fn run_span(&mut self, t0: SimTime, t1: SimTime, drivers: usize) -> Result<(), EngineError> {
        self.pieces.clear();
        let mut t = t0;
        let mut stalls = 0;
        while t < t1 {
            let modes = self.pin_modes(t);
            let (op, key) = self.operating(drivers, modes)?;
            let piece = Piece {
                start: t - t0,
                v_diff: op.elec.v_diff(),
                extends: op.elec.extends,
            };
            if self
                .pieces
                .last()
                .is_none_or(|p| p.v_diff != piece.v_diff || p.extends != piece.extends)
            {
                self.pieces.push(piece);
            }
            if self.cfg.trace.samples && self.attack_active(t) && self.sampled.insert(key) {
                self.log_samples(t, drivers, &op);
            }
            // a pulse that changes nothing electrically need not be followed
            let skip_pulse = match self.other_phase(t) {
                Some(other) => self.operating(drivers, other)?.0 == op,
                None => true,
            };
            let i_dmg = op.actual[0].abs().max(op.actual[1].abs());
            self.stats.peak = self.stats.peak.max(i_dmg);
            let mut step = self.next_boundary(t, t1, skip_pulse) - t;
            for k in 0..2 {
                if let Some(n) = self.devices[k].and_then(|d| d.nanos_to_transition(op.input[k])) {
                    step = step.min(n);
                }
            }
            if let Some(n) = self.damage.nanos_to_damage(i_dmg) {
                step = step.min(n);
            }
            if step == 0 {
                stalls += 1;
                if stalls > 4 {
                    step = 1;
                }
            } else {
                stalls = 0;
            }
            let at = t + step;
            let mut changed = false;
            for k in 0..2 {
                let Some(d) = self.devices[k].as_mut() else { continue };
                if let Some(ev) = d.advance(op.input[k], step) {
                    changed = true;
                    self.log_device(at, k, ev, op.input[k]);
                }
            }
            // a device switching at the same instant wins the tie
            if self.damage.advance(i_dmg, step, !changed) {
                let line = if op.actual[0].abs() >= op.actual[1].abs() { 0 } else { 1 };
                self.stats.damage_time = Some(at);
                self.trace.push(
                    at,
                    TraceKind::Damage,
                    self.vids_name(),
                    LINES[line],
                    i_dmg,
                    format!("i_max={}", self.damage.i_max),
                );
            }
            t = at;
        }
        Ok(())
    }

    /// Analog state after a span long enough for transitions to settle.
    fn settle(&mut self) {
        if let Some(last) = self.pieces.last() {
            self.analog = Analog {
                v_diff: last.v_diff,
                raw: decide_bit(last.v_diff, self.analog.raw, &self.params.timing),
            };
        }
    }

    fn log_samples(&mut self, t: SimTime, drivers: usize, op: &Operating) {
        let vids = self.vids_name();
        let detail = format!("drivers={drivers}");
        for (k, v) in [op.elec.v_canh, op.elec.v_canl].into_iter().enumerate() {
            self.trace
                .push(t, TraceKind::LineVoltageSample, vids, LINES[k], v, detail.clone());
        }
        for k in 0..2 {
            self.trace
                .push(t, TraceKind::PinCurrentSample, vids, LINES[k], op.actual[k], detail.clone());
        }
    }

    fn log_device(&mut self, at: SimTime, k: usize, ev: DeviceEvent, current: f64) {
        let kind = match ev {
            DeviceEvent::FuseBlown => TraceKind::FuseBlown,
            DeviceEvent::BreakerTripped => TraceKind::BreakerTripped,
            DeviceEvent::ResettableOpened => TraceKind::ResettableOpened,
            DeviceEvent::ResettableClosed => TraceKind::ResettableClosed,
            DeviceEvent::ThermostatOpen => TraceKind::ThermostatOpen,
            DeviceEvent::ThermostatClosed => TraceKind::ThermostatClosed,
        };
        let name = self.cfg.irs.as_ref().map_or("", |i| i.kind.name());
        self.trace
            .push(at, kind, self.vids_name(), LINES[k], current, format!("device={name}"));
        self.stats.device_events.push(DeviceTrip {
            time: at.as_secs_f64(),
            line: LINES[k].into(),
            event: kind.as_str().into(),
        });
    }
}

fn line_of(k: usize) -> crate::electrical::Line {
    if k == 0 {
        crate::electrical::Line::Canh
    } else {
        crate::electrical::Line::Canl
    }
}

struct AttemptResult {
    end: SimTime,
    /// Bit index and error kind of the first detected error.
    error: Option<(usize, &'static str)>,
    delivered: bool,
}

impl Sim<'_> {
    fn error_kind(enc: &EncodedFrame, bit: usize) -> &'static str {
        let l = enc.layout;
        if bit == l.ack_slot {
            "ack_error"
        } else if bit == l.crc_delimiter || bit == l.ack_delimiter || bit >= l.eof_start {
            "form_error"
        } else {
            "bit_error"
        }
    }

    /// Transmits one attempt starting at `t0`, including the error frame or
    /// intermission that follows it.
    fn run_attempt(&mut self, t0: SimTime, ecu: usize) -> Result<AttemptResult, EngineError> {
        let s = self.sender_of[ecu].expect("only senders transmit");
        let n = self.topo.nodes.len();
        let bit = self.bit;
        let timing = self.params.timing;
        let transition = self.params.transition;
        let layout = self.senders[s].encoded.layout;
        let len = self.senders[s].encoded.len();
        let mut t = t0;
        let mut slot_last = None;
        let mut rx_ok = true;
        let mut delivered = false;
        let mut error = None;
        for i in 0..len {
            let want = self.senders[s].acknowledged[i];
            let drivers = if i == layout.ack_slot {
                n - 1
            } else if self.senders[s].encoded.bits[i].is_dominant() {
                1
            } else {
                0
            };
            self.run_span(t, t + bit, drivers)?;
            let start = self.analog;
            let rx = evaluate_bit(&self.pieces, start, &timing, &transition);
            // the transmitter sees the released ACK slot late
            let tx = match slot_last {
                Some(last) if i == layout.ack_delimiter => {
                    let delayed = delayed_pieces(&self.pieces, last, timing.ack_delay_nanos());
                    evaluate_bit(&delayed, start, &timing, &transition).sampled
                }
                _ => rx.sampled,
            };
            if i == layout.ack_slot {
                slot_last = self.pieces.last().copied();
            }
            self.analog = rx.end;
            t += bit;
            rx_ok &= rx.sampled == want;
            if i == layout.ack_delimiter && rx_ok {
                delivered = true;
            }
            if rx.sampled != want || tx != want {
                error = Some((i, Self::error_kind(&self.senders[s].encoded, i)));
                break;
            }
        }
        if error.is_some() {
            let flag = t + ERROR_FLAG_BITS as u64 * bit;
            self.run_span(t, flag, n)?;
            self.settle();
            let idle = flag + (ERROR_DELIMITER_BITS + INTERMISSION_BITS) as u64 * bit;
            self.run_span(flag, idle, 0)?;
            self.settle();
            t = idle;
        } else {
            let idle = t + INTERMISSION_BITS as u64 * bit;
            self.run_span(t, idle, 0)?;
            self.settle();
            t = idle;
        }
        Ok(AttemptResult { end: t, error, delivered })
    }

    fn next_queue(&self) -> Option<(SimTime, usize)> {
        self.senders
            .iter()
            .enumerate()
            .map(|(j, s)| (s.queue_time(s.next_instance), j))
            .filter(|(t, _)| *t < self.end)
            .min()
    }

    /// Hands every instance due before `limit` (or at it, if `inclusive`)
    /// to the link layer.
    fn queue_due(&mut self, limit: SimTime, inclusive: bool) -> Result<(), EngineError> {
        while let Some((t, j)) = self.next_queue() {
            if t > limit || (t == limit && !inclusive) {
                break;
            }
            let s = &mut self.senders[j];
            let instance = s.next_instance;
            s.next_instance += 1;
            s.delivered_at.push(None);
            let ecu = s.ecu;
            let frame = self.cfg.ecus[ecu].traffic.expect("sender").frame;
            self.stats.queued += 1;
            self.history.clear();
            let actions = self.link.step(t, LinkEvent::Queue { ecu, frame, instance })?;
            self.apply(actions);
        }
        Ok(())
    }

    fn apply(&mut self, actions: Vec<BusAction>) {
        for a in actions {
            match a {
                BusAction::Dropped { ecu, instance } => {
                    self.stats.dropped += 1;
                    self.flush_fold(ecu, instance);
                }
                BusAction::Completed { ecu, instance } => self.flush_fold(ecu, instance),
                BusAction::ErrorFrame { .. } | BusAction::Transmit { .. } => {}
            }
        }
    }

    fn flush_fold(&mut self, ecu: usize, instance: u64) {
        if let Some(f) = self.folds[ecu].filter(|f| f.instance == instance) {
            self.trace.push(
                f.first,
                TraceKind::Retransmission,
                self.name(ecu),
                "",
                f.count as f64,
                format!("instance={} folded={}", f.instance, f.count),
            );
            self.folds[ecu] = None;
        }
    }

    fn detailed(&self, attempt: u64) -> bool {
        let d = self.cfg.trace.retransmission_detail as u64;
        d == 0 || attempt <= d + 1
    }

    fn log_transmit(&mut self, t: SimTime, ecu: usize, slot: &TxSlot) {
        let attempt = slot.attempts as u64;
        let name = self.name(ecu);
        if attempt == 1 {
            self.stats.sent += 1;
            self.trace.push(
                t,
                TraceKind::FrameSent,
                name,
                "",
                slot.instance as f64,
                format!("id={:#05x} instance={}", slot.frame.id(), slot.instance),
            );
        } else {
            if self.attack_active(t) {
                self.stats.window_retransmissions += 1;
            }
            if self.detailed(attempt) {
                self.trace.push(
                    t,
                    TraceKind::Retransmission,
                    name,
                    "",
                    (attempt - 1) as f64,
                    format!("instance={} attempt={attempt}", slot.instance),
                );
            } else {
                let f = self.folds[ecu].get_or_insert(Fold {
                    instance: slot.instance,
                    first: t,
                    count: 0,
                });
                f.count += 1;
            }
        }
    }

    fn record_delivery(&mut self, t: SimTime, ecu: usize, instance: u64) {
        let j = self.sender_of[ecu].expect("sender");
        let slot = &mut self.senders[j].delivered_at[instance as usize];
        if slot.is_some() {
            self.stats.duplicates += 1;
            return;
        }
        *slot = Some(t);
        self.stats.received += 1;
        let from = self.name(ecu);
        let id = self.cfg.ecus[ecu].traffic.expect("sender").frame.id();
        for k in 0..self.receivers.len() {
            let r = self.receivers[k];
            self.trace.push(
                t,
                TraceKind::FrameReceived,
                self.name(r),
                "",
                instance as f64,
                format!("from={from} id={id:#05x} instance={instance}"),
            );
        }
    }

    fn snapshot(&self, t: SimTime) -> Snapshot {
        let phase = match self.pulse {
            Some(p) => (t.0 as i128 - p.origin.0 as i128).rem_euclid(p.period as i128) as u64,
            None => 0,
        };
        Snapshot {
            devices: self.devices,
            damage: self.damage,
            analog: self.analog,
            attack_active: self.attack_active(t),
            phase,
        }
    }

    /// Skips whole cycles of identical failed attempts. Returns the time the
    /// bus is free again after the skipped cycles.
    fn fast_forward(&mut self, t: SimTime) -> Result<Option<SimTime>, EngineError> {
        let Some(last) = self.history.last() else {
            return Ok(None);
        };
        let ecu = last.ecu;
        let Some(slot) = self.link.ecu(ecu).and_then(|e| e.pending().copied()) else {
            return Ok(None);
        };
        if slot.instance != last.instance
            || self.detailed(slot.attempts as u64 + 1)
            || (0..self.cfg.ecus.len()).any(|k| k != ecu && self.link.ecu(k).is_some_and(|e| e.pending().is_some()))
        {
            return Ok(None);
        }
        let snap = self.snapshot(t);
        let Some(j) = self.history.iter().rposition(|a| a.snap == snap) else {
            return Ok(None);
        };
        let cycle = &self.history[j..];
        if cycle.iter().any(|a| !a.failed || a.ecu != ecu || a.instance != slot.instance) {
            return Ok(None);
        }
        let k = cycle.len() as u64;
        let period = t - cycle[0].start;
        let deliveries = cycle.iter().filter(|a| a.delivered).count() as u64;
        let mut horizon = self.end;
        if let Some((q, _)) = self.next_queue() {
            horizon = horizon.min(q);
        }
        horizon = self.next_boundary(t, horizon, true);
        let reps = (horizon - t) / period;
        if period == 0 || reps == 0 {
            return Ok(None);
        }
        let skipped = reps * k;
        let resume = t + reps * period;
        self.link.record_repeated_failures(ecu, skipped, resume)?;
        self.stats.error_frames += skipped;
        self.stats.duplicates += reps * deliveries;
        if snap.attack_active {
            self.stats.window_retransmissions += skipped;
        }
        let f = self.folds[ecu].get_or_insert(Fold {
            instance: slot.instance,
            first: t,
            count: 0,
        });
        f.count += skipped;
        self.history.clear();
        Ok(Some(resume))
    }
}

impl Sim<'_> {
    pub(crate) fn run(mut self) -> Result<(Trace, Summary), EngineError> {
        if let Some(a) = self.attack {
            let name = a.kind().name();
            let vids = self.vids_name();
            if a.t_start() < self.end {
                self.trace.push(a.t_start(), TraceKind::AttackStart, vids, "", 0.0, format!("attack={name}"));
            }
            if a.t_end() <= self.end {
                self.trace.push(a.t_end(), TraceKind::AttackEnd, vids, "", 0.0, format!("attack={name}"));
            }
        }
        let mut t = SimTime::ZERO;
        loop {
            self.queue_due(t, true)?;
            if t >= self.end {
                break;
            }
            if !self.link.has_pending() {
                let next = self.next_queue().map_or(self.end, |(q, _)| q.min(self.end));
                self.run_span(t, next, 0)?;
                self.settle();
                t = next;
                continue;
            }
            if let Some(resume) = self.fast_forward(t)? {
                t = resume;
                continue;
            }
            let snap = self.snapshot(t);
            let actions = self.link.step(t, LinkEvent::BusIdle)?;
            let Some(&BusAction::Transmit { ecu, slot }) = actions.first() else {
                unreachable!("a pending frame always wins arbitration");
            };
            self.log_transmit(t, ecu, &slot);
            let res = self.run_attempt(t, ecu)?;
            if res.delivered {
                let at = t + (self.senders[self.sender_of[ecu].expect("sender")].encoded.layout.ack_delimiter as u64 + 1)
                    * self.bit;
                self.record_delivery(at, ecu, slot.instance);
            }
            let outcome = match res.error {
                Some((bit, kind)) => {
                    self.stats.error_frames += 1;
                    let at = t + (bit as u64 + 1) * self.bit;
                    let reason = format!("{kind}@{bit}");
                    if self.attack_active(at) && self.stats.first_failure.is_none() {
                        self.stats.first_failure = Some(reason.clone());
                    }
                    if self.detailed(slot.attempts as u64) {
                        self.trace
                            .push(at, TraceKind::ErrorFrame, self.name(ecu), "", bit as f64, reason);
                    }
                    AttemptOutcome::Error { bit }
                }
                None => AttemptOutcome::Acknowledged,
            };
            self.queue_due(res.end, false)?;
            let actions = self.link.step(res.end, LinkEvent::AttemptFinished { outcome })?;
            self.apply(actions);
            if res.error.is_some() {
                if self.history.len() == HISTORY {
                    self.history.remove(0);
                }
                self.history.push(Attempt {
                    start: t,
                    snap,
                    ecu,
                    instance: slot.instance,
                    failed: true,
                    delivered: res.delivered,
                });
            } else {
                self.history.clear();
            }
            t = res.end;
        }
        for ecu in 0..self.folds.len() {
            if let Some(f) = self.folds[ecu] {
                self.flush_fold(ecu, f.instance);
            }
        }
        self.trace.finish();
        let summary = self.summary();
        Ok((self.trace, summary))
    }

    /// Indicator per slot of sender `j`.
    fn indicator(&self, j: usize) -> Vec<u8> {
        let s = &self.senders[j];
        s.delivered_at
            .iter()
            .enumerate()
            .map(|(k, d)| d.is_some_and(|at| at < s.queue_time(k as u64 + 1)) as u8)
            .collect()
    }

    fn attack_success(&self) -> bool {
        let Some(a) = &self.attack else {
            return false;
        };
        match a.kind() {
            AttackKind::PassiveOvercurrent | AttackKind::ActiveOvercurrent => self.damage.damaged,
            AttackKind::ForcedRetransmission { .. } => self.stats.window_retransmissions > 0,
            AttackKind::Dos { .. } | AttackKind::Pulse { .. } => {
                let mut any = false;
                for (j, s) in self.senders.iter().enumerate() {
                    let ind = self.indicator(j);
                    for (k, &v) in ind.iter().enumerate() {
                        if a.is_active(s.queue_time(k as u64)) {
                            if v == 1 {
                                return false;
                            }
                            any = true;
                        }
                    }
                }
                any
            }
        }
    }

    fn summary(&self) -> Summary {
        Summary {
            duration: self.cfg.duration,
            messages_queued: self.stats.queued,
            messages_sent: self.stats.sent,
            messages_received: self.stats.received,
            duplicate_deliveries: self.stats.duplicates,
            dropped: self.stats.dropped,
            retransmissions: self.link.total_retransmissions(),
            error_frames: self.stats.error_frames,
            message_indicator: if self.senders.is_empty() { Vec::new() } else { self.indicator(0) },
            attack: self.attack.map(|a| a.kind().name().to_string()),
            attack_success: self.attack_success(),
            first_failure_reason: self.stats.first_failure.clone(),
            device_events: self.stats.device_events.clone(),
            damaged: self.damage.damaged,
            damage_time: self.stats.damage_time.map(|t| t.as_secs_f64()),
            peak_pin_current: self.stats.peak,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run_scenario, AttackConfig, IrsConfig, IrsKind, IrsPins};

    fn attack(kind: AttackKind, t_start: f64, t_end: f64) -> AttackConfig {
        AttackConfig {
            kind,
            t_start,
            t_end,
            phase_offset: 0.0,
            source_limit: None,
            source_resistance: 0.0,
        }
    }

    fn fuse() -> IrsConfig {
        IrsConfig {
            kind: IrsKind::Fuse {
                rating: 0.010,
                opening_time: 1e-6,
            },
            pins: IrsPins::Both,
        }
    }

    fn run(cfg: &ScenarioConfig) -> (Trace, Summary) {
        run_scenario(cfg, &ModelParams::default()).unwrap()
    }

    #[test]
    fn baseline_delivers_everything() {
        let (trace, s) = run(&ScenarioConfig::baseline(5.0));
        assert_eq!(s.messages_received, 5);
        assert_eq!(s.message_indicator, vec![1; 5]);
        assert_eq!(s.retransmissions, 0);
        assert_eq!(trace.count(TraceKind::FrameReceived), 5);
        assert_eq!(trace.count(TraceKind::FrameSent), 5);
    }

    #[test]
    fn dos_blocks_window_slots() {
        let mut cfg = ScenarioConfig::baseline(6.0);
        cfg.attack = Some(attack(AttackKind::Dos { v_attack_l: 5.0 }, 2.0, 4.0));
        let (trace, s) = run(&cfg);
        assert_eq!(s.message_indicator, vec![1, 1, 0, 0, 1, 1]);
        assert!(s.attack_success);
        assert_eq!(s.first_failure_reason.as_deref(), Some("bit_error@0"));
        assert!(trace.records().windows(2).all(|w| w[0].time <= w[1].time));
    }

    #[test]
    fn fra_retransmits_every_132_us() {
        let mut cfg = ScenarioConfig::baseline(3.0);
        cfg.attack = Some(attack(AttackKind::ForcedRetransmission { v_attack_h: 5.0 }, 1.0, 2.0));
        let (trace, s) = run(&cfg);
        assert_eq!(s.message_indicator, vec![1, 1, 1]);
        assert!(s.attack_success);
        assert_eq!(s.first_failure_reason.as_deref(), Some("form_error@48"));
        let starts: Vec<u64> = trace
            .records()
            .iter()
            .filter(|r| matches!(r.kind, TraceKind::FrameSent | TraceKind::Retransmission))
            .filter(|r| r.time.0 >= 1_000_000_000 && r.time.0 < 1_001_000_000)
            .filter(|r| !r.detail.contains("folded"))
            .map(|r| r.time.0)
            .collect();
        assert!(starts.len() > 3);
        for w in starts.windows(2) {
            assert_eq!(w[1] - w[0], 132_000);
        }
    }

    #[test]
    fn fuse_mitigates_dos() {
        let mut cfg = ScenarioConfig::baseline(6.0);
        cfg.attack = Some(attack(AttackKind::Dos { v_attack_l: 5.0 }, 2.0, 4.0));
        cfg.irs = Some(fuse());
        let (trace, s) = run(&cfg);
        assert_eq!(s.message_indicator, vec![1; 6]);
        assert!(!s.damaged);
        assert_eq!(trace.count(TraceKind::FuseBlown), 1);
    }

    #[test]
    fn active_overcurrent_damage_and_fuse_tie() {
        let mut cfg = ScenarioConfig::baseline(2.0);
        cfg.attack = Some(attack(AttackKind::ActiveOvercurrent, 0.5, 1.5));
        let (_, s) = run(&cfg);
        assert!(s.damaged);
        let dt = s.damage_time.unwrap() - 0.5;
        assert!(dt <= 1e-6 + 1e-12, "{dt}");
        cfg.irs = Some(fuse());
        let (_, s) = run(&cfg);
        assert!(!s.damaged);
        cfg.irs = Some(IrsConfig {
            kind: IrsKind::Resettable {
                rating: 0.010,
                opening_time: 1e-6,
                leakage_current: 0.100,
            },
            pins: IrsPins::Both,
        });
        let (_, s) = run(&cfg);
        assert!(s.damaged);
    }
}
