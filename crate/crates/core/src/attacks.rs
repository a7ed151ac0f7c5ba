//! Attack catalogue: pin-mode classes, per-attack pin settings and closed-form
//! threshold predictors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::electrical::{
    extends_recovery, solve_bus, BusTopology, Drive, ElectricalError, Line, PinMode, PinShape, PulseShape,
    TransceiverParams, TransitionParams,
};
use crate::link::{decide_bit, BitDecision, BitTiming};
use crate::time::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("attack window must satisfy t_start < t_end (got {start} .. {end})")]
    EmptyWindow { start: SimTime, end: SimTime },
    #[error(transparent)]
    Pin(#[from] ElectricalError),
    #[error("topology has no VIDS node")]
    NoVids,
    #[error("topology needs a transmitting node besides the VIDS")]
    NoTransmitter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackClass {
    NotAnAttack,
    Dos,
    PassiveOvercurrent,
    ForcedRetransmission,
    ActiveOvercurrent,
    DosOrPassiveOvercurrent,
    DosOrActiveOvercurrent,
    Pulse,
    /// Combinations outside the analysed table (two outputs high, two pulses, ...).
    Unlisted,
}

/// Class of an analog pin configuration `(P_H, P_L)`.
pub fn classify_pin_combo(p_h: &PinMode, p_l: &PinMode) -> AttackClass {
    use PinShape::*;
    match (p_h.shape(), p_l.shape()) {
        (Input, Input) => AttackClass::NotAnAttack,
        (Input, High) => AttackClass::Dos,
        (Input, Low) => AttackClass::PassiveOvercurrent,
        (High, Input) => AttackClass::ForcedRetransmission,
        (High, Low) => AttackClass::ActiveOvercurrent,
        (Low, Input) | (Low, Low) => AttackClass::DosOrPassiveOvercurrent,
        (Low, High) => AttackClass::DosOrActiveOvercurrent,
        (Pulse, Input) | (Input, Pulse) => AttackClass::Pulse,
        _ => AttackClass::Unlisted,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AttackKind {
    PassiveOvercurrent,
    ActiveOvercurrent,
    Dos { v_attack_l: f64 },
    ForcedRetransmission { v_attack_h: f64 },
    Pulse { line: Line, shape: PulseShape },
}

impl AttackKind {
    pub fn class(&self) -> AttackClass {
        match self {
            AttackKind::PassiveOvercurrent => AttackClass::PassiveOvercurrent,
            AttackKind::ActiveOvercurrent => AttackClass::ActiveOvercurrent,
            AttackKind::Dos { .. } => AttackClass::Dos,
            AttackKind::ForcedRetransmission { .. } => AttackClass::ForcedRetransmission,
            AttackKind::Pulse { .. } => AttackClass::Pulse,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::PassiveOvercurrent => "passive_overcurrent",
            AttackKind::ActiveOvercurrent => "active_overcurrent",
            AttackKind::Dos { .. } => "dos",
            AttackKind::ForcedRetransmission { .. } => "fra",
            AttackKind::Pulse { .. } => "pulse",
        }
    }

    /// Pin modes while the attack is active; pulses are left unresolved.
    pub fn pin_modes(&self) -> Result<(PinMode, PinMode), AttackError> {
        let modes = match *self {
            AttackKind::PassiveOvercurrent => (PinMode::Input, PinMode::OutputLow),
            AttackKind::ActiveOvercurrent => (PinMode::output_high(PinMode::MAX_OUTPUT)?, PinMode::OutputLow),
            AttackKind::Dos { v_attack_l } => (PinMode::Input, PinMode::output_high(v_attack_l)?),
            AttackKind::ForcedRetransmission { v_attack_h } => (PinMode::output_high(v_attack_h)?, PinMode::Input),
            AttackKind::Pulse { line, shape } => {
                let p = PinMode::pulse(shape.period, shape.duty, shape.v_high, shape.v_low)?;
                match line {
                    Line::Canh => (p, PinMode::Input),
                    Line::Canl => (PinMode::Input, p),
                }
            }
        };
        Ok(modes)
    }
}

/// An attack launched from the VIDS pins over `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    kind: AttackKind,
    t_start: SimTime,
    t_end: SimTime,
    /// Delay of the first pulse high phase after `t_start`.
    phase_offset: u64,
    modes: (PinMode, PinMode),
}

impl AttackSpec {
    pub fn new(kind: AttackKind, t_start: SimTime, t_end: SimTime) -> Result<Self, AttackError> {
        if t_start >= t_end {
            return Err(AttackError::EmptyWindow {
                start: t_start,
                end: t_end,
            });
        }
        Ok(Self {
            kind,
            t_start,
            t_end,
            phase_offset: 0,
            modes: kind.pin_modes()?,
        })
    }

    pub fn with_phase_offset(mut self, ns: u64) -> Self {
        self.phase_offset = ns;
        self
    }

    pub fn kind(&self) -> &AttackKind {
        &self.kind
    }

    pub fn t_start(&self) -> SimTime {
        self.t_start
    }

    pub fn t_end(&self) -> SimTime {
        self.t_end
    }

    pub fn phase_offset(&self) -> u64 {
        self.phase_offset
    }

    pub fn is_active(&self, t: SimTime) -> bool {
        self.t_start <= t && t < self.t_end
    }

    /// Pin modes in effect at `t`, pulses unresolved.
    pub fn pin_override(&self, t: SimTime) -> (PinMode, PinMode) {
        if self.is_active(t) {
            self.modes
        } else {
            (PinMode::Input, PinMode::Input)
        }
    }

    /// Instantaneous pin levels at `t`.
    pub fn pin_levels(&self, t: SimTime) -> (PinMode, PinMode) {
        let (ph, pl) = self.pin_override(t);
        let since = self.since_origin(t);
        (ph.at(since), pl.at(since))
    }

    /// Pulse timing in integer nanoseconds, if this is a pulse attack.
    pub fn pulse_timing(&self) -> Option<PulseTiming> {
        match self.kind {
            AttackKind::Pulse { line, shape } => Some(PulseTiming {
                line,
                period: (shape.period * 1e9).round() as u64,
                high: (shape.high_time() * 1e9).round() as u64,
                origin: self.t_start + self.phase_offset,
            }),
            _ => None,
        }
    }

    fn since_origin(&self, t: SimTime) -> f64 {
        t.as_secs_f64() - (self.t_start + self.phase_offset).as_secs_f64()
    }
}

/// Pulse phase bookkeeping with exact nanosecond edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PulseTiming {
    pub line: Line,
    pub period: u64,
    pub high: u64,
    pub origin: SimTime,
}

impl PulseTiming {
    fn phase(&self, t: SimTime) -> u64 {
        (t.0 as i128 - self.origin.0 as i128).rem_euclid(self.period as i128) as u64
    }

    pub fn is_high(&self, t: SimTime) -> bool {
        self.phase(t) < self.high
    }

    /// First pulse edge strictly after `t`.
    pub fn next_edge(&self, t: SimTime) -> SimTime {
        let ph = self.phase(t);
        if ph < self.high {
            t + (self.high - ph)
        } else {
            t + (self.period - ph)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Overcurrent {
    Passive,
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OvercurrentReport {
    /// Largest pin current magnitude in the attacked state.
    pub current: f64,
    pub i_max: f64,
}

impl OvercurrentReport {
    pub fn exceeds_limit(&self) -> bool {
        self.current > self.i_max
    }
}

fn vids_index(topo: &BusTopology) -> Result<usize, AttackError> {
    topo.nodes.iter().position(|n| n.taps.is_some()).ok_or(AttackError::NoVids)
}

fn attacked_solution(
    pins: (PinMode, PinMode),
    dominant: bool,
    topo: &BusTopology,
    params: &TransceiverParams,
) -> Result<crate::electrical::BusSolution, AttackError> {
    let vids = vids_index(topo)?;
    let n = topo.nodes.len();
    let mut drive = vec![Drive::Recessive; n];
    if dominant {
        let tx = (0..n).find(|&k| k != vids).ok_or(AttackError::NoTransmitter)?;
        drive[tx] = Drive::Dominant;
    }
    let mut modes = vec![(PinMode::Input, PinMode::Input); n];
    modes[vids] = pins;
    Ok(solve_bus(&drive, &modes, topo, params)?)
}

/// Current driven through the VIDS pins by an overcurrent attack: a dominant
/// bit for the passive variant, the idle bus for the active one.
pub fn overcurrent_current(
    variant: Overcurrent,
    params: &TransceiverParams,
    topo: &BusTopology,
    i_max: f64,
) -> Result<OvercurrentReport, AttackError> {
    let (kind, dominant) = match variant {
        Overcurrent::Passive => (AttackKind::PassiveOvercurrent, true),
        Overcurrent::Active => (AttackKind::ActiveOvercurrent, false),
    };
    let vids = vids_index(topo)?;
    let sol = attacked_solution(kind.pin_modes()?, dominant, topo, params)?;
    Ok(OvercurrentReport {
        current: sol.pins[vids].max_abs(),
        i_max,
    })
}

/// Grid `from, from+step, ..., to` computed as integer multiples of `step`.
pub fn grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    let n = ((to - from) / step + 1e-9).floor() as usize;
    (0..=n).map(|k| from + k as f64 * step).map(|v| (v * 1e9).round() / 1e9).collect()
}

/// Whether a DoS at `v` hides dominant bits from receivers.
pub fn dos_blocks(v: f64, params: &TransceiverParams, topo: &BusTopology, timing: &BitTiming) -> Result<bool, AttackError> {
    let sol = attacked_solution(AttackKind::Dos { v_attack_l: v }.pin_modes()?, true, topo, params)?;
    Ok(decide_bit(sol.voltages.v_diff(), BitDecision::Recessive, timing) == BitDecision::Recessive)
}

/// Smallest DoS level on the 0.1 V grid that blocks communication.
pub fn min_dos_voltage(
    params: &TransceiverParams,
    topo: &BusTopology,
    timing: &BitTiming,
) -> Result<Option<f64>, AttackError> {
    for v in grid(0.1, 5.0, 0.1) {
        if dos_blocks(v, params, topo, timing)? {
            return Ok(Some(v));
        }
    }
    Ok(None)
}

/// Differential voltage the transmitter samples at the ACK delimiter while
/// CANH is held at `v`.
pub fn fra_ack_delimiter_v_diff(
    v: f64,
    params: &TransceiverParams,
    transition: &TransitionParams,
    topo: &BusTopology,
    timing: &BitTiming,
) -> Result<f64, AttackError> {
    let modes = AttackKind::ForcedRetransmission { v_attack_h: v }.pin_modes()?;
    let dom = attacked_solution(modes, true, topo, params)?.voltages.v_diff();
    let rec = attacked_solution(modes, false, topo, params)?.voltages.v_diff();
    if !extends_recovery(v, params) {
        return Ok(rec);
    }
    let elapsed = timing.sample_point * timing.bit_time() - timing.ack_delay;
    Ok(rec + (dom - rec) * (-elapsed / transition.tau_rc).exp())
}

pub fn fra_succeeds(
    v: f64,
    params: &TransceiverParams,
    transition: &TransitionParams,
    topo: &BusTopology,
    timing: &BitTiming,
) -> Result<bool, AttackError> {
    let v_diff = fra_ack_delimiter_v_diff(v, params, transition, topo, timing)?;
    Ok(decide_bit(v_diff, BitDecision::Dominant, timing) == BitDecision::Dominant)
}

/// Smallest CANH level on the 0.5 V grid from 2.5 V that forces retransmission.
pub fn min_fra_voltage(
    params: &TransceiverParams,
    transition: &TransitionParams,
    topo: &BusTopology,
    timing: &BitTiming,
) -> Result<Option<f64>, AttackError> {
    for v in grid(2.5, 5.0, 0.5) {
        if fra_succeeds(v, params, transition, topo, timing)? {
            return Ok(Some(v));
        }
    }
    Ok(None)
}

/// Length of the dominant-bit blackout produced by each pulse period.
pub fn pulse_blocking_time(line: Line, period: f64, duty: f64, transition: &TransitionParams) -> f64 {
    match line {
        Line::Canl => period * duty,
        Line::Canh => period * (1.0 - duty) + transition.transition_extension,
    }
}

/// Continuous lower bound on the pulse period that still corrupts bits.
pub fn pulse_period_bound(line: Line, duty: f64, timing: &BitTiming, transition: &TransitionParams) -> f64 {
    match line {
        Line::Canl => timing.decode_hold / duty,
        Line::Canh => (timing.decode_hold - transition.transition_extension) / (1.0 - duty),
    }
}

/// Smallest period on the `[from, to]` nanosecond grid whose blackout
/// reaches `decode_hold`.
pub fn min_pulse_period(
    line: Line,
    duty: f64,
    timing: &BitTiming,
    transition: &TransitionParams,
    from_ns: u64,
    to_ns: u64,
    step_ns: u64,
) -> Option<u64> {
    let hold = timing.decode_hold_nanos();
    let ext = (transition.transition_extension * 1e9).round() as u64;
    (from_ns..=to_ns).step_by(step_ns as usize).find(|&p| {
        let high = (p as f64 * duty).round() as u64;
        let blocking = match line {
            Line::Canl => high,
            Line::Canh => p - high + ext,
        };
        blocking >= hold
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fixtures() -> (TransceiverParams, TransitionParams, BusTopology, BitTiming) {
        (
            TransceiverParams::default(),
            TransitionParams::default(),
            BusTopology::with_vids(2),
            BitTiming::default(),
        )
    }

    #[test]
    fn pin_table() {
        let hi = PinMode::OutputHigh(5.0);
        let lo = PinMode::OutputLow;
        let inp = PinMode::Input;
        let pulse = PinMode::pulse(1e-6, 0.5, 5.0, 0.0).unwrap();
        let rows = [
            (inp, inp, AttackClass::NotAnAttack),
            (inp, hi, AttackClass::Dos),
            (inp, lo, AttackClass::PassiveOvercurrent),
            (hi, inp, AttackClass::ForcedRetransmission),
            (hi, lo, AttackClass::ActiveOvercurrent),
            (lo, inp, AttackClass::DosOrPassiveOvercurrent),
            (lo, lo, AttackClass::DosOrPassiveOvercurrent),
            (lo, hi, AttackClass::DosOrActiveOvercurrent),
            (pulse, inp, AttackClass::Pulse),
            (inp, pulse, AttackClass::Pulse),
        ];
        for (h, l, c) in rows {
            assert_eq!(classify_pin_combo(&h, &l), c, "{h:?}/{l:?}");
        }
        assert_eq!(classify_pin_combo(&hi, &hi), AttackClass::Unlisted);
    }

    #[test]
    fn override_respects_window() {
        let a = AttackSpec::new(
            AttackKind::Dos { v_attack_l: 5.0 },
            SimTime::from_secs_f64(10.0),
            SimTime::from_secs_f64(30.0),
        )
        .unwrap();
        assert_eq!(
            a.pin_override(SimTime::from_secs_f64(9.999)),
            (PinMode::Input, PinMode::Input)
        );
        assert_eq!(
            a.pin_override(SimTime::from_secs_f64(10.0)),
            (PinMode::Input, PinMode::OutputHigh(5.0))
        );
        assert_eq!(
            a.pin_override(SimTime::from_secs_f64(30.0)),
            (PinMode::Input, PinMode::Input)
        );
    }

    #[test]
    fn pulse_phase_arithmetic() {
        let shape = PulseShape {
            period: 1e-6,
            duty: 0.5,
            v_high: 5.0,
            v_low: 0.0,
        };
        let t0 = SimTime::from_nanos(5_000);
        let a = AttackSpec::new(AttackKind::Pulse { line: Line::Canl, shape }, t0, t0 + 100_000).unwrap();
        assert_eq!(a.pin_levels(t0 + 250), (PinMode::Input, PinMode::OutputHigh(5.0)));
        assert_eq!(a.pin_levels(t0 + 750), (PinMode::Input, PinMode::OutputLow));
        let p = a.pulse_timing().unwrap();
        assert!(p.is_high(t0 + 250));
        assert_eq!(p.next_edge(t0 + 250), t0 + 500);
        assert_eq!(p.next_edge(t0 + 500), t0 + 1000);
        let shifted = a.with_phase_offset(300).pulse_timing().unwrap();
        assert!(!shifted.is_high(t0 + 250));
        assert!(shifted.is_high(t0 + 300));
    }

    #[test]
    fn overcurrent_matches_ohms_law() {
        let (p, _, topo, _) = fixtures();
        let passive = overcurrent_current(Overcurrent::Passive, &p, &topo, 0.040).unwrap();
        assert_abs_diff_eq!(passive.current, 3.5 / 60.0, epsilon = 1e-12);
        assert!(passive.exceeds_limit());
        let active = overcurrent_current(Overcurrent::Active, &p, &topo, 0.040).unwrap();
        assert_abs_diff_eq!(active.current, 5.0 / 60.0, epsilon = 1e-12);
    }

    #[test]
    fn predictors_with_defaults() {
        let (p, tr, topo, timing) = fixtures();
        assert_eq!(min_dos_voltage(&p, &topo, &timing).unwrap(), Some(2.2));
        assert_eq!(min_fra_voltage(&p, &tr, &topo, &timing).unwrap(), Some(4.5));
        assert_eq!(min_pulse_period(Line::Canl, 0.5, &timing, &tr, 500, 700, 10), Some(680));
        assert_eq!(min_pulse_period(Line::Canh, 0.5, &timing, &tr, 500, 700, 10), Some(570));
        let t350 = BitTiming {
            decode_hold: 350e-9,
            ..timing
        };
        assert_abs_diff_eq!(pulse_period_bound(Line::Canl, 0.5, &t350, &tr), 700e-9, epsilon = 1e-15);
    }

    #[test]
    fn grid_is_exact() {
        let g = grid(0.1, 5.0, 0.1);
        assert_eq!(g.len(), 50);
        assert_eq!(g[21], 2.2);
        assert_eq!(grid(2.5, 5.0, 0.5), vec![2.5, 3.0, 3.5, 4.0, 4.5, 5.0]);
    }
}
