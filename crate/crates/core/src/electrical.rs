//! Bus electrical layer.
//!
//! Resolves the DC operating point of the two bus lines given the transceiver
//! drive states, the analog-pin modes of any VIDS taps and the termination
//! network. The network is linear within each diode/limit region, so the
//! solver enumerates the (at most 16) regions and returns the first
//! self-consistent one. No iteration is involved.
//!
//! Driver model. A transceiver driving dominant is two switched paths:
//!
//! * the CANH high-side path, which can only source current, and
//! * the CANL low-side path, which can only sink current.
//!
//! While a path holds its own line against nothing but the termination it
//! sits at its saturated target (3.5 V / 1.5 V with default parameters). When
//! an external source fights the path it is overpowered and presents its
//! Thevenin equivalent instead: `canh_dominant` behind `r_drive_high` for the
//! high side, `r_sink_offset` behind `r_sink` for the low side. The high side
//! is also exposed through `r_drive_high` when CANL is held above the sink
//! offset, since the low side is then conducting source current rather than
//! termination current.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const REGION_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElectricalError {
    #[error("two sources drive {line} simultaneously")]
    ConflictingSources { line: Line },
    #[error("pulse pin mode must be resolved to an instantaneous level before solving")]
    UnresolvedPulse,
    #[error("pin list has {pins} entries but the topology has {nodes} nodes")]
    TopologyMismatch { pins: usize, nodes: usize },
    #[error("invalid voltage {0} V")]
    InvalidVoltage(f64),
    #[error("invalid parameter {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("no consistent operating region found")]
    NoOperatingRegion,
}

pub type Result<T> = std::result::Result<T, ElectricalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Line {
    Canh,
    Canl,
}

impl std::fmt::Display for Line {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Line::Canh => "CANH",
            Line::Canl => "CANL",
        })
    }
}

/// What a transceiver is driving onto the bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Drive {
    Dominant,
    Recessive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineVoltages {
    v_canh: f64,
    v_canl: f64,
}

impl LineVoltages {
    pub fn new(v_canh: f64, v_canl: f64) -> Result<Self> {
        for v in [v_canh, v_canl] {
            if !v.is_finite() {
                return Err(ElectricalError::InvalidVoltage(v));
            }
        }
        Ok(Self { v_canh, v_canl })
    }

    pub fn v_canh(&self) -> f64 {
        self.v_canh
    }

    pub fn v_canl(&self) -> f64 {
        self.v_canl
    }

    pub fn v_diff(&self) -> f64 {
        self.v_canh - self.v_canl
    }

    pub fn on(&self, line: Line) -> f64 {
        match line {
            Line::Canh => self.v_canh,
            Line::Canl => self.v_canl,
        }
    }
}

/// Two-level periodic output of an analog pin. Phase origin is the high phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseShape {
    pub period: f64,
    pub duty: f64,
    pub v_high: f64,
    pub v_low: f64,
}

impl PulseShape {
    pub fn high_time(&self) -> f64 {
        self.period * self.duty
    }

    pub fn is_high_at(&self, since_origin: f64) -> bool {
        since_origin.rem_euclid(self.period) < self.high_time()
    }
}

/// Analog pin state of a VIDS microcontroller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PinMode {
    Input,
    OutputHigh(f64),
    OutputLow,
    Pulse(PulseShape),
}

/// Shape of a pin mode with its parameters stripped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PinShape {
    Input,
    High,
    Low,
    Pulse,
}

impl PinMode {
    pub const MAX_OUTPUT: f64 = 5.0;

    pub fn output_high(level: f64) -> Result<Self> {
        if !(level > 0.0 && level <= Self::MAX_OUTPUT) {
            return Err(ElectricalError::InvalidVoltage(level));
        }
        Ok(PinMode::OutputHigh(level))
    }

    /// Builds a pulse mode. A duty of 1 or 0 collapses to the constant level.
    pub fn pulse(period: f64, duty: f64, v_high: f64, v_low: f64) -> Result<Self> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(ElectricalError::InvalidParameter {
                name: "period",
                value: period,
            });
        }
        if !(0.0..=1.0).contains(&duty) {
            return Err(ElectricalError::InvalidParameter {
                name: "duty",
                value: duty,
            });
        }
        if duty == 1.0 {
            return Self::output_high(v_high);
        }
        if duty == 0.0 {
            return Ok(PinMode::OutputLow);
        }
        Self::output_high(v_high)?;
        if !(0.0..Self::MAX_OUTPUT).contains(&v_low) {
            return Err(ElectricalError::InvalidVoltage(v_low));
        }
        Ok(PinMode::Pulse(PulseShape {
            period,
            duty,
            v_high,
            v_low,
        }))
    }

    pub fn shape(&self) -> PinShape {
        match self {
            PinMode::Input => PinShape::Input,
            PinMode::OutputHigh(_) => PinShape::High,
            PinMode::OutputLow => PinShape::Low,
            PinMode::Pulse(_) => PinShape::Pulse,
        }
    }

    /// Instantaneous mode `since_origin` seconds after the pulse phase origin.
    pub fn at(&self, since_origin: f64) -> PinMode {
        match self {
            PinMode::Pulse(p) => {
                if p.is_high_at(since_origin) {
                    PinMode::OutputHigh(p.v_high)
                } else if p.v_low == 0.0 {
                    PinMode::OutputLow
                } else {
                    PinMode::OutputHigh(p.v_low)
                }
            }
            other => *other,
        }
    }

    /// Output level for constant output modes.
    pub fn level(&self) -> Option<f64> {
        match self {
            PinMode::OutputHigh(v) => Some(*v),
            PinMode::OutputLow => Some(0.0),
            _ => None,
        }
    }

    pub fn is_input(&self) -> bool {
        matches!(self, PinMode::Input)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransceiverParams {
    pub v_dd: f64,
    pub v_ref: f64,
    pub diode_drop: f64,
    /// Saturation drop of a switched driver transistor.
    pub v_ce_sat: f64,
    pub r_drive_high: f64,
    pub r_sink_offset: f64,
    pub r_sink: f64,
    pub reverse_blocking: bool,
}

impl Default for TransceiverParams {
    fn default() -> Self {
        Self {
            v_dd: 5.0,
            v_ref: 2.5,
            diode_drop: 0.7,
            v_ce_sat: 0.1,
            r_drive_high: 26.7,
            r_sink_offset: 1.4,
            r_sink: 12.8,
            reverse_blocking: true,
        }
    }
}

impl TransceiverParams {
    /// CANH level while driving dominant into a lightly loaded bus.
    pub fn canh_dominant(&self) -> f64 {
        self.v_dd - 2.0 * self.diode_drop - self.v_ce_sat
    }

    /// CANL level while driving dominant into a lightly loaded bus.
    pub fn canl_dominant(&self) -> f64 {
        2.0 * self.diode_drop + self.v_ce_sat
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, f64); 2] =
            [("r_drive_high", self.r_drive_high), ("r_sink", self.r_sink)];
        for (name, value) in checks {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ElectricalError::InvalidParameter { name, value });
            }
        }
        for (name, value) in [
            ("v_dd", self.v_dd),
            ("v_ref", self.v_ref),
            ("diode_drop", self.diode_drop),
            ("v_ce_sat", self.v_ce_sat),
            ("r_sink_offset", self.r_sink_offset),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ElectricalError::InvalidParameter { name, value });
            }
        }
        if self.canh_dominant() <= self.canl_dominant() {
            return Err(ElectricalError::InvalidParameter {
                name: "v_dd",
                value: self.v_dd,
            });
        }
        Ok(())
    }
}

/// Timing of the dominant-to-recessive transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransitionParams {
    /// RC constant of CANL climbing towards an externally held CANH.
    pub tau_rc: f64,
    /// The transceiver's own dominant-to-recessive transition time.
    pub nominal_transition: f64,
    /// Extra time CANH needs to recover after a pulse low phase.
    pub transition_extension: f64,
}

impl Default for TransitionParams {
    fn default() -> Self {
        Self {
            tau_rc: 1.16e-6 / 7f64.ln(),
            nominal_transition: 100e-9,
            transition_extension: 55e-9,
        }
    }
}

/// Electrical effect of the in-line device between a pin and its bus line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinTap {
    pub connected: bool,
    pub series_resistance: f64,
}

impl Default for PinTap {
    fn default() -> Self {
        Self::WIRE
    }
}

impl PinTap {
    pub const WIRE: PinTap = PinTap {
        connected: true,
        series_resistance: 0.0,
    };
    pub const OPEN: PinTap = PinTap {
        connected: false,
        series_resistance: 0.0,
    };
}

/// The pair of analog-pin taps of one VIDS node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VidsTaps {
    pub ph: PinTap,
    pub pl: PinTap,
    /// Output resistance of the pin driver.
    pub source_resistance: f64,
    /// Maximum current an output pin can deliver, if limited.
    pub current_limit: Option<f64>,
}

impl Default for VidsTaps {
    fn default() -> Self {
        Self {
            ph: PinTap::WIRE,
            pl: PinTap::WIRE,
            source_resistance: 0.0,
            current_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusNode {
    pub name: String,
    pub taps: Option<VidsTaps>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusTopology {
    /// Resistance of each of the two terminators.
    pub termination: f64,
    pub nodes: Vec<BusNode>,
}

impl Default for BusTopology {
    fn default() -> Self {
        Self {
            termination: 120.0,
            nodes: Vec::new(),
        }
    }
}

impl BusTopology {
    pub fn r_load(&self) -> f64 {
        let r = self.termination;
        r * r / (r + r)
    }

    /// Testbed layout: a VIDS node followed by `others` plain transceivers.
    pub fn with_vids(others: usize) -> Self {
        let mut nodes = vec![BusNode {
            name: "vids".into(),
            taps: Some(VidsTaps::default()),
        }];
        nodes.extend((0..others).map(|i| BusNode {
            name: format!("ecu{i}"),
            taps: None,
        }));
        Self {
            termination: 120.0,
            nodes,
        }
    }
}

/// Pin currents, positive when flowing into the microcontroller pin.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PinCurrents {
    pub i_ph: f64,
    pub i_pl: f64,
}

impl PinCurrents {
    pub fn on(&self, line: Line) -> f64 {
        match line {
            Line::Canh => self.i_ph,
            Line::Canl => self.i_pl,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.i_ph.abs().max(self.i_pl.abs())
    }
}

/// Driver path currents of one transceiver.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DriverCurrents {
    /// Current sourced into CANH.
    pub high_side: f64,
    /// Current sunk out of CANL.
    pub low_side: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusSolution {
    pub voltages: LineVoltages,
    pub pins: Vec<PinCurrents>,
    pub drivers: Vec<DriverCurrents>,
    /// Current through the termination from CANH to CANL.
    pub termination_current: f64,
}

impl BusSolution {
    /// Net current into the CANH and CANL nodes; zero for a valid solution.
    pub fn kirchhoff_residual(&self) -> [f64; 2] {
        let mut h = -self.termination_current;
        let mut l = self.termination_current;
        for d in &self.drivers {
            h += d.high_side;
            l -= d.low_side;
        }
        for p in &self.pins {
            h -= p.i_ph;
            l -= p.i_pl;
        }
        [h, l]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Direction {
    Both,
    SourceOnly,
    SinkOnly,
}

/// A voltage source behind a resistance; `r == 0` is ideal.
#[derive(Debug, Clone, Copy)]
struct Branch {
    e: f64,
    r: f64,
    direction: Direction,
    limit: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BranchState {
    Off,
    On,
    /// Current limited, sourcing (+1) or sinking (-1).
    Limited(f64),
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeSum {
    fixed: Option<f64>,
    conflict: bool,
    g: f64,
    j: f64,
}

impl NodeSum {
    fn add(&mut self, b: &Branch, state: BranchState) {
        match state {
            BranchState::Off => {}
            BranchState::Limited(sign) => self.j += sign * b.limit.unwrap_or(0.0),
            BranchState::On if b.r == 0.0 => match self.fixed {
                Some(v) if (v - b.e).abs() > REGION_EPS => self.conflict = true,
                _ => self.fixed = Some(b.e),
            },
            BranchState::On => {
                self.g += 1.0 / b.r;
                self.j += b.e / b.r;
            }
        }
    }
}

fn branch_states(b: Option<&Branch>, reverse_blocking: bool) -> Vec<BranchState> {
    match b {
        None => vec![BranchState::Off],
        Some(b) => {
            let mut states = vec![BranchState::On];
            if b.direction != Direction::Both && reverse_blocking {
                states.push(BranchState::Off);
            }
            if b.limit.is_some() {
                states.push(BranchState::Limited(1.0));
                states.push(BranchState::Limited(-1.0));
            }
            states
        }
    }
}

/// Current delivered into the node by a branch whose node voltage is `v`.
/// Ideal branches return `None`; their current comes from KCL.
fn branch_current(b: &Branch, state: BranchState, v: f64) -> Option<f64> {
    match state {
        BranchState::Off => Some(0.0),
        BranchState::Limited(sign) => Some(sign * b.limit.unwrap_or(0.0)),
        BranchState::On if b.r == 0.0 => None,
        BranchState::On => Some((b.e - v) / b.r),
    }
}

fn branch_consistent(
    b: &Branch,
    state: BranchState,
    v: f64,
    i: f64,
    reverse_blocking: bool,
) -> bool {
    let eps = 1e-9;
    match state {
        BranchState::Off => match b.direction {
            Direction::SourceOnly => v >= b.e - REGION_EPS,
            Direction::SinkOnly => v <= b.e + REGION_EPS,
            Direction::Both => true,
        },
        BranchState::On => {
            let direction_ok = !reverse_blocking
                || match b.direction {
                    Direction::SourceOnly => i >= -eps,
                    Direction::SinkOnly => i <= eps,
                    Direction::Both => true,
                };
            let limit_ok = b.limit.is_none_or(|lim| i.abs() <= lim + eps);
            direction_ok && limit_ok
        }
        BranchState::Limited(sign) => {
            if sign > 0.0 {
                v <= b.e + REGION_EPS
            } else {
                v >= b.e - REGION_EPS
            }
        }
    }
}

struct LineBranches {
    attacker: Option<(usize, Branch)>,
    driver: Option<(usize, Branch)>,
}

/// Steady-state DC solution of the bus.
///
/// `pins[k]` gives the (P_H, P_L) modes of node `k`; nodes without VIDS taps
/// must pass `(Input, Input)`. Pulse modes must first be resolved with
/// [`PinMode::at`].
pub fn solve_bus(
    drive: &[Drive],
    pins: &[(PinMode, PinMode)],
    topo: &BusTopology,
    params: &TransceiverParams,
) -> Result<BusSolution> {
    let n = topo.nodes.len();
    if pins.len() != n || drive.len() != n {
        return Err(ElectricalError::TopologyMismatch {
            pins: pins.len().min(drive.len()),
            nodes: n,
        });
    }
    let mut attackers: [Option<(usize, Branch)>; 2] = [None, None];
    for (k, (node, (ph, pl))) in topo.nodes.iter().zip(pins).enumerate() {
        for (slot, (mode, line)) in [(ph, Line::Canh), (pl, Line::Canl)].into_iter().enumerate() {
            if mode.is_input() {
                continue;
            }
            let Some(taps) = node.taps else { continue };
            let tap = if line == Line::Canh { taps.ph } else { taps.pl };
            if !tap.connected {
                continue;
            }
            let e = match mode {
                PinMode::Pulse(_) => return Err(ElectricalError::UnresolvedPulse),
                m => m.level().unwrap_or(0.0),
            };
            if attackers[slot].is_some() {
                return Err(ElectricalError::ConflictingSources { line });
            }
            attackers[slot] = Some((
                k,
                Branch {
                    e,
                    r: taps.source_resistance + tap.series_resistance,
                    direction: Direction::Both,
                    limit: taps.current_limit,
                },
            ));
        }
    }

    let dominant: Vec<usize> = (0..n).filter(|&k| drive[k] == Drive::Dominant).collect();
    let count = dominant.len();
    let h_attacked = attackers[0].is_some();
    let l_attacked = attackers[1].is_some();
    let l_above_offset = attackers[1].is_some_and(|(_, b)| b.e > params.r_sink_offset);
    let drivers: [Option<(usize, Branch)>; 2] = if count == 0 {
        [None, None]
    } else {
        let c = count as f64;
        let high_r = if h_attacked || l_above_offset {
            params.r_drive_high / c
        } else {
            0.0
        };
        let (low_e, low_r) = if l_attacked {
            (params.r_sink_offset, params.r_sink / c)
        } else {
            (params.canl_dominant(), 0.0)
        };
        [
            Some((
                count,
                Branch {
                    e: params.canh_dominant(),
                    r: high_r,
                    direction: Direction::SourceOnly,
                    limit: None,
                },
            )),
            Some((
                count,
                Branch {
                    e: low_e,
                    r: low_r,
                    direction: Direction::SinkOnly,
                    limit: None,
                },
            )),
        ]
    };
    let lines = [
        LineBranches {
            attacker: attackers[0],
            driver: drivers[0],
        },
        LineBranches {
            attacker: attackers[1],
            driver: drivers[1],
        },
    ];

    let g_t = 1.0 / topo.r_load();
    let rb = params.reverse_blocking;
    let states: Vec<[Vec<BranchState>; 2]> = lines
        .iter()
        .map(|lb| {
            [
                branch_states(lb.driver.as_ref().map(|d| &d.1), rb),
                branch_states(lb.attacker.as_ref().map(|a| &a.1), rb),
            ]
        })
        .collect();

    for &dh in &states[0][0] {
        for &dl in &states[1][0] {
            for &ah in &states[0][1] {
                for &al in &states[1][1] {
                    let chosen = [[dh, ah], [dl, al]];
                    if let Some(sol) = try_region(&lines, chosen, g_t, params) {
                        return Ok(assemble(sol, &lines, &dominant, n, topo));
                    }
                }
            }
        }
    }
    Err(ElectricalError::NoOperatingRegion)
}

struct RegionSolution {
    v: [f64; 2],
    /// Currents into each node by [driver, attacker].
    i: [[f64; 2]; 2],
    i_term: f64,
}

fn try_region(
    lines: &[LineBranches; 2],
    chosen: [[BranchState; 2]; 2],
    g_t: f64,
    params: &TransceiverParams,
) -> Option<RegionSolution> {
    let mut sums = [NodeSum::default(); 2];
    for (k, lb) in lines.iter().enumerate() {
        if let Some((_, b)) = &lb.driver {
            sums[k].add(b, chosen[k][0]);
        }
        if let Some((_, b)) = &lb.attacker {
            sums[k].add(b, chosen[k][1]);
        }
        if sums[k].conflict {
            return None;
        }
    }
    let v = match (sums[0].fixed, sums[1].fixed) {
        (Some(h), Some(l)) => [h, l],
        (Some(h), None) => [h, (g_t * h + sums[1].j) / (g_t + sums[1].g)],
        (None, Some(l)) => [(g_t * l + sums[0].j) / (g_t + sums[0].g), l],
        (None, None) => {
            let a = g_t + sums[0].g;
            let d = g_t + sums[1].g;
            let det = a * d - g_t * g_t;
            if det.abs() < 1e-18 {
                if sums[0].j.abs() > 0.0 || sums[1].j.abs() > 0.0 {
                    return None;
                }
                [params.v_ref, params.v_ref]
            } else {
                [
                    (sums[0].j * d + g_t * sums[1].j) / det,
                    (a * sums[1].j + g_t * sums[0].j) / det,
                ]
            }
        }
    };
    if !v[0].is_finite() || !v[1].is_finite() {
        return None;
    }
    let i_term = (v[0] - v[1]) * g_t;
    let mut currents = [[0.0; 2]; 2];
    for (k, lb) in lines.iter().enumerate() {
        let term_in = if k == 0 { -i_term } else { i_term };
        let branches = [lb.driver.map(|d| d.1), lb.attacker.map(|a| a.1)];
        let mut known = term_in;
        let mut ideal = None;
        for (slot, b) in branches.iter().enumerate() {
            if let Some(b) = b {
                match branch_current(b, chosen[k][slot], v[k]) {
                    Some(i) => {
                        currents[k][slot] = i;
                        known += i;
                    }
                    None => ideal = Some(slot),
                }
            }
        }
        if let Some(slot) = ideal {
            currents[k][slot] = -known;
        }
        for (slot, b) in branches.iter().enumerate() {
            if let Some(b) = b {
                let i = currents[k][slot];
                if !branch_consistent(b, chosen[k][slot], v[k], i, params.reverse_blocking) {
                    return None;
                }
            }
        }
    }
    Some(RegionSolution {
        v,
        i: currents,
        i_term,
    })
}

fn assemble(
    sol: RegionSolution,
    lines: &[LineBranches; 2],
    dominant: &[usize],
    n: usize,
    topo: &BusTopology,
) -> BusSolution {
    let _ = topo;
    let mut pins = vec![PinCurrents::default(); n];
    let mut drivers = vec![DriverCurrents::default(); n];
    if let Some((k, _)) = lines[0].attacker {
        pins[k].i_ph = -sol.i[0][1];
    }
    if let Some((k, _)) = lines[1].attacker {
        pins[k].i_pl = -sol.i[1][1];
    }
    let c = dominant.len().max(1) as f64;
    for &k in dominant {
        drivers[k].high_side = sol.i[0][0] / c;
        drivers[k].low_side = -sol.i[1][0] / c;
    }
    BusSolution {
        voltages: LineVoltages {
            v_canh: sol.v[0],
            v_canl: sol.v[1],
        },
        pins,
        drivers,
        termination_current: sol.i_term,
    }
}

/// Exponential approach of a line voltage to its new steady level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryWaveform {
    v_start: f64,
    v_target: f64,
    tau_rc: f64,
}

impl RecoveryWaveform {
    pub fn v_start(&self) -> f64 {
        self.v_start
    }

    pub fn v_target(&self) -> f64 {
        self.v_target
    }

    pub fn at(&self, t: f64) -> f64 {
        self.v_target - (self.v_target - self.v_start) * (-t.max(0.0) / self.tau_rc).exp()
    }

    /// First time the waveform reaches `v`, if it ever does.
    pub fn time_to_reach(&self, v: f64) -> Option<f64> {
        let gap = self.v_target - self.v_start;
        if gap == 0.0 {
            return (v == self.v_target).then_some(0.0);
        }
        let remaining = (self.v_target - v) / gap;
        if remaining > 1.0 {
            return Some(0.0);
        }
        if remaining <= 0.0 {
            return None;
        }
        Some(-self.tau_rc * remaining.ln())
    }
}

pub fn recovery_waveform(v_start: f64, v_target: f64, tau_rc: f64) -> Result<RecoveryWaveform> {
    if !(tau_rc > 0.0 && tau_rc.is_finite()) {
        return Err(ElectricalError::InvalidParameter {
            name: "tau_rc",
            value: tau_rc,
        });
    }
    Ok(RecoveryWaveform {
        v_start,
        v_target,
        tau_rc,
    })
}

/// Whether an externally held CANH slows the CANL recovery.
///
/// At or below the transceiver's own dominant CANH level the transceiver
/// restores the lines itself with its nominal transition.
pub fn extends_recovery(v_attack_h: f64, params: &TransceiverParams) -> bool {
    v_attack_h >= params.canh_dominant()
}

/// Bit length time: start of a dominant bit until CANL reaches 90 % of its
/// recessive target (`v_attack_h`, or `v_ref` without an attack).
pub fn measure_tau_bit(
    dominant_duration: f64,
    v_attack_h: Option<f64>,
    params: &TransceiverParams,
    transition: &TransitionParams,
) -> Result<f64> {
    let nominal = dominant_duration + transition.nominal_transition;
    let Some(v) = v_attack_h else {
        return Ok(nominal);
    };
    if !(v > 0.0 && v.is_finite()) {
        return Err(ElectricalError::InvalidVoltage(v));
    }
    if !extends_recovery(v, params) {
        return Ok(nominal);
    }
    let wave = recovery_waveform(params.canl_dominant(), v, transition.tau_rc)?;
    let target = 0.9 * v.max(params.v_ref);
    Ok(dominant_duration + wave.time_to_reach(target).unwrap_or(0.0))
}

/// One constant-drive stretch of a bus schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEntry {
    pub duration: f64,
    /// Drive of the transmitting node.
    pub drive: Drive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentSegment {
    pub duration: f64,
    pub i_ph: f64,
    pub i_pl: f64,
}

/// Piecewise-constant pin currents of the VIDS node over a bit schedule.
///
/// `transmitter` drives the schedule, every other node stays recessive.
/// Pulse modes are phase-aligned with the start of the schedule.
pub fn pin_current_profile(
    schedule: &[ScheduleEntry],
    transmitter: usize,
    vids: usize,
    pins: (PinMode, PinMode),
    topo: &BusTopology,
    params: &TransceiverParams,
) -> Result<Vec<CurrentSegment>> {
    let n = topo.nodes.len();
    let mut out: Vec<CurrentSegment> = Vec::new();
    let mut t = 0.0;
    for entry in schedule {
        let mut drive = vec![Drive::Recessive; n];
        drive[transmitter] = entry.drive;
        let end = t + entry.duration;
        for (from, to) in pulse_edges(t, end, &pins) {
            let mut modes = vec![(PinMode::Input, PinMode::Input); n];
            modes[vids] = (pins.0.at(from), pins.1.at(from));
            let sol = solve_bus(&drive, &modes, topo, params)?;
            let seg = CurrentSegment {
                duration: to - from,
                i_ph: sol.pins[vids].i_ph,
                i_pl: sol.pins[vids].i_pl,
            };
            match out.last_mut() {
                Some(last) if last.i_ph == seg.i_ph && last.i_pl == seg.i_pl => {
                    last.duration += seg.duration
                }
                _ => out.push(seg),
            }
        }
        t = end;
    }
    Ok(out)
}

/// Splits `[from, to)` at every pulse edge of either pin.
fn pulse_edges(from: f64, to: f64, pins: &(PinMode, PinMode)) -> Vec<(f64, f64)> {
    let mut cuts = vec![from, to];
    for mode in [pins.0, pins.1] {
        if let PinMode::Pulse(p) = mode {
            let mut k = (from / p.period).floor();
            loop {
                let base = k * p.period;
                for edge in [base, base + p.high_time()] {
                    if edge > from && edge < to {
                        cuts.push(edge);
                    }
                }
                if base > to {
                    break;
                }
                k += 1.0;
            }
        }
    }
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn topo() -> BusTopology {
        BusTopology::with_vids(2)
    }

    fn solve(dominant: bool, ph: PinMode, pl: PinMode) -> BusSolution {
        let t = topo();
        let mut drive = vec![Drive::Recessive; t.nodes.len()];
        if dominant {
            drive[2] = Drive::Dominant;
        }
        let mut pins = vec![(PinMode::Input, PinMode::Input); t.nodes.len()];
        pins[0] = (ph, pl);
        solve_bus(&drive, &pins, &t, &TransceiverParams::default()).unwrap()
    }

    #[test]
    fn default_driver_levels() {
        let p = TransceiverParams::default();
        assert_abs_diff_eq!(p.canh_dominant(), 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p.canl_dominant(), 1.5, epsilon = 1e-12);
        assert_eq!(topo().r_load(), 60.0);
    }

    #[test]
    fn idle_bus_sits_at_reference() {
        let s = solve(false, PinMode::Input, PinMode::Input);
        assert_eq!(s.voltages.v_canh(), 2.5);
        assert_eq!(s.voltages.v_canl(), 2.5);
        assert_eq!(s.pins[0], PinCurrents::default());
    }

    #[test]
    fn dominant_levels() {
        let s = solve(true, PinMode::Input, PinMode::Input);
        assert_abs_diff_eq!(s.voltages.v_canh(), 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.voltages.v_canl(), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.voltages.v_diff(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn passive_overcurrent_sinks_into_pl() {
        let s = solve(true, PinMode::Input, PinMode::OutputLow);
        assert_abs_diff_eq!(s.pins[0].i_pl, 3.5 / 60.0, epsilon = 1e-12);
        let idle = solve(false, PinMode::Input, PinMode::OutputLow);
        assert_eq!(idle.pins[0].i_pl, 0.0);
    }

    #[test]
    fn active_overcurrent_is_bit_independent() {
        for dominant in [false, true] {
            let s = solve(dominant, PinMode::OutputHigh(5.0), PinMode::OutputLow);
            assert_abs_diff_eq!(s.pins[0].i_pl, 5.0 / 60.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s.pins[0].i_ph, -5.0 / 60.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn dos_pin_feeds_sink_path() {
        let s = solve(true, PinMode::Input, PinMode::OutputHigh(5.0));
        assert_abs_diff_eq!(s.pins[0].i_pl, -(5.0 - 1.4) / 12.8, epsilon = 1e-12);
        assert!((s.pins[0].i_pl.abs() - 0.281).abs() < 0.5e-3);
        assert_eq!(s.voltages.v_diff(), 0.0);
        // the high-side path is reverse biased
        assert_eq!(s.drivers[2].high_side, 0.0);
    }

    #[test]
    fn fra_pin_current_on_dominant_bits() {
        let s = solve(true, PinMode::OutputHigh(5.0), PinMode::Input);
        assert_abs_diff_eq!(s.pins[0].i_ph, -3.5 / 60.0, epsilon = 1e-12);
        let r = solve(false, PinMode::OutputHigh(5.0), PinMode::Input);
        assert_eq!(r.pins[0].i_ph, 0.0);
        assert_eq!(r.voltages.v_canl(), 5.0);
    }

    #[test]
    fn dos_threshold_divider() {
        let s = solve(true, PinMode::Input, PinMode::OutputHigh(2.2));
        assert_abs_diff_eq!(s.voltages.v_diff(), 0.9, epsilon = 1e-3);
        assert!(s.voltages.v_diff() <= 0.9);
        let below = solve(true, PinMode::Input, PinMode::OutputHigh(2.1));
        assert!(below.voltages.v_diff() > 0.9);
    }

    #[test]
    fn current_limited_active_overcurrent() {
        let mut t = topo();
        t.nodes[0].taps.as_mut().unwrap().current_limit = Some(0.052);
        let drive = vec![Drive::Recessive; 3];
        let mut pins = vec![(PinMode::Input, PinMode::Input); 3];
        pins[0] = (PinMode::OutputHigh(5.0), PinMode::OutputLow);
        let s = solve_bus(&drive, &pins, &t, &TransceiverParams::default()).unwrap();
        assert_abs_diff_eq!(s.pins[0].i_pl, 0.052, epsilon = 1e-12);
        assert_abs_diff_eq!(s.voltages.v_diff(), 0.052 * 60.0, epsilon = 1e-9);
    }

    #[test]
    fn two_attackers_on_one_line_conflict() {
        let mut t = topo();
        t.nodes[1].taps = Some(VidsTaps::default());
        let drive = vec![Drive::Recessive; 3];
        let mut pins = vec![(PinMode::Input, PinMode::Input); 3];
        pins[0].1 = PinMode::OutputHigh(5.0);
        pins[1].1 = PinMode::OutputLow;
        let err = solve_bus(&drive, &pins, &t, &TransceiverParams::default()).unwrap_err();
        assert_eq!(err, ElectricalError::ConflictingSources { line: Line::Canl });
    }

    #[test]
    fn pulse_must_be_resolved() {
        let pulse = PinMode::pulse(1e-6, 0.5, 5.0, 0.0).unwrap();
        let t = topo();
        let pins = vec![(PinMode::Input, pulse), (PinMode::Input, PinMode::Input), (PinMode::Input, PinMode::Input)];
        let err = solve_bus(&[Drive::Recessive; 3], &pins, &t, &TransceiverParams::default());
        assert_eq!(err.unwrap_err(), ElectricalError::UnresolvedPulse);
    }

    #[test]
    fn pulse_normalization() {
        assert_eq!(PinMode::pulse(1e-6, 1.0, 5.0, 0.0).unwrap(), PinMode::OutputHigh(5.0));
        assert_eq!(PinMode::pulse(1e-6, 0.0, 5.0, 0.0).unwrap(), PinMode::OutputLow);
        assert!(PinMode::pulse(0.0, 0.5, 5.0, 0.0).is_err());
        assert!(PinMode::pulse(1e-6, 1.5, 5.0, 0.0).is_err());
        assert!(PinMode::output_high(5.5).is_err());
        assert!(PinMode::output_high(0.0).is_err());
    }

    #[test]
    fn open_tap_is_transparent() {
        let mut t = topo();
        t.nodes[0].taps.as_mut().unwrap().pl = PinTap::OPEN;
        let mut pins = vec![(PinMode::Input, PinMode::Input); 3];
        pins[0].1 = PinMode::OutputHigh(5.0);
        let mut drive = vec![Drive::Recessive; 3];
        drive[2] = Drive::Dominant;
        let s = solve_bus(&drive, &pins, &t, &TransceiverParams::default()).unwrap();
        assert_abs_diff_eq!(s.voltages.v_diff(), 2.0, epsilon = 1e-12);
        assert_eq!(s.pins[0].i_pl, 0.0);
    }

    #[test]
    fn recovery_examples() {
        let flat = recovery_waveform(2.0, 2.0, 1e-6).unwrap();
        assert_eq!(flat.at(0.0), 2.0);
        assert_eq!(flat.at(5e-6), 2.0);
        let tau = TransitionParams::default().tau_rc;
        assert_abs_diff_eq!(tau, 0.596e-6, epsilon = 0.5e-9);
        let w = recovery_waveform(1.5, 5.0, tau).unwrap();
        assert_abs_diff_eq!(w.time_to_reach(4.5).unwrap(), 1.16e-6, epsilon = 1e-12);
        assert_abs_diff_eq!(w.at(1.0), 5.0, epsilon = 1e-9);
        assert!(recovery_waveform(1.5, 5.0, 0.0).is_err());
    }

    #[test]
    fn tau_bit_examples() {
        let p = TransceiverParams::default();
        let tr = TransitionParams::default();
        let nominal = measure_tau_bit(2e-6, None, &p, &tr).unwrap();
        assert!((nominal - 2.00e-6).abs() / 2.00e-6 <= 0.12);
        let at5 = measure_tau_bit(2e-6, Some(5.0), &p, &tr).unwrap();
        assert_abs_diff_eq!(at5, 3.16e-6, epsilon = 1e-12);
        let at4 = measure_tau_bit(2e-6, Some(4.0), &p, &tr).unwrap();
        assert!((at4 - 2.98e-6).abs() / 2.98e-6 <= 0.12);
        assert!(matches!(
            measure_tau_bit(2e-6, Some(0.0), &p, &tr),
            Err(ElectricalError::InvalidVoltage(_))
        ));
    }

    #[test]
    fn passive_profile_follows_dominant_bits() {
        let t = topo();
        let schedule = [
            ScheduleEntry { duration: 2e-6, drive: Drive::Dominant },
            ScheduleEntry { duration: 4e-6, drive: Drive::Recessive },
            ScheduleEntry { duration: 2e-6, drive: Drive::Dominant },
        ];
        let prof = pin_current_profile(
            &schedule,
            2,
            0,
            (PinMode::Input, PinMode::OutputLow),
            &t,
            &TransceiverParams::default(),
        )
        .unwrap();
        assert_eq!(prof.len(), 3);
        assert!(prof[0].i_pl > 0.0 && prof[2].i_pl > 0.0);
        assert_eq!(prof[1].i_pl, 0.0);
        assert_abs_diff_eq!(prof[1].duration, 4e-6, epsilon = 1e-18);
    }

    #[test]
    fn active_profile_is_single_segment() {
        let t = topo();
        let schedule = [
            ScheduleEntry { duration: 2e-6, drive: Drive::Dominant },
            ScheduleEntry { duration: 2e-6, drive: Drive::Recessive },
        ];
        let prof = pin_current_profile(
            &schedule,
            2,
            0,
            (PinMode::OutputHigh(5.0), PinMode::OutputLow),
            &t,
            &TransceiverParams::default(),
        )
        .unwrap();
        assert_eq!(prof.len(), 1);
        assert_abs_diff_eq!(prof[0].i_pl, 0.0833, epsilon = 1e-4);
    }

    #[test]
    fn idle_profile_is_zero() {
        let t = topo();
        let schedule = [ScheduleEntry { duration: 10e-6, drive: Drive::Recessive }];
        let prof = pin_current_profile(
            &schedule,
            2,
            0,
            (PinMode::Input, PinMode::Input),
            &t,
            &TransceiverParams::default(),
        )
        .unwrap();
        assert!(prof.iter().all(|s| s.i_ph == 0.0 && s.i_pl == 0.0));
    }
}
