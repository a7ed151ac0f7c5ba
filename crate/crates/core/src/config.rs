//! Scenario files: TOML with `[bus]`, `[ecu.<name>]`, `[attack]`, `[irs]`,
//! `[damage]`, `[sweep]`, `[expect]` and `[trace]` sections.
//!
//! ECUs are ordered by name. Unknown keys are rejected and every validation
//! error names the offending field and, where it can be found, its line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::electrical::{Line, PinMode, PulseShape};
use crate::engine::{
    AttackConfig, BusConfig, DamageParams, EcuConfig, Expectations, IrsConfig, IrsKind, IrsPins, Role,
    ScenarioConfig, SweepConfig, SweepParameter, TraceOptions, Traffic,
};
use crate::irs::ThermostatCoil;
use crate::link::{encode_frame, Frame, MAX_ID};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: None,
        path: path.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    duration: f64,
    #[serde(default)]
    bus: RawBus,
    #[serde(default)]
    ecu: BTreeMap<String, RawEcu>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attack: Option<RawAttack>,
    #[serde(skip_serializing_if = "Option::is_none")]
    irs: Option<RawIrs>,
    #[serde(default)]
    damage: RawDamage,
    #[serde(skip_serializing_if = "Option::is_none")]
    sweep: Option<RawSweep>,
    #[serde(skip_serializing_if = "Option::is_none")]
    expect: Option<RawExpect>,
    #[serde(default)]
    trace: RawTrace,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBus {
    speed: Option<i64>,
    termination: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEcu {
    role: Role,
    #[serde(skip_serializing_if = "Option::is_none")]
    period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    offset: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<Vec<i64>>,
    /// Remote frame with this DLC instead of `data`.
    #[serde(skip_serializing_if = "Option::is_none")]
    remote_dlc: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttack {
    kind: String,
    t_start: f64,
    t_end: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_attack_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_attack_h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<Line>,
    #[serde(skip_serializing_if = "Option::is_none")]
    period: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    duty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    phase_offset: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    source_resistance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawIrs {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pins: Option<IrsPins>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rating: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    opening_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    leakage_current: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_coil: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_ambient: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    t_limit: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hysteresis: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    thermal_gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_thermal: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDamage {
    i_max: Option<f64>,
    damage_time: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    parameter: String,
    from: f64,
    to: f64,
    step: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExpect {
    #[serde(skip_serializing_if = "Option::is_none")]
    attack_success: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    damaged: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    received: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_retransmissions: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_retransmissions: Option<i64>,
    /// `[from, to)` indicator slots expected to be 0.
    #[serde(skip_serializing_if = "Option::is_none")]
    indicator_zero: Option<[i64; 2]>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrace {
    retransmission_detail: Option<i64>,
    samples: Option<bool>,
}

/// Line (1-based) of `path` in a scenario file: the key's own line, or the
/// header of its section.
fn locate(text: &str, path: &str) -> Option<usize> {
    let (section, key) = path.rsplit_once('.').unwrap_or(("", path));
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in text.lines().enumerate() {
        let l = raw.split('#').next().unwrap_or("").trim();
        if l.starts_with('[') {
            current = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == path {
                return Some(i + 1);
            }
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = l.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

/// Dotted path of the key at byte `offset`.
fn path_at(text: &str, offset: usize) -> String {
    let mut section = String::new();
    let mut consumed = 0;
    for raw in text.split_inclusive('\n') {
        let l = raw.trim();
        let inside = offset < consumed + raw.len();
        if l.starts_with('[') {
            section = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if inside {
                return section;
            }
        } else if inside {
            let key = l.split_once('=').map_or("", |(k, _)| k.trim());
            return match (section.is_empty(), key.is_empty()) {
                (true, _) => key.to_string(),
                (false, true) => section,
                (false, false) => format!("{section}.{key}"),
            };
        }
        consumed += raw.len();
    }
    section
}

fn finite(path: &str, v: f64) -> Result<f64, ConfigError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(err(path, "must be a finite number"))
    }
}

fn positive(path: &str, v: f64) -> Result<f64, ConfigError> {
    if finite(path, v)? > 0.0 {
        Ok(v)
    } else {
        Err(err(path, format!("must be > 0, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<f64, ConfigError> {
    if finite(path, v)? >= 0.0 {
        Ok(v)
    } else {
        Err(err(path, format!("must be >= 0, got {v}")))
    }
}

fn required<T>(path: &str, v: Option<T>) -> Result<T, ConfigError> {
    v.ok_or_else(|| err(path, "is required"))
}

fn forbid<T>(path: &str, v: &Option<T>, why: &str) -> Result<(), ConfigError> {
    match v {
        Some(_) => Err(err(path, format!("not allowed {why}"))),
        None => Ok(()),
    }
}

fn count(path: &str, v: i64) -> Result<u64, ConfigError> {
    u64::try_from(v).map_err(|_| err(path, format!("must be >= 0, got {v}")))
}

fn ecu_from_raw(name: &str, r: &RawEcu) -> Result<EcuConfig, ConfigError> {
    let p = |k: &str| format!("ecu.{name}.{k}");
    if name.is_empty() || name.contains(|c: char| c.is_whitespace() || c == ',') {
        return Err(err(format!("ecu.{name}"), "names must be non-empty without spaces or commas"));
    }
    let traffic = if r.role == Role::Sender {
        let id = required(&p("id"), r.id)?;
        if !(0..=MAX_ID as i64).contains(&id) {
            return Err(err(p("id"), format!("must be in 0..=0x7FF, got {id:#x}")));
        }
        let frame = match (&r.data, r.remote_dlc) {
            (Some(_), Some(_)) => return Err(err(p("remote_dlc"), "cannot be combined with data")),
            (None, Some(dlc)) => {
                if !(0..=8).contains(&dlc) {
                    return Err(err(p("remote_dlc"), format!("must be in 0..=8, got {dlc}")));
                }
                Frame::remote(id as u16, dlc as u8).map_err(|e| err(p("remote_dlc"), e.to_string()))?
            }
            (data, None) => {
                let data = data.clone().unwrap_or_default();
                let mut bytes = Vec::with_capacity(data.len());
                for (k, b) in data.iter().enumerate() {
                    if !(0..=255).contains(b) {
                        return Err(err(format!("ecu.{name}.data[{k}]"), format!("must be a byte, got {b}")));
                    }
                    bytes.push(*b as u8);
                }
                Frame::new(id as u16, &bytes).map_err(|e| err(p("data"), e.to_string()))?
            }
        };
        let period = positive(&p("period"), required(&p("period"), r.period)?)?;
        let offset = non_negative(&p("offset"), r.offset.unwrap_or(0.0))?;
        Some(Traffic { period, offset, frame })
    } else {
        let why = &format!("for role \"{}\"", r.role);
        forbid(&p("period"), &r.period, why)?;
        forbid(&p("offset"), &r.offset, why)?;
        forbid(&p("id"), &r.id, why)?;
        forbid(&p("data"), &r.data, why)?;
        forbid(&p("remote_dlc"), &r.remote_dlc, why)?;
        None
    };
    Ok(EcuConfig {
        name: name.to_string(),
        role: r.role,
        traffic,
    })
}

fn attack_from_raw(r: &RawAttack) -> Result<AttackConfig, ConfigError> {
    let why = &format!("for attack kind \"{}\"", r.kind);
    let volts = |path: &str, v: Option<f64>| -> Result<f64, ConfigError> { required(path, v) };
    let kind = match r.kind.as_str() {
        "passive_overcurrent" | "active_overcurrent" | "dos" | "fra" => {
            forbid("attack.line", &r.line, why)?;
            for (k, v) in [("period", r.period), ("duty", r.duty), ("v_high", r.v_high), ("v_low", r.v_low)] {
                forbid(&format!("attack.{k}"), &v, why)?;
            }
            if r.kind != "dos" {
                forbid("attack.v_attack_l", &r.v_attack_l, why)?;
            }
            if r.kind != "fra" {
                forbid("attack.v_attack_h", &r.v_attack_h, why)?;
            }
            match r.kind.as_str() {
                "passive_overcurrent" => AttackKind::PassiveOvercurrent,
                "active_overcurrent" => AttackKind::ActiveOvercurrent,
                "dos" => AttackKind::Dos {
                    v_attack_l: volts("attack.v_attack_l", r.v_attack_l)?,
                },
                _ => AttackKind::ForcedRetransmission {
                    v_attack_h: volts("attack.v_attack_h", r.v_attack_h)?,
                },
            }
        }
        "pulse" => {
            forbid("attack.v_attack_l", &r.v_attack_l, why)?;
            forbid("attack.v_attack_h", &r.v_attack_h, why)?;
            AttackKind::Pulse {
                line: required("attack.line", r.line)?,
                shape: PulseShape {
                    period: required("attack.period", r.period)?,
                    duty: required("attack.duty", r.duty)?,
                    v_high: r.v_high.unwrap_or(PinMode::MAX_OUTPUT),
                    v_low: r.v_low.unwrap_or(0.0),
                },
            }
        }
        other => {
            return Err(err(
                "attack.kind",
                format!(
                    "unknown kind \"{other}\" (expected passive_overcurrent, active_overcurrent, dos, fra or pulse)"
                ),
            ))
        }
    };
    Ok(AttackConfig {
        kind,
        t_start: r.t_start,
        t_end: r.t_end,
        phase_offset: r.phase_offset.unwrap_or(0.0),
        source_limit: r.source_limit,
        source_resistance: r.source_resistance.unwrap_or(0.0),
    })
}

fn irs_from_raw(r: &RawIrs) -> Result<IrsConfig, ConfigError> {
    let why = &format!("for IRS kind \"{}\"", r.kind);
    let thermo = [
        ("r_coil", r.r_coil),
        ("temp", r.temp),
        ("t_ambient", r.t_ambient),
        ("t_limit", r.t_limit),
        ("hysteresis", r.hysteresis),
        ("thermal_gain", r.thermal_gain),
        ("tau_thermal", r.tau_thermal),
    ];
    let kind = match r.kind.as_str() {
        "fuse" | "breaker" | "resettable" => {
            for (k, v) in thermo {
                forbid(&format!("irs.{k}"), &v, why)?;
            }
            let rating = required("irs.rating", r.rating)?;
            let opening_time = required("irs.opening_time", r.opening_time)?;
            match r.kind.as_str() {
                "fuse" => {
                    forbid("irs.leakage_current", &r.leakage_current, why)?;
                    IrsKind::Fuse { rating, opening_time }
                }
                "breaker" => {
                    forbid("irs.leakage_current", &r.leakage_current, why)?;
                    IrsKind::Breaker { rating, opening_time }
                }
                _ => IrsKind::Resettable {
                    rating,
                    opening_time,
                    leakage_current: r.leakage_current.unwrap_or(0.100),
                },
            }
        }
        "thermostat" => {
            for (k, v) in [
                ("rating", r.rating),
                ("opening_time", r.opening_time),
                ("leakage_current", r.leakage_current),
            ] {
                forbid(&format!("irs.{k}"), &v, why)?;
            }
            let d = ThermostatCoil::default();
            IrsKind::Thermostat(ThermostatCoil {
                r_coil: r.r_coil.unwrap_or(d.r_coil),
                temp: r.temp.unwrap_or(d.temp),
                t_ambient: r.t_ambient.unwrap_or(d.t_ambient),
                t_limit: r.t_limit.unwrap_or(d.t_limit),
                hysteresis: r.hysteresis.unwrap_or(d.hysteresis),
                thermal_gain: r.thermal_gain.unwrap_or(d.thermal_gain),
                tau_thermal: r.tau_thermal.unwrap_or(d.tau_thermal),
                open: false,
            })
        }
        other => {
            return Err(err(
                "irs.kind",
                format!("unknown kind \"{other}\" (expected fuse, breaker, resettable or thermostat)"),
            ))
        }
    };
    Ok(IrsConfig {
        kind,
        pins: r.pins.unwrap_or(IrsPins::Both),
    })
}

fn from_raw(r: &RawScenario) -> Result<ScenarioConfig, ConfigError> {
    let bus = BusConfig {
        speed: match r.bus.speed {
            Some(s) if s > 0 && s <= 1_000_000_000 => s as u32,
            Some(s) => return Err(err("bus.speed", format!("must be in 1..=1e9 bit/s, got {s}"))),
            None => BusConfig::default().speed,
        },
        termination: r.bus.termination.unwrap_or(BusConfig::default().termination),
    };
    let ecus = r
        .ecu
        .iter()
        .map(|(name, e)| ecu_from_raw(name, e))
        .collect::<Result<Vec<_>, _>>()?;
    let d = DamageParams::default();
    let sweep = match &r.sweep {
        Some(s) => Some(SweepConfig {
            parameter: SweepParameter::from_path(&s.parameter).ok_or_else(|| {
                let all: Vec<&str> = SweepParameter::ALL.iter().map(|p| p.path()).collect();
                err("sweep.parameter", format!("unknown parameter \"{}\" (expected one of {})", s.parameter, all.join(", ")))
            })?,
            from: s.from,
            to: s.to,
            step: s.step,
        }),
        None => None,
    };
    let expect = match &r.expect {
        Some(e) => Some(Expectations {
            attack_success: e.attack_success,
            damaged: e.damaged,
            received: e.received.map(|v| count("expect.received", v)).transpose()?,
            min_retransmissions: e
                .min_retransmissions
                .map(|v| count("expect.min_retransmissions", v))
                .transpose()?,
            max_retransmissions: e
                .max_retransmissions
                .map(|v| count("expect.max_retransmissions", v))
                .transpose()?,
            indicator_zero: match e.indicator_zero {
                Some([a, b]) => {
                    let (a, b) = (count("expect.indicator_zero", a)?, count("expect.indicator_zero", b)?);
                    if a > b {
                        return Err(err("expect.indicator_zero", "range start exceeds its end"));
                    }
                    Some((a, b))
                }
                None => None,
            },
        }),
        None => None,
    };
    let td = TraceOptions::default();
    let trace = TraceOptions {
        retransmission_detail: match r.trace.retransmission_detail {
            Some(v) => u32::try_from(v).map_err(|_| err("trace.retransmission_detail", "must be in 0..=4294967295"))?,
            None => td.retransmission_detail,
        },
        samples: r.trace.samples.unwrap_or(td.samples),
    };
    Ok(ScenarioConfig {
        duration: r.duration,
        bus,
        ecus,
        attack: r.attack.as_ref().map(attack_from_raw).transpose()?,
        irs: r.irs.as_ref().map(irs_from_raw).transpose()?,
        damage: DamageParams {
            i_max: r.damage.i_max.unwrap_or(d.i_max),
            damage_time: r.damage.damage_time.unwrap_or(d.damage_time),
        },
        sweep,
        expect,
        trace,
    })
}

/// Range and consistency checks on a typed scenario.
pub fn validate(cfg: &ScenarioConfig) -> Result<(), ConfigError> {
    positive("duration", cfg.duration)?;
    positive("bus.termination", cfg.bus.termination)?;
    if cfg.bus.speed == 0 {
        return Err(err("bus.speed", "must be > 0"));
    }
    if cfg.ecus.is_empty() {
        return Err(err("ecu", "at least one ECU is required"));
    }
    if cfg.ecus.len() > 64 {
        return Err(err("ecu", "at most 64 ECUs are supported"));
    }
    let hosts = cfg.ecus.iter().filter(|e| e.role == Role::Vids).count();
    if hosts != 1 {
        return Err(err("ecu", format!("exactly one ECU must have role \"vids\", found {hosts}")));
    }
    let bit = 1.0 / cfg.bus.speed as f64;
    let mut ids = BTreeMap::new();
    for e in &cfg.ecus {
        let Some(t) = &e.traffic else { continue };
        let p = |k: &str| format!("ecu.{}.{k}", e.name);
        positive(&p("period"), t.period)?;
        non_negative(&p("offset"), t.offset)?;
        let frame_time = encode_frame(&t.frame).len() as f64 * bit;
        if t.period <= frame_time {
            return Err(err(
                p("period"),
                format!("must exceed the frame transmission time {frame_time:e} s"),
            ));
        }
        if let Some(other) = ids.insert(t.frame.id(), &e.name) {
            return Err(err(p("id"), format!("identifier {:#05x} already used by ECU \"{other}\"", t.frame.id())));
        }
    }
    if let Some(a) = &cfg.attack {
        non_negative("attack.t_start", a.t_start)?;
        finite("attack.t_end", a.t_end)?;
        if a.t_end <= a.t_start {
            return Err(err("attack.t_end", "must be after attack.t_start"));
        }
        non_negative("attack.phase_offset", a.phase_offset)?;
        non_negative("attack.source_resistance", a.source_resistance)?;
        if let Some(l) = a.source_limit {
            positive("attack.source_limit", l)?;
        }
        let level = |path: &str, v: f64| -> Result<(), ConfigError> {
            if finite(path, v)? > 0.0 && v <= PinMode::MAX_OUTPUT {
                Ok(())
            } else {
                Err(err(path, format!("must be in (0, {}] V, got {v}", PinMode::MAX_OUTPUT)))
            }
        };
        match a.kind {
            AttackKind::Dos { v_attack_l } => level("attack.v_attack_l", v_attack_l)?,
            AttackKind::ForcedRetransmission { v_attack_h } => level("attack.v_attack_h", v_attack_h)?,
            AttackKind::Pulse { shape, .. } => {
                positive("attack.period", shape.period)?;
                if !(shape.duty > 0.0 && shape.duty < 1.0) {
                    return Err(err("attack.duty", format!("must be in (0, 1), got {}", shape.duty)));
                }
                level("attack.v_high", shape.v_high)?;
                if !(0.0..PinMode::MAX_OUTPUT).contains(&shape.v_low) {
                    return Err(err("attack.v_low", format!("must be in [0, {}) V", PinMode::MAX_OUTPUT)));
                }
                let high = (shape.period * shape.duty * 1e9).round();
                let period = (shape.period * 1e9).round();
                if high < 1.0 || period - high < 1.0 {
                    return Err(err("attack.period", "each pulse phase must last at least 1 ns"));
                }
            }
            AttackKind::PassiveOvercurrent | AttackKind::ActiveOvercurrent => {}
        }
    }
    if let Some(i) = &cfg.irs {
        match i.kind {
            IrsKind::Fuse { rating, opening_time }
            | IrsKind::Breaker { rating, opening_time }
            | IrsKind::Resettable {
                rating, opening_time, ..
            } => {
                positive("irs.rating", rating)?;
                positive("irs.opening_time", opening_time)?;
                if let IrsKind::Resettable { leakage_current, .. } = i.kind {
                    non_negative("irs.leakage_current", leakage_current)?;
                }
            }
            IrsKind::Thermostat(t) => {
                for (k, v) in [
                    ("temp", t.temp),
                    ("t_ambient", t.t_ambient),
                    ("t_limit", t.t_limit),
                    ("hysteresis", t.hysteresis),
                ] {
                    finite(&format!("irs.{k}"), v)?;
                }
                t.validate().map_err(|e| match e {
                    crate::irs::IrsError::InvalidParameter { name, .. } => err(format!("irs.{name}"), e.to_string()),
                    other => err("irs", other.to_string()),
                })?;
            }
        }
    }
    positive("damage.i_max", cfg.damage.i_max)?;
    positive("damage.damage_time", cfg.damage.damage_time)?;
    if let Some(s) = &cfg.sweep {
        finite("sweep.from", s.from)?;
        finite("sweep.to", s.to)?;
        positive("sweep.step", s.step)?;
        if s.to < s.from {
            return Err(err("sweep.to", "must not be below sweep.from"));
        }
        if (s.to - s.from) / s.step > 100_000.0 {
            return Err(err("sweep.step", "grid exceeds 100000 points"));
        }
    }
    Ok(())
}

/// Parses and fully validates a scenario file.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let (line, path) = match e.span() {
            Some(span) => (
                Some(text[..span.start.min(text.len())].matches('\n').count() + 1),
                path_at(text, span.start),
            ),
            None => (None, String::new()),
        };
        ConfigError {
            line,
            path: if path.is_empty() { "<file>".into() } else { path },
            message: e.message().trim().to_string(),
        }
    })?;
    let with_line = |mut e: ConfigError| {
        e.line = e.line.or_else(|| locate(text, &e.path));
        e
    };
    let cfg = from_raw(&raw).map_err(with_line)?;
    validate(&cfg).map_err(with_line)?;
    if let Some(s) = cfg.sweep {
        for v in s.values() {
            let point = cfg.with_parameter(s.parameter, v).map_err(|e| with_line(err("sweep.parameter", e.to_string())))?;
            validate(&point).map_err(|e| {
                with_line(err(
                    "sweep",
                    format!("grid value {v} makes {} invalid: {}", e.path, e.message),
                ))
            })?;
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| err(path.display().to_string(), e.to_string()))?;
    parse_config(&text)
}

fn to_raw(cfg: &ScenarioConfig) -> RawScenario {
    let ecu = cfg
        .ecus
        .iter()
        .map(|e| {
            let t = e.traffic.as_ref();
            let raw = RawEcu {
                role: e.role,
                period: t.map(|t| t.period),
                offset: t.map(|t| t.offset),
                id: t.map(|t| t.frame.id() as i64),
                data: t
                    .filter(|t| !t.frame.is_remote())
                    .map(|t| t.frame.data().iter().map(|&b| b as i64).collect()),
                remote_dlc: t.filter(|t| t.frame.is_remote()).map(|t| t.frame.dlc() as i64),
            };
            (e.name.clone(), raw)
        })
        .collect();
    let attack = cfg.attack.as_ref().map(|a| {
        let mut r = RawAttack {
            kind: a.kind.name().to_string(),
            t_start: a.t_start,
            t_end: a.t_end,
            phase_offset: Some(a.phase_offset),
            source_limit: a.source_limit,
            source_resistance: Some(a.source_resistance),
            ..Default::default()
        };
        match a.kind {
            AttackKind::Dos { v_attack_l } => r.v_attack_l = Some(v_attack_l),
            AttackKind::ForcedRetransmission { v_attack_h } => r.v_attack_h = Some(v_attack_h),
            AttackKind::Pulse { line, shape } => {
                r.line = Some(line);
                r.period = Some(shape.period);
                r.duty = Some(shape.duty);
                r.v_high = Some(shape.v_high);
                r.v_low = Some(shape.v_low);
            }
            AttackKind::PassiveOvercurrent | AttackKind::ActiveOvercurrent => {}
        }
        r
    });
    let irs = cfg.irs.as_ref().map(|i| {
        let mut r = RawIrs {
            kind: i.kind.name().to_string(),
            pins: Some(i.pins),
            ..Default::default()
        };
        match i.kind {
            IrsKind::Fuse { rating, opening_time } | IrsKind::Breaker { rating, opening_time } => {
                r.rating = Some(rating);
                r.opening_time = Some(opening_time);
            }
            IrsKind::Resettable {
                rating,
                opening_time,
                leakage_current,
            } => {
                r.rating = Some(rating);
                r.opening_time = Some(opening_time);
                r.leakage_current = Some(leakage_current);
            }
            IrsKind::Thermostat(t) => {
                r.r_coil = Some(t.r_coil);
                r.temp = Some(t.temp);
                r.t_ambient = Some(t.t_ambient);
                r.t_limit = Some(t.t_limit);
                r.hysteresis = Some(t.hysteresis);
                r.thermal_gain = Some(t.thermal_gain);
                r.tau_thermal = Some(t.tau_thermal);
            }
        }
        r
    });
    RawScenario {
        duration: cfg.duration,
        bus: RawBus {
            speed: Some(cfg.bus.speed as i64),
            termination: Some(cfg.bus.termination),
        },
        ecu,
        attack,
        irs,
        damage: RawDamage {
            i_max: Some(cfg.damage.i_max),
            damage_time: Some(cfg.damage.damage_time),
        },
        sweep: cfg.sweep.map(|s| RawSweep {
            parameter: s.parameter.path().to_string(),
            from: s.from,
            to: s.to,
            step: s.step,
        }),
        expect: cfg.expect.as_ref().map(|e| RawExpect {
            attack_success: e.attack_success,
            damaged: e.damaged,
            received: e.received.map(|v| v as i64),
            min_retransmissions: e.min_retransmissions.map(|v| v as i64),
            max_retransmissions: e.max_retransmissions.map(|v| v as i64),
            indicator_zero: e.indicator_zero.map(|(a, b)| [a as i64, b as i64]),
        }),
        trace: RawTrace {
            retransmission_detail: Some(cfg.trace.retransmission_detail as i64),
            samples: Some(cfg.trace.samples),
        },
    }
}

/// Serializes a scenario; `parse_config(&to_toml(c))` yields `c` again.
pub fn to_toml(cfg: &ScenarioConfig) -> String {
    toml::to_string(&to_raw(cfg)).expect("scenario serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASELINE: &str = r#"
duration = 60.0

[bus]
speed = 500000

[ecu.a]
role = "vids"

[ecu.b]
role = "logger"

[ecu.c]
role = "sender"
period = 1.0
id = 0x001
data = [0x01]
"#;

    #[test]
    fn baseline_parses_to_reference_scenario() {
        let cfg = parse_config(BASELINE).unwrap();
        assert_eq!(cfg, ScenarioConfig::baseline(60.0));
    }

    #[test]
    fn duty_out_of_range_names_field_and_line() {
        let text = format!(
            "{BASELINE}\n[attack]\nkind = \"pulse\"\nline = \"canl\"\nt_start = 1.0\nt_end = 2.0\nperiod = 8e-7\nduty = 1.5\n"
        );
        let e = parse_config(&text).unwrap_err();
        assert_eq!(e.path, "attack.duty");
        let want = text.lines().position(|l| l.starts_with("duty")).unwrap() + 1;
        assert_eq!(e.line, Some(want));
    }

    #[test]
    fn two_vids_hosts_rejected() {
        let text = BASELINE.replace("role = \"logger\"", "role = \"vids\"");
        let e = parse_config(&text).unwrap_err();
        assert_eq!(e.path, "ecu");
        assert!(e.message.contains("exactly one"), "{e}");
    }

    #[test]
    fn unknown_key_rejected_with_path() {
        let text = BASELINE.replace("speed = 500000", "speed = 500000\nbaud = 3");
        let e = parse_config(&text).unwrap_err();
        assert_eq!(e.path, "bus.baud");
        assert_eq!(e.line, Some(6));
    }

    #[test]
    fn sender_period_must_exceed_frame_time() {
        let text = BASELINE.replace("period = 1.0", "period = 1e-4");
        assert_eq!(parse_config(&text).unwrap_err().path, "ecu.c.period");
    }

    #[test]
    fn sweep_grid_is_validated() {
        let text = format!(
            "{BASELINE}\n[attack]\nkind = \"dos\"\nv_attack_l = 1.0\nt_start = 0.0\nt_end = 1.0\n\n[sweep]\nparameter = \"attack.v_attack_l\"\nfrom = 4.0\nto = 6.0\nstep = 1.0\n"
        );
        let e = parse_config(&text).unwrap_err();
        assert!(e.message.contains("attack.v_attack_l"), "{e}");
    }

    #[test]
    fn round_trip() {
        let text = format!(
            "{BASELINE}\n[attack]\nkind = \"pulse\"\nline = \"canh\"\nt_start = 10.0\nt_end = 30.0\nperiod = 8e-7\nduty = 0.5\n\n[irs]\nkind = \"thermostat\"\npins = \"ph\"\n\n[expect]\nindicator_zero = [10, 30]\n"
        );
        let cfg = parse_config(&text).unwrap();
        let again = parse_config(&to_toml(&cfg)).unwrap();
        assert_eq!(cfg, again);
    }
}
