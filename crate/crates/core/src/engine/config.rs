//! Validated scenario description consumed by the engine.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::electrical::Line;
use crate::irs::{BreakerState, Device, FuseState, ResettableFuseState, ThermostatCoil};
use crate::link::{encode_frame, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// Host of the VIDS analog taps (and of the attack).
    Vids,
    Sender,
    Logger,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Vids => "vids",
            Role::Sender => "sender",
            Role::Logger => "logger",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Traffic {
    pub period: f64,
    pub offset: f64,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcuConfig {
    pub name: String,
    pub role: Role,
    pub traffic: Option<Traffic>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BusConfig {
    pub speed: u32,
    /// Resistance of each of the two terminators.
    pub termination: f64,
}

impl Default for BusConfig {
    fn default() -> Self {
        Self {
            speed: 500_000,
            termination: 120.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub t_start: f64,
    pub t_end: f64,
    pub phase_offset: f64,
    /// Output current limit of the attacking pins.
    pub source_limit: Option<f64>,
    pub source_resistance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IrsPins {
    Both,
    Ph,
    Pl,
}

impl IrsPins {
    pub fn covers(&self, line: Line) -> bool {
        matches!(
            (self, line),
            (IrsPins::Both, _) | (IrsPins::Ph, Line::Canh) | (IrsPins::Pl, Line::Canl)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IrsKind {
    Fuse { rating: f64, opening_time: f64 },
    Breaker { rating: f64, opening_time: f64 },
    Resettable { rating: f64, opening_time: f64, leakage_current: f64 },
    Thermostat(ThermostatCoil),
}

impl IrsKind {
    pub fn name(&self) -> &'static str {
        match self {
            IrsKind::Fuse { .. } => "fuse",
            IrsKind::Breaker { .. } => "breaker",
            IrsKind::Resettable { .. } => "resettable",
            IrsKind::Thermostat(_) => "thermostat",
        }
    }

    /// A fresh device with these parameters (values assumed validated).
    pub fn device(&self) -> Device {
        match *self {
            IrsKind::Fuse { rating, opening_time } => {
                Device::Fuse(FuseState::new(rating, opening_time).expect("validated fuse"))
            }
            IrsKind::Breaker { rating, opening_time } => {
                Device::Breaker(BreakerState::new(rating, opening_time).expect("validated breaker"))
            }
            IrsKind::Resettable {
                rating,
                opening_time,
                leakage_current,
            } => Device::Resettable(
                ResettableFuseState::new(rating, opening_time, leakage_current).expect("validated resettable fuse"),
            ),
            IrsKind::Thermostat(t) => Device::Thermostat(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrsConfig {
    pub kind: IrsKind,
    pub pins: IrsPins,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DamageParams {
    pub i_max: f64,
    pub damage_time: f64,
}

impl Default for DamageParams {
    fn default() -> Self {
        Self {
            i_max: 0.040,
            damage_time: 1e-6,
        }
    }
}

/// Scenario values a sweep can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepParameter {
    VAttackL,
    VAttackH,
    PulsePeriod,
    PulseDuty,
    PhaseOffset,
    SourceLimit,
    IrsRating,
    DamageIMax,
}

impl SweepParameter {
    pub const ALL: [SweepParameter; 8] = [
        SweepParameter::VAttackL,
        SweepParameter::VAttackH,
        SweepParameter::PulsePeriod,
        SweepParameter::PulseDuty,
        SweepParameter::PhaseOffset,
        SweepParameter::SourceLimit,
        SweepParameter::IrsRating,
        SweepParameter::DamageIMax,
    ];

    pub fn path(&self) -> &'static str {
        match self {
            SweepParameter::VAttackL => "attack.v_attack_l",
            SweepParameter::VAttackH => "attack.v_attack_h",
            SweepParameter::PulsePeriod => "attack.period",
            SweepParameter::PulseDuty => "attack.duty",
            SweepParameter::PhaseOffset => "attack.phase_offset",
            SweepParameter::SourceLimit => "attack.source_limit",
            SweepParameter::IrsRating => "irs.rating",
            SweepParameter::DamageIMax => "damage.i_max",
        }
    }

    pub fn from_path(path: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.path() == path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl SweepConfig {
    /// Grid points as integer multiples of `step`, rounded to 1e-12.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.to - self.from) / self.step + 1e-9).floor() as usize;
        (0..=n)
            .map(|k| {
                let v = self.from + k as f64 * self.step;
                (v * 1e12).round() / 1e12
            })
            .collect()
    }
}

/// Assertions checked by `simulate --check`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Expectations {
    pub attack_success: Option<bool>,
    pub damaged: Option<bool>,
    pub received: Option<u64>,
    pub min_retransmissions: Option<u64>,
    pub max_retransmissions: Option<u64>,
    /// Indicator slots `[from, to)` of the first sender expected to be 0;
    /// every other slot must be 1. An empty range means all ones.
    pub indicator_zero: Option<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    /// Attempts of one frame instance logged individually; later ones are
    /// folded into one summary record. 0 logs everything.
    pub retransmission_detail: u32,
    /// Log each distinct electrical operating point once per attack window.
    pub samples: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            retransmission_detail: 16,
            samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub bus: BusConfig,
    pub ecus: Vec<EcuConfig>,
    pub attack: Option<AttackConfig>,
    pub irs: Option<IrsConfig>,
    pub damage: DamageParams,
    pub sweep: Option<SweepConfig>,
    pub expect: Option<Expectations>,
    pub trace: TraceOptions,
}

impl ScenarioConfig {
    pub fn vids_index(&self) -> Option<usize> {
        self.ecus.iter().position(|e| e.role == Role::Vids)
    }

    pub fn senders(&self) -> impl Iterator<Item = (usize, &EcuConfig)> {
        self.ecus.iter().enumerate().filter(|(_, e)| e.traffic.is_some())
    }

    /// Length of the longest frame any sender transmits, in seconds.
    pub fn longest_frame_time(&self) -> f64 {
        let bit = 1.0 / self.bus.speed as f64;
        self.ecus
            .iter()
            .filter_map(|e| e.traffic.as_ref())
            .map(|t| encode_frame(&t.frame).len() as f64 * bit)
            .fold(0.0, f64::max)
    }

    pub fn shortest_frame_time(&self) -> f64 {
        let bit = 1.0 / self.bus.speed as f64;
        self.ecus
            .iter()
            .filter_map(|e| e.traffic.as_ref())
            .map(|t| encode_frame(&t.frame).len() as f64 * bit)
            .fold(f64::INFINITY, f64::min)
    }

    /// Testbed baseline: VIDS host `a`, sender `c` every second, logger `b`.
    pub fn baseline(duration: f64) -> Self {
        Self {
            duration,
            bus: BusConfig::default(),
            ecus: vec![
                EcuConfig {
                    name: "a".into(),
                    role: Role::Vids,
                    traffic: None,
                },
                EcuConfig {
                    name: "b".into(),
                    role: Role::Logger,
                    traffic: None,
                },
                EcuConfig {
                    name: "c".into(),
                    role: Role::Sender,
                    traffic: Some(Traffic {
                        period: 1.0,
                        offset: 0.0,
                        frame: Frame::new(0x01, &[0x01]).expect("valid frame"),
                    }),
                },
            ],
            attack: None,
            irs: None,
            damage: DamageParams::default(),
            sweep: None,
            expect: None,
            trace: TraceOptions::default(),
        }
    }
}
