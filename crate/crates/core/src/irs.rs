//! Series protective devices between the VIDS analog pins and the bus.
//!
//! Every device is driven by the current that *would* flow with the device
//! closed (`demand`). Transitions are resolved to whole nanoseconds so that the
//! engine can split its piecewise-constant segments exactly at them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::secs_to_nanos;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IrsError {
    #[error("breaker is not tripped")]
    NotTripped,
    #[error("invalid device parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceEvent {
    FuseBlown,
    BreakerTripped,
    ResettableOpened,
    ResettableClosed,
    ThermostatOpen,
    ThermostatClosed,
}

fn positive(name: &'static str, value: f64) -> Result<(), IrsError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(IrsError::InvalidParameter { name, value })
    }
}

/// Threshold-and-duration trip logic shared by fuses and breakers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripTimer {
    pub rating: f64,
    pub opening_time: f64,
    /// Nanoseconds spent continuously above the rating.
    pub over_ns: u64,
}

impl TripTimer {
    pub fn new(rating: f64, opening_time: f64) -> Result<Self, IrsError> {
        positive("rating", rating)?;
        positive("opening_time", opening_time)?;
        Ok(Self {
            rating,
            opening_time,
            over_ns: 0,
        })
    }

    fn opening_ns(&self) -> u64 {
        secs_to_nanos(self.opening_time).max(1)
    }

    fn nanos_to_trip(&self, demand: f64) -> Option<u64> {
        (demand.abs() > self.rating).then(|| self.opening_ns().saturating_sub(self.over_ns))
    }

    /// Returns true when the timer reaches the opening time.
    fn advance(&mut self, demand: f64, dt: u64) -> bool {
        if demand.abs() > self.rating {
            self.over_ns += dt;
            self.over_ns >= self.opening_ns()
        } else {
            self.over_ns = 0;
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FuseState {
    pub timer: TripTimer,
    pub blown: bool,
}

impl FuseState {
    pub const DEFAULT_RATING: f64 = 0.010;
    pub const DEFAULT_OPENING_TIME: f64 = 1e-6;

    pub fn new(rating: f64, opening_time: f64) -> Result<Self, IrsError> {
        Ok(Self {
            timer: TripTimer::new(rating, opening_time)?,
            blown: false,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakerState {
    pub timer: TripTimer,
    pub tripped: bool,
}

impl BreakerState {
    pub fn new(rating: f64, opening_time: f64) -> Result<Self, IrsError> {
        Ok(Self {
            timer: TripTimer::new(rating, opening_time)?,
            tripped: false,
        })
    }

    /// Manual reset of a tripped breaker.
    pub fn reset(&mut self) -> Result<(), IrsError> {
        if !self.tripped {
            return Err(IrsError::NotTripped);
        }
        self.tripped = false;
        self.timer.over_ns = 0;
        Ok(())
    }
}

/// PTC-style fuse. While open it still passes up to `leakage_current`, and
/// it recloses as soon as the demand falls back to its rating.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResettableFuseState {
    pub timer: TripTimer,
    pub leakage_current: f64,
    pub open: bool,
}

impl ResettableFuseState {
    pub const DEFAULT_LEAKAGE: f64 = 0.100;

    pub fn new(rating: f64, opening_time: f64, leakage_current: f64) -> Result<Self, IrsError> {
        positive("leakage_current", leakage_current)?;
        Ok(Self {
            timer: TripTimer::new(rating, opening_time)?,
            leakage_current,
            open: false,
        })
    }
}

/// Series current through a resettable fuse for a source able to drive
/// `i_source_capability` amps.
pub fn resettable_fuse_current(state: &ResettableFuseState, i_source_capability: f64) -> f64 {
    if state.open {
        i_source_capability.signum() * i_source_capability.abs().min(state.leakage_current)
    } else {
        i_source_capability
    }
}

/// Heating coil in series with the pin, thermally coupled to a thermostat.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermostatCoil {
    pub r_coil: f64,
    pub temp: f64,
    pub t_ambient: f64,
    pub t_limit: f64,
    pub hysteresis: f64,
    /// Steady-state temperature rise per watt dissipated in the coil.
    pub thermal_gain: f64,
    pub tau_thermal: f64,
    pub open: bool,
}

impl Default for ThermostatCoil {
    fn default() -> Self {
        Self {
            r_coil: 1.0,
            temp: 25.0,
            t_ambient: 25.0,
            t_limit: 40.0,
            hysteresis: 2.0,
            thermal_gain: 40.0,
            tau_thermal: 2.0,
            open: false,
        }
    }
}

impl ThermostatCoil {
    pub fn validate(&self) -> Result<(), IrsError> {
        positive("r_coil", self.r_coil)?;
        positive("thermal_gain", self.thermal_gain)?;
        positive("tau_thermal", self.tau_thermal)?;
        if !(self.hysteresis >= 0.0 && self.t_limit - self.hysteresis > self.t_ambient) {
            return Err(IrsError::InvalidParameter {
                name: "hysteresis",
                value: self.hysteresis,
            });
        }
        Ok(())
    }

    pub fn close_temp(&self) -> f64 {
        self.t_limit - self.hysteresis
    }

    fn steady_temp(&self, demand: f64) -> f64 {
        let i = if self.open { 0.0 } else { demand };
        self.t_ambient + self.thermal_gain * i * i * self.r_coil
    }

    /// Exact first-order response after `dt` seconds.
    fn temp_after(&self, demand: f64, dt: f64) -> f64 {
        let ss = self.steady_temp(demand);
        ss + (self.temp - ss) * (-dt / self.tau_thermal).exp()
    }

    fn secs_to_transition(&self, demand: f64) -> Option<f64> {
        let ss = self.steady_temp(demand);
        let target = if self.open {
            if self.temp < self.close_temp() {
                return Some(0.0);
            }
            self.close_temp()
        } else {
            if self.temp >= self.t_limit {
                return Some(0.0);
            }
            self.t_limit
        };
        let reaches = if self.open { ss < target } else { ss > target };
        reaches.then(|| self.tau_thermal * ((self.temp - ss) / (target - ss)).ln())
    }
}

/// One protective device on one pin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Device {
    Fuse(FuseState),
    Breaker(BreakerState),
    Resettable(ResettableFuseState),
    Thermostat(ThermostatCoil),
}

impl Device {
    pub fn is_open(&self) -> bool {
        match self {
            Device::Fuse(f) => f.blown,
            Device::Breaker(b) => b.tripped,
            Device::Resettable(r) => r.open,
            Device::Thermostat(t) => t.open,
        }
    }

    /// Whether the pin is galvanically connected to its line.
    pub fn conducts(&self) -> bool {
        !self.is_open()
    }

    /// Current reaching the pin for a closed-circuit demand.
    pub fn series_current(&self, demand: f64) -> f64 {
        match self {
            Device::Resettable(r) => resettable_fuse_current(r, demand),
            d if d.is_open() => 0.0,
            _ => demand,
        }
    }

    /// Series resistance the device adds while closed.
    pub fn series_resistance(&self) -> f64 {
        match self {
            Device::Thermostat(t) => t.r_coil,
            _ => 0.0,
        }
    }

    /// Nanoseconds until the next state change under constant `demand`.
    pub fn nanos_to_transition(&self, demand: f64) -> Option<u64> {
        match self {
            Device::Fuse(f) if !f.blown => f.timer.nanos_to_trip(demand),
            Device::Breaker(b) if !b.tripped => b.timer.nanos_to_trip(demand),
            Device::Resettable(r) if !r.open => r.timer.nanos_to_trip(demand),
            Device::Resettable(r) => (demand.abs() <= r.timer.rating).then_some(0),
            Device::Thermostat(t) => t.secs_to_transition(demand).map(|s| (s * 1e9).ceil().max(0.0) as u64),
            _ => None,
        }
    }

    /// Advances by `dt` nanoseconds under constant `demand`.
    ///
    /// `dt` must not exceed [`Device::nanos_to_transition`]; a transition
    /// due exactly at `dt` is applied and returned.
    pub fn advance(&mut self, demand: f64, dt: u64) -> Option<DeviceEvent> {
        let due = self.nanos_to_transition(demand).is_some_and(|n| n <= dt);
        match self {
            Device::Fuse(f) => {
                if !f.blown && f.timer.advance(demand, dt) {
                    f.blown = true;
                    return Some(DeviceEvent::FuseBlown);
                }
            }
            Device::Breaker(b) => {
                if !b.tripped && b.timer.advance(demand, dt) {
                    b.tripped = true;
                    return Some(DeviceEvent::BreakerTripped);
                }
            }
            Device::Resettable(r) => {
                if r.open {
                    if due {
                        r.open = false;
                        r.timer.over_ns = 0;
                        return Some(DeviceEvent::ResettableClosed);
                    }
                } else if r.timer.advance(demand, dt) {
                    r.open = true;
                    return Some(DeviceEvent::ResettableOpened);
                }
            }
            Device::Thermostat(t) => {
                t.temp = t.temp_after(demand, dt as f64 * 1e-9);
                if due {
                    t.open = !t.open;
                    return Some(if t.open {
                        DeviceEvent::ThermostatOpen
                    } else {
                        DeviceEvent::ThermostatClosed
                    });
                }
            }
        }
        None
    }

    /// Steps `dt` seconds under constant `demand`, splitting at transitions.
    /// Returns each event with its offset in seconds.
    pub fn step(&mut self, demand: f64, dt: f64) -> Vec<(f64, DeviceEvent)> {
        let total = secs_to_nanos(dt);
        let mut done = 0;
        let mut events = Vec::new();
        while done < total {
            let chunk = match self.nanos_to_transition(demand) {
                Some(n) => n.max(1).min(total - done),
                None => total - done,
            };
            done += chunk;
            if let Some(e) = self.advance(demand, chunk) {
                events.push((done as f64 * 1e-9, e));
            }
        }
        events
    }
}

pub fn fuse_step(state: &FuseState, i: f64, dt: f64) -> FuseState {
    let mut d = Device::Fuse(*state);
    d.step(i, dt);
    match d {
        Device::Fuse(f) => f,
        _ => unreachable!(),
    }
}

pub fn breaker_reset(state: &BreakerState) -> Result<BreakerState, IrsError> {
    let mut b = *state;
    b.reset()?;
    Ok(b)
}

pub fn thermostat_step(state: &ThermostatCoil, i: f64, dt: f64) -> ThermostatCoil {
    let mut d = Device::Thermostat(*state);
    d.step(i, dt);
    match d {
        Device::Thermostat(t) => t,
        _ => unreachable!(),
    }
}
