use serde::{Deserialize, Serialize};

use crate::time::secs_to_nanos;

/// Absolute-maximum pin current model of the VIDS microcontroller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcuDamage {
    pub i_max: f64,
    pub damage_time: f64,
    /// Nanoseconds spent continuously above `i_max`.
    pub over_ns: u64,
    pub damaged: bool,
}

impl EcuDamage {
    pub const DEFAULT_I_MAX: f64 = 0.040;
    pub const DEFAULT_DAMAGE_TIME: f64 = 1e-6;

    pub fn new(i_max: f64, damage_time: f64) -> Self {
        Self {
            i_max,
            damage_time,
            over_ns: 0,
            damaged: false,
        }
    }

    fn damage_ns(&self) -> u64 {
        secs_to_nanos(self.damage_time).max(1)
    }

    /// Nanoseconds until damage under a constant pin current `i`.
    pub fn nanos_to_damage(&self, i: f64) -> Option<u64> {
        (!self.damaged && i.abs() > self.i_max).then(|| self.damage_ns().saturating_sub(self.over_ns))
    }

    /// Advances by `dt` ns; returns true when damage latches in this step.
    /// With `latch = false` the timer still accumulates but the flag is left
    /// for a later step (used when a protective device opens at the same
    /// instant).
    pub fn advance(&mut self, i: f64, dt: u64, latch: bool) -> bool {
        if self.damaged {
            return false;
        }
        if i.abs() > self.i_max {
            self.over_ns += dt;
            if latch && self.over_ns >= self.damage_ns() {
                self.damaged = true;
                return true;
            }
        } else {
            self.over_ns = 0;
        }
        false
    }
}

impl Default for EcuDamage {
    fn default() -> Self {
        Self::new(Self::DEFAULT_I_MAX, Self::DEFAULT_DAMAGE_TIME)
    }
}

/// Seconds-based convenience step.
pub fn damage_step(state: &EcuDamage, i: f64, dt: f64) -> EcuDamage {
    let mut s = *state;
    s.advance(i, secs_to_nanos(dt), true);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sustained_overcurrent_damages() {
        let d = damage_step(&EcuDamage::default(), 0.0583, 0.5e-6);
        assert!(!d.damaged);
        assert_eq!(d.nanos_to_damage(0.0583), Some(500));
        assert!(damage_step(&d, 0.0583, 0.5e-6).damaged);
    }

    #[test]
    fn strict_threshold() {
        assert!(!damage_step(&EcuDamage::default(), 0.039, 100.0).damaged);
        let mpc = EcuDamage::new(0.020, 1e-6);
        assert!(!damage_step(&mpc, 0.020, 100.0).damaged);
        assert_eq!(mpc.nanos_to_damage(0.020), None);
    }

    #[test]
    fn deferred_latch() {
        let mut d = EcuDamage::default();
        assert!(!d.advance(0.1, 1000, false));
        assert_eq!(d.nanos_to_damage(0.1), Some(0));
        assert!(d.advance(0.1, 0, true));
    }
}
