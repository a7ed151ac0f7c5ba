use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitDecision {
    Dominant,
    Recessive,
}

impl BitDecision {
    /// `true` is a logical 1, i.e. recessive.
    pub fn from_bit(one: bool) -> Self {
        if one {
            BitDecision::Recessive
        } else {
            BitDecision::Dominant
        }
    }

    pub fn complement(self) -> Self {
        match self {
            BitDecision::Dominant => BitDecision::Recessive,
            BitDecision::Recessive => BitDecision::Dominant,
        }
    }

    pub fn is_dominant(self) -> bool {
        self == BitDecision::Dominant
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimingError {
    #[error("bus_speed must be positive")]
    ZeroSpeed,
    #[error("sample_point {0} outside (0, 1)")]
    SamplePoint(f64),
    #[error("{name} = {value} s is outside the bit time")]
    OutOfBit { name: &'static str, value: f64 },
    #[error("recessive threshold {recessive} V must lie below dominant threshold {dominant} V")]
    Thresholds { dominant: f64, recessive: f64 },
}

/// Receiver bit timing and decision thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BitTiming {
    pub bus_speed: u32,
    pub sample_point: f64,
    /// Minimum duration a level must persist to be decoded.
    pub decode_hold: f64,
    /// How late the transmitter sees the ACK slot released, relative to
    /// its own bit boundary.
    pub ack_delay: f64,
    pub dominant_threshold: f64,
    pub recessive_threshold: f64,
}

impl Default for BitTiming {
    fn default() -> Self {
        Self {
            bus_speed: 500_000,
            sample_point: 0.75,
            decode_hold: 340e-9,
            ack_delay: 484e-9,
            dominant_threshold: 0.9,
            recessive_threshold: 0.5,
        }
    }
}

impl BitTiming {
    pub fn bit_time(&self) -> f64 {
        1.0 / self.bus_speed as f64
    }

    pub fn bit_nanos(&self) -> u64 {
        (1e9 / self.bus_speed as f64).round() as u64
    }

    pub fn sample_offset_nanos(&self) -> u64 {
        (self.sample_point * self.bit_nanos() as f64).round() as u64
    }

    pub fn decode_hold_nanos(&self) -> u64 {
        (self.decode_hold * 1e9).round() as u64
    }

    pub fn ack_delay_nanos(&self) -> u64 {
        (self.ack_delay * 1e9).round() as u64
    }

    /// Whether `decode_hold` lies in the 300–350 ns band typical of
    /// transceivers. Values outside are allowed but unusual.
    pub fn decode_hold_in_band(&self) -> bool {
        (300e-9..=350e-9).contains(&self.decode_hold)
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        if self.bus_speed == 0 {
            return Err(TimingError::ZeroSpeed);
        }
        if !(self.sample_point > 0.0 && self.sample_point < 1.0) {
            return Err(TimingError::SamplePoint(self.sample_point));
        }
        let bit = self.bit_time();
        for (name, value) in [("decode_hold", self.decode_hold), ("ack_delay", self.ack_delay)] {
            if !(value >= 0.0 && value < bit) {
                return Err(TimingError::OutOfBit { name, value });
            }
        }
        if !(self.recessive_threshold < self.dominant_threshold) {
            return Err(TimingError::Thresholds {
                dominant: self.dominant_threshold,
                recessive: self.recessive_threshold,
            });
        }
        Ok(())
    }
}

pub fn decide_bit(v_diff: f64, prev: BitDecision, timing: &BitTiming) -> BitDecision {
    if v_diff > timing.dominant_threshold {
        BitDecision::Dominant
    } else if v_diff < timing.recessive_threshold {
        BitDecision::Recessive
    } else {
        prev
    }
}

/// Resolution of the glitch-filter scan.
pub const SCAN_STEP_NS: u64 = 1;

/// Samples one bit of a differential waveform (seconds → volts).
///
/// The raw decision is tracked from `bit_start` with hysteresis. A recessive
/// run containing the sample instant that begins and ends strictly inside
/// the bit and is shorter than `decode_hold` is bridged as dominant; a
/// dominant level registers at once (hard synchronisation on edges).
pub fn sample_bit<F>(waveform: F, bit_start: f64, timing: &BitTiming, prev: BitDecision) -> BitDecision
where
    F: Fn(f64) -> f64,
{
    sample_bit_ns(|k| waveform(bit_start + k as f64 * 1e-9), timing, prev)
}

/// [`sample_bit`] with the waveform indexed by nanoseconds into the bit.
pub fn sample_bit_ns<F>(waveform: F, timing: &BitTiming, prev: BitDecision) -> BitDecision
where
    F: Fn(u64) -> f64,
{
    let n = (timing.bit_nanos() / SCAN_STEP_NS).max(1);
    let mut raw = Vec::with_capacity(n as usize);
    let mut d = prev;
    for k in 0..n {
        d = decide_bit(waveform(k * SCAN_STEP_NS), d, timing);
        raw.push(d);
    }
    let mut runs: Vec<(u64, BitDecision)> = Vec::new();
    for (k, d) in raw.into_iter().enumerate() {
        if runs.last().is_none_or(|r| r.1 != d) {
            runs.push((k as u64 * SCAN_STEP_NS, d));
        }
    }
    sample_runs(&runs, timing)
}

/// Applies the sample point and the glitch filter to the decision runs of one
/// bit. `runs` holds `(start_ns, decision)` pairs in increasing order, the
/// first starting at 0; consecutive runs differ.
pub fn sample_runs(runs: &[(u64, BitDecision)], timing: &BitTiming) -> BitDecision {
    let bit = timing.bit_nanos();
    let s = timing.sample_offset_nanos().min(bit - 1);
    let idx = runs.partition_point(|r| r.0 <= s) - 1;
    let (start, level) = runs[idx];
    let end = runs.get(idx + 1).map_or(bit, |r| r.0);
    let inside = idx > 0 && end < bit;
    if level == BitDecision::Recessive && inside && end - start < timing.decode_hold_nanos() {
        BitDecision::Dominant
    } else {
        level
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use BitDecision::*;

    #[test]
    fn thresholds_with_hold() {
        let t = BitTiming::default();
        assert_eq!(decide_bit(2.0, Recessive, &t), Dominant);
        assert_eq!(decide_bit(0.0, Dominant, &t), Recessive);
        assert_eq!(decide_bit(0.7, Dominant, &t), Dominant);
        assert_eq!(decide_bit(0.7, Recessive, &t), Recessive);
        assert_eq!(decide_bit(0.9, Recessive, &t), Recessive);
        assert_eq!(decide_bit(0.5, Recessive, &t), Recessive);
    }

    #[test]
    fn derived_timing() {
        let t = BitTiming::default();
        assert_eq!(t.bit_nanos(), 2000);
        assert_eq!(t.sample_offset_nanos(), 1500);
        assert!(t.decode_hold_in_band());
        t.validate().unwrap();
        let bad = BitTiming {
            sample_point: 1.0,
            ..t
        };
        assert_eq!(bad.validate(), Err(TimingError::SamplePoint(1.0)));
    }

    #[test]
    fn glitch_shorter_than_hold_is_ignored() {
        let t = BitTiming::default();
        // dominant bit with a recessive dip around the sample point
        let dip = |len: u64| move |k: u64| if (1400..1400 + len).contains(&k) { 0.0 } else { 2.0 };
        assert_eq!(sample_bit_ns(dip(339), &t, Dominant), Dominant);
        assert_eq!(sample_bit_ns(dip(340), &t, Dominant), Recessive);
        assert_eq!(sample_bit(|_| 2.0, 0.0, &t, Recessive), Dominant);
        assert_eq!(sample_bit(|_| 0.0, 0.0, &t, Dominant), Recessive);
    }

    #[test]
    fn pulse_train_faster_than_hold_is_bridged() {
        let t = BitTiming::default();
        // 255 ns phases: neither level persists for decode_hold
        let train = |k: u64| if (k / 255) % 2 == 1 { -1.0 } else { 2.0 };
        assert_eq!(sample_bit_ns(train, &t, Dominant), Dominant);
        let shifted = |k: u64| train(k + 255);
        assert_eq!(sample_bit_ns(shifted, &t, Dominant), Dominant);
        // a short dominant blip in a recessive bit is not filtered
        let blip = |k: u64| if (1400..1600).contains(&k) { 2.0 } else { 0.0 };
        assert_eq!(sample_bit_ns(blip, &t, Recessive), Dominant);
    }
}
