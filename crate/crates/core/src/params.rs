//! Calibrated model parameters and their closed-form calibration.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::electrical::{TransceiverParams, TransitionParams};
use crate::link::BitTiming;

/// Environment variable naming a parameter file that replaces the defaults.
pub const PARAMS_ENV: &str = "CANVOLT_PARAMS";

/// The shipped parameter file; identical to `calibrate` on the full target set.
pub const DEFAULT_PARAMS_TOML: &str = include_str!("../params/default.toml");

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid parameter file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("unknown calibration target `{0}`")]
    UnknownTarget(String),
    #[error("target {target} is infeasible: {reason}")]
    InfeasibleTarget { target: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub transceiver: TransceiverParams,
    pub transition: TransitionParams,
    pub timing: BitTiming,
}

impl ModelParams {
    pub fn from_toml(text: &str) -> Result<Self, ParamsError> {
        let p: ModelParams = toml::from_str(text)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("parameters serialize")
    }

    pub fn load(path: &Path) -> Result<Self, ParamsError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// `$CANVOLT_PARAMS` if set, otherwise the shipped defaults.
    pub fn from_env() -> Result<Self, ParamsError> {
        match std::env::var_os(PARAMS_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Self::from_toml(DEFAULT_PARAMS_TOML),
        }
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        self.transceiver
            .validate()
            .map_err(|e| ParamsError::Invalid(e.to_string()))?;
        self.timing.validate().map_err(|e| ParamsError::Invalid(e.to_string()))?;
        let t = &self.transition;
        for (name, v) in [
            ("transition.tau_rc", t.tau_rc),
            ("transition.nominal_transition", t.nominal_transition),
            ("transition.transition_extension", t.transition_extension),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ParamsError::Invalid(format!("{name} = {v}")));
            }
        }
        if t.tau_rc == 0.0 {
            return Err(ParamsError::Invalid("transition.tau_rc must be positive".into()));
        }
        Ok(())
    }
}

/// Observable quantities the calibration can be anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Target {
    /// Smallest DoS level that blocks the bus: 2.2 V.
    DosThreshold,
    /// Bit length time with CANH held at 5 V: 3.16 µs.
    TauBit5v,
    /// Current sunk by a dominant transmitter into a 5 V CANL: 281 mA.
    SinkCurrent,
    /// Smallest corrupting CANL pulse period: 680 ns.
    PulseCanl,
    /// Smallest corrupting CANH pulse period: 570 ns.
    PulseCanh,
    /// Smallest CANH level forcing retransmission: 4.5 V.
    FraThreshold,
}

impl Target {
    pub const ALL: [Target; 6] = [
        Target::DosThreshold,
        Target::TauBit5v,
        Target::SinkCurrent,
        Target::PulseCanl,
        Target::PulseCanh,
        Target::FraThreshold,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Target::DosThreshold => "dos_threshold",
            Target::TauBit5v => "tau_bit_5v",
            Target::SinkCurrent => "sink_current",
            Target::PulseCanl => "pulse_canl",
            Target::PulseCanh => "pulse_canh",
            Target::FraThreshold => "fra_threshold",
        }
    }

    pub fn default_value(&self) -> f64 {
        match self {
            Target::DosThreshold => 2.2,
            Target::TauBit5v => 3.16e-6,
            Target::SinkCurrent => 0.281,
            Target::PulseCanl => 680e-9,
            Target::PulseCanh => 570e-9,
            Target::FraThreshold => 4.5,
        }
    }

    fn parse_name(s: &str) -> Option<Target> {
        Target::ALL.into_iter().find(|t| t.name() == s)
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses `name[=value],...`; `all` selects every target at its default.
/// Values use SI units (V, s, A).
pub fn parse_targets(list: &str) -> Result<Vec<(Target, f64)>, ParamsError> {
    let mut out: Vec<(Target, f64)> = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item == "all" {
            out.extend(Target::ALL.iter().map(|t| (*t, t.default_value())));
            continue;
        }
        let (name, value) = match item.split_once('=') {
            Some((n, v)) => (n.trim(), Some(v.trim())),
            None => (item, None),
        };
        let target = Target::parse_name(name).ok_or_else(|| ParamsError::UnknownTarget(name.to_string()))?;
        let value = match value {
            Some(v) => v
                .parse::<f64>()
                .map_err(|_| ParamsError::Invalid(format!("{name}: `{v}` is not a number")))?,
            None => target.default_value(),
        };
        out.retain(|(t, _)| *t != target);
        out.push((target, value));
    }
    out.sort_by_key(|(t, _)| *t);
    Ok(out)
}

/// Rounds to `decimals` decimal places (0.1 Ω → 1, 1 ns → 9).
fn round_to(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).round() / scale
}

fn infeasible(target: Target, reason: String) -> ParamsError {
    ParamsError::InfeasibleTarget {
        target: target.name(),
        reason,
    }
}

/// Solves the closed-form calibration equations for the given targets,
/// starting from `base` for everything not targeted.
///
/// * DoS threshold `v`: the dominant differential through the attacked
///   high-side driver, `(canh_dom - v) * r_load / (r_load + r_drive_high)`,
///   equals the dominant decision threshold (rounded up to 0.1 Ω).
/// * 5 V bit length: `tau_bit - bit = tau_rc * ln((5 - canl_dom) / (0.1 * 5))`.
/// * Sink current `i`: `r_sink = (5 - r_sink_offset) / i` (rounded to 0.1 Ω).
/// * CANL pulse period `p`: `decode_hold = p / 2`.
/// * CANH pulse period `p`: `transition_extension = decode_hold - p / 2`.
/// * FRA threshold `v`: the ACK-delimiter sample of the transmitter falls on
///   the recessive threshold midway between `v` and the grid point below
///   (rounded to 1 ns).
pub fn calibrate(targets: &[(Target, f64)], base: &ModelParams) -> Result<ModelParams, ParamsError> {
    let mut p = *base;
    let get = |t: Target| targets.iter().find(|(x, _)| *x == t).map(|(_, v)| *v);
    let tr = &mut p.transceiver;
    let r_load = 60.0;

    if let Some(v) = get(Target::DosThreshold) {
        let thr = p.timing.dominant_threshold;
        let r = r_load * (tr.canh_dominant() - v - thr) / thr;
        if v < tr.canl_dominant() {
            return Err(infeasible(
                Target::DosThreshold,
                format!("{v} V is below the dominant CANL level {} V, so it never contests the driver", tr.canl_dominant()),
            ));
        }
        if !(r > 0.0) {
            return Err(infeasible(
                Target::DosThreshold,
                format!("{v} V needs a non-positive driver resistance ({r:.3} Ω)"),
            ));
        }
        // round up so `v` itself lands strictly below the threshold
        tr.r_drive_high = ((r * 10.0 * (1.0 + 1e-12)).ceil() / 10.0).max(0.1);
    }
    if let Some(i) = get(Target::SinkCurrent) {
        let r = (PINMAX - tr.r_sink_offset) / i;
        if !(r > 0.0 && r.is_finite()) {
            return Err(infeasible(Target::SinkCurrent, format!("{i} A gives r_sink = {r}")));
        }
        tr.r_sink = round_to(r, 1);
    }
    if let Some(tau_bit) = get(Target::TauBit5v) {
        let rise = tau_bit - p.timing.bit_time();
        let span = (PINMAX - tr.canl_dominant()) / (0.1 * PINMAX);
        if !(rise > 0.0 && span > 1.0) {
            return Err(infeasible(
                Target::TauBit5v,
                format!("bit length {tau_bit} s leaves no recovery time"),
            ));
        }
        p.transition.tau_rc = rise / span.ln();
    }
    if let Some(period) = get(Target::PulseCanl) {
        p.timing.decode_hold = round_to(period / 2.0, 9);
    }
    if let Some(period) = get(Target::PulseCanh) {
        let ext = round_to(p.timing.decode_hold - period / 2.0, 9);
        if ext < 0.0 {
            return Err(infeasible(
                Target::PulseCanh,
                format!(
                    "CANH period {period} s exceeds the CANL bound {} s",
                    2.0 * p.timing.decode_hold
                ),
            ));
        }
        p.transition.transition_extension = ext;
    }
    if let Some(v) = get(Target::FraThreshold) {
        let mid = v - 0.25;
        let start = mid - p.transceiver.canl_dominant();
        let thr = p.timing.recessive_threshold;
        if !(start > thr) || v < p.transceiver.canh_dominant() {
            return Err(infeasible(
                Target::FraThreshold,
                format!("{v} V does not hold CANH above its dominant level"),
            ));
        }
        let elapsed = p.transition.tau_rc * (start / thr).ln();
        let delay = round_to(p.timing.sample_point * p.timing.bit_time() - elapsed, 9);
        if !(delay >= 0.0 && delay < p.timing.bit_time()) {
            return Err(infeasible(
                Target::FraThreshold,
                format!("needs an ACK delay of {delay} s outside the bit"),
            ));
        }
        p.timing.ack_delay = delay;
    }
    p.validate()?;
    Ok(p)
}

const PINMAX: f64 = 5.0;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn shipped_defaults_equal_code_defaults_and_calibration() {
        let shipped = ModelParams::from_toml(DEFAULT_PARAMS_TOML).unwrap();
        assert_eq!(shipped, ModelParams::default());
        let all = parse_targets("all").unwrap();
        let cal = calibrate(&all, &ModelParams::default()).unwrap();
        assert_eq!(cal.transceiver, shipped.transceiver);
        assert_abs_diff_eq!(cal.transition.tau_rc, shipped.transition.tau_rc, epsilon = 1e-18);
        assert_abs_diff_eq!(cal.timing.decode_hold, shipped.timing.decode_hold, epsilon = 1e-15);
        assert_abs_diff_eq!(cal.timing.ack_delay, shipped.timing.ack_delay, epsilon = 1e-15);
        assert_abs_diff_eq!(
            cal.transition.transition_extension,
            shipped.transition.transition_extension,
            epsilon = 1e-15
        );
    }

    #[test]
    fn calibration_examples() {
        let base = ModelParams::default();
        let p = calibrate(&[(Target::DosThreshold, 2.2)], &base).unwrap();
        assert_abs_diff_eq!(p.transceiver.r_drive_high, 26.7, epsilon = 1e-9);
        let p = calibrate(&[(Target::TauBit5v, 3.16e-6)], &base).unwrap();
        assert_abs_diff_eq!(p.transition.tau_rc, 0.596e-6, epsilon = 0.001e-6);
        let p = calibrate(&[(Target::SinkCurrent, 0.281)], &base).unwrap();
        assert_abs_diff_eq!(p.transceiver.r_sink, 12.8, epsilon = 1e-9);
    }

    #[test]
    fn infeasible_targets() {
        let base = ModelParams::default();
        assert!(matches!(
            calibrate(&[(Target::DosThreshold, 1.4)], &base),
            Err(ParamsError::InfeasibleTarget { .. })
        ));
        assert!(matches!(
            calibrate(&[(Target::DosThreshold, 3.0)], &base),
            Err(ParamsError::InfeasibleTarget { .. })
        ));
        assert!(matches!(
            calibrate(&[(Target::PulseCanh, 800e-9)], &base),
            Err(ParamsError::InfeasibleTarget { .. })
        ));
        assert!(matches!(parse_targets("bogus"), Err(ParamsError::UnknownTarget(_))));
    }

    #[test]
    fn target_list_parsing() {
        let t = parse_targets("dos_threshold=2.3, pulse_canl").unwrap();
        assert_eq!(t, vec![(Target::DosThreshold, 2.3), (Target::PulseCanl, 680e-9)]);
    }

    #[test]
    fn dos_calibration_hits_every_grid_level() {
        use crate::attacks::min_dos_voltage;
        use crate::electrical::BusTopology;
        let base = ModelParams::default();
        for k in 15..=25 {
            let v = k as f64 / 10.0;
            let p = calibrate(&[(Target::DosThreshold, v)], &base).unwrap();
            let got = min_dos_voltage(&p.transceiver, &BusTopology::with_vids(2), &p.timing).unwrap();
            assert_eq!(got, Some(v), "target {v} V, r_drive_high {}", p.transceiver.r_drive_high);
        }
    }
}
