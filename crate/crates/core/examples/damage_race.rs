//! Active overcurrent against the VIDS pins: no IRS, a fuse and a resettable fuse.

use canvolt::attacks::AttackKind;
use canvolt::engine::{run_scenario, AttackConfig, IrsConfig, IrsKind, IrsPins, ScenarioConfig};
use canvolt::params::ModelParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = ModelParams::from_env()?;
    let cases = [
        ("no IRS", None),
        (
            "10 mA fuse",
            Some(IrsKind::Fuse {
                rating: 0.010,
                opening_time: 1e-6,
            }),
        ),
        (
            "resettable fuse",
            Some(IrsKind::Resettable {
                rating: 0.010,
                opening_time: 1e-6,
                leakage_current: 0.100,
            }),
        ),
    ];
    for (label, irs) in cases {
        let mut cfg = ScenarioConfig::baseline(0.01);
        cfg.attack = Some(AttackConfig {
            kind: AttackKind::ActiveOvercurrent,
            t_start: 0.001,
            t_end: 0.009,
            phase_offset: 0.0,
            source_limit: None,
            source_resistance: 0.0,
        });
        cfg.irs = irs.map(|kind| IrsConfig { kind, pins: IrsPins::Both });
        let (_, s) = run_scenario(&cfg, &params)?;
        let at = s.damage_time.map(|t| format!(" at {:.3} us", t * 1e6)).unwrap_or_default();
        println!("{label:<16} damaged {}{at}, peak pin current {:.1} mA", s.damaged, s.peak_pin_current * 1e3);
        for e in &s.device_events {
            println!("{:>18}{:.6} s {} {}", "", e.time, e.line, e.event);
        }
    }
    Ok(())
}
