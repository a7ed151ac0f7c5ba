//! 60 s timelines of each voltage attack (10–30 s) with and without a fuse.

use canvolt::attacks::AttackKind;
use canvolt::electrical::{Line, PulseShape};
use canvolt::engine::{run_scenario, AttackConfig, IrsConfig, IrsKind, IrsPins, ScenarioConfig};
use canvolt::params::ModelParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = ModelParams::from_env()?;
    let pulse = PulseShape {
        period: 800e-9,
        duty: 0.5,
        v_high: 5.0,
        v_low: 0.0,
    };
    let attacks = [
        ("dos", AttackKind::Dos { v_attack_l: 5.0 }),
        ("fra", AttackKind::ForcedRetransmission { v_attack_h: 5.0 }),
        ("pulse canl", AttackKind::Pulse { line: Line::Canl, shape: pulse }),
        ("pulse canh", AttackKind::Pulse { line: Line::Canh, shape: pulse }),
    ];
    let fuse = IrsConfig {
        kind: IrsKind::Fuse {
            rating: 0.010,
            opening_time: 1e-6,
        },
        pins: IrsPins::Both,
    };
    for (name, kind) in attacks {
        for irs in [None, Some(fuse)] {
            let mut cfg = ScenarioConfig::baseline(60.0);
            cfg.attack = Some(AttackConfig {
                kind,
                t_start: 10.0,
                t_end: 30.0,
                phase_offset: 0.0,
                source_limit: None,
                source_resistance: 0.0,
            });
            cfg.irs = irs;
            let (_, s) = run_scenario(&cfg, &params)?;
            let ind: String = s.message_indicator.iter().map(|d| char::from(b'0' + d)).collect();
            println!(
                "{name:<10} {:<7} {ind} received {:2}/60 retx {:6} damaged {}",
                if irs.is_some() { "fuse" } else { "no IRS" },
                s.messages_received,
                s.retransmissions,
                s.damaged
            );
        }
    }
    Ok(())
}
