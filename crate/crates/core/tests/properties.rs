use proptest::prelude::*;

use canvolt::attacks::AttackKind;
use canvolt::config::{parse_config, to_toml};
use canvolt::electrical::{solve_bus, BusTopology, Drive, PinMode};
use canvolt::engine::{run_scenario, AttackConfig, IrsConfig, IrsKind, IrsPins, ScenarioConfig};
use canvolt::link::{decode_bitstream, encode_frame, stuff, BitDecision, Frame};
use canvolt::params::ModelParams;

fn arb_frame() -> impl Strategy<Value = Frame> {
    let data = (0u16..=0x7FF, proptest::collection::vec(any::<u8>(), 0..=8))
        .prop_map(|(id, d)| Frame::new(id, &d).unwrap());
    let remote = (0u16..=0x7FF, 0u8..=8).prop_map(|(id, dlc)| Frame::remote(id, dlc).unwrap());
    prop_oneof![4 => data, 1 => remote]
}

fn arb_bits() -> impl Strategy<Value = Vec<BitDecision>> {
    proptest::collection::vec(any::<bool>().prop_map(BitDecision::from_bit), 0..200)
}

fn arb_pin() -> impl Strategy<Value = PinMode> {
    prop_oneof![
        Just(PinMode::Input),
        Just(PinMode::OutputLow),
        (0.1f64..=5.0).prop_map(PinMode::OutputHigh),
    ]
}

fn arb_attack() -> impl Strategy<Value = AttackKind> {
    prop_oneof![
        Just(AttackKind::PassiveOvercurrent),
        Just(AttackKind::ActiveOvercurrent),
        (0.1f64..=5.0).prop_map(|v| AttackKind::Dos { v_attack_l: v }),
        (0.1f64..=5.0).prop_map(|v| AttackKind::ForcedRetransmission { v_attack_h: v }),
    ]
}

proptest! {
    #[test]
    fn codec_round_trip(f in arb_frame()) {
        let enc = encode_frame(&f);
        prop_assert_eq!(decode_bitstream(&enc.acknowledged()).unwrap(), f);
    }

    #[test]
    fn stuffed_streams_have_no_six_equal_bits(bits in arb_bits()) {
        let s = stuff(&bits);
        prop_assert!(s.windows(6).all(|w| w.iter().any(|b| *b != w[0])));
    }

    #[test]
    fn single_bit_flips_never_yield_another_frame(f in arb_frame(), k in any::<prop::sample::Index>()) {
        let enc = encode_frame(&f);
        let mut bits = enc.acknowledged();
        let k = k.index(enc.layout.crc_delimiter);
        bits[k] = bits[k].complement();
        prop_assert!(decode_bitstream(&bits).is_err());
    }

    #[test]
    fn solve_bus_balances_currents(
        drive in proptest::collection::vec(prop_oneof![Just(Drive::Dominant), Just(Drive::Recessive)], 2..6),
        ph in arb_pin(),
        pl in arb_pin(),
    ) {
        let topo = BusTopology::with_vids(drive.len() - 1);
        let mut modes = vec![(PinMode::Input, PinMode::Input); drive.len()];
        modes[0] = (ph, pl);
        let sol = solve_bus(&drive, &modes, &topo, &ModelParams::default().transceiver).unwrap();
        let [a, b] = sol.kirchhoff_residual();
        prop_assert!(a.abs() < 1e-9 && b.abs() < 1e-9);
    }

    #[test]
    fn config_round_trips(kind in arb_attack(), t0 in 0.0f64..0.02, len in 0.001f64..0.02, fuse in any::<bool>()) {
        let mut cfg = ScenarioConfig::baseline(0.05);
        cfg.attack = Some(AttackConfig {
            kind,
            t_start: t0,
            t_end: t0 + len,
            phase_offset: 0.0,
            source_limit: None,
            source_resistance: 0.0,
        });
        cfg.irs = fuse.then_some(IrsConfig {
            kind: IrsKind::Fuse { rating: 0.01, opening_time: 1e-6 },
            pins: IrsPins::Both,
        });
        let text = to_toml(&cfg);
        prop_assert_eq!(parse_config(&text).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn runs_are_deterministic(kind in arb_attack(), t0 in 0.0f64..0.005) {
        let mut cfg = ScenarioConfig::baseline(0.02);
        for e in &mut cfg.ecus {
            if let Some(t) = e.traffic.as_mut() {
                t.period = 0.002;
            }
        }
        cfg.attack = Some(AttackConfig {
            kind,
            t_start: t0,
            t_end: t0 + 0.01,
            phase_offset: 0.0,
            source_limit: None,
            source_resistance: 0.0,
        });
        let p = ModelParams::default();
        let (a, sa) = run_scenario(&cfg, &p).unwrap();
        let (b, sb) = run_scenario(&cfg, &p).unwrap();
        prop_assert_eq!(a.to_csv_string(), b.to_csv_string());
        prop_assert_eq!(sa, sb);
    }
}
