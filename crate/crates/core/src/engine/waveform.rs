//! Analytic differential waveform within one bit.
//!
//! A bit is described by pieces of constant bus operating point. At each piece
//! boundary the differential voltage either steps, or — when CANH is held by
//! an external source at or above its dominant level — decays with the RC
//! constant (falling) or rises after the transition extension (rising).

use crate::electrical::TransitionParams;
use crate::link::{decide_bit, sample_runs, BitDecision, BitTiming};

/// Constant operating point starting `start` ns into the bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub start: u64,
    pub v_diff: f64,
    /// CANH is held high externally, slowing the bus transitions.
    pub extends: bool,
}

/// Analog state carried across bit boundaries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Analog {
    pub v_diff: f64,
    /// Raw (unfiltered) decision at the end of the previous bit.
    pub raw: BitDecision,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Const(f64),
    /// `v_ss + (v0 - v_ss) * exp(-(t - t0) / tau)`, falling.
    Decay { v0: f64, v_ss: f64, t0: u64 },
}

pub struct BitOutcome {
    pub sampled: BitDecision,
    pub end: Analog,
}

/// Evaluates a bit of `bit_ns` nanoseconds. `pieces` must start at 0.
pub fn evaluate_bit(
    pieces: &[Piece],
    start: Analog,
    timing: &BitTiming,
    transition: &TransitionParams,
) -> BitOutcome {
    let bit = timing.bit_nanos();
    let tau = transition.tau_rc * 1e9;
    let ext = (transition.transition_extension * 1e9).round() as u64;
    let mut runs: Vec<(u64, BitDecision)> = Vec::with_capacity(4);
    let mut d = start.raw;
    let mut v = start.v_diff;
    let push = |runs: &mut Vec<(u64, BitDecision)>, at: u64, dec: BitDecision| {
        if runs.last().is_none_or(|r| r.1 != dec) {
            runs.push((at, dec));
        }
    };
    let mut segments: Vec<(u64, u64, Shape)> = Vec::with_capacity(pieces.len() + 1);
    for (j, p) in pieces.iter().enumerate() {
        let a = p.start;
        let b = pieces.get(j + 1).map_or(bit, |n| n.start);
        if b <= a {
            continue;
        }
        if p.extends && p.v_diff < v {
            segments.push((
                a,
                b,
                Shape::Decay {
                    v0: v,
                    v_ss: p.v_diff,
                    t0: a,
                },
            ));
            v = p.v_diff + (v - p.v_diff) * (-((b - a) as f64) / tau).exp();
        } else if p.extends && p.v_diff > v && ext > 0 {
            let mid = (a + ext).min(b);
            segments.push((a, mid, Shape::Const(v)));
            if mid < b {
                segments.push((mid, b, Shape::Const(p.v_diff)));
                v = p.v_diff;
            }
        } else {
            segments.push((a, b, Shape::Const(p.v_diff)));
            v = p.v_diff;
        }
    }
    for (a, b, shape) in segments {
        match shape {
            Shape::Const(level) => {
                d = decide_bit(level, d, timing);
                push(&mut runs, a, d);
            }
            Shape::Decay { v0, v_ss, t0 } => {
                let at = |t: u64| v_ss + (v0 - v_ss) * (-((t - t0) as f64) / tau).exp();
                d = decide_bit(at(a), d, timing);
                push(&mut runs, a, d);
                let thr = timing.recessive_threshold;
                if d == BitDecision::Dominant && v_ss < thr {
                    // first integer ns strictly below the threshold
                    let t_star = t0 as f64 + tau * ((v0 - v_ss) / (thr - v_ss)).ln();
                    let mut k = (t_star.floor() as u64 + 1).max(a);
                    if k > a && at(k - 1) < thr {
                        k -= 1;
                    }
                    while k < b && at(k) >= thr {
                        k += 1;
                    }
                    if k < b {
                        d = BitDecision::Recessive;
                        push(&mut runs, k, d);
                    }
                }
            }
        }
    }
    BitOutcome {
        sampled: sample_runs(&runs, timing),
        end: Analog { v_diff: v, raw: d },
    }
}

/// The transmitter's view of the bit after the ACK slot: the slot's level
/// persists for `ack_delay` before the bit's own pieces take over.
pub fn delayed_pieces(pieces: &[Piece], slot_last: Piece, delay: u64) -> Vec<Piece> {
    let mut out = vec![Piece { start: 0, ..slot_last }];
    for (j, p) in pieces.iter().enumerate() {
        let end = pieces.get(j + 1).map_or(u64::MAX, |n| n.start);
        if end <= delay {
            continue;
        }
        out.push(Piece {
            start: p.start.max(delay),
            ..*p
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::sample_bit_ns;
    use BitDecision::*;

    fn fixtures() -> (BitTiming, TransitionParams) {
        (BitTiming::default(), TransitionParams::default())
    }

    fn after_dominant(v: f64) -> Analog {
        Analog {
            v_diff: v,
            raw: Dominant,
        }
    }

    #[test]
    fn clean_bits() {
        let (t, tr) = fixtures();
        let rec = Analog {
            v_diff: 0.0,
            raw: Recessive,
        };
        let dom = [Piece {
            start: 0,
            v_diff: 2.0,
            extends: false,
        }];
        let o = evaluate_bit(&dom, rec, &t, &tr);
        assert_eq!(o.sampled, Dominant);
        assert_eq!(o.end, after_dominant(2.0));
    }

    /// Oracle: brute-force 1 ns scan of the closed-form decay.
    fn scan_decay(v0: f64, start: u64, t: &BitTiming, tr: &TransitionParams) -> BitDecision {
        let tau = tr.tau_rc * 1e9;
        sample_bit_ns(
            |k| {
                if k < start {
                    v0
                } else {
                    v0 * (-((k - start) as f64) / tau).exp()
                }
            },
            t,
            Dominant,
        )
    }

    #[test]
    fn ack_delimiter_under_canh_hold() {
        let (t, tr) = fixtures();
        let delay = t.ack_delay_nanos();
        for (v_attack, expect) in [(5.0, Dominant), (4.5, Dominant), (4.0, Recessive)] {
            let v_dom = v_attack - 1.5;
            let slot = Piece {
                start: 0,
                v_diff: v_dom,
                extends: true,
            };
            let delim = [Piece {
                start: 0,
                v_diff: 0.0,
                extends: true,
            }];
            let tx = delayed_pieces(&delim, slot, delay);
            let o = evaluate_bit(&tx, after_dominant(v_dom), &t, &tr);
            assert_eq!(o.sampled, expect, "transmitter at {v_attack} V");
            assert_eq!(scan_decay(v_dom, delay, &t, &tr), expect);
            // receivers sample the undelayed decay
            let o = evaluate_bit(&delim, after_dominant(v_dom), &t, &tr);
            assert_eq!(o.sampled, Recessive, "receivers at {v_attack} V");
        }
    }

    #[test]
    fn pulse_blackout_respects_decode_hold() {
        let (t, tr) = fixtures();
        let dip = |len: u64| {
            [
                Piece {
                    start: 0,
                    v_diff: 2.0,
                    extends: false,
                },
                Piece {
                    start: 1300,
                    v_diff: 0.0,
                    extends: false,
                },
                Piece {
                    start: 1300 + len,
                    v_diff: 2.0,
                    extends: false,
                },
            ]
        };
        let rec = Analog {
            v_diff: 0.0,
            raw: Recessive,
        };
        assert_eq!(evaluate_bit(&dip(339), rec, &t, &tr).sampled, Dominant);
        assert_eq!(evaluate_bit(&dip(340), rec, &t, &tr).sampled, Recessive);
    }

    #[test]
    fn rising_edge_is_extended_under_canh_hold() {
        let (t, tr) = fixtures();
        // CANH pulled low for 285 ns; the recovery adds 55 ns of blackout.
        let pieces = [
            Piece {
                start: 0,
                v_diff: 3.5,
                extends: true,
            },
            Piece {
                start: 1300,
                v_diff: 0.0,
                extends: false,
            },
            Piece {
                start: 1585,
                v_diff: 3.5,
                extends: true,
            },
        ];
        let o = evaluate_bit(&pieces, after_dominant(3.5), &t, &tr);
        assert_eq!(o.sampled, Recessive);
        let mut short = pieces;
        short[2].start = 1584;
        assert_eq!(evaluate_bit(&short, after_dominant(3.5), &t, &tr).sampled, Dominant);
    }
}
