//! Minimum pulse periods that corrupt bits, for either line.

use canvolt::attacks::{min_pulse_period, pulse_period_bound};
use canvolt::electrical::Line;
use canvolt::params::ModelParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = ModelParams::from_env()?;
    for line in [Line::Canl, Line::Canh] {
        let grid = min_pulse_period(line, 0.5, &p.timing, &p.transition, 500, 700, 10);
        let bound = pulse_period_bound(line, 0.5, &p.timing, &p.transition);
        println!("{line:?}: first corrupting period {grid:?} ns (bound {:.0} ns)", bound * 1e9);
    }
    let mut wide = p.timing;
    wide.decode_hold = 350e-9;
    let bound = pulse_period_bound(Line::Canl, 0.5, &wide, &p.transition);
    println!("CANL bound with a 350 ns decode hold: {:.0} ns", bound * 1e9);
    Ok(())
}
