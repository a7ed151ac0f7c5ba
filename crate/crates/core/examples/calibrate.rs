//! Solves the calibration for every target and compares it with the shipped file.

use canvolt::params::{calibrate, parse_targets, ModelParams, DEFAULT_PARAMS_TOML};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let targets = parse_targets("all")?;
    for (t, v) in &targets {
        println!("{t:<14} {v}");
    }
    let p = calibrate(&targets, &ModelParams::default())?;
    println!("\n{}", p.to_toml());
    let shipped = ModelParams::from_toml(DEFAULT_PARAMS_TOML)?;
    println!("matches shipped parameters: {}", p == shipped);
    Ok(())
}
