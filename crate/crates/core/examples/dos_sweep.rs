//! DoS level sweep: analytic threshold, then the cookbook sweep through the engine.

use std::path::Path;

use canvolt::attacks::min_dos_voltage;
use canvolt::config::load_config;
use canvolt::electrical::BusTopology;
use canvolt::engine::run_sweep;
use canvolt::params::ModelParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = ModelParams::from_env()?;
    let analytic = min_dos_voltage(&params.transceiver, &BusTopology::with_vids(2), &params.timing)?;
    println!("analytic threshold: {analytic:?} V");

    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/dos_sweep.toml");
    let cfg = load_config(&path)?;
    let rows = run_sweep(&cfg, &params)?;
    for r in &rows {
        let bar = if r.success { "#" } else { "." };
        println!("{:4.1} V {bar} {}", r.param, r.first_failure_reason.as_deref().unwrap_or(""));
    }
    let first = rows.iter().find(|r| r.success).map(|r| r.param);
    println!("simulated threshold: {first:?} V");
    Ok(())
}
