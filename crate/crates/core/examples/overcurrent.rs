//! Pin currents of the two overcurrent attacks, with and without a source cap.

use canvolt::attacks::{overcurrent_current, Overcurrent};
use canvolt::electrical::{BusTopology, TransceiverParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = TransceiverParams::default();
    let i_max = 0.040;
    let topo = BusTopology::with_vids(2);
    let mut capped = topo.clone();
    if let Some(taps) = capped.nodes[0].taps.as_mut() {
        taps.current_limit = Some(0.052);
    }
    for (label, variant, topo) in [
        ("passive", Overcurrent::Passive, &topo),
        ("active", Overcurrent::Active, &topo),
        ("active, 52 mA source", Overcurrent::Active, &capped),
    ] {
        let r = overcurrent_current(variant, &params, topo, i_max)?;
        println!(
            "{label:<22} {:6.1} mA  exceeds {:.0} mA: {}",
            r.current * 1e3,
            i_max * 1e3,
            r.exceeds_limit()
        );
    }
    Ok(())
}
