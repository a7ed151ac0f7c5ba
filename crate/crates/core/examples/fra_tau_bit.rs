//! Bit length time under a held CANH, and the forced-retransmission threshold.

use canvolt::attacks::{fra_ack_delimiter_v_diff, min_fra_voltage};
use canvolt::electrical::{measure_tau_bit, BusTopology};
use canvolt::params::ModelParams;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p = ModelParams::from_env()?;
    let topo = BusTopology::with_vids(2);
    let bit = p.timing.bit_time();
    println!("v_attack_h  tau_bit   ack-delimiter v_diff");
    for v in [2.5, 3.0, 3.5, 4.0, 4.5, 5.0] {
        let tau = measure_tau_bit(bit, Some(v), &p.transceiver, &p.transition)?;
        let vd = fra_ack_delimiter_v_diff(v, &p.transceiver, &p.transition, &topo, &p.timing)?;
        println!("{v:8.1} V {:6.2} us {vd:8.3} V", tau * 1e6);
    }
    let min = min_fra_voltage(&p.transceiver, &p.transition, &topo, &p.timing)?;
    println!("first retransmitting level: {min:?} V");
    Ok(())
}
