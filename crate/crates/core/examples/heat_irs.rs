//! Heating coil and thermostat: 1 A opens it, removing the current recloses it.

use canvolt::irs::{thermostat_step, ThermostatCoil};

fn main() {
    let dt = 0.01;
    let mut coil = ThermostatCoil::default();
    let mut t = 0.0;
    while !coil.open {
        coil = thermostat_step(&coil, 1.0, dt);
        t += dt;
    }
    println!("opened within {t:.2} s (limit {} °C)", coil.t_limit);
    let opened = t;
    while coil.open {
        coil = thermostat_step(&coil, 0.0, dt);
        t += dt;
    }
    println!("reclosed within {:.2} s of removing the current (below {} °C)", t - opened, coil.close_temp());
}
