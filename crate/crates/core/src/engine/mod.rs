//! Discrete-event co-simulation of bus electrical state, link layer, attack and IRS.

mod config;
mod damage;
mod sim;
mod summary;
mod sweep;
mod trace;
mod waveform;

use thiserror::Error;

use crate::attacks::AttackError;
use crate::electrical::ElectricalError;
use crate::link::LinkError;
use crate::params::ModelParams;

pub use config::*;
pub use damage::{damage_step, EcuDamage};
pub use summary::{message_indicator, DeviceTrip, Summary};
pub use sweep::{run_sweep, write_sweep_csv, SweepRow};
pub use trace::{Trace, TraceKind, TraceRecord};
pub use waveform::{delayed_pieces, evaluate_bit, Analog, BitOutcome, Piece};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Electrical(#[from] ElectricalError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Link(#[from] LinkError),
}

impl EngineError {
    pub(crate) fn invalid(path: &str, message: &str) -> Self {
        EngineError::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Runs one scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig, params: &ModelParams) -> Result<(Trace, Summary), EngineError> {
    sim::Sim::new(cfg, params)?.run()
}
