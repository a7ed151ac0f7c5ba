use std::io;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{IrsKind, ScenarioConfig, SweepParameter};
use super::summary::Summary;
use super::{run_scenario, EngineError};
use crate::attacks::AttackKind;
use crate::params::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: f64,
    pub success: bool,
    pub first_failure_reason: Option<String>,
    pub summary: Summary,
}

impl ScenarioConfig {
    /// Copy of this scenario with one sweepable value replaced.
    pub fn with_parameter(&self, p: SweepParameter, value: f64) -> Result<ScenarioConfig, EngineError> {
        let mut cfg = self.clone();
        let mismatch = || EngineError::invalid(p.path(), "the scenario has no such value to vary");
        match p {
            SweepParameter::DamageIMax => cfg.damage.i_max = value,
            SweepParameter::IrsRating => match cfg.irs.as_mut().map(|i| &mut i.kind) {
                Some(IrsKind::Fuse { rating, .. })
                | Some(IrsKind::Breaker { rating, .. })
                | Some(IrsKind::Resettable { rating, .. }) => *rating = value,
                _ => return Err(mismatch()),
            },
            _ => {
                let a = cfg.attack.as_mut().ok_or_else(mismatch)?;
                match (p, &mut a.kind) {
                    (SweepParameter::PhaseOffset, _) => a.phase_offset = value,
                    (SweepParameter::SourceLimit, _) => a.source_limit = Some(value),
                    (SweepParameter::VAttackL, AttackKind::Dos { v_attack_l }) => *v_attack_l = value,
                    (SweepParameter::VAttackH, AttackKind::ForcedRetransmission { v_attack_h }) => *v_attack_h = value,
                    (SweepParameter::PulsePeriod, AttackKind::Pulse { shape, .. }) => shape.period = value,
                    (SweepParameter::PulseDuty, AttackKind::Pulse { shape, .. }) => shape.duty = value,
                    _ => return Err(mismatch()),
                }
            }
        }
        Ok(cfg)
    }
}

/// Runs every grid point of the scenario's sweep independently (in parallel)
/// and returns the rows in grid order.
pub fn run_sweep(cfg: &ScenarioConfig, params: &ModelParams) -> Result<Vec<SweepRow>, EngineError> {
    let sweep = cfg
        .sweep
        .ok_or_else(|| EngineError::invalid("sweep", "the scenario has no [sweep] section"))?;
    sweep
        .values()
        .into_par_iter()
        .map(|v| {
            let point = cfg.with_parameter(sweep.parameter, v)?;
            let (_, summary) = run_scenario(&point, params)?;
            Ok(SweepRow {
                param: v,
                success: summary.attack_success,
                first_failure_reason: summary.first_failure_reason.clone(),
                summary,
            })
        })
        .collect()
}

/// Writes the `param,success,first_failure_reason` table.
pub fn write_sweep_csv<W: io::Write>(rows: &[SweepRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["param", "success", "first_failure_reason"])?;
    for r in rows {
        w.write_record([
            format!("{}", r.param),
            (r.success as u8).to_string(),
            r.first_failure_reason.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
