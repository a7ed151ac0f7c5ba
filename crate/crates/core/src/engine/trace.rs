use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TraceKind {
    FrameSent,
    FrameReceived,
    ErrorFrame,
    Retransmission,
    FuseBlown,
    BreakerTripped,
    ResettableOpened,
    ResettableClosed,
    ThermostatOpen,
    ThermostatClosed,
    Damage,
    AttackStart,
    AttackEnd,
    PinCurrentSample,
    LineVoltageSample,
}

impl TraceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TraceKind::FrameSent => "FrameSent",
            TraceKind::FrameReceived => "FrameReceived",
            TraceKind::ErrorFrame => "ErrorFrame",
            TraceKind::Retransmission => "Retransmission",
            TraceKind::FuseBlown => "FuseBlown",
            TraceKind::BreakerTripped => "BreakerTripped",
            TraceKind::ResettableOpened => "ResettableOpened",
            TraceKind::ResettableClosed => "ResettableClosed",
            TraceKind::ThermostatOpen => "ThermostatOpen",
            TraceKind::ThermostatClosed => "ThermostatClosed",
            TraceKind::Damage => "Damage",
            TraceKind::AttackStart => "AttackStart",
            TraceKind::AttackEnd => "AttackEnd",
            TraceKind::PinCurrentSample => "PinCurrentSample",
            TraceKind::LineVoltageSample => "LineVoltageSample",
        }
    }
}

impl fmt::Display for TraceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time: SimTime,
    pub kind: TraceKind,
    pub ecu: String,
    /// `canh`, `canl` or empty.
    pub line: String,
    pub value: f64,
    pub detail: String,
}

/// Time-ordered simulation log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: SimTime, kind: TraceKind, ecu: &str, line: &str, value: f64, detail: String) {
        self.records.push(TraceRecord {
            time,
            kind,
            ecu: ecu.to_string(),
            line: line.to_string(),
            value,
            detail,
        });
    }

    /// Stable sort by timestamp; records pushed out of order (e.g. queue
    /// events discovered after a frame) end up in place.
    pub(crate) fn finish(&mut self) {
        self.records.sort_by_key(|r| r.time);
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn of_kind(&self, kind: TraceKind) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.kind == kind)
    }

    pub fn count(&self, kind: TraceKind) -> usize {
        self.of_kind(kind).count()
    }

    /// Writes the `time_s,kind,ecu,line,value,detail` CSV form.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_s", "kind", "ecu", "line", "value", "detail"])?;
        for r in &self.records {
            w.write_record([
                r.time.to_string().as_str(),
                r.kind.as_str(),
                &r.ecu,
                &r.line,
                &format_value(r.value),
                &r.detail,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("trace is valid UTF-8")
    }
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:.9}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Trace::new();
        t.push(SimTime(2_000), TraceKind::FrameReceived, "b", "", 1.0, "instance=0".into());
        t.push(SimTime(1_000), TraceKind::FuseBlown, "vids", "canl", 0.281, String::new());
        t.finish();
        assert_eq!(
            t.to_csv_string(),
            "time_s,kind,ecu,line,value,detail\n\
             0.000001000,FuseBlown,vids,canl,0.281000000,\n\
             0.000002000,FrameReceived,b,,1,instance=0\n"
        );
    }
}
