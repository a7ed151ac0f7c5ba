use serde::{Deserialize, Serialize};

use super::config::Expectations;
use super::trace::{Trace, TraceKind};
use crate::time::SimTime;

/// A protective-device state change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceTrip {
    pub time: f64,
    pub line: String,
    pub event: String,
}

/// Per-run aggregate figures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub duration: f64,
    /// Frame instances handed to the controllers.
    pub messages_queued: u64,
    /// Instances that reached the bus at least once.
    pub messages_sent: u64,
    /// Instances delivered to the receivers (first delivery only).
    pub messages_received: u64,
    /// Further deliveries of an already delivered instance.
    pub duplicate_deliveries: u64,
    /// Instances discarded because a newer one replaced them.
    pub dropped: u64,
    pub retransmissions: u64,
    pub error_frames: u64,
    /// Per-slot indicator of the first sender: 1 when the instance queued at
    /// the start of the slot was received before the slot ended.
    pub message_indicator: Vec<u8>,
    pub attack: Option<String>,
    pub attack_success: bool,
    /// First error detected inside the attack window, e.g. `bit_error@0`.
    pub first_failure_reason: Option<String>,
    pub device_events: Vec<DeviceTrip>,
    pub damaged: bool,
    pub damage_time: Option<f64>,
    /// Largest pin current magnitude seen by the VIDS microcontroller.
    pub peak_pin_current: f64,
}

impl Summary {
    /// Lists every expectation that does not hold.
    pub fn check(&self, expect: &Expectations) -> Vec<String> {
        let mut failures = Vec::new();
        if let Some(want) = expect.attack_success {
            if self.attack_success != want {
                failures.push(format!("attack_success: expected {want}, got {}", self.attack_success));
            }
        }
        if let Some(want) = expect.damaged {
            if self.damaged != want {
                failures.push(format!("damaged: expected {want}, got {}", self.damaged));
            }
        }
        if let Some(want) = expect.received {
            if self.messages_received != want {
                failures.push(format!("received: expected {want}, got {}", self.messages_received));
            }
        }
        if let Some(min) = expect.min_retransmissions {
            if self.retransmissions < min {
                failures.push(format!("retransmissions: expected >= {min}, got {}", self.retransmissions));
            }
        }
        if let Some(max) = expect.max_retransmissions {
            if self.retransmissions > max {
                failures.push(format!("retransmissions: expected <= {max}, got {}", self.retransmissions));
            }
        }
        if let Some((from, to)) = expect.indicator_zero {
            for (k, &v) in self.message_indicator.iter().enumerate() {
                let want = if (from..to).contains(&(k as u64)) { 0 } else { 1 };
                if v != want {
                    failures.push(format!("message_indicator[{k}]: expected {want}, got {v}"));
                }
            }
        }
        failures
    }
}

/// Rebuilds the message indicator of `sender` from a trace. Slot `k` covers
/// `[first + k·period, first + (k+1)·period)` and is 1 when instance `k`
/// appears in a `FrameReceived` record inside its slot.
pub fn message_indicator(trace: &Trace, sender: &str, first: SimTime, period: u64, slots: u64) -> Vec<u8> {
    let mut out = vec![0u8; slots as usize];
    let tag = format!("from={sender}");
    for r in trace.of_kind(TraceKind::FrameReceived) {
        if !r.detail.split_whitespace().any(|w| w == tag) {
            continue;
        }
        let k = r.value as u64;
        if k < slots && r.time < first + (k + 1) * period {
            out[k as usize] = 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_respects_slot_deadline() {
        let mut t = Trace::new();
        let s = 1_000_000_000;
        t.push(SimTime(100), TraceKind::FrameReceived, "b", "", 0.0, "from=c instance=0".into());
        // instance 1 arrives after its slot closed
        t.push(SimTime(2 * s + 5), TraceKind::FrameReceived, "b", "", 1.0, "from=c instance=1".into());
        t.push(SimTime(2 * s + 9), TraceKind::FrameReceived, "b", "", 2.0, "from=x instance=2".into());
        assert_eq!(message_indicator(&t, "c", SimTime::ZERO, s, 3), vec![1, 0, 0]);
    }
}
