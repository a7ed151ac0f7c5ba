//! Transmit buffers, arbitration and error/retransmission bookkeeping.

use thiserror::Error;

use super::frame::Frame;
use crate::time::SimTime;

pub const ERROR_FLAG_BITS: usize = 6;
pub const ERROR_DELIMITER_BITS: usize = 8;
pub const INTERMISSION_BITS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error("two contenders share identifier {0:#x}")]
    IdCollision(u16),
    #[error("arbitration needs at least one contender")]
    NoContenders,
    #[error("bus reported idle while ECU {0} is transmitting")]
    Busy(usize),
    #[error("attempt finished but nothing is being transmitted")]
    NotTransmitting,
    #[error("unknown ECU index {0}")]
    UnknownEcu(usize),
}

/// Bits from the start of a failed attempt to the next SOF when the error
/// is detected at bit `error_bit`.
pub fn retransmission_spacing_bits(error_bit: usize) -> usize {
    error_bit + 1 + ERROR_FLAG_BITS + ERROR_DELIMITER_BITS + INTERMISSION_BITS
}

/// Returns the frame with the smallest identifier.
pub fn arbitrate(contenders: &[Frame]) -> Result<&Frame, LinkError> {
    let winner = contenders
        .iter()
        .min_by_key(|f| f.id())
        .ok_or(LinkError::NoContenders)?;
    if contenders.iter().filter(|f| f.id() == winner.id()).count() > 1 {
        return Err(LinkError::IdCollision(winner.id()));
    }
    Ok(winner)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorState {
    #[default]
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxSlot {
    pub frame: Frame,
    /// Periodic instance number assigned by the application.
    pub instance: u64,
    pub queued_at: SimTime,
    pub attempts: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EcuLink {
    pending: Option<TxSlot>,
    /// Instance queued while `pending` is on the wire.
    next: Option<TxSlot>,
    pub retransmissions: u64,
    pub error_state: ErrorState,
    pub last_error: Option<SimTime>,
}

impl EcuLink {
    pub fn pending(&self) -> Option<&TxSlot> {
        self.pending.as_ref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkEvent {
    /// The application hands a new frame to the controller. A single
    /// transmit buffer is modelled: an unsent older instance is dropped.
    Queue { ecu: usize, frame: Frame, instance: u64 },
    BusIdle,
    AttemptFinished { outcome: AttemptOutcome },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptOutcome {
    Acknowledged,
    /// Some node flagged an error at this bit index of the frame.
    Error { bit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusAction {
    Transmit { ecu: usize, slot: TxSlot },
    ErrorFrame { ecu: usize, bit: usize },
    Completed { ecu: usize, instance: u64 },
    Dropped { ecu: usize, instance: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkState {
    ecus: Vec<EcuLink>,
    active: Option<usize>,
}

impl LinkState {
    pub fn new(ecu_count: usize) -> Self {
        Self {
            ecus: vec![EcuLink::default(); ecu_count],
            active: None,
        }
    }

    pub fn ecu(&self, idx: usize) -> Option<&EcuLink> {
        self.ecus.get(idx)
    }

    pub fn active(&self) -> Option<usize> {
        self.active
    }

    pub fn has_pending(&self) -> bool {
        self.ecus.iter().any(|e| e.pending.is_some())
    }

    pub fn total_retransmissions(&self) -> u64 {
        self.ecus.iter().map(|e| e.retransmissions).sum()
    }

    /// Accounts for `n` further failed attempts of the frame pending at `ecu`
    /// that were not simulated individually because they repeat identically.
    pub fn record_repeated_failures(&mut self, ecu: usize, n: u64, now: SimTime) -> Result<(), LinkError> {
        if self.active.is_some() {
            return Err(LinkError::Busy(ecu));
        }
        let e = self.ecus.get_mut(ecu).ok_or(LinkError::UnknownEcu(ecu))?;
        let slot = e.pending.as_mut().ok_or(LinkError::NotTransmitting)?;
        slot.attempts = slot.attempts.saturating_add(n.min(u32::MAX as u64) as u32);
        e.retransmissions += n;
        e.last_error = Some(now);
        Ok(())
    }

    pub fn step(&mut self, now: SimTime, event: LinkEvent) -> Result<Vec<BusAction>, LinkError> {
        let mut actions = Vec::new();
        match event {
            LinkEvent::Queue { ecu, frame, instance } => {
                let active = self.active == Some(ecu);
                let e = self.ecus.get_mut(ecu).ok_or(LinkError::UnknownEcu(ecu))?;
                let slot = TxSlot {
                    frame,
                    instance,
                    queued_at: now,
                    attempts: 0,
                };
                let buf = if active { &mut e.next } else { &mut e.pending };
                if let Some(old) = buf.replace(slot) {
                    actions.push(BusAction::Dropped {
                        ecu,
                        instance: old.instance,
                    });
                }
            }
            LinkEvent::BusIdle => {
                if let Some(a) = self.active {
                    return Err(LinkError::Busy(a));
                }
                let contenders: Vec<(usize, Frame)> = self
                    .ecus
                    .iter()
                    .enumerate()
                    .filter_map(|(i, e)| e.pending.map(|s| (i, s.frame)))
                    .collect();
                if contenders.is_empty() {
                    return Ok(actions);
                }
                let frames: Vec<Frame> = contenders.iter().map(|c| c.1).collect();
                let winner_id = arbitrate(&frames)?.id();
                let ecu = contenders.iter().find(|c| c.1.id() == winner_id).map(|c| c.0).unwrap();
                let slot = self.ecus[ecu].pending.as_mut().unwrap();
                slot.attempts += 1;
                actions.push(BusAction::Transmit { ecu, slot: *slot });
                self.active = Some(ecu);
            }
            LinkEvent::AttemptFinished { outcome } => {
                let ecu = self.active.take().ok_or(LinkError::NotTransmitting)?;
                let e = &mut self.ecus[ecu];
                let current = e.pending.take().ok_or(LinkError::NotTransmitting)?;
                match outcome {
                    AttemptOutcome::Acknowledged => {
                        actions.push(BusAction::Completed {
                            ecu,
                            instance: current.instance,
                        });
                        e.pending = e.next.take();
                    }
                    AttemptOutcome::Error { bit } => {
                        actions.push(BusAction::ErrorFrame { ecu, bit });
                        e.last_error = Some(now);
                        match e.next.take() {
                            Some(newer) => {
                                actions.push(BusAction::Dropped {
                                    ecu,
                                    instance: current.instance,
                                });
                                e.pending = Some(newer);
                            }
                            None => {
                                e.retransmissions += 1;
                                e.pending = Some(current);
                            }
                        }
                    }
                }
            }
        }
        Ok(actions)
    }
}

/// Free-function form of [`LinkState::step`].
pub fn link_step(state: &mut LinkState, now: SimTime, event: LinkEvent) -> Result<Vec<BusAction>, LinkError> {
    state.step(now, event)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(id: u16) -> Frame {
        Frame::new(id, &[0x01]).unwrap()
    }

    #[test]
    fn arbitration_examples() {
        assert_eq!(arbitrate(&[f(0x010), f(0x001)]).unwrap().id(), 0x001);
        assert_eq!(arbitrate(&[f(0x7FF), f(0x000)]).unwrap().id(), 0x000);
        assert_eq!(arbitrate(&[f(0x123)]).unwrap().id(), 0x123);
        assert_eq!(arbitrate(&[f(5), f(5)]), Err(LinkError::IdCollision(5)));
        assert_eq!(arbitrate(&[]), Err(LinkError::NoContenders));
    }

    #[test]
    fn error_requeues_same_frame() {
        let mut s = LinkState::new(2);
        let t = SimTime::ZERO;
        s.step(t, LinkEvent::Queue { ecu: 1, frame: f(1), instance: 0 }).unwrap();
        let a = s.step(t, LinkEvent::BusIdle).unwrap();
        assert!(matches!(a[0], BusAction::Transmit { ecu: 1, .. }));
        s.step(t, LinkEvent::AttemptFinished { outcome: AttemptOutcome::Error { bit: 48 } })
            .unwrap();
        assert_eq!(s.ecu(1).unwrap().retransmissions, 1);
        let a = s.step(t, LinkEvent::BusIdle).unwrap();
        match a[0] {
            BusAction::Transmit { slot, .. } => {
                assert_eq!(slot.instance, 0);
                assert_eq!(slot.attempts, 2);
            }
            other => panic!("{other:?}"),
        }
        let a = s
            .step(t, LinkEvent::AttemptFinished { outcome: AttemptOutcome::Acknowledged })
            .unwrap();
        assert_eq!(a, vec![BusAction::Completed { ecu: 1, instance: 0 }]);
        assert!(!s.has_pending());
    }

    #[test]
    fn newer_instance_replaces_after_error() {
        let mut s = LinkState::new(1);
        let t = SimTime::ZERO;
        s.step(t, LinkEvent::Queue { ecu: 0, frame: f(1), instance: 0 }).unwrap();
        s.step(t, LinkEvent::BusIdle).unwrap();
        s.step(t, LinkEvent::Queue { ecu: 0, frame: f(1), instance: 1 }).unwrap();
        let a = s
            .step(t, LinkEvent::AttemptFinished { outcome: AttemptOutcome::Error { bit: 3 } })
            .unwrap();
        assert!(a.contains(&BusAction::Dropped { ecu: 0, instance: 0 }));
        assert_eq!(s.ecu(0).unwrap().pending().unwrap().instance, 1);
    }

    #[test]
    fn sequencing_errors() {
        let mut s = LinkState::new(1);
        assert_eq!(
            s.step(SimTime::ZERO, LinkEvent::AttemptFinished { outcome: AttemptOutcome::Acknowledged }),
            Err(LinkError::NotTransmitting)
        );
        assert!(s.step(SimTime::ZERO, LinkEvent::BusIdle).unwrap().is_empty());
    }
}
