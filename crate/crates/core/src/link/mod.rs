//! CAN 2.0A data-link layer.

mod frame;
mod state;
mod timing;

pub use frame::{
    crc15, decode_bitstream, dominant_to_recessive_transitions, encode_frame, stuff, DecodeError, EncodedFrame,
    Field, Frame, FrameError, FrameLayout, CRC15_POLY, MAX_ID,
};
pub use state::{
    arbitrate, link_step, retransmission_spacing_bits, AttemptOutcome, BusAction, EcuLink, ErrorState, LinkError,
    LinkEvent, LinkState, TxSlot, ERROR_DELIMITER_BITS, ERROR_FLAG_BITS, INTERMISSION_BITS,
};
pub use timing::{decide_bit, sample_bit, sample_bit_ns, sample_runs, BitDecision, BitTiming, TimingError, SCAN_STEP_NS};
