//! CAN 2.0A data/remote frame codec with bit stuffing and CRC-15.

use thiserror::Error;

use super::BitDecision::{self, Dominant, Recessive};

pub const CRC15_POLY: u16 = 0x4599;
pub const MAX_ID: u16 = 0x7FF;
const EOF_BITS: usize = 7;
const STUFF_RUN: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("identifier {0:#x} does not fit in 11 bits")]
    IdOutOfRange(u16),
    #[error("data length {0} exceeds 8 bytes")]
    TooLong(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Sof,
    Ide,
    Dlc,
    CrcDelimiter,
    AckDelimiter,
    Eof,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("stuff error at bit {bit}")]
    Stuff { bit: usize },
    #[error("CRC mismatch: received {received:#06x}, computed {computed:#06x}")]
    Crc { received: u16, computed: u16 },
    #[error("form error in {field:?} at bit {bit}")]
    Form { field: Field, bit: usize },
    #[error("bitstream ended early")]
    Truncated,
}

/// A standard-format CAN frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Frame {
    id: u16,
    dlc: u8,
    data: [u8; 8],
    rtr: bool,
}

impl Frame {
    pub fn new(id: u16, data: &[u8]) -> Result<Self, FrameError> {
        if id > MAX_ID {
            return Err(FrameError::IdOutOfRange(id));
        }
        if data.len() > 8 {
            return Err(FrameError::TooLong(data.len()));
        }
        let mut buf = [0u8; 8];
        buf[..data.len()].copy_from_slice(data);
        Ok(Self {
            id,
            dlc: data.len() as u8,
            data: buf,
            rtr: false,
        })
    }

    pub fn remote(id: u16, dlc: u8) -> Result<Self, FrameError> {
        if id > MAX_ID {
            return Err(FrameError::IdOutOfRange(id));
        }
        if dlc > 8 {
            return Err(FrameError::TooLong(dlc as usize));
        }
        Ok(Self {
            id,
            dlc,
            data: [0; 8],
            rtr: true,
        })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn dlc(&self) -> u8 {
        self.dlc
    }

    pub fn data(&self) -> &[u8] {
        if self.rtr {
            &[]
        } else {
            &self.data[..self.dlc as usize]
        }
    }

    pub fn is_remote(&self) -> bool {
        self.rtr
    }
}

/// Bit positions of the fields that follow the stuffed region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    /// One past the last (stuffed) bit of the data field.
    pub data_end: usize,
    pub crc_delimiter: usize,
    pub ack_slot: usize,
    pub ack_delimiter: usize,
    pub eof_start: usize,
}

/// A frame as put on the wire by its transmitter (ACK slot recessive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub bits: Vec<BitDecision>,
    pub crc: u16,
    pub layout: FrameLayout,
    /// Unstuffed length of SOF through EOF.
    pub unstuffed_len: usize,
}

impl EncodedFrame {
    /// The bus levels seen when at least one receiver acknowledges.
    pub fn acknowledged(&self) -> Vec<BitDecision> {
        let mut bits = self.bits.clone();
        bits[self.layout.ack_slot] = Dominant;
        bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

pub fn crc15(bits: &[BitDecision]) -> u16 {
    let mut crc: u16 = 0;
    for &b in bits {
        let next = (b == Recessive) ^ ((crc >> 14) & 1 == 1);
        crc = (crc << 1) & 0x7FFF;
        if next {
            crc ^= CRC15_POLY;
        }
    }
    crc
}

fn push_bits(out: &mut Vec<BitDecision>, value: u32, width: usize) {
    for i in (0..width).rev() {
        out.push(BitDecision::from_bit((value >> i) & 1 == 1));
    }
}

/// Inserts a complement bit after every run of five equal bits.
pub fn stuff(bits: &[BitDecision]) -> Vec<BitDecision> {
    let mut out = Vec::with_capacity(bits.len() + bits.len() / 4);
    let mut run = 0;
    let mut last = None;
    for &b in bits {
        out.push(b);
        if Some(b) == last {
            run += 1;
        } else {
            run = 1;
            last = Some(b);
        }
        if run == STUFF_RUN {
            let s = b.complement();
            out.push(s);
            last = Some(s);
            run = 1;
        }
    }
    out
}

pub fn encode_frame(frame: &Frame) -> EncodedFrame {
    let mut raw = Vec::with_capacity(83);
    raw.push(Dominant);
    push_bits(&mut raw, frame.id as u32, 11);
    raw.push(BitDecision::from_bit(frame.rtr));
    raw.push(Dominant); // IDE
    raw.push(Dominant); // r0
    push_bits(&mut raw, frame.dlc as u32, 4);
    for &byte in frame.data() {
        push_bits(&mut raw, byte as u32, 8);
    }
    let data_unstuffed = raw.len();
    let data_end = stuff(&raw).len();
    let crc = crc15(&raw);
    push_bits(&mut raw, crc as u32, 15);
    let mut bits = stuff(&raw);
    let unstuffed_len = raw.len() + 3 + EOF_BITS;
    let crc_delimiter = bits.len();
    bits.push(Recessive);
    let ack_slot = bits.len();
    bits.push(Recessive);
    let ack_delimiter = bits.len();
    bits.push(Recessive);
    let eof_start = bits.len();
    bits.extend(std::iter::repeat_n(Recessive, EOF_BITS));
    debug_assert!(data_unstuffed <= data_end);
    EncodedFrame {
        bits,
        crc,
        layout: FrameLayout {
            data_end,
            crc_delimiter,
            ack_slot,
            ack_delimiter,
            eof_start,
        },
        unstuffed_len,
    }
}

/// Number of dominant-to-recessive edges in `bits`.
pub fn dominant_to_recessive_transitions(bits: &[BitDecision]) -> usize {
    bits.windows(2)
        .filter(|w| w[0] == Dominant && w[1] == Recessive)
        .count()
}

struct Destuffer<'a> {
    bits: &'a [BitDecision],
    pos: usize,
    run: usize,
    last: Option<BitDecision>,
    raw: Vec<BitDecision>,
}

impl<'a> Destuffer<'a> {
    fn next(&mut self) -> Result<BitDecision, DecodeError> {
        if self.run == STUFF_RUN {
            let pos = self.pos;
            let s = *self.bits.get(pos).ok_or(DecodeError::Truncated)?;
            if Some(s) == self.last {
                return Err(DecodeError::Stuff { bit: pos });
            }
            self.pos += 1;
            self.last = Some(s);
            self.run = 1;
        }
        let b = *self.bits.get(self.pos).ok_or(DecodeError::Truncated)?;
        self.pos += 1;
        if Some(b) == self.last {
            self.run += 1;
        } else {
            self.run = 1;
            self.last = Some(b);
        }
        self.raw.push(b);
        Ok(b)
    }

    /// Consumes the stuff bit owed after the last stuffed field, if any.
    fn finish(&mut self) -> Result<(), DecodeError> {
        if self.run == STUFF_RUN {
            let s = *self.bits.get(self.pos).ok_or(DecodeError::Truncated)?;
            if Some(s) == self.last {
                return Err(DecodeError::Stuff { bit: self.pos });
            }
            self.pos += 1;
            self.run = 0;
        }
        Ok(())
    }

    fn take(&mut self, width: usize) -> Result<u32, DecodeError> {
        let mut v = 0;
        for _ in 0..width {
            v = (v << 1) | (self.next()? == Recessive) as u32;
        }
        Ok(v)
    }
}

/// Receiver-side decoding of a bus bitstream starting at SOF.
pub fn decode_bitstream(bits: &[BitDecision]) -> Result<Frame, DecodeError> {
    let mut d = Destuffer {
        bits,
        pos: 0,
        run: 0,
        last: None,
        raw: Vec::with_capacity(bits.len()),
    };
    if d.next()? != Dominant {
        return Err(DecodeError::Form {
            field: Field::Sof,
            bit: 0,
        });
    }
    let id = d.take(11)? as u16;
    let rtr = d.next()? == Recessive;
    let ide_pos = d.pos;
    if d.next()? != Dominant {
        return Err(DecodeError::Form {
            field: Field::Ide,
            bit: ide_pos,
        });
    }
    d.next()?; // r0
    let dlc_pos = d.pos;
    let dlc = d.take(4)? as u8;
    if dlc > 8 {
        return Err(DecodeError::Form {
            field: Field::Dlc,
            bit: dlc_pos,
        });
    }
    let mut data = [0u8; 8];
    if !rtr {
        for byte in data.iter_mut().take(dlc as usize) {
            *byte = d.take(8)? as u8;
        }
    }
    let computed = crc15(&d.raw);
    let received = d.take(15)? as u16;
    if received != computed {
        return Err(DecodeError::Crc { received, computed });
    }
    d.finish()?;
    let mut pos = d.pos;
    let expect_recessive = |field: Field, pos: usize| -> Result<(), DecodeError> {
        match bits.get(pos) {
            None => Err(DecodeError::Truncated),
            Some(Recessive) => Ok(()),
            Some(Dominant) => Err(DecodeError::Form { field, bit: pos }),
        }
    };
    expect_recessive(Field::CrcDelimiter, pos)?;
    pos += 2; // ACK slot is not checked by receivers
    expect_recessive(Field::AckDelimiter, pos)?;
    for k in 1..=EOF_BITS {
        expect_recessive(Field::Eof, pos + k)?;
    }
    Ok(Frame {
        id,
        dlc,
        data: if rtr { [0; 8] } else { data },
        rtr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Frame {
        Frame::new(0x01, &[0x01]).unwrap()
    }

    #[test]
    fn sample_frame_field_widths() {
        let enc = encode_frame(&sample());
        assert_eq!(enc.unstuffed_len, 52);
        assert_eq!(enc.crc, 0x39B5);
        assert_eq!(enc.len(), 56);
        assert_eq!(enc.layout.ack_delimiter, 48);
    }

    #[test]
    fn frame_invariants() {
        assert_eq!(Frame::new(0x800, &[]), Err(FrameError::IdOutOfRange(0x800)));
        assert_eq!(Frame::new(1, &[0; 9]), Err(FrameError::TooLong(9)));
        let r = Frame::remote(0x123, 4).unwrap();
        assert!(r.data().is_empty());
        assert_eq!(decode_bitstream(&encode_frame(&r).acknowledged()).unwrap(), r);
    }

    #[test]
    fn stuff_bit_after_crc_is_consumed() {
        // CRC ends in five equal bits, so a stuff bit precedes the delimiter
        let f = Frame::new(946, &[0x9E, 0xBF]).unwrap();
        let enc = encode_frame(&f);
        assert_eq!(enc.layout.crc_delimiter, enc.layout.data_end + 16);
        assert_eq!(decode_bitstream(&enc.acknowledged()).unwrap(), f);
    }

    #[test]
    fn decode_roundtrip_with_ack() {
        let f = Frame::new(0x7FF, &[0xFF, 0x00, 0xAA]).unwrap();
        let bits = encode_frame(&f).acknowledged();
        assert_eq!(decode_bitstream(&bits).unwrap(), f);
    }

    #[test]
    fn every_single_bit_flip_in_protected_region_is_caught() {
        let enc = encode_frame(&sample());
        for k in 0..enc.layout.crc_delimiter {
            let mut bits = enc.acknowledged();
            bits[k] = bits[k].complement();
            let r = decode_bitstream(&bits);
            assert!(
                matches!(
                    r,
                    Err(DecodeError::Crc { .. })
                        | Err(DecodeError::Stuff { .. })
                        | Err(DecodeError::Form { .. })
                        | Err(DecodeError::Truncated)
                ),
                "flip at {k} decoded as {r:?}"
            );
        }
    }

    #[test]
    fn data_bit_flip_is_crc_error() {
        let enc = encode_frame(&sample());
        let mut bits = enc.acknowledged();
        // last data bit, not adjacent to a stuff bit
        let k = enc.layout.data_end - 1;
        bits[k] = bits[k].complement();
        assert!(matches!(decode_bitstream(&bits), Err(DecodeError::Crc { .. })));
    }

    #[test]
    fn dominant_ack_delimiter_is_form_error() {
        let enc = encode_frame(&sample());
        let mut bits = enc.acknowledged();
        bits[enc.layout.ack_delimiter] = Dominant;
        assert_eq!(
            decode_bitstream(&bits),
            Err(DecodeError::Form {
                field: Field::AckDelimiter,
                bit: enc.layout.ack_delimiter
            })
        );
    }

    #[test]
    fn truncated_stream() {
        let enc = encode_frame(&sample());
        assert_eq!(decode_bitstream(&enc.bits[..20]), Err(DecodeError::Truncated));
    }
}
