//! Encodes the test frame, counts its edges and decodes it back.

use canvolt::link::{decode_bitstream, dominant_to_recessive_transitions, encode_frame, BitDecision, Frame};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let frame = Frame::new(0x001, &[0x01])?;
    let enc = encode_frame(&frame);
    let bits: String = enc
        .bits
        .iter()
        .map(|b| if *b == BitDecision::Dominant { '0' } else { '1' })
        .collect();
    println!("bits ({}, {} unstuffed): {bits}", enc.len(), enc.unstuffed_len);
    println!("crc: {:#06x}", enc.crc);
    let acked = enc.acknowledged();
    println!(
        "dominant->recessive edges: SOF..data {}, whole acknowledged frame {}",
        dominant_to_recessive_transitions(&enc.bits[..enc.layout.data_end]),
        dominant_to_recessive_transitions(&acked)
    );
    let back = decode_bitstream(&acked)?;
    println!("decoded id {:#05x} data {:02x?}", back.id(), back.data());
    assert_eq!(back, frame);
    Ok(())
}
