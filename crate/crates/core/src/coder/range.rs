//! Carry-propagating byte-oriented range coder, 64-bit low / 32-bit
//! range state with 16-bit probability precision.

use crate::error::{Error, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    encoded: usize,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new(), encoded: 0 }
    }

    /// Encode a symbol occupying `[cum_lo, cum_hi)` of the 16-bit total.
    pub fn encode(&mut self, cum_lo: u32, cum_hi: u32) {
        debug_assert!(cum_lo < cum_hi && cum_hi <= PROB_TOTAL);
        let r = self.range >> PROB_BITS;
        self.low += r as u64 * cum_lo as u64;
        self.range = r * (cum_hi - cum_lo);
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        self.encoded += 1;
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xff00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xff;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = ((self.low as u32) << 8) as u64;
    }

    pub fn finish(mut self) -> Vec<u8> {
        if self.encoded == 0 {
            return Vec::new();
        }
        for _ in 0..5 {
            self.shift_low();
        }
        // the initial cache byte is always zero; the decoder accounts for it
        self.out.remove(0);
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder { code: 0, range: u32::MAX, bytes, pos: 0 };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        if self.pos >= self.bytes.len() {
            return Err(Error::CorruptStream("range decoder ran past end of stream".into()));
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    /// Position of the next symbol inside the 16-bit total.
    pub fn decode_freq(&mut self) -> u32 {
        let r = self.range >> PROB_BITS;
        ((self.code / r) as u32).min(PROB_TOTAL - 1)
    }

    pub fn decode_update(&mut self, cum_lo: u32, cum_hi: u32) -> Result<()> {
        let r = self.range >> PROB_BITS;
        self.code -= r * cum_lo;
        self.range = r * (cum_hi - cum_lo);
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_round_trips_to_empty() {
        let enc = RangeEncoder::new();
        assert!(enc.finish().is_empty());
    }

    #[test]
    fn biased_binary_stream_round_trips() {
        // p(0) = 0.9: cum [0, 59000, 65536]
        let cum = [0u32, 59000, PROB_TOTAL];
        let mut rng = crate::rng::Rng::new(17);
        let symbols: Vec<usize> = (0..5000).map(|_| usize::from(rng.unit() > 0.9)).collect();
        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            enc.encode(cum[s], cum[s + 1]);
        }
        let bytes = enc.finish();
        // entropy is about 0.469 bits/symbol
        assert!(bytes.len() < 5000 / 8 + 16, "len {}", bytes.len());
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &s in &symbols {
            let f = dec.decode_freq();
            let got = usize::from(f >= cum[1]);
            assert_eq!(got, s);
            dec.decode_update(cum[got], cum[got + 1]).unwrap();
        }
    }

    #[test]
    fn truncated_stream_is_detected() {
        let cum = [0u32, 32768, PROB_TOTAL];
        let mut enc = RangeEncoder::new();
        let mut rng = crate::rng::Rng::new(3);
        let symbols: Vec<usize> = (0..4000).map(|_| usize::from(rng.unit() > 0.5)).collect();
        for &s in &symbols {
            enc.encode(cum[s], cum[s + 1]);
        }
        let bytes = enc.finish();
        let cut = &bytes[..bytes.len() / 2];
        let mut dec = RangeDecoder::new(cut).unwrap();
        let mut failed = false;
        for _ in 0..symbols.len() {
            let f = dec.decode_freq();
            let got = usize::from(f >= cum[1]);
            if dec.decode_update(cum[got], cum[got + 1]).is_err() {
                failed = true;
                break;
            }
        }
        assert!(failed);
    }
}
