//! Integer range coding of latent symbols against quantized CDF tables,
//! plus the bitstream container tying coded streams to a checkpoint.
//!
//! Tables carry an integer support `[v_min, v_max]` and one trailing
//! escape slot; escaped values are coded as the escape symbol followed by
//! the raw 32-bit value. Every slot gets frequency >= 1 out of a 2^16
//! total, so any symbol stays codable.

pub mod bitstream;
pub mod range;

pub use bitstream::{compress_image, decompress, decompress_full, Bitstream, DecodedImage};

use crate::error::{Error, Result};
use range::{RangeDecoder, RangeEncoder, PROB_TOTAL};

/// Quantize a pmf into integer frequencies: proportional, each >= 1,
/// summing to exactly 2^16 (largest-remainder rounding).
pub fn build_cdf(pmf: &[f64]) -> Result<Vec<u32>> {
    let n = pmf.len();
    if n == 0 {
        return Err(Error::EmptySupport);
    }
    if n as u32 > PROB_TOTAL {
        return Err(Error::Config(format!("support of {n} cannot fit 16-bit frequencies")));
    }
    for &p in pmf {
        if !(p >= 0.0) || p > 1.0 + 1e-6 {
            return Err(Error::Config(format!("invalid pmf entry {p}")));
        }
    }
    let sum: f64 = pmf.iter().sum();
    if sum > 1.0 + 1e-6 {
        return Err(Error::Config(format!("pmf sums to {sum}")));
    }
    let scale = if sum > 0.0 { PROB_TOTAL as f64 / sum } else { PROB_TOTAL as f64 / n as f64 };
    let targets: Vec<f64> = if sum > 0.0 {
        pmf.iter().map(|p| p * scale).collect()
    } else {
        vec![scale; n]
    };
    let mut freq: Vec<u32> = targets.iter().map(|t| (t.floor() as u32).max(1)).collect();
    let mut total: i64 = freq.iter().map(|&f| f as i64).sum();
    if total < PROB_TOTAL as i64 {
        // hand out the deficit by largest fractional remainder
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let ra = targets[a] - targets[a].floor();
            let rb = targets[b] - targets[b].floor();
            rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
        });
        let mut k = 0;
        while total < PROB_TOTAL as i64 {
            freq[order[k % n]] += 1;
            total += 1;
            k += 1;
        }
    }
    while total > PROB_TOTAL as i64 {
        // reclaim the surplus from the largest entries
        let (idx, _) = freq
            .iter()
            .enumerate()
            .filter(|(_, &f)| f > 1)
            .max_by_key(|(i, &f)| (f, n - i))
            .expect("some entry above the minimum");
        freq[idx] -= 1;
        total -= 1;
    }
    Ok(freq)
}

/// Cumulative frequency table over an integer support plus escape slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    v_min: i32,
    v_max: i32,
    /// `cum[s]..cum[s+1]` spans slot `s`; last slot is the escape.
    cum: Vec<u32>,
}

impl CdfTable {
    /// Build from bin probabilities over `v_min..=v_max`; leftover mass
    /// (and a guaranteed minimum) goes to the escape slot.
    pub fn from_value_pmf(v_min: i32, pmf: &[f64]) -> Result<CdfTable> {
        if pmf.is_empty() {
            return Err(Error::EmptySupport);
        }
        let v_max = v_min + pmf.len() as i32 - 1;
        let sum: f64 = pmf.iter().sum();
        let mut with_escape = pmf.to_vec();
        with_escape.push((1.0 - sum).max(0.0));
        let freq = build_cdf(&with_escape)?;
        let mut cum = Vec::with_capacity(freq.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for f in freq {
            acc += f;
            cum.push(acc);
        }
        debug_assert_eq!(acc, PROB_TOTAL);
        Ok(CdfTable { v_min, v_max, cum })
    }

    pub fn support(&self) -> (i32, i32) {
        (self.v_min, self.v_max)
    }

    fn slot_count(&self) -> usize {
        self.cum.len() - 1
    }

    fn escape_slot(&self) -> usize {
        self.slot_count() - 1
    }

    fn slot_of_value(&self, v: i32) -> Option<usize> {
        (self.v_min..=self.v_max).contains(&v).then(|| (v - self.v_min) as usize)
    }

    fn bounds(&self, slot: usize) -> (u32, u32) {
        (self.cum[slot], self.cum[slot + 1])
    }

    fn slot_for_freq(&self, f: u32) -> usize {
        // index of the last cum entry <= f
        self.cum.partition_point(|&c| c <= f) - 1
    }

    /// Bits this table assigns to `v` (escape pays its slot plus 32 raw
    /// bits).
    pub fn table_bits(&self, v: i32) -> f64 {
        let slot = self.slot_of_value(v).unwrap_or_else(|| self.escape_slot());
        let (lo, hi) = self.bounds(slot);
        let bits = -(((hi - lo) as f64) / PROB_TOTAL as f64).log2();
        if self.slot_of_value(v).is_some() {
            bits
        } else {
            bits + 32.0
        }
    }
}

/// Uniform byte table for raw escape payloads.
fn byte_bounds(b: u8) -> (u32, u32) {
    let lo = b as u32 * 256;
    (lo, lo + 256)
}

/// Encode `symbols[i]` against `tables[i]`.
pub fn encode_symbols(symbols: &[i32], tables: &[&CdfTable]) -> Result<Vec<u8>> {
    if symbols.len() != tables.len() {
        return Err(Error::Config(format!(
            "{} symbols with {} tables",
            symbols.len(),
            tables.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (&v, table) in symbols.iter().zip(tables) {
        match table.slot_of_value(v) {
            Some(slot) => {
                let (lo, hi) = table.bounds(slot);
                enc.encode(lo, hi);
            }
            None => {
                let (lo, hi) = table.bounds(table.escape_slot());
                enc.encode(lo, hi);
                for byte in v.to_le_bytes() {
                    let (lo, hi) = byte_bounds(byte);
                    enc.encode(lo, hi);
                }
            }
        }
    }
    Ok(enc.finish())
}

/// Decode `tables.len()` symbols; exact inverse of [`encode_symbols`].
pub fn decode_symbols(bytes: &[u8], tables: &[&CdfTable]) -> Result<Vec<i32>> {
    if tables.is_empty() {
        return Ok(Vec::new());
    }
    let mut dec = RangeDecoder::new(bytes)?;
    let mut out = Vec::with_capacity(tables.len());
    for table in tables {
        let f = dec.decode_freq();
        let slot = table.slot_for_freq(f);
        let (lo, hi) = table.bounds(slot);
        dec.decode_update(lo, hi)?;
        if slot == table.escape_slot() {
            let mut raw = [0u8; 4];
            for byte in &mut raw {
                let f = dec.decode_freq();
                let b = (f / 256) as u8;
                let (lo, hi) = byte_bounds(b);
                dec.decode_update(lo, hi)?;
                *byte = b;
            }
            out.push(i32::from_le_bytes(raw));
        } else {
            out.push(table.v_min + slot as i32);
        }
    }
    Ok(out)
}
