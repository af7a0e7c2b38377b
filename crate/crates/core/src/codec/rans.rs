//! 32-bit rANS with byte-wise renormalization and 16-bit frequencies.
//!
//! Symbols are coded against per-symbol [`CdfTable`]s. A symbol outside a
//! table's range is sent as the escape slot followed by an Elias-gamma code
//! of its zigzag-encoded value plus one, so small outliers stay cheap while
//! every `i32` remains codable.

use crate::codec::cdf::{CdfTable, PRECISION};
use crate::error::{Result, SnicError};

/// Bytes of the coder state that every stream carries besides its symbols.
pub const STATE_BYTES: usize = 4;

/// Lower bound of the normalized state interval `[L, 256 L)`.
const RANS_L: u32 = 1 << 23;

/// One coding step: interval `[start, start + freq)` out of `2^16`.
#[derive(Clone, Copy, Debug)]
struct Step {
    start: u32,
    freq: u32,
}

fn zigzag(v: i32) -> u32 {
    ((v << 1) ^ (v >> 31)) as u32
}

fn unzigzag(u: u32) -> i32 {
    ((u >> 1) as i32) ^ -((u & 1) as i32)
}

/// Appends `bits` raw bits of `value` (at most 16) as one uniform step.
fn push_raw(value: u32, bits: u32, steps: &mut Vec<Step>) {
    debug_assert!((1..=PRECISION).contains(&bits) && value >> bits == 0);
    steps.push(Step { start: value << (PRECISION - bits), freq: 1 << (PRECISION - bits) });
}

/// Appends the coding steps of symbol `s`, in decode order.
fn push_steps(s: i32, table: &CdfTable, steps: &mut Vec<Step>) {
    match table.slot_of(s) {
        Some(k) => steps.push(Step { start: table.cum[k], freq: table.freq(k) }),
        None => {
            let k = table.escape_slot();
            steps.push(Step { start: table.cum[k], freq: table.freq(k) });
            // Elias gamma of v >= 1: n zero bits, a one bit, then the n bits of v below its leading one.
            let v = zigzag(s) as u64 + 1;
            let n = 63 - v.leading_zeros();
            for _ in 0..n {
                push_raw(0, 1, steps);
            }
            push_raw(1, 1, steps);
            let mut left = n;
            while left > 0 {
                let chunk = left.min(PRECISION);
                left -= chunk;
                push_raw(((v >> left) & ((1 << chunk) - 1)) as u32, chunk, steps);
            }
        }
    }
}

/// Encodes `symbols[i]` under `tables[i]`. Deterministic; the output always
/// starts with the 4-byte final state.
pub fn rans_encode(symbols: &[i32], tables: &[&CdfTable]) -> Vec<u8> {
    assert_eq!(symbols.len(), tables.len(), "one table per symbol");
    let mut steps = Vec::with_capacity(symbols.len());
    for (&s, t) in symbols.iter().zip(tables) {
        push_steps(s, t, &mut steps);
    }
    encode_steps(&steps)
}

fn encode_steps(steps: &[Step]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut x = RANS_L;
    for st in steps.iter().rev() {
        let x_max = ((RANS_L >> PRECISION) << 8) * st.freq;
        while x >= x_max {
            out.push((x & 0xff) as u8);
            x >>= 8;
        }
        x = ((x / st.freq) << PRECISION) + (x % st.freq) + st.start;
    }
    for shift in [24, 16, 8, 0] {
        out.push((x >> shift) as u8);
    }
    out.reverse();
    out
}

/// Streaming decoder over one rANS payload.
pub struct RansDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    x: u32,
}

impl<'a> RansDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let head: [u8; 4] = bytes
            .get(..STATE_BYTES)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| SnicError::Integrity("rANS stream shorter than its state".into()))?;
        Ok(Self { bytes, pos: STATE_BYTES, x: u32::from_le_bytes(head) })
    }

    fn step(&mut self, start: u32, freq: u32) -> Result<()> {
        let mask = (1u32 << PRECISION) - 1;
        self.x = freq * (self.x >> PRECISION) + (self.x & mask) - start;
        while self.x < RANS_L {
            let b = *self
                .bytes
                .get(self.pos)
                .ok_or_else(|| SnicError::Integrity("truncated rANS stream".into()))?;
            self.x = (self.x << 8) | b as u32;
            self.pos += 1;
        }
        Ok(())
    }

    /// Reads `bits` raw bits (at most 16).
    fn raw(&mut self, bits: u32) -> Result<u32> {
        let v = (self.x & ((1 << PRECISION) - 1)) >> (PRECISION - bits);
        self.step(v << (PRECISION - bits), 1 << (PRECISION - bits))?;
        Ok(v)
    }

    pub fn decode(&mut self, table: &CdfTable) -> Result<i32> {
        let value = self.x & ((1 << PRECISION) - 1);
        let k = table.lookup(value);
        self.step(table.cum[k], table.freq(k))?;
        if k < table.escape_slot() {
            return Ok(table.s_min + k as i32);
        }
        let mut n = 0;
        while self.raw(1)? == 0 {
            n += 1;
            if n > 32 {
                return Err(SnicError::Integrity("escape code longer than any 32-bit value".into()));
            }
        }
        let mut v: u64 = 1;
        let mut left = n;
        while left > 0 {
            let chunk = left.min(PRECISION);
            left -= chunk;
            v = (v << chunk) | self.raw(chunk)? as u64;
        }
        let u = u32::try_from(v - 1).map_err(|_| SnicError::Integrity("escaped value out of range".into()))?;
        Ok(unzigzag(u))
    }

    /// Verifies that the stream was consumed exactly and ended in the initial state.
    pub fn finish(self) -> Result<()> {
        if self.x != RANS_L || self.pos != self.bytes.len() {
            return Err(SnicError::Integrity("rANS stream did not terminate cleanly".into()));
        }
        Ok(())
    }
}

/// Decodes `tables.len()` symbols and checks clean termination.
pub fn rans_decode(bytes: &[u8], tables: &[&CdfTable]) -> Result<Vec<i32>> {
    let mut dec = RansDecoder::new(bytes)?;
    let out = tables.iter().map(|t| dec.decode(t)).collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}
