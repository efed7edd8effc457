//! Binary arithmetic coder with adaptive and bypass bins.
//!
//! Registers follow the classic LZMA layout: a 64-bit `low`, a 32-bit `range`
//! and a carry cache. A context holds the probability of a 1 in 1/65536 units.

use super::CodecError;

const TOP: u32 = 1 << 24;
const P_INIT: u16 = 32768;
const P_LOW: u32 = 64;
const P_HIGH: u32 = 65472;
const ADAPT_SHIFT: u32 = 5;

/// Probability state of one adaptive bin.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Context {
    p: u16,
}

impl Default for Context {
    fn default() -> Self {
        Self { p: P_INIT }
    }
}

impl Context {
    /// Probability of a 1, scaled by 65536.
    pub fn probability(self) -> u16 {
        self.p
    }

    fn update(&mut self, bin: bool) {
        let p = u32::from(self.p);
        let next = if bin { p + ((65536 - p) >> ADAPT_SHIFT) } else { p - (p >> ADAPT_SHIFT) };
        self.p = next.clamp(P_LOW, P_HIGH) as u16;
    }
}

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: 0xFFFF_FFFF, cache: 0, cache_size: 1, out: Vec::new() }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn normalize(&mut self) {
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    pub fn encode(&mut self, ctx: &mut Context, bin: bool) {
        let bound = (self.range >> 16) * u32::from(ctx.p);
        if bin {
            self.range = bound;
        } else {
            self.low += u64::from(bound);
            self.range -= bound;
        }
        ctx.update(bin);
        self.normalize();
    }

    pub fn encode_bypass(&mut self, bin: bool) {
        self.range >>= 1;
        if bin {
            self.low += u64::from(self.range);
        }
        self.normalize();
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self, CodecError> {
        let mut d = Self { data, pos: 0, code: 0, range: 0xFFFF_FFFF };
        // the first byte is the encoder's initial cache and carries no bits
        d.next_byte()?;
        for _ in 0..4 {
            d.code = (d.code << 8) | u32::from(d.next_byte()?);
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8, CodecError> {
        let b = *self.data.get(self.pos).ok_or(CodecError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    fn normalize(&mut self) -> Result<(), CodecError> {
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | u32::from(self.next_byte()?);
        }
        Ok(())
    }

    pub fn decode(&mut self, ctx: &mut Context) -> Result<bool, CodecError> {
        let bound = (self.range >> 16) * u32::from(ctx.p);
        let bin = self.code < bound;
        if bin {
            self.range = bound;
        } else {
            self.code -= bound;
            self.range -= bound;
        }
        ctx.update(bin);
        self.normalize()?;
        Ok(bin)
    }

    pub fn decode_bypass(&mut self) -> Result<bool, CodecError> {
        self.range >>= 1;
        let bin = self.code >= self.range;
        if bin {
            self.code -= self.range;
        }
        self.normalize()?;
        Ok(bin)
    }

    /// Fails unless every input byte has been consumed.
    pub fn finish(self) -> Result<(), CodecError> {
        match self.data.len() - self.pos {
            0 => Ok(()),
            extra => Err(CodecError::TrailingBytes(extra)),
        }
    }
}
