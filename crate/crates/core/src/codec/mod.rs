//! Uniform quantization of network parameters and lossless coding of the
//! resulting integer levels.
//!
//! Each level `k` is binarized as a significance bin, a bypass sign bin
//! (1 = negative), up to four truncated-unary bins for `|k| - 1`, and an
//! order-0 exp-Golomb bypass suffix for `|k| - 5`. Every tensor gets five
//! fresh contexts: significance and one per unary position.

mod range;

pub use range::{Context, RangeDecoder, RangeEncoder};

use thiserror::Error;

use crate::nn::{NetworkConfig, NetworkModel, NnError};
use crate::round_half_away;

pub const MIN_STEP_EXPONENT: u8 = 1;
pub const MAX_STEP_EXPONENT: u8 = 20;

const UNARY_BINS: u32 = 4;
const MAX_GOLOMB_PREFIX: u32 = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("step exponent {0} outside {MIN_STEP_EXPONENT}..={MAX_STEP_EXPONENT}")]
    StepExponent(u8),
    #[error("parameter {index} of tensor {tensor} is not finite")]
    NonFinite { tensor: usize, index: usize },
    #[error("parameter {index} of tensor {tensor} quantizes beyond the 31-bit level range")]
    Overflow { tensor: usize, index: usize },
    #[error("level layout does not match the network configuration")]
    Layout,
    #[error("payload ended before all levels were decoded")]
    Truncated,
    #[error("{0} unread bytes after the last level")]
    TrailingBytes(usize),
    #[error("corrupt payload: exp-Golomb prefix too long")]
    Corrupt,
    #[error(transparent)]
    Network(#[from] NnError),
}

/// Integer levels of a network quantized with step `2^-step_exponent`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedModel {
    config: NetworkConfig,
    step_exponent: u8,
    levels: Vec<Vec<i32>>,
}

fn check_exponent(e: u8) -> Result<(), CodecError> {
    if (MIN_STEP_EXPONENT..=MAX_STEP_EXPONENT).contains(&e) {
        Ok(())
    } else {
        Err(CodecError::StepExponent(e))
    }
}

impl QuantizedModel {
    /// `levels` holds one vector per tensor, in the network's tensor order.
    pub fn new(config: NetworkConfig, step_exponent: u8, levels: Vec<Vec<i32>>) -> Result<Self, CodecError> {
        config.validate()?;
        check_exponent(step_exponent)?;
        let lengths = config.tensor_lengths();
        if lengths.len() != levels.len() || lengths.iter().zip(&levels).any(|(&n, l)| n != l.len()) {
            return Err(CodecError::Layout);
        }
        if levels.iter().flatten().any(|&k| k == i32::MIN) {
            return Err(CodecError::Overflow { tensor: 0, index: 0 });
        }
        Ok(Self { config, step_exponent, levels })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn step_exponent(&self) -> u8 {
        self.step_exponent
    }

    pub fn step(&self) -> f64 {
        step(self.step_exponent)
    }

    pub fn levels(&self) -> &[Vec<i32>] {
        &self.levels
    }

    pub fn nonzero_count(&self) -> usize {
        self.levels.iter().flatten().filter(|&&k| k != 0).count()
    }
}

fn step(e: u8) -> f64 {
    (-f64::from(e)).exp2()
}

/// `k = round(q * 2^e)` with ties away from zero.
pub fn quantize(model: &NetworkModel, step_exponent: u8) -> Result<QuantizedModel, CodecError> {
    check_exponent(step_exponent)?;
    let scale = f64::from(step_exponent).exp2();
    let limit = 2f64.powi(31);
    let mut levels = Vec::new();
    for (t, tensor) in model.tensors().enumerate() {
        let mut out = Vec::with_capacity(tensor.len());
        for (i, &q) in tensor.iter().enumerate() {
            if !q.is_finite() {
                return Err(CodecError::NonFinite { tensor: t, index: i });
            }
            let k = round_half_away(q * scale);
            if k.abs() >= limit {
                return Err(CodecError::Overflow { tensor: t, index: i });
            }
            out.push(k as i32);
        }
        levels.push(out);
    }
    Ok(QuantizedModel { config: *model.config(), step_exponent, levels })
}

/// `q = k * 2^-e`, exact in double precision.
pub fn dequantize(qm: &QuantizedModel) -> NetworkModel {
    let delta = qm.step();
    let tensors = qm.levels.iter().map(|t| t.iter().map(|&k| f64::from(k) * delta).collect()).collect();
    NetworkModel::from_tensors(qm.config, tensors).expect("layout checked at construction")
}

#[derive(Default)]
struct TensorContexts {
    significance: Context,
    unary: [Context; UNARY_BINS as usize],
}

fn encode_golomb(enc: &mut RangeEncoder, mut v: u32) {
    let mut k = 0;
    while u64::from(v) >= 1u64 << k {
        enc.encode_bypass(true);
        v -= 1 << k;
        k += 1;
    }
    enc.encode_bypass(false);
    for bit in (0..k).rev() {
        enc.encode_bypass((v >> bit) & 1 == 1);
    }
}

fn decode_golomb(dec: &mut RangeDecoder) -> Result<u32, CodecError> {
    let mut k = 0u32;
    let mut base = 0u64;
    while dec.decode_bypass()? {
        base += 1 << k;
        k += 1;
        if k > MAX_GOLOMB_PREFIX {
            return Err(CodecError::Corrupt);
        }
    }
    let mut suffix = 0u64;
    for _ in 0..k {
        suffix = (suffix << 1) | u64::from(dec.decode_bypass()?);
    }
    u32::try_from(base + suffix).map_err(|_| CodecError::Corrupt)
}

/// Entropy-codes all levels into a single payload.
pub fn encode_levels(qm: &QuantizedModel) -> Vec<u8> {
    encode_tensors(&qm.levels)
}

/// Codes a sequence of level tensors, each with its own contexts.
///
/// Panics on `i32::MIN`, which has no representable magnitude.
pub fn encode_tensors(tensors: &[Vec<i32>]) -> Vec<u8> {
    let mut enc = RangeEncoder::new();
    for tensor in tensors {
        let mut ctx = TensorContexts::default();
        for &k in tensor {
            assert!(k != i32::MIN, "level out of range");
            enc.encode(&mut ctx.significance, k != 0);
            if k == 0 {
                continue;
            }
            enc.encode_bypass(k < 0);
            let m = k.unsigned_abs() - 1;
            for i in 0..UNARY_BINS {
                let more = m > i;
                enc.encode(&mut ctx.unary[i as usize], more);
                if !more {
                    break;
                }
            }
            if m >= UNARY_BINS {
                encode_golomb(&mut enc, m - UNARY_BINS);
            }
        }
    }
    enc.finish()
}

/// Inverse of [`encode_levels`]; the payload must be consumed exactly.
pub fn decode_levels(bytes: &[u8], config: NetworkConfig, step_exponent: u8) -> Result<QuantizedModel, CodecError> {
    config.validate()?;
    check_exponent(step_exponent)?;
    let levels = decode_tensors(bytes, &config.tensor_lengths())?;
    QuantizedModel::new(config, step_exponent, levels)
}

/// Inverse of [`encode_tensors`] for tensors of the given lengths.
pub fn decode_tensors(bytes: &[u8], lengths: &[usize]) -> Result<Vec<Vec<i32>>, CodecError> {
    let mut dec = RangeDecoder::new(bytes)?;
    let mut levels = Vec::with_capacity(lengths.len());
    for &n in lengths {
        let mut ctx = TensorContexts::default();
        let mut tensor = Vec::with_capacity(n);
        for _ in 0..n {
            if !dec.decode(&mut ctx.significance)? {
                tensor.push(0);
                continue;
            }
            let negative = dec.decode_bypass()?;
            let mut m = 0u32;
            while m < UNARY_BINS && dec.decode(&mut ctx.unary[m as usize])? {
                m += 1;
            }
            if m == UNARY_BINS {
                m = m.checked_add(decode_golomb(&mut dec)?).ok_or(CodecError::Corrupt)?;
            }
            let magnitude = i32::try_from(u64::from(m) + 1).map_err(|_| CodecError::Corrupt)?;
            tensor.push(if negative { -magnitude } else { magnitude });
        }
        levels.push(tensor);
    }
    dec.finish()?;
    Ok(levels)
}
