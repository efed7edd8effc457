//! The `NIRP` container.
//!
//! ```text
//! "NIRP" | version u8 | flags u8 | N u8 | T u8 | tau_q u16
//! geometry network:  L u8 | blocks u8 | outer u16 | inner u16 | step exponent u8
//! attribute network: same fields, only when flags bit 0 is set
//! cube bitmap: ceil(2^(3T) / 8) bytes; cube with Morton code c is bit c % 8 of byte c / 8
//! geometry payload: u32 length | bytes
//! attribute payload: u32 length | bytes, only when flags bit 0 is set
//! ```
//!
//! Integers are little-endian; `tau = tau_q / 65535`.

use thiserror::Error;

use crate::codec::{MAX_STEP_EXPONENT, MIN_STEP_EXPONENT};
use crate::nn::NetworkConfig;

pub const MAGIC: [u8; 4] = *b"NIRP";
pub const VERSION: u8 = 1;
pub const MAX_CUBE_BITS: u8 = 8;
const MAX_RESOLUTION_BITS: u8 = 16;
const FLAG_ATTRIBUTES: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BitstreamError {
    #[error("not a NIRP stream")]
    BadMagic,
    #[error("unsupported NIRP version {0}")]
    UnsupportedVersion(u8),
    #[error("{section} needs {needed} bytes but only {available} remain")]
    LengthMismatch { section: &'static str, needed: usize, available: usize },
    #[error("{0} bytes after the end of the stream")]
    TrailingBytes(usize),
    #[error("invalid stream: {0}")]
    Invalid(String),
    #[error("cannot be represented in the container: {0}")]
    Unrepresentable(String),
}

/// Shape and step of one coded network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkHeader {
    pub num_frequencies: u8,
    pub num_resblocks: u8,
    pub outer_width: u16,
    pub inner_width: u16,
    pub step_exponent: u8,
}

impl NetworkHeader {
    pub fn from_config(config: &NetworkConfig, step_exponent: u8) -> Result<Self, BitstreamError> {
        let narrow = |v: usize, what: &str| {
            u16::try_from(v).map_err(|_| BitstreamError::Unrepresentable(format!("{what} {v}")))
        };
        let h = Self {
            num_frequencies: u8::try_from(config.num_frequencies)
                .map_err(|_| BitstreamError::Unrepresentable(format!("{} frequencies", config.num_frequencies)))?,
            num_resblocks: u8::try_from(config.num_resblocks)
                .map_err(|_| BitstreamError::Unrepresentable(format!("{} residual blocks", config.num_resblocks)))?,
            outer_width: narrow(config.outer_width, "outer width")?,
            inner_width: narrow(config.inner_width, "inner width")?,
            step_exponent,
        };
        h.validate().map_err(BitstreamError::Unrepresentable)?;
        Ok(h)
    }

    pub fn to_config(&self, out_channels: usize) -> Result<NetworkConfig, BitstreamError> {
        NetworkConfig::new(
            out_channels,
            self.num_frequencies.into(),
            self.num_resblocks.into(),
            self.outer_width.into(),
            self.inner_width.into(),
        )
        .map_err(|e| BitstreamError::Invalid(e.to_string()))
    }

    fn validate(&self) -> Result<(), String> {
        if !(MIN_STEP_EXPONENT..=MAX_STEP_EXPONENT).contains(&self.step_exponent) {
            return Err(format!("step exponent {}", self.step_exponent));
        }
        if self.outer_width == 0 || (self.num_resblocks > 0 && self.inner_width == 0) {
            return Err("zero layer width".into());
        }
        Ok(())
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.push(self.num_frequencies);
        out.push(self.num_resblocks);
        out.extend_from_slice(&self.outer_width.to_le_bytes());
        out.extend_from_slice(&self.inner_width.to_le_bytes());
        out.push(self.step_exponent);
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedNetwork {
    pub header: NetworkHeader,
    pub payload: Vec<u8>,
}

/// Everything the decoder needs to rebuild a cloud.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompressedCloud {
    pub resolution_bits: u8,
    pub cube_bits: u8,
    pub tau_q: u16,
    /// Morton codes of the occupied cubes, strictly increasing.
    pub cubes: Vec<u64>,
    pub geometry: CodedNetwork,
    pub attribute: Option<CodedNetwork>,
}

/// Nearest 16-bit threshold code.
pub fn quantize_tau(tau: f64) -> u16 {
    crate::round_half_away(tau.clamp(0.0, 1.0) * 65535.0) as u16
}

pub fn dequantize_tau(tau_q: u16) -> f64 {
    f64::from(tau_q) / 65535.0
}

pub fn bitmap_len(cube_bits: u8) -> usize {
    ((1usize << (3 * u32::from(cube_bits))) + 7) / 8
}

impl CompressedCloud {
    pub fn tau(&self) -> f64 {
        dequantize_tau(self.tau_q)
    }

    pub fn has_attributes(&self) -> bool {
        self.attribute.is_some()
    }

    fn validate(&self) -> Result<(), String> {
        if self.resolution_bits == 0 || self.resolution_bits > MAX_RESOLUTION_BITS {
            return Err(format!("resolution of {} bits", self.resolution_bits));
        }
        if self.cube_bits > self.resolution_bits || self.cube_bits > MAX_CUBE_BITS {
            return Err(format!("{} cube bits at resolution {}", self.cube_bits, self.resolution_bits));
        }
        if self.tau_q == 0 || self.tau_q == u16::MAX {
            return Err(format!("threshold code {}", self.tau_q));
        }
        let limit = 1u64 << (3 * u32::from(self.cube_bits));
        if self.cubes.windows(2).any(|w| w[0] >= w[1]) || self.cubes.last().is_some_and(|&c| c >= limit) {
            return Err("cube codes must be increasing and inside the grid".into());
        }
        self.geometry.header.validate()?;
        if let Some(a) = &self.attribute {
            a.header.validate()?;
        }
        Ok(())
    }

    /// Exact size of [`serialize`](Self::serialize)'s output in bits.
    pub fn serialized_bits(&self) -> u64 {
        let header = 4 + 1 + 1 + 1 + 1 + 2 + 7;
        let attribute = self.attribute.as_ref().map_or(0, |a| 7 + 4 + a.payload.len());
        8 * (header + bitmap_len(self.cube_bits) + 4 + self.geometry.payload.len() + attribute) as u64
    }

    pub fn serialize(&self) -> Result<Vec<u8>, BitstreamError> {
        self.validate().map_err(BitstreamError::Unrepresentable)?;
        let mut out = Vec::with_capacity((self.serialized_bits() / 8) as usize);
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(if self.has_attributes() { FLAG_ATTRIBUTES } else { 0 });
        out.push(self.resolution_bits);
        out.push(self.cube_bits);
        out.extend_from_slice(&self.tau_q.to_le_bytes());
        self.geometry.header.write(&mut out);
        if let Some(a) = &self.attribute {
            a.header.write(&mut out);
        }
        let mut bitmap = vec![0u8; bitmap_len(self.cube_bits)];
        for &c in &self.cubes {
            bitmap[(c / 8) as usize] |= 1 << (c % 8);
        }
        out.extend_from_slice(&bitmap);
        for net in std::iter::once(&self.geometry).chain(&self.attribute) {
            let len = u32::try_from(net.payload.len())
                .map_err(|_| BitstreamError::Unrepresentable("payload longer than 4 GiB".into()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(&net.payload);
        }
        debug_assert_eq!(out.len() as u64 * 8, self.serialized_bits());
        Ok(out)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, BitstreamError> {
        let mut r = Reader { data: bytes, pos: 0 };
        if r.take(4, "magic").ok() != Some(&MAGIC[..]) {
            return Err(BitstreamError::BadMagic);
        }
        let version = r.u8("version")?;
        if version != VERSION {
            return Err(BitstreamError::UnsupportedVersion(version));
        }
        let flags = r.u8("flags")?;
        if flags & !FLAG_ATTRIBUTES != 0 {
            return Err(BitstreamError::Invalid(format!("unknown flags {flags:#04x}")));
        }
        let resolution_bits = r.u8("header")?;
        let cube_bits = r.u8("header")?;
        let tau_q = r.u16("header")?;
        let geometry_header = r.network_header()?;
        let attribute_header = if flags & FLAG_ATTRIBUTES != 0 { Some(r.network_header()?) } else { None };
        if cube_bits > MAX_CUBE_BITS {
            return Err(BitstreamError::Invalid(format!("{cube_bits} cube bits")));
        }
        let bitmap = r.take(bitmap_len(cube_bits), "cube bitmap")?;
        let grid = 1u64 << (3 * u32::from(cube_bits));
        let mut cubes = Vec::new();
        for (i, &byte) in bitmap.iter().enumerate() {
            for bit in 0..8 {
                if byte >> bit & 1 == 1 {
                    let code = 8 * i as u64 + bit;
                    if code >= grid {
                        return Err(BitstreamError::Invalid("padding bits set in cube bitmap".into()));
                    }
                    cubes.push(code);
                }
            }
        }
        let geometry = CodedNetwork { header: geometry_header, payload: r.payload("geometry payload")? };
        let attribute = match attribute_header {
            Some(header) => Some(CodedNetwork { header, payload: r.payload("attribute payload")? }),
            None => None,
        };
        if r.pos != bytes.len() {
            return Err(BitstreamError::TrailingBytes(bytes.len() - r.pos));
        }
        let c = Self { resolution_bits, cube_bits, tau_q, cubes, geometry, attribute };
        c.validate().map_err(BitstreamError::Invalid)?;
        Ok(c)
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], BitstreamError> {
        let available = self.data.len() - self.pos;
        if n > available {
            return Err(BitstreamError::LengthMismatch { section, needed: n, available });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, section: &'static str) -> Result<u8, BitstreamError> {
        Ok(self.take(1, section)?[0])
    }

    fn u16(&mut self, section: &'static str) -> Result<u16, BitstreamError> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, BitstreamError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn network_header(&mut self) -> Result<NetworkHeader, BitstreamError> {
        Ok(NetworkHeader {
            num_frequencies: self.u8("network header")?,
            num_resblocks: self.u8("network header")?,
            outer_width: self.u16("network header")?,
            inner_width: self.u16("network header")?,
            step_exponent: self.u8("network header")?,
        })
    }

    fn payload(&mut self, section: &'static str) -> Result<Vec<u8>, BitstreamError> {
        let len = self.u32(section)? as usize;
        Ok(self.take(len, section)?.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(e: u8) -> NetworkHeader {
        NetworkHeader { num_frequencies: 6, num_resblocks: 1, outer_width: 64, inner_width: 32, step_exponent: e }
    }

    fn sample(with_attr: bool) -> CompressedCloud {
        CompressedCloud {
            resolution_bits: 8,
            cube_bits: 5,
            tau_q: quantize_tau(0.55),
            cubes: vec![0, 9, 4000, 32767],
            geometry: CodedNetwork { header: header(10), payload: vec![1, 2, 3] },
            attribute: with_attr.then(|| CodedNetwork { header: header(12), payload: vec![9; 17] }),
        }
    }

    #[test]
    fn bitmap_size_at_five_cube_bits() {
        assert_eq!(bitmap_len(5), 4096);
        assert_eq!(bitmap_len(0), 1);
        assert_eq!(bitmap_len(1), 1);
        assert_eq!(bitmap_len(2), 8);
    }

    #[test]
    fn round_trip_and_size() {
        for attr in [false, true] {
            let c = sample(attr);
            let bytes = c.serialize().unwrap();
            assert_eq!(bytes.len() as u64 * 8, c.serialized_bits());
            assert_eq!(CompressedCloud::parse(&bytes).unwrap(), c);
            assert_eq!(bytes[5], attr as u8);
        }
        let geometry_only = sample(false).serialize().unwrap();
        assert_eq!(geometry_only.len(), 17 + 4096 + 4 + 3);
    }

    #[test]
    fn bitmap_is_lsb_first() {
        let bytes = sample(false).serialize().unwrap();
        let bitmap = &bytes[17..17 + 4096];
        assert_eq!(bitmap[0], 0b0000_0001);
        assert_eq!(bitmap[1], 0b0000_0010);
        assert_eq!(bitmap[500], 0b0000_0001);
        assert_eq!(bitmap[4095], 0b1000_0000);
    }

    #[test]
    fn distinct_errors() {
        let good = sample(true).serialize().unwrap();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(CompressedCloud::parse(&bad), Err(BitstreamError::BadMagic));
        let mut bad = good.clone();
        bad[4] = 2;
        assert_eq!(CompressedCloud::parse(&bad), Err(BitstreamError::UnsupportedVersion(2)));
        let cut = &good[..good.len() - 5];
        assert!(matches!(
            CompressedCloud::parse(cut),
            Err(BitstreamError::LengthMismatch { section: "attribute payload", .. })
        ));
        let mut long = good.clone();
        long.push(0);
        assert_eq!(CompressedCloud::parse(&long), Err(BitstreamError::TrailingBytes(1)));
        assert_eq!(CompressedCloud::parse(b"NI"), Err(BitstreamError::BadMagic));
    }

    #[test]
    fn unrepresentable_fields() {
        let mut c = sample(false);
        c.cubes = vec![5, 5];
        assert!(matches!(c.serialize(), Err(BitstreamError::Unrepresentable(_))));
        let cfg = NetworkConfig::new(1, 6, 1, 70_000, 32).unwrap();
        assert!(NetworkHeader::from_config(&cfg, 10).is_err());
        let cfg = NetworkConfig::new(1, 6, 1, 64, 32).unwrap();
        let h = NetworkHeader::from_config(&cfg, 10).unwrap();
        assert_eq!(h, header(10));
        assert_eq!(h.to_config(1).unwrap(), cfg);
    }

    #[test]
    fn tau_code() {
        assert_eq!(quantize_tau(0.5), 32768);
        assert!((dequantize_tau(quantize_tau(0.35)) - 0.35).abs() <= 0.5 / 65535.0);
    }
}
