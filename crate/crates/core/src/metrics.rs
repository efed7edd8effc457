//! Distortion and rate measures.
//!
//! D1 PSNR uses the peak `3 (2^N - 1)^2` and the symmetric rule
//! `max(MSE(A->B), MSE(B->A))`. Y PSNR converts RGB to luma on the 0-255
//! scale and pairs points by nearest neighbor in both directions.

use thiserror::Error;

use crate::pointset::VoxelCloud;
use crate::spatial::NeighborIndex;

/// Stand-in for an infinite PSNR in CSV output.
pub const PSNR_CAP: f64 = 999.0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot measure distortion of an empty cloud")]
    Empty,
    #[error("clouds have different resolutions ({0} and {1} bits)")]
    Resolution(u32, u32),
    #[error("attribute metric needs colors on both clouds")]
    MissingColors,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LumaMatrix {
    #[default]
    Bt709,
    Bt601,
}

impl LumaMatrix {
    pub fn luma(self, c: [u8; 3]) -> f64 {
        let (r, g, b) = (f64::from(c[0]), f64::from(c[1]), f64::from(c[2]));
        match self {
            LumaMatrix::Bt709 => 0.2126 * r + 0.7152 * g + 0.0722 * b,
            LumaMatrix::Bt601 => 0.299 * r + 0.587 * g + 0.114 * b,
        }
    }
}

fn psnr(peak_sq: f64, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak_sq / mse).log10()
    }
}

/// A reference cloud with a prebuilt index, for repeated D1 measurements.
pub struct D1Reference<'a> {
    cloud: &'a VoxelCloud,
    index: NeighborIndex,
}

impl<'a> D1Reference<'a> {
    pub fn new(cloud: &'a VoxelCloud) -> Self {
        Self { cloud, index: NeighborIndex::new(cloud.voxels()) }
    }

    /// Symmetric point-to-point mean squared error against `test`.
    pub fn mse(&self, test: &VoxelCloud) -> Result<f64, MetricsError> {
        check_pair(self.cloud, test)?;
        let test_index = NeighborIndex::new(test.voxels());
        let ab = one_way_mse(self.cloud.voxels(), &test_index);
        let ba = one_way_mse(test.voxels(), &self.index);
        Ok(ab.max(ba))
    }

    pub fn psnr(&self, test: &VoxelCloud) -> Result<f64, MetricsError> {
        let max = ((1u64 << self.cloud.resolution_bits()) - 1) as f64;
        Ok(psnr(3.0 * max * max, self.mse(test)?))
    }
}

fn check_pair(a: &VoxelCloud, b: &VoxelCloud) -> Result<(), MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Empty);
    }
    if a.resolution_bits() != b.resolution_bits() {
        return Err(MetricsError::Resolution(a.resolution_bits(), b.resolution_bits()));
    }
    Ok(())
}

fn one_way_mse(from: &[[u32; 3]], to: &NeighborIndex) -> f64 {
    let total: u64 = from.iter().map(|&p| to.nearest(p).expect("non-empty index").squared_distance).sum();
    total as f64 / from.len() as f64
}

/// D1 (point-to-point) PSNR in dB; `+inf` when the clouds coincide.
pub fn d1_psnr(reference: &VoxelCloud, test: &VoxelCloud) -> Result<f64, MetricsError> {
    D1Reference::new(reference).psnr(test)
}

/// Luma PSNR in dB with BT.709 weights.
pub fn y_psnr(reference: &VoxelCloud, test: &VoxelCloud) -> Result<f64, MetricsError> {
    y_psnr_with(reference, test, LumaMatrix::Bt709)
}

pub fn y_psnr_with(reference: &VoxelCloud, test: &VoxelCloud, luma: LumaMatrix) -> Result<f64, MetricsError> {
    check_pair(reference, test)?;
    let (rc, tc) = match (reference.colors(), test.colors()) {
        (Some(r), Some(t)) => (r, t),
        _ => return Err(MetricsError::MissingColors),
    };
    let r_index = NeighborIndex::new(reference.voxels());
    let t_index = NeighborIndex::new(test.voxels());
    let one_way = |from: &[[u32; 3]], from_colors: &[[u8; 3]], to: &NeighborIndex, to_colors: &[[u8; 3]]| {
        let sum: f64 = from
            .iter()
            .zip(from_colors)
            .map(|(&p, &c)| {
                let n = to.nearest(p).expect("non-empty index");
                let d = luma.luma(c) - luma.luma(to_colors[n.index]);
                d * d
            })
            .sum();
        sum / from.len() as f64
    };
    let ab = one_way(reference.voxels(), rc, &t_index, tc);
    let ba = one_way(test.voxels(), tc, &r_index, rc);
    Ok(psnr(255.0 * 255.0, ab.max(ba)))
}

pub fn bpp(stream_bits: u64, original_point_count: usize) -> f64 {
    assert!(original_point_count > 0, "point count must be positive");
    stream_bits as f64 / original_point_count as f64
}

/// `|reconstructed| / |original|`.
pub fn scaling_ratio(reconstructed: &VoxelCloud, original: &VoxelCloud) -> f64 {
    assert!(!original.is_empty(), "original cloud must not be empty");
    reconstructed.len() as f64 / original.len() as f64
}

/// One rate-distortion measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct RDPoint {
    /// Absent when no stream was measured.
    pub bpp: Option<f64>,
    pub d1_psnr: f64,
    pub y_psnr: Option<f64>,
    pub scaling_ratio: f64,
    pub tau: Option<f64>,
    pub lambda_f: Option<f64>,
    pub lambda_g: Option<f64>,
}

impl RDPoint {
    pub const CSV_HEADER: &'static str = "bpp,d1_psnr,y_psnr,scaling_ratio,tau,lambda_f,lambda_g";

    pub fn to_csv_row(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(cap).unwrap_or_default()
        }
        fn opt_plain(v: Option<f64>) -> String {
            v.map(|v| v.to_string()).unwrap_or_default()
        }
        fn cap(v: f64) -> String {
            if v.is_infinite() || v > PSNR_CAP {
                format!("{PSNR_CAP}")
            } else {
                format!("{v}")
            }
        }
        [
            opt_plain(self.bpp),
            cap(self.d1_psnr),
            opt(self.y_psnr),
            format!("{}", self.scaling_ratio),
            opt(self.tau),
            opt(self.lambda_f),
            opt(self.lambda_g),
        ]
        .join(",")
    }
}
