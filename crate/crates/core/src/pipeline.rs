//! End-to-end encode, decode, evaluation and rate-distortion sweeps.

use std::sync::Mutex;

use log::info;

use crate::bitstream::{dequantize_tau, quantize_tau, CodedNetwork, CompressedCloud, NetworkHeader};
use crate::codec::{decode_levels, dequantize, encode_levels, quantize};
use crate::metrics::{bpp, scaling_ratio, y_psnr_with, D1Reference, LumaMatrix, RDPoint};
use crate::nn::NetworkConfig;
use crate::pointset::{voxelize, PointCloud, VoxelCloud};
use crate::spatial::{morton_decode, Partition};
use crate::training::{
    default_tau_grid, infer_colors, reconstruct_geometry, search_threshold, train_attribute, train_geometry,
    ThresholdResult, TraceRow, TrainConfig, TrainError,
};
use crate::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// Small networks and short schedules for desk-scale runs.
    Toy,
    /// Full-size networks and schedules.
    Paper,
}

/// Every knob of the encoder. `Default` is the full-size setting.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeOptions {
    pub resolution_bits: u32,
    pub cube_bits: u32,
    pub geometry_net: NetworkConfig,
    pub attribute_net: NetworkConfig,
    pub geometry_step_exponent: u8,
    pub attribute_step_exponent: u8,
    pub train: TrainConfig,
    pub geometry_only: bool,
    pub tau_grid: Vec<f64>,
}

impl Default for EncodeOptions {
    fn default() -> Self {
        Self::profile(Profile::Paper)
    }
}

impl EncodeOptions {
    pub fn profile(profile: Profile) -> Self {
        match profile {
            Profile::Paper => Self {
                resolution_bits: 10,
                cube_bits: 5,
                geometry_net: NetworkConfig::PAPER_GEOMETRY,
                attribute_net: NetworkConfig::PAPER_ATTRIBUTE,
                geometry_step_exponent: 10,
                attribute_step_exponent: 12,
                train: TrainConfig::new(4096, 1_200_000, 200_000, 0.5, 0.0, 0.0, 0).unwrap(),
                geometry_only: false,
                tau_grid: default_tau_grid(),
            },
            Profile::Toy => Self {
                resolution_bits: 8,
                cube_bits: 5,
                geometry_net: NetworkConfig::new(1, 6, 1, 64, 32).unwrap(),
                attribute_net: NetworkConfig::new(3, 6, 1, 64, 32).unwrap(),
                geometry_step_exponent: 10,
                attribute_step_exponent: 12,
                train: TrainConfig::new(512, 20_000, 5_000, 0.5, 0.0, 0.0, 0).unwrap(),
                geometry_only: false,
                tau_grid: default_tau_grid(),
            },
        }
    }
}

/// Result of [`encode`]: the stream plus what the encoder learned on the way.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub stream: CompressedCloud,
    pub bytes: Vec<u8>,
    pub input_points: usize,
    /// The input after voxelization.
    pub voxelized: VoxelCloud,
    /// Exactly what [`decode`] returns for `bytes`.
    pub reconstruction: VoxelCloud,
    pub threshold: ThresholdResult,
    pub geometry_trace: Vec<TraceRow>,
    pub attribute_trace: Vec<TraceRow>,
    pub rd: RDPoint,
}

impl Encoded {
    pub fn bits(&self) -> u64 {
        self.bytes.len() as u64 * 8
    }
}

pub fn encode(cloud: &PointCloud, opts: &EncodeOptions) -> Result<Encoded, Error> {
    let mut vox = voxelize(cloud, opts.resolution_bits)?;
    if opts.geometry_only {
        vox = vox.with_colors(None)?;
    }
    let partition = Partition::build(&vox, opts.cube_bits)?;
    info!("{} points -> {} voxels in {} cubes", cloud.len(), vox.len(), partition.num_cubes());

    let geometry = train_geometry(&vox, &partition, opts.geometry_net, &opts.train)?;
    let q_geometry = quantize(&geometry.model, opts.geometry_step_exponent)?;
    let f_hat = dequantize(&q_geometry);
    let threshold = search_threshold(&f_hat, &partition, &vox, &opts.tau_grid)?;
    let tau_q = quantize_tau(threshold.tau);
    info!("threshold {} (D1 {:.3} dB, ratio {:.3})", threshold.tau, threshold.d1_psnr, threshold.scaling_ratio);

    let mut attribute_trace = Vec::new();
    let attribute = if vox.colors().is_some() {
        let x_hat = reconstruct_geometry(&f_hat, &partition, dequantize_tau(tau_q))?;
        if x_hat.is_empty() {
            return Err(TrainError::NoReconstruction.into());
        }
        let trained = train_attribute(&x_hat, &vox, opts.attribute_net, &opts.train)?;
        attribute_trace = trained.trace;
        let q = quantize(&trained.model, opts.attribute_step_exponent)?;
        Some(CodedNetwork {
            header: NetworkHeader::from_config(&opts.attribute_net, opts.attribute_step_exponent)?,
            payload: encode_levels(&q),
        })
    } else {
        None
    };

    let stream = CompressedCloud {
        resolution_bits: narrow(opts.resolution_bits)?,
        cube_bits: narrow(opts.cube_bits)?,
        tau_q,
        cubes: partition.cube_codes().to_vec(),
        geometry: CodedNetwork {
            header: NetworkHeader::from_config(&opts.geometry_net, opts.geometry_step_exponent)?,
            payload: encode_levels(&q_geometry),
        },
        attribute,
    };
    let bytes = stream.serialize()?;
    let reconstruction = decode_stream(&stream)?;
    let mut rd = evaluate_voxels(&vox, &reconstruction, LumaMatrix::default())?;
    rd.bpp = Some(bpp(bytes.len() as u64 * 8, cloud.len()));
    rd.tau = Some(stream.tau());
    rd.lambda_f = Some(opts.train.lambda_f);
    rd.lambda_g = vox.colors().is_some().then_some(opts.train.lambda_g);
    Ok(Encoded {
        stream,
        bytes,
        input_points: cloud.len(),
        voxelized: vox,
        reconstruction,
        threshold,
        geometry_trace: geometry.trace,
        attribute_trace,
        rd,
    })
}

fn narrow(v: u32) -> Result<u8, Error> {
    u8::try_from(v).map_err(|_| Error::Options(format!("{v} bits is out of range")))
}

/// Rebuilds the voxel cloud stored in a `NIRP` stream.
pub fn decode(bytes: &[u8]) -> Result<VoxelCloud, Error> {
    decode_stream(&CompressedCloud::parse(bytes)?)
}

pub fn decode_stream(stream: &CompressedCloud) -> Result<VoxelCloud, Error> {
    let n = u32::from(stream.resolution_bits);
    let partition =
        Partition::from_cubes(n, u32::from(stream.cube_bits), stream.cubes.iter().map(|&c| morton_decode(c)))?;
    let g = &stream.geometry;
    let f_hat = dequantize(&decode_levels(&g.payload, g.header.to_config(1)?, g.header.step_exponent)?);
    let geometry = reconstruct_geometry(&f_hat, &partition, stream.tau())?;
    match &stream.attribute {
        None => Ok(geometry),
        Some(a) => {
            let g_hat = dequantize(&decode_levels(&a.payload, a.header.to_config(3)?, a.header.step_exponent)?);
            let colors = infer_colors(&g_hat, geometry.voxels(), n)?;
            Ok(geometry.with_colors(Some(colors))?)
        }
    }
}

/// Distortion of `test` against `reference`; rate fields are left empty.
pub fn evaluate_voxels(reference: &VoxelCloud, test: &VoxelCloud, luma: LumaMatrix) -> Result<RDPoint, Error> {
    let d1 = D1Reference::new(reference).psnr(test)?;
    let y = match (reference.colors(), test.colors()) {
        (Some(_), Some(_)) => Some(y_psnr_with(reference, test, luma)?),
        _ => None,
    };
    Ok(RDPoint {
        bpp: None,
        d1_psnr: d1,
        y_psnr: y,
        scaling_ratio: scaling_ratio(test, reference),
        tau: None,
        lambda_f: None,
        lambda_g: None,
    })
}

/// Voxelizes both clouds at `resolution_bits` and compares them.
pub fn evaluate(
    reference: &PointCloud,
    test: &PointCloud,
    resolution_bits: u32,
    luma: LumaMatrix,
) -> Result<RDPoint, Error> {
    evaluate_voxels(&voxelize(reference, resolution_bits)?, &voxelize(test, resolution_bits)?, luma)
}

/// One sweep point: the requested strengths and what happened.
#[derive(Debug)]
pub struct SweepPoint {
    pub lambda_f: f64,
    pub lambda_g: f64,
    pub outcome: Result<RDPoint, Error>,
}

/// Encodes `cloud` once per `(lambda_f, lambda_g)` pair, running up to
/// `threads` encodes at a time. Successful points come first, ordered by
/// rate; failures keep their request order.
pub fn sweep(cloud: &PointCloud, base: &EncodeOptions, pairs: &[(f64, f64)], threads: usize) -> Vec<SweepPoint> {
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<SweepPoint>>> = Mutex::new((0..pairs.len()).map(|_| None).collect());
    let worker = || loop {
        let i = {
            let mut n = next.lock().unwrap();
            let i = *n;
            *n += 1;
            i
        };
        let Some(&(lambda_f, lambda_g)) = pairs.get(i) else { break };
        let mut opts = base.clone();
        opts.train.lambda_f = lambda_f;
        opts.train.lambda_g = lambda_g;
        let outcome = encode(cloud, &opts).map(|e| e.rd);
        if let Err(e) = &outcome {
            log::warn!("sweep point ({lambda_f}, {lambda_g}) failed: {e}");
        }
        results.lock().unwrap()[i] = Some(SweepPoint { lambda_f, lambda_g, outcome });
    };
    std::thread::scope(|s| {
        for _ in 1..threads.clamp(1, pairs.len().max(1)) {
            s.spawn(worker);
        }
        worker();
    });
    let mut points: Vec<SweepPoint> = results.into_inner().unwrap().into_iter().map(Option::unwrap).collect();
    points.sort_by(|a, b| match (&a.outcome, &b.outcome) {
        (Ok(x), Ok(y)) => x.bpp.unwrap_or(f64::NAN).total_cmp(&y.bpp.unwrap_or(f64::NAN)),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => std::cmp::Ordering::Equal,
    });
    points
}
