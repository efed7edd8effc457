use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{attribute_loss, focal_loss, l1_penalty};
use super::sampler::GeometrySampler;
use super::{TrainConfig, TrainError};
use crate::metrics::D1Reference;
use crate::nn::{adam_step, encode_batch, Gradients, Matrix, NetworkConfig, NetworkModel, OptimizerState};
use crate::pointset::VoxelCloud;
use crate::round_half_away;
use crate::spatial::{NeighborIndex, Partition};

/// Candidates are pushed through the network in chunks of this many voxels.
/// Encoder and decoder must agree on it for bit-identical probabilities.
pub const INFERENCE_CHUNK: usize = 4096;

const ATTRIBUTE_SEED_OFFSET: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// A trained network and its loss trace.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: NetworkModel,
    pub trace: Vec<TraceRow>,
}

fn sampler_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn add_l1_gradient(grads: &mut Gradients, model: &NetworkModel, coefficient: f64) {
    if coefficient == 0.0 {
        return;
    }
    for (g, p) in grads.tensors_mut().zip(model.tensors()) {
        for (gi, &pi) in g.iter_mut().zip(p) {
            if pi > 0.0 {
                *gi += coefficient;
            } else if pi < 0.0 {
                *gi -= coefficient;
            }
        }
    }
}

struct Loop {
    trace: Vec<TraceRow>,
    log_every: u64,
    total: u64,
}

impl Loop {
    fn record(&mut self, step: u64, loss: f64, lr: f64) -> Result<(), TrainError> {
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step, loss });
        }
        if step % self.log_every == 0 || step + 1 == self.total {
            self.trace.push(TraceRow { step, loss, lr });
            debug!("step {step}/{} loss {loss:.6} lr {lr:.3e}", self.total);
        }
        Ok(())
    }
}

/// Fits the occupancy network to `vox` with focal loss and an l1 penalty.
pub fn train_geometry(
    vox: &VoxelCloud,
    partition: &Partition,
    net: NetworkConfig,
    cfg: &TrainConfig,
) -> Result<Trained, TrainError> {
    cfg.validate()?;
    if net.out_channels != 1 {
        return Err(TrainError::Config("occupancy network needs exactly one output".into()));
    }
    let sampler = GeometrySampler::new(partition, vox, cfg.beta, cfg.batch_size)?;
    let mut rng = sampler_rng(cfg.seed, 1);
    let mut model = NetworkModel::init(net, cfg.seed)?;
    let mut opt = OptimizerState::new(model.param_count(), cfg.steps_geometry);
    let l1_coefficient = cfg.lambda_f / vox.len() as f64;
    let alpha = cfg.alpha();
    let mut lp = Loop { trace: Vec::new(), log_every: cfg.log_every, total: cfg.steps_geometry };
    let mut coords = Vec::with_capacity(cfg.batch_size);

    for step in 0..cfg.steps_geometry {
        let batch = sampler.sample(&mut rng);
        coords.clear();
        coords.extend(batch.iter().map(|b| b.0));
        let x = encode_batch(&coords, vox.resolution_bits(), net.num_frequencies);
        let (out, cache) = model.forward(&x)?;
        let scale = 1.0 / batch.len() as f64;
        let mut d_out = Matrix::zeros(out.rows, 1);
        let mut distortion = 0.0;
        for (i, &(_, occupied)) in batch.iter().enumerate() {
            let (l, g) = focal_loss(out.data[i], occupied, alpha);
            distortion += l;
            d_out.data[i] = g * scale;
        }
        let loss = distortion * scale + l1_penalty(&model, cfg.lambda_f, vox.len());
        lp.record(step, loss, opt.current_learning_rate())?;
        let mut grads = model.backward(&cache, &d_out)?;
        add_l1_gradient(&mut grads, &model, l1_coefficient);
        adam_step(&mut model, &mut opt, &grads);
    }
    Ok(Trained { model, trace: lp.trace })
}

/// Color of each reconstructed voxel's nearest original point.
pub fn assign_color_targets(
    reconstructed: &[[u32; 3]],
    original: &VoxelCloud,
    index: &NeighborIndex,
) -> Result<Vec<[u8; 3]>, TrainError> {
    let colors = original.colors().ok_or(TrainError::MissingColors)?;
    if index.is_empty() {
        return Err(TrainError::EmptyCloud);
    }
    Ok(reconstructed.iter().map(|&v| colors[index.nearest(v).unwrap().index]).collect())
}

/// Fits the color network on the reconstructed geometry.
pub fn train_attribute(
    reconstructed: &VoxelCloud,
    original: &VoxelCloud,
    net: NetworkConfig,
    cfg: &TrainConfig,
) -> Result<Trained, TrainError> {
    train_attribute_observed(reconstructed, original, net, cfg, |_| {})
}

/// [`train_attribute`] that also hands every batch's coordinates to `observe`.
pub fn train_attribute_observed(
    reconstructed: &VoxelCloud,
    original: &VoxelCloud,
    net: NetworkConfig,
    cfg: &TrainConfig,
    mut observe: impl FnMut(&[[u32; 3]]),
) -> Result<Trained, TrainError> {
    cfg.validate()?;
    if net.out_channels != 3 {
        return Err(TrainError::Config("color network needs exactly three outputs".into()));
    }
    if reconstructed.is_empty() || original.is_empty() {
        return Err(TrainError::EmptyCloud);
    }
    let index = NeighborIndex::new(original.voxels());
    let targets: Vec<[f64; 3]> = assign_color_targets(reconstructed.voxels(), original, &index)?
        .into_iter()
        .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
        .collect();

    let mut rng = sampler_rng(cfg.seed, 2);
    let mut model = NetworkModel::init(net, cfg.seed.wrapping_add(ATTRIBUTE_SEED_OFFSET))?;
    let mut opt = OptimizerState::new(model.param_count(), cfg.steps_attribute);
    let l1_coefficient = cfg.lambda_g / original.len() as f64;
    let mut lp = Loop { trace: Vec::new(), log_every: cfg.log_every, total: cfg.steps_attribute };
    let voxels = reconstructed.voxels();
    let mut picks = Vec::with_capacity(cfg.batch_size);
    let mut coords = Vec::with_capacity(cfg.batch_size);

    for step in 0..cfg.steps_attribute {
        picks.clear();
        picks.extend((0..cfg.batch_size).map(|_| rand::Rng::gen_range(&mut rng, 0..voxels.len())));
        coords.clear();
        coords.extend(picks.iter().map(|&i| voxels[i]));
        observe(&coords);
        let x = encode_batch(&coords, reconstructed.resolution_bits(), net.num_frequencies);
        let (out, cache) = model.forward(&x)?;
        let scale = 1.0 / picks.len() as f64;
        let mut d_out = Matrix::zeros(out.rows, 3);
        let mut distortion = 0.0;
        for (r, &i) in picks.iter().enumerate() {
            let row = out.row(r);
            let (l, g) = attribute_loss([row[0], row[1], row[2]], targets[i]);
            distortion += l;
            for c in 0..3 {
                d_out.data[3 * r + c] = g[c] * scale;
            }
        }
        let loss = distortion * scale + l1_penalty(&model, cfg.lambda_g, original.len());
        lp.record(step, loss, opt.current_learning_rate())?;
        let mut grads = model.backward(&cache, &d_out)?;
        add_l1_gradient(&mut grads, &model, l1_coefficient);
        adam_step(&mut model, &mut opt, &grads);
    }
    Ok(Trained { model, trace: lp.trace })
}

/// Predicted colors (0-255) for `voxels`.
pub fn infer_colors(
    model: &NetworkModel,
    voxels: &[[u32; 3]],
    resolution_bits: u32,
) -> Result<Vec<[u8; 3]>, TrainError> {
    let l = model.config().num_frequencies;
    let mut colors = Vec::with_capacity(voxels.len());
    for chunk in voxels.chunks(INFERENCE_CHUNK) {
        let out = model.predict(&encode_batch(chunk, resolution_bits, l))?;
        for r in 0..out.rows {
            let row = out.row(r);
            let mut c = [0u8; 3];
            for k in 0..3 {
                c[k] = round_half_away(row[k] * 255.0).clamp(0.0, 255.0) as u8;
            }
            colors.push(c);
        }
    }
    Ok(colors)
}

/// Candidates whose occupancy probability exceeds a floor, in Morton order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredCandidates {
    pub resolution_bits: u32,
    pub floor: f64,
    pub voxels: Vec<[u32; 3]>,
    pub probabilities: Vec<f64>,
}

impl ScoredCandidates {
    /// Voxels with probability strictly above `tau`; `tau` must not be below the floor.
    pub fn above(&self, tau: f64) -> VoxelCloud {
        assert!(tau >= self.floor, "threshold below the scoring floor");
        let voxels = self
            .voxels
            .iter()
            .zip(&self.probabilities)
            .filter(|(_, &p)| p > tau)
            .map(|(&v, _)| v)
            .collect();
        VoxelCloud::new(self.resolution_bits, voxels, None).expect("candidates are unique and in range")
    }

    pub fn count_above(&self, tau: f64) -> usize {
        self.probabilities.iter().filter(|&&p| p > tau).count()
    }
}

/// Streams every candidate through the occupancy network, keeping the ones
/// with probability above `floor`.
pub fn score_candidates(
    model: &NetworkModel,
    partition: &Partition,
    floor: f64,
) -> Result<ScoredCandidates, TrainError> {
    let n = partition.resolution_bits();
    let l = model.config().num_frequencies;
    let mut scored = ScoredCandidates { resolution_bits: n, floor, voxels: Vec::new(), probabilities: Vec::new() };
    let mut chunk = Vec::with_capacity(INFERENCE_CHUNK);
    let flush = |chunk: &mut Vec<[u32; 3]>, scored: &mut ScoredCandidates| -> Result<(), TrainError> {
        let out = model.predict(&encode_batch(chunk, n, l))?;
        for (&v, &p) in chunk.iter().zip(&out.data) {
            if p > floor {
                scored.voxels.push(v);
                scored.probabilities.push(p);
            }
        }
        chunk.clear();
        Ok(())
    };
    for v in partition.candidates() {
        chunk.push(v);
        if chunk.len() == INFERENCE_CHUNK {
            flush(&mut chunk, &mut scored)?;
        }
    }
    if !chunk.is_empty() {
        flush(&mut chunk, &mut scored)?;
    }
    Ok(scored)
}

fn check_tau(tau: f64) -> Result<(), TrainError> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(TrainError::InvalidTau(tau))
    }
}

/// Candidates with occupancy probability strictly above `tau`.
pub fn reconstruct_geometry(model: &NetworkModel, partition: &Partition, tau: f64) -> Result<VoxelCloud, TrainError> {
    check_tau(tau)?;
    let rec = score_candidates(model, partition, tau)?.above(tau);
    if rec.is_empty() {
        debug!("reconstruction at tau {tau} is empty");
    }
    Ok(rec)
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_tau_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Outcome of a threshold sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdResult {
    pub tau: f64,
    pub d1_psnr: f64,
    pub scaling_ratio: f64,
    /// `(tau, |X^|, D1 PSNR)` for every candidate, ascending in tau; PSNR is
    /// `None` for empty reconstructions.
    pub sweep: Vec<(f64, usize, Option<f64>)>,
}

/// Picks the threshold with the best D1 PSNR against `original`; ties go to
/// the smaller threshold.
pub fn search_threshold(
    model: &NetworkModel,
    partition: &Partition,
    original: &VoxelCloud,
    candidate_taus: &[f64],
) -> Result<ThresholdResult, TrainError> {
    if candidate_taus.is_empty() {
        return Err(TrainError::NoThresholds);
    }
    for &t in candidate_taus {
        check_tau(t)?;
    }
    let mut taus = candidate_taus.to_vec();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let scored = score_candidates(model, partition, taus[0])?;
    let reference = D1Reference::new(original);
    let mut best: Option<(f64, f64, usize)> = None;
    let mut sweep = Vec::with_capacity(taus.len());
    for &tau in &taus {
        let rec = scored.above(tau);
        if rec.is_empty() {
            sweep.push((tau, 0, None));
            continue;
        }
        let psnr = reference.psnr(&rec)?;
        sweep.push((tau, rec.len(), Some(psnr)));
        if best.map_or(true, |b| psnr > b.1) {
            best = Some((tau, psnr, rec.len()));
        }
    }
    let (tau, d1_psnr, count) = best.ok_or(TrainError::NoReconstruction)?;
    Ok(ThresholdResult { tau, d1_psnr, scaling_ratio: count as f64 / original.len() as f64, sweep })
}
