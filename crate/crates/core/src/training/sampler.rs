use std::collections::HashSet;

use rand::Rng;

use super::TrainError;
use crate::pointset::VoxelCloud;
use crate::spatial::{morton_encode, Partition};

/// Draws labelled geometry batches with a controlled share of occupied voxels.
///
/// With `zeta = |X| / |V|`, a batch of size `B` takes
/// `round((beta - zeta) / (1 - zeta) * B)` voxels uniformly (with replacement)
/// from the occupied set and the rest uniformly from the candidate set, as a
/// random cube followed by a random offset inside it. In expectation a
/// fraction `beta` of the batch is occupied, and `beta = zeta` degenerates to
/// plain uniform sampling of the candidates.
pub struct GeometrySampler<'a> {
    partition: &'a Partition,
    occupied: &'a [[u32; 3]],
    occupied_codes: HashSet<u64>,
    batch_size: usize,
    from_occupied: usize,
}

impl<'a> GeometrySampler<'a> {
    pub fn new(
        partition: &'a Partition,
        occupied: &'a VoxelCloud,
        beta: f64,
        batch_size: usize,
    ) -> Result<Self, TrainError> {
        if partition.num_cubes() == 0 {
            return Err(TrainError::EmptyPartition);
        }
        if occupied.is_empty() {
            return Err(TrainError::EmptyCloud);
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(TrainError::Config(format!("beta must lie in (0, 1), got {beta}")));
        }
        if beta * (batch_size as f64) < 1.0 {
            return Err(TrainError::Config("beta * batch_size must be at least 1".into()));
        }
        let zeta = occupied.len() as f64 / partition.num_candidates() as f64;
        let share = if zeta >= 1.0 { 1.0 } else { ((beta - zeta) / (1.0 - zeta)).clamp(0.0, 1.0) };
        let from_occupied = crate::round_half_away(share * batch_size as f64) as usize;
        Ok(Self {
            partition,
            occupied: occupied.voxels(),
            occupied_codes: occupied.voxels().iter().map(|&v| morton_encode(v)).collect(),
            batch_size,
            from_occupied,
        })
    }

    /// Number of samples per batch taken directly from the occupied set.
    pub fn occupied_per_batch(&self) -> usize {
        self.from_occupied
    }

    pub fn is_occupied(&self, v: [u32; 3]) -> bool {
        self.occupied_codes.contains(&morton_encode(v))
    }

    /// One batch of `(voxel, occupied)` pairs; occupied-set draws come first.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<([u32; 3], bool)> {
        let mut batch = Vec::with_capacity(self.batch_size);
        for _ in 0..self.from_occupied {
            batch.push((self.occupied[rng.gen_range(0..self.occupied.len())], true));
        }
        let cubes = self.partition.num_cubes();
        let per_cube = self.partition.voxels_per_cube();
        for _ in self.from_occupied..self.batch_size {
            let cube = rng.gen_range(0..cubes);
            let local = rng.gen_range(0..per_cube);
            let v = self.partition.voxel_at(cube, local);
            batch.push((v, self.is_occupied(v)));
        }
        batch
    }
}
