//! Cube partitioning of the voxel grid and nearest-neighbor search.
//!
//! Everything that needs an order (candidate enumeration, the cube bitmap,
//! tie-breaking in nearest-neighbor queries) uses the same Morton order: bit
//! `i` of x, y and z lands at bits `3i + 2`, `3i + 1` and `3i` of the code.

use thiserror::Error;

use crate::pointset::VoxelCloud;

fn spread(v: u32) -> u64 {
    let mut x = u64::from(v) & 0x1f_ffff;
    x = (x | (x << 32)) & 0x1f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x1f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

fn compact(code: u64) -> u32 {
    let mut x = code & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x1f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x1f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

/// Morton code of a coordinate with up to 21 bits per axis.
pub fn morton_encode(v: [u32; 3]) -> u64 {
    (spread(v[0]) << 2) | (spread(v[1]) << 1) | spread(v[2])
}

pub fn morton_decode(code: u64) -> [u32; 3] {
    [compact(code >> 2), compact(code >> 1), compact(code)]
}

/// Cube containing voxel `x` when a `2^N` grid is split into `2^T` cubes per axis.
pub fn cube_of(x: [u32; 3], resolution_bits: u32, cube_bits: u32) -> [u32; 3] {
    let shift = resolution_bits - cube_bits;
    [x[0] >> shift, x[1] >> shift, x[2] >> shift]
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PartitionError {
    #[error("cube bits {cube_bits} exceed resolution bits {resolution_bits}")]
    CubeBits { resolution_bits: u32, cube_bits: u32 },
    #[error("cube {0:?} is outside the cube grid")]
    CubeOutOfRange([u32; 3]),
    #[error("partition has no non-empty cubes")]
    Empty,
}

/// The set of non-empty cubes. Candidate voxels are every voxel inside them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    resolution_bits: u32,
    cube_bits: u32,
    /// Morton codes of the non-empty cubes, ascending.
    cube_codes: Vec<u64>,
}

impl Partition {
    pub fn build(vox: &VoxelCloud, cube_bits: u32) -> Result<Self, PartitionError> {
        let n = vox.resolution_bits();
        if cube_bits > n {
            return Err(PartitionError::CubeBits { resolution_bits: n, cube_bits });
        }
        let mut codes: Vec<u64> =
            vox.voxels().iter().map(|&x| morton_encode(cube_of(x, n, cube_bits))).collect();
        codes.sort_unstable();
        codes.dedup();
        Ok(Self { resolution_bits: n, cube_bits, cube_codes: codes })
    }

    /// Rebuilds a partition from explicit cube coordinates (any order, duplicates ignored).
    pub fn from_cubes(
        resolution_bits: u32,
        cube_bits: u32,
        cubes: impl IntoIterator<Item = [u32; 3]>,
    ) -> Result<Self, PartitionError> {
        if cube_bits > resolution_bits {
            return Err(PartitionError::CubeBits { resolution_bits, cube_bits });
        }
        let side = 1u32 << cube_bits;
        let mut codes = Vec::new();
        for c in cubes {
            if c.iter().any(|&v| v >= side) {
                return Err(PartitionError::CubeOutOfRange(c));
            }
            codes.push(morton_encode(c));
        }
        codes.sort_unstable();
        codes.dedup();
        Ok(Self { resolution_bits, cube_bits, cube_codes: codes })
    }

    pub fn resolution_bits(&self) -> u32 {
        self.resolution_bits
    }

    pub fn cube_bits(&self) -> u32 {
        self.cube_bits
    }

    pub fn cube_codes(&self) -> &[u64] {
        &self.cube_codes
    }

    pub fn cubes(&self) -> impl Iterator<Item = [u32; 3]> + '_ {
        self.cube_codes.iter().map(|&c| morton_decode(c))
    }

    pub fn num_cubes(&self) -> usize {
        self.cube_codes.len()
    }

    /// Voxels along one edge of a cube, `2^(N-T)`.
    pub fn cube_side(&self) -> u32 {
        1 << (self.resolution_bits - self.cube_bits)
    }

    pub fn voxels_per_cube(&self) -> u64 {
        1u64 << (3 * (self.resolution_bits - self.cube_bits))
    }

    /// `|W| * 2^(3(N-T))`.
    pub fn num_candidates(&self) -> u64 {
        self.cube_codes.len() as u64 * self.voxels_per_cube()
    }

    pub fn contains_cube(&self, cube: [u32; 3]) -> bool {
        self.cube_codes.binary_search(&morton_encode(cube)).is_ok()
    }

    pub fn contains_voxel(&self, x: [u32; 3]) -> bool {
        self.contains_cube(cube_of(x, self.resolution_bits, self.cube_bits))
    }

    /// Voxel number `local` (Morton order inside the cube) of the `cube_index`-th cube.
    pub fn voxel_at(&self, cube_index: usize, local: u64) -> [u32; 3] {
        let cube = morton_decode(self.cube_codes[cube_index]);
        let offset = morton_decode(local);
        let side = self.cube_side();
        [cube[0] * side + offset[0], cube[1] * side + offset[1], cube[2] * side + offset[2]]
    }

    /// Streams every candidate voxel exactly once: cubes in Morton order and
    /// voxels in Morton order inside each cube, which is global Morton order.
    pub fn candidates(&self) -> Candidates<'_> {
        Candidates { partition: self, cube: 0, local: 0 }
    }
}

pub struct Candidates<'a> {
    partition: &'a Partition,
    cube: usize,
    local: u64,
}

impl Iterator for Candidates<'_> {
    type Item = [u32; 3];

    fn next(&mut self) -> Option<[u32; 3]> {
        if self.cube >= self.partition.num_cubes() {
            return None;
        }
        let v = self.partition.voxel_at(self.cube, self.local);
        self.local += 1;
        if self.local == self.partition.voxels_per_cube() {
            self.local = 0;
            self.cube += 1;
        }
        Some(v)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let total = self.partition.num_candidates();
        let done = self.cube as u64 * self.partition.voxels_per_cube() + self.local;
        let left = (total - done) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for Candidates<'_> {}

/// Result of a nearest-neighbor query.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    /// Position of the point in the slice the index was built from.
    pub index: usize,
    pub point: [u32; 3],
    pub squared_distance: u64,
}

/// Static kd-tree over integer points with exact distances.
///
/// Among equidistant points the one with the smallest Morton code wins.
#[derive(Clone, Debug)]
pub struct NeighborIndex {
    // Balanced implicit tree: the node of range [lo, hi) sits at (lo + hi) / 2.
    points: Vec<[u32; 3]>,
    codes: Vec<u64>,
    original: Vec<usize>,
    axes: Vec<u8>,
}

impl NeighborIndex {
    pub fn new(points: &[[u32; 3]]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build_tree(points, &mut order, &mut axes, 0);
        Self {
            points: order.iter().map(|&i| points[i]).collect(),
            codes: order.iter().map(|&i| morton_encode(points[i])).collect(),
            original: order,
            axes,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Closest indexed point, or `None` if the index is empty.
    pub fn nearest(&self, query: [u32; 3]) -> Option<Neighbor> {
        if self.points.is_empty() {
            return None;
        }
        let q = [i64::from(query[0]), i64::from(query[1]), i64::from(query[2])];
        let mut best = Best { d2: u64::MAX, code: u64::MAX, slot: usize::MAX };
        self.search(0, self.points.len(), q, &mut best);
        Some(Neighbor {
            index: self.original[best.slot],
            point: self.points[best.slot],
            squared_distance: best.d2,
        })
    }

    fn search(&self, lo: usize, hi: usize, q: [i64; 3], best: &mut Best) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let p = self.points[mid];
        let d2: u64 = (0..3).map(|a| (q[a] - i64::from(p[a])).pow(2) as u64).sum();
        if (d2, self.codes[mid]) < (best.d2, best.code) {
            *best = Best { d2, code: self.codes[mid], slot: mid };
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - i64::from(p[axis]);
        let (near, far) = if diff < 0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, q, best);
        if (diff * diff) as u64 <= best.d2 {
            self.search(far.0, far.1, q, best);
        }
    }
}

struct Best {
    d2: u64,
    code: u64,
    slot: usize,
}

fn build_tree(points: &[[u32; 3]], order: &mut [usize], axes: &mut [u8], depth: usize) {
    if order.is_empty() {
        return;
    }
    let axis = widest_axis(points, order).unwrap_or(depth % 3);
    let mid = order.len() / 2;
    order.select_nth_unstable_by_key(mid, |&i| points[i][axis]);
    axes[mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (left_axes, rest_axes) = axes.split_at_mut(mid);
    build_tree(points, left, left_axes, depth + 1);
    build_tree(points, &mut rest[1..], &mut rest_axes[1..], depth + 1);
}

fn widest_axis(points: &[[u32; 3]], order: &[usize]) -> Option<usize> {
    let mut lo = [u32::MAX; 3];
    let mut hi = [0u32; 3];
    for &i in order {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let spans = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let best = (0..3).max_by_key(|&a| (spans[a], std::cmp::Reverse(a)))?;
    (spans[best] > 0).then_some(best)
}
