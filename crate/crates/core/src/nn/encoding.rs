use std::f64::consts::PI;

use super::matrix::Matrix;

/// Maps a grid coordinate to `[-1, 1]` using the full grid extent `2^N - 1`.
pub fn normalize_coordinate(x: [u32; 3], resolution_bits: u32) -> [f64; 3] {
    let max = ((1u64 << resolution_bits) - 1) as f64;
    [2.0 * x[0] as f64 / max - 1.0, 2.0 * x[1] as f64 / max - 1.0, 2.0 * x[2] as f64 / max - 1.0]
}

pub fn encoded_width(num_frequencies: usize) -> usize {
    3 * (2 * num_frequencies + 1)
}

/// Sinusoidal features of one coordinate, laid out as
/// `[x~ | sin(2^0 pi x~) .. sin(2^(L-1) pi x~) | cos(2^0 pi x~) .. cos(2^(L-1) pi x~)]`
/// with the three axes adjacent inside every frequency.
pub fn positional_encode(x: [u32; 3], resolution_bits: u32, num_frequencies: usize) -> Vec<f64> {
    let mut out = vec![0.0; encoded_width(num_frequencies)];
    encode_into(normalize_coordinate(x, resolution_bits), num_frequencies, &mut out);
    out
}

fn encode_into(xn: [f64; 3], num_frequencies: usize, out: &mut [f64]) {
    out[..3].copy_from_slice(&xn);
    let cos_base = 3 + 3 * num_frequencies;
    for l in 0..num_frequencies {
        let freq = (1u64 << l) as f64 * PI;
        for a in 0..3 {
            let (s, c) = (freq * xn[a]).sin_cos();
            out[3 + 3 * l + a] = s;
            out[cos_base + 3 * l + a] = c;
        }
    }
}

/// Encodes a batch of coordinates into a `len x 3(2L+1)` matrix.
pub fn encode_batch(coords: &[[u32; 3]], resolution_bits: u32, num_frequencies: usize) -> Matrix {
    let width = encoded_width(num_frequencies);
    let mut m = Matrix::zeros(coords.len(), width);
    for (r, &x) in coords.iter().enumerate() {
        encode_into(normalize_coordinate(x, resolution_bits), num_frequencies, m.row_mut(r));
    }
    m
}
