//! Deterministic test clouds.

use crate::pointset::VoxelCloud;
use crate::round_half_away;

/// Voxels within half a unit of a sphere of `radius` centered in the grid.
pub fn sphere_shell(resolution_bits: u32, radius: f64) -> VoxelCloud {
    let side = 1u32 << resolution_bits;
    let c = f64::from(side) / 2.0 - 0.5;
    let lo = (c - radius - 1.0).floor().max(0.0) as u32;
    let hi = ((c + radius + 1.0).ceil() as u32).min(side - 1);
    let mut voxels = Vec::new();
    for x in lo..=hi {
        for y in lo..=hi {
            for z in lo..=hi {
                let d = [x, y, z].map(|v| f64::from(v) - c);
                let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                if (r - radius).abs() < 0.5 {
                    voxels.push([x, y, z]);
                }
            }
        }
    }
    VoxelCloud::new(resolution_bits, voxels, None).expect("shell fits the grid")
}

/// [`sphere_shell`] painted with a smooth gradient: each channel ramps
/// linearly along one axis across the shell's extent.
pub fn colored_sphere_shell(resolution_bits: u32, radius: f64) -> VoxelCloud {
    let shell = sphere_shell(resolution_bits, radius);
    let c = f64::from(1u32 << resolution_bits) / 2.0 - 0.5;
    let ramp = |v: u32| round_half_away(((f64::from(v) - c) / radius * 0.5 + 0.5).clamp(0.0, 1.0) * 215.0 + 20.0) as u8;
    let colors = shell.voxels().iter().map(|&[x, y, z]| [ramp(x), ramp(y), 255 - ramp(z)]).collect();
    shell.with_colors(Some(colors)).expect("one color per voxel")
}

/// 200 voxels at 6-bit resolution: a radius-4 shell.
pub fn toy_shell() -> VoxelCloud {
    sphere_shell(6, 4.0)
}
