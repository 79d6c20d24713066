use serde::{Deserialize, Serialize};

use crate::volume::Volume3D;

pub const CONTEXT_WIDTH: usize = 64;

/// Where contextual patches are sampled around a voxel.
///
/// Patch centres sit at `v + round(r·cos α, r·sin α, 0)` for every radius
/// and angle; each patch is 3×3×1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSamplingSpec {
    pub angles_deg: Vec<f64>,
    pub radii: Vec<f64>,
}

impl Default for ContextSamplingSpec {
    fn default() -> Self {
        ContextSamplingSpec {
            angles_deg: (0..8).map(|k| 45.0 * k as f64).collect(),
            radii: vec![4.0, 8.0, 16.0, 32.0],
        }
    }
}

impl ContextSamplingSpec {
    pub fn n_regions(&self) -> usize {
        self.angles_deg.len() * self.radii.len()
    }

    /// Integer in-plane offsets, radius-major then angle.
    pub fn offsets(&self) -> Vec<[i64; 2]> {
        let mut out = Vec::with_capacity(self.n_regions());
        for &r in &self.radii {
            for &a in &self.angles_deg {
                let t = a.to_radians();
                out.push([(r * t.cos()).round() as i64, (r * t.sin()).round() as i64]);
            }
        }
        out
    }
}

/// Context descriptor: for each region, `d = μ_P − I_v` followed by
/// `b = 1` if `I_v < μ_P` else `0`. Regions are radius-major, angle-minor.
pub fn contextual_features(v: usize, img: &Volume3D, spec: &ContextSamplingSpec) -> Vec<f64> {
    let [x, y, z] = img.grid().coords(v).map(|c| c as i64);
    let centre = f64::from(img.get_clamped(x, y, z));
    let mut out = Vec::with_capacity(2 * spec.n_regions());
    for [ox, oy] in spec.offsets() {
        let (cx, cy) = (x + ox, y + oy);
        let mut sum = 0.0f64;
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                sum += f64::from(img.get_clamped(cx + dx, cy + dy, z));
            }
        }
        out.push(sum / 9.0 - centre);
        // compare the sum, not the rounded mean, so the bit is exact
        out.push(if 9.0 * centre < sum { 1.0 } else { 0.0 });
    }
    out
}
