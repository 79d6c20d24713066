//! Spatial probability map (SPDM) and the region of interest derived from it.

use crate::error::{Error, Result};
use crate::volume::{Grid, LabelMap, Volume3D};

/// Default Gaussian sigma (voxels) of the 3×3×3 smoothing kernel.
pub const DEFAULT_SIGMA: f64 = 0.8;
/// SPDM values strictly above this become ROI seeds.
pub const DEFAULT_THRESHOLD: f64 = 0.005;

/// Per-organ probability map plus the binary ROI on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdmRoi {
    pub organ_id: String,
    pub spdm: Volume3D,
    pub roi: LabelMap,
}

impl SpdmRoi {
    /// Build the SPDM from training labels and derive its ROI.
    pub fn from_labels(
        organ_id: impl Into<String>,
        labels: &[&LabelMap],
        sigma: f64,
        threshold: f64,
    ) -> Result<Self> {
        let spdm = build_spdm(labels, sigma)?;
        let roi = build_roi_with_threshold(&spdm, threshold);
        Ok(SpdmRoi {
            organ_id: organ_id.into(),
            spdm,
            roi,
        })
    }

    /// Centroid (voxel coordinates) of the binarized SPDM.
    ///
    /// Falls back to the grid centre when nothing exceeds `threshold`.
    pub fn centroid(&self, threshold: f64) -> [f64; 3] {
        spdm_centroid(&self.spdm, threshold)
    }
}

pub fn spdm_centroid(spdm: &Volume3D, threshold: f64) -> [f64; 3] {
    let grid = spdm.grid();
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for (i, &v) in spdm.data().iter().enumerate() {
        if f64::from(v) > threshold {
            let c = grid.coords(i);
            for a in 0..3 {
                sum[a] += c[a] as f64;
            }
            n += 1;
        }
    }
    if n == 0 {
        return grid.dims.map(|d| (d as f64 - 1.0) / 2.0);
    }
    sum.map(|s| s / n as f64)
}

/// Normalized 3-tap Gaussian weights. `sigma <= 0` gives the identity kernel.
pub fn gaussian_taps(sigma: f64) -> [f64; 3] {
    if sigma <= 0.0 {
        return [0.0, 1.0, 0.0];
    }
    let side = (-1.0 / (2.0 * sigma * sigma)).exp();
    let total = 1.0 + 2.0 * side;
    [side / total, 1.0 / total, side / total]
}

/// Voxelwise mean of the labels smoothed by a 3×3×3 Gaussian.
///
/// The 3D kernel is the outer product of [`gaussian_taps`], applied as three
/// separable passes with clamp-to-border.
pub fn build_spdm(labels: &[&LabelMap], sigma: f64) -> Result<Volume3D> {
    let first = labels
        .first()
        .ok_or_else(|| Error::Empty("no label maps for SPDM".into()))?;
    let grid = *first.grid();
    for l in &labels[1..] {
        grid.ensure_same(l.grid(), "SPDM labels")?;
    }
    let mut acc = vec![0.0f64; grid.len()];
    for l in labels {
        for (a, &v) in acc.iter_mut().zip(l.data()) {
            *a += f64::from(v);
        }
    }
    let n = labels.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    let smoothed = smooth3(&grid, &acc, gaussian_taps(sigma));
    let data = smoothed
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0) as f32)
        .collect();
    Volume3D::new(grid, data)
}

pub(crate) fn smooth3(grid: &Grid, data: &[f64], taps: [f64; 3]) -> Vec<f64> {
    let mut cur = data.to_vec();
    let mut next = vec![0.0; data.len()];
    let [nx, ny, nz] = grid.dims;
    for axis in 0..3 {
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = [x as i64, y as i64, z as i64];
                    let mut s = 0.0;
                    for (k, w) in taps.iter().enumerate() {
                        let mut q = p;
                        q[axis] += k as i64 - 1;
                        s += w * cur[grid.clamped_index(q[0], q[1], q[2])];
                    }
                    next[grid.index(x, y, z)] = s;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// ROI with the default threshold.
pub fn build_roi(spdm: &Volume3D) -> LabelMap {
    build_roi_with_threshold(spdm, DEFAULT_THRESHOLD)
}

/// Binarize at `value > threshold`, then dilate once with a 3×3×3 box.
pub fn build_roi_with_threshold(spdm: &Volume3D, threshold: f64) -> LabelMap {
    let seeds = LabelMap::from_indices(
        *spdm.grid(),
        spdm.data()
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (f64::from(v) > threshold).then_some(i)),
    );
    dilate_box(&seeds)
}

/// One dilation with the 26-connected 3×3×3 box; voxels outside the grid
/// are ignored.
pub fn dilate_box(mask: &LabelMap) -> LabelMap {
    let grid = *mask.grid();
    let [nx, ny, nz] = grid.dims;
    let mut cur: Vec<u8> = mask.data().to_vec();
    let mut next = vec![0u8; cur.len()];
    // The box is separable: a max over each axis in turn.
    for axis in 0..3 {
        let n = grid.dims[axis];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let p = [x, y, z];
                    let c = p[axis];
                    let mut on = 0u8;
                    for q in c.saturating_sub(1)..=(c + 1).min(n - 1) {
                        let mut r = p;
                        r[axis] = q;
                        on |= cur[grid.index(r[0], r[1], r[2])];
                    }
                    next[grid.index(x, y, z)] = on;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    LabelMap::new(grid, cur).expect("dilation preserves binary values")
}
