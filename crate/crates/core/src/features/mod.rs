//! Per-voxel feature vectors.
//!
//! Four feature sets are supported, each a concatenation of fixed-order
//! blocks:
//!
//! | set        | blocks                                     | width |
//! |------------|--------------------------------------------|-------|
//! | classical  | classical                                  | 137   |
//! | augmented  | classical, gradient patch, contextual      | 276   |
//! | textural   | classical, texture                         | 147   |
//! | aefv       | classical, gradient patch, contextual, texture | 286 |
//!
//! Block layouts are documented on the block functions. Every neighbourhood
//! access clamps to the border.

mod classical;
mod context;
mod gradient;
mod scaling;
mod texture;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roi::{spdm_centroid, DEFAULT_THRESHOLD};
use crate::volume::{sidecar_path, LabelMap, Volume3D};

pub use classical::{classical_features, CLASSICAL_WIDTH};
pub use context::{contextual_features, ContextSamplingSpec, CONTEXT_WIDTH};
pub use gradient::{gradient_patch_features, GRADIENT_PATCH_WIDTH};
pub use scaling::{apply_scaling, fit_scaling, Scaling};
pub use texture::{haar_detail_energies, texture_features, TEXTURE_WIDTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSetId {
    Classical,
    Augmented,
    Textural,
    AeFv,
}

impl FeatureSetId {
    pub const ALL: [FeatureSetId; 4] = [
        FeatureSetId::Classical,
        FeatureSetId::Augmented,
        FeatureSetId::Textural,
        FeatureSetId::AeFv,
    ];

    pub const fn dimensionality(self) -> usize {
        match self {
            FeatureSetId::Classical => CLASSICAL_WIDTH,
            FeatureSetId::Augmented => CLASSICAL_WIDTH + GRADIENT_PATCH_WIDTH + CONTEXT_WIDTH,
            FeatureSetId::Textural => CLASSICAL_WIDTH + TEXTURE_WIDTH,
            FeatureSetId::AeFv => {
                CLASSICAL_WIDTH + GRADIENT_PATCH_WIDTH + CONTEXT_WIDTH + TEXTURE_WIDTH
            }
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            FeatureSetId::Classical => "classical",
            FeatureSetId::Augmented => "augmented",
            FeatureSetId::Textural => "textural",
            FeatureSetId::AeFv => "aefv",
        }
    }

    fn has_augmented(self) -> bool {
        matches!(self, FeatureSetId::Augmented | FeatureSetId::AeFv)
    }

    fn has_texture(self) -> bool {
        matches!(self, FeatureSetId::Textural | FeatureSetId::AeFv)
    }
}

impl fmt::Display for FeatureSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureSetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" => Ok(FeatureSetId::Classical),
            "augmented" => Ok(FeatureSetId::Augmented),
            "textural" => Ok(FeatureSetId::Textural),
            "aefv" | "ae-fv" => Ok(FeatureSetId::AeFv),
            other => Err(Error::InvalidArgument(format!("unknown feature set '{other}'"))),
        }
    }
}

/// Feature rows for the voxels of an ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub set_id: FeatureSetId,
    /// `n_voxels × dimensionality(set_id)`.
    pub rows: Array2<f64>,
    /// Linear index (into the source grid) of the voxel behind each row.
    pub voxel_index: Vec<usize>,
    /// Set once the rows have been min–max scaled.
    pub scaling: Option<Scaling>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.ncols()
    }

    /// Keep only the listed rows, in the given order.
    pub fn select_rows(&self, which: &[usize]) -> FeatureMatrix {
        let rows = self.rows.select(ndarray::Axis(0), which);
        FeatureMatrix {
            set_id: self.set_id,
            rows,
            voxel_index: which.iter().map(|&r| self.voxel_index[r]).collect(),
            scaling: self.scaling.clone(),
        }
    }

    /// Write float32 row-major payload plus a JSON header with the set id,
    /// shape and voxel index of every row.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut payload = Vec::with_capacity(self.rows.len() * 4);
        for v in self.rows.iter() {
            payload.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        let header = MatrixHeader {
            set_id: self.set_id,
            n_rows: self.n_rows(),
            n_cols: self.n_cols(),
            voxel_index: Some(self.voxel_index.clone()),
        };
        fs::write(path, payload).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        fs::write(&side, serde_json::to_vec(&header)?).map_err(|e| Error::io(&side, e))?;
        Ok(())
    }

    /// Read a dump written by [`FeatureMatrix::save`]. Rows are numbered 0..n
    /// when the header carries no voxel index.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = sidecar_path(path);
        if !side.exists() {
            return Err(Error::MissingSidecar(side));
        }
        let header: MatrixHeader =
            serde_json::from_slice(&fs::read(&side).map_err(|e| Error::io(&side, e))?)?;
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let expected = header.n_rows * header.n_cols;
        if bytes.len() != expected * 4 {
            return Err(Error::LengthMismatch {
                expected,
                found: bytes.len() / 4,
            });
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        let rows = Array2::from_shape_vec((header.n_rows, header.n_cols), values)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let voxel_index = match header.voxel_index {
            Some(v) if v.len() != header.n_rows => {
                return Err(Error::LengthMismatch {
                    expected: header.n_rows,
                    found: v.len(),
                })
            }
            Some(v) => v,
            None => (0..header.n_rows).collect(),
        };
        Ok(FeatureMatrix {
            set_id: header.set_id,
            rows,
            voxel_index,
            scaling: None,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixHeader {
    set_id: FeatureSetId,
    n_rows: usize,
    n_cols: usize,
    #[serde(default)]
    voxel_index: Option<Vec<usize>>,
}

/// Feature row for one voxel.
///
/// `origin` anchors the spherical coordinates (voxel units).
pub fn voxel_features(
    set_id: FeatureSetId,
    v: usize,
    img: &Volume3D,
    spdm: &Volume3D,
    origin: [f64; 3],
) -> Vec<f64> {
    let spec = ContextSamplingSpec::default();
    let mut row = Vec::with_capacity(set_id.dimensionality());
    row.extend(classical_features(v, img, spdm, origin));
    if set_id.has_augmented() {
        row.extend(gradient_patch_features(v, img));
        row.extend(contextual_features(v, img, &spec));
    }
    if set_id.has_texture() {
        row.extend(texture_features(v, img));
    }
    debug_assert_eq!(row.len(), set_id.dimensionality());
    row
}

/// Extract one row per ROI voxel, ascending by linear index.
///
/// The spherical-coordinate origin is the centroid of the binarized SPDM.
pub fn extract(
    set_id: FeatureSetId,
    img: &Volume3D,
    spdm: &Volume3D,
    roi: &LabelMap,
) -> Result<FeatureMatrix> {
    img.grid().ensure_same(spdm.grid(), "image vs SPDM")?;
    img.grid().ensure_same(roi.grid(), "image vs ROI")?;
    let voxels = roi.indices();
    if voxels.is_empty() {
        return Err(Error::Empty("ROI has no voxels".into()));
    }
    let origin = spdm_centroid(spdm, DEFAULT_THRESHOLD);
    extract_at(set_id, img, spdm, &voxels, origin)
}

/// Extract rows for explicit voxel indices with an explicit origin.
pub fn extract_at(
    set_id: FeatureSetId,
    img: &Volume3D,
    spdm: &Volume3D,
    voxels: &[usize],
    origin: [f64; 3],
) -> Result<FeatureMatrix> {
    let d = set_id.dimensionality();
    let flat: Vec<f64> = voxels
        .par_iter()
        .flat_map_iter(|&v| voxel_features(set_id, v, img, spdm, origin))
        .collect();
    let rows = Array2::from_shape_vec((voxels.len(), d), flat)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(FeatureMatrix {
        set_id,
        rows,
        voxel_index: voxels.to_vec(),
        scaling: None,
    })
}
