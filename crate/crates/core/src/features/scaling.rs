use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

/// Per-column `(min, max)` pairs for min–max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scaling {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Scaling {
    pub fn width(&self) -> usize {
        self.min.len()
    }

    /// Fit on training rows. A constant column gets `(min, min + 1)`.
    pub fn fit(rows: &Array2<f64>) -> Result<Scaling> {
        if rows.nrows() == 0 {
            return Err(Error::Empty("cannot fit scaling on zero rows".into()));
        }
        let mut min = vec![f64::INFINITY; rows.ncols()];
        let mut max = vec![f64::NEG_INFINITY; rows.ncols()];
        for row in rows.rows() {
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        for (lo, hi) in min.iter().zip(max.iter_mut()) {
            if *hi == *lo {
                *hi = *lo + 1.0;
            }
        }
        Ok(Scaling { min, max })
    }

    /// `(x − min)/(max − min)` clamped to [0, 1].
    pub fn apply(&self, rows: &Array2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.width() {
            return Err(Error::WidthMismatch {
                expected: self.width(),
                found: rows.ncols(),
            });
        }
        let mut out = rows.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.scale_value(j, *v);
            }
        }
        Ok(out)
    }

    #[inline]
    pub fn scale_value(&self, column: usize, x: f64) -> f64 {
        let lo = self.min[column];
        let hi = self.max[column];
        ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

pub fn fit_scaling(fm: &FeatureMatrix) -> Result<Scaling> {
    Scaling::fit(&fm.rows)
}

/// Scale a matrix and record the scaling on the result.
pub fn apply_scaling(fm: &FeatureMatrix, scaling: &Scaling) -> Result<FeatureMatrix> {
    Ok(FeatureMatrix {
        set_id: fm.set_id,
        rows: scaling.apply(&fm.rows)?,
        voxel_index: fm.voxel_index.clone(),
        scaling: Some(scaling.clone()),
    })
}
