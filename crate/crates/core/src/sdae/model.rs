use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sigmoid, softmax2, LayerParams};
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSetId, Scaling};

pub const MODEL_VERSION: u32 = 1;

/// Sigmoid encoder stack with a two-way softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub encoders: Vec<LayerParams>,
    pub softmax: LayerParams,
}

impl Network {
    pub fn input_width(&self) -> usize {
        self.encoders
            .first()
            .map_or(self.softmax.d_in(), LayerParams::d_in)
    }

    /// `[d_in, hidden..., 2]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_width()];
        sizes.extend(self.encoders.iter().map(LayerParams::d_out));
        sizes.push(self.softmax.d_out());
        sizes
    }

    /// Class probabilities for one row. Each row is computed on its own, so
    /// the result never depends on neighbouring rows.
    pub fn predict_row(&self, x: &[f64]) -> [f64; 2] {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.encoders {
            layer.affine_row(&cur, &mut next);
            for v in &mut next {
                *v = sigmoid(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        self.softmax.affine_row(&cur, &mut next);
        softmax2([next[0], next[1]])
    }

    pub fn predict_rows(&self, rows: &Array2<f64>) -> Vec<[f64; 2]> {
        let rows: Vec<_> = rows.rows().into_iter().collect();
        rows.par_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.predict_row(s),
                None => self.predict_row(&r.to_vec()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingLog {
    /// Mean reconstruction loss per epoch, one list per hidden layer.
    pub pretrain: Vec<Vec<f64>>,
    /// Mean cross-entropy per fine-tuning epoch.
    pub finetune: Vec<f64>,
    pub n_train_rows: usize,
    pub n_positive_rows: usize,
    /// Convergence monitor notes, e.g. a fine-tuning loss that did not drop.
    pub warnings: Vec<String>,
}

impl TrainingLog {
    /// Flag a fine-tuning curve whose last five epochs do not improve on the
    /// first epoch.
    pub fn check_convergence(&mut self) {
        if let Some(w) = trend_warning("fine-tuning", &self.finetune) {
            self.warnings.push(w);
        }
        for (k, curve) in self.pretrain.iter().enumerate() {
            if let Some(w) = trend_warning(&format!("pre-training layer {k}"), curve) {
                self.warnings.push(w);
            }
        }
    }
}

fn trend_warning(what: &str, curve: &[f64]) -> Option<String> {
    let first = *curve.first()?;
    let tail = &curve[curve.len().saturating_sub(5)..];
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    (curve.len() > 1 && tail_mean >= first).then(|| {
        format!("{what} loss did not decrease: first {first:.6}, last-5 mean {tail_mean:.6}")
    })
}

/// Trained per-organ classifier with everything needed to apply it.
#[derive(Debug, Clone, PartialEq)]
pub struct SdaeModel {
    pub organ_id: String,
    pub feature_set: FeatureSetId,
    pub network: Network,
    pub scaling: Scaling,
    pub seed: u64,
    pub training_log: TrainingLog,
}

impl SdaeModel {
    pub fn input_width(&self) -> usize {
        self.network.input_width()
    }

    /// Softmax `(background, organ)` probabilities per row.
    ///
    /// Unscaled matrices (`scaling == None`) are scaled with the model's
    /// scaling first; scaled matrices are used as they are.
    pub fn predict_proba(&self, fm: &FeatureMatrix) -> Result<Vec<[f64; 2]>> {
        if fm.n_cols() != self.input_width() {
            return Err(Error::WidthMismatch {
                expected: self.input_width(),
                found: fm.n_cols(),
            });
        }
        if fm.scaling.is_some() {
            Ok(self.network.predict_rows(&fm.rows))
        } else {
            Ok(self.network.predict_rows(&self.scaling.apply(&fm.rows)?))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(MODEL_VERSION) => {}
            Some(v) => {
                return Err(Error::Schema(format!(
                    "model version {v}, this build reads version {MODEL_VERSION}"
                )))
            }
            None => return Err(Error::Schema("missing version field".into())),
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        file.into_model()
    }
}

pub fn save_model(model: &SdaeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SdaeModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SdaeModel::from_json(&text)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    organ_id: String,
    feature_set: FeatureSetId,
    layer_sizes: Vec<usize>,
    /// Encoders in order, then the softmax layer.
    weights: Vec<LayerFile>,
    scaling: Scaling,
    seed: u64,
    training_log: TrainingLog,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl From<&LayerParams> for LayerFile {
    fn from(l: &LayerParams) -> Self {
        LayerFile {
            w: l.weights.rows().into_iter().map(|r| r.to_vec()).collect(),
            b: l.bias.to_vec(),
        }
    }
}

impl LayerFile {
    fn into_params(self, d_in: usize, d_out: usize) -> Result<LayerParams> {
        if self.w.len() != d_out || self.b.len() != d_out || self.w.iter().any(|r| r.len() != d_in)
        {
            return Err(Error::Schema(format!(
                "layer weights do not match declared shape {d_out}×{d_in}"
            )));
        }
        let flat: Vec<f64> = self.w.into_iter().flatten().collect();
        let params = LayerParams {
            weights: Array2::from_shape_vec((d_out, d_in), flat)
                .map_err(|e| Error::Schema(e.to_string()))?,
            bias: Array1::from(self.b),
        };
        if !params.is_finite() {
            return Err(Error::Schema("non-finite weights".into()));
        }
        Ok(params)
    }
}

impl From<&SdaeModel> for ModelFile {
    fn from(m: &SdaeModel) -> Self {
        let mut weights: Vec<LayerFile> = m.network.encoders.iter().map(LayerFile::from).collect();
        weights.push(LayerFile::from(&m.network.softmax));
        ModelFile {
            version: MODEL_VERSION,
            organ_id: m.organ_id.clone(),
            feature_set: m.feature_set,
            layer_sizes: m.network.layer_sizes(),
            weights,
            scaling: m.scaling.clone(),
            seed: m.seed,
            training_log: m.training_log.clone(),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<SdaeModel> {
        let sizes = &self.layer_sizes;
        if sizes.len() < 2 || sizes.len() != self.weights.len() + 1 {
            return Err(Error::Schema(format!(
                "{} layer sizes for {} weight blocks",
                sizes.len(),
                self.weights.len()
            )));
        }
        if sizes[sizes.len() - 1] != 2 {
            return Err(Error::Schema("output layer must have 2 units".into()));
        }
        if sizes[0] != self.feature_set.dimensionality() {
            return Err(Error::Schema(format!(
                "input width {} does not match feature set {} ({})",
                sizes[0],
                self.feature_set,
                self.feature_set.dimensionality()
            )));
        }
        if self.scaling.min.len() != sizes[0] || self.scaling.max.len() != sizes[0] {
            return Err(Error::Schema("scaling width does not match input width".into()));
        }
        let mut layers = Vec::with_capacity(self.weights.len());
        for (k, lf) in self.weights.into_iter().enumerate() {
            layers.push(lf.into_params(sizes[k], sizes[k + 1])?);
        }
        let softmax = layers.pop().expect("at least one layer");
        Ok(SdaeModel {
            organ_id: self.organ_id,
            feature_set: self.feature_set,
            network: Network {
                encoders: layers,
                softmax,
            },
            scaling: self.scaling,
            seed: self.seed,
            training_log: self.training_log,
        })
    }
}
