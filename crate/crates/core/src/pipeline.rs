//! Training and classification workflows, post-processing, and the
//! leave-one-out harness.

use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use ndarray::{concatenate, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{self, FeatureMatrix, FeatureSetId, Scaling};
use crate::metrics::{self, EvalInputs, EvalReport, RocThresholds};
use crate::roi::{self, SpdmRoi};
use crate::sdae::{self, SdaeModel, TrainConfig, TrainingLog};
use crate::volume::{LabelMap, Volume3D};

/// One subject: image plus reference labels per organ.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub image: Volume3D,
    /// Reference standard per organ.
    pub labels: BTreeMap<String, LabelMap>,
    /// Individual rater contours per organ, when available.
    pub raters: BTreeMap<String, Vec<LabelMap>>,
}

impl CaseRecord {
    pub fn validate(&self) -> Result<()> {
        let grid = self.image.grid();
        for (organ, l) in &self.labels {
            grid.ensure_same(l.grid(), &format!("{} label {organ}", self.case_id))?;
        }
        for (organ, rs) in &self.raters {
            for r in rs {
                grid.ensure_same(r.grid(), &format!("{} rater {organ}", self.case_id))?;
            }
        }
        Ok(())
    }

    pub fn label(&self, organ: &str) -> Result<&LabelMap> {
        self.labels.get(organ).ok_or_else(|| {
            Error::InvalidArgument(format!("case {} has no label for {organ}", self.case_id))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    /// Gaussian sigma (voxels) of the SPDM smoothing kernel.
    pub spdm_sigma: f64,
    pub roi_threshold: f64,
    /// Class-1 probability above which a voxel is labelled organ.
    pub class_threshold: f64,
    pub roc_thresholds: RocThresholds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            spdm_sigma: roi::DEFAULT_SIGMA,
            roi_threshold: roi::DEFAULT_THRESHOLD,
            class_threshold: 0.5,
            roc_thresholds: RocThresholds::default(),
        }
    }
}

/// A trained per-organ model with the SPDM/ROI it was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedOrgan {
    pub model: SdaeModel,
    pub spdm_roi: SpdmRoi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub organ_id: String,
    /// Class-1 probability for every ROI voxel, ascending voxel index.
    pub raw_proba: Vec<(usize, f64)>,
    pub mask_pre: LabelMap,
    pub mask_post: LabelMap,
}

/// Training rows for one organ: all positive ROI voxels of every case plus
/// an equal number of uniformly drawn negatives.
pub fn balanced_rows(
    cases: &[&CaseRecord],
    organ: &str,
    set: FeatureSetId,
    spdm_roi: &SpdmRoi,
    seed: u64,
) -> Result<(FeatureMatrix, Vec<u8>)> {
    let mut blocks = Vec::with_capacity(cases.len());
    let mut labels = Vec::new();
    for case in cases {
        let fm = features::extract(set, &case.image, &spdm_roi.spdm, &spdm_roi.roi)?;
        let reference = case.label(organ)?;
        labels.extend(fm.voxel_index.iter().map(|&v| reference.data()[v]));
        blocks.push(fm);
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == 1).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == 0).collect();
    if positives.is_empty() {
        return Err(Error::DegenerateLabels(format!(
            "no {organ} voxels inside the ROI of the training cases"
        )));
    }
    if negatives.is_empty() {
        return Err(Error::DegenerateLabels(format!(
            "ROI of {organ} contains no background voxels"
        )));
    }
    let k = positives.len().min(negatives.len());
    let mut rng = sdae::rng_for(seed, 0xBA1A);
    let mut picked: Vec<usize> = sample(&mut rng, negatives.len(), k)
        .into_iter()
        .map(|i| negatives[i])
        .collect();
    picked.sort_unstable();

    let views: Vec<_> = blocks.iter().map(|b| b.rows.view()).collect();
    let all = concatenate(Axis(0), &views).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let all_index: Vec<usize> = blocks.iter().flat_map(|b| b.voxel_index.iter().copied()).collect();

    let chosen: Vec<usize> = positives.into_iter().chain(picked).collect();
    let y = chosen.iter().map(|&r| labels[r]).collect();
    let fm = FeatureMatrix {
        set_id: set,
        rows: all.select(Axis(0), &chosen),
        voxel_index: chosen.iter().map(|&r| all_index[r]).collect(),
        scaling: None,
    };
    Ok((fm, y))
}

/// Train one organ's model on `cases`. Only these cases contribute to the
/// SPDM, the scaling, and the network.
pub fn train_organ(
    cases: &[&CaseRecord],
    organ: &str,
    set: FeatureSetId,
    cfg: &PipelineConfig,
) -> Result<TrainedOrgan> {
    cfg.train.validate()?;
    if cases.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 cases, got {}",
            cases.len()
        )));
    }
    for c in cases {
        c.validate()?;
    }
    let labels: Vec<&LabelMap> = cases.iter().map(|c| c.label(organ)).collect::<Result<_>>()?;
    let spdm_roi = SpdmRoi::from_labels(organ, &labels, cfg.spdm_sigma, cfg.roi_threshold)?;
    if spdm_roi.roi.is_empty() {
        return Err(Error::Empty(format!("ROI for {organ} is empty")));
    }

    let (train_fm, y) = balanced_rows(cases, organ, set, &spdm_roi, cfg.train.seed)?;
    let scaling = Scaling::fit(&train_fm.rows)?;
    let x = scaling.apply(&train_fm.rows)?;
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    info!(
        "{organ}/{set}: {} training rows ({n_pos} positive), ROI {} voxels",
        y.len(),
        spdm_roi.roi.count()
    );

    let stack = sdae::pretrain_stack(&x, &cfg.train.hidden_sizes, &cfg.train)?;
    let pretrain_losses = stack.iter().map(|l| l.losses.clone()).collect();
    let encoders = stack.into_iter().map(|l| l.encoder).collect();
    let (network, finetune_losses) = sdae::finetune(encoders, &x, &y, &cfg.train)?;

    let mut training_log = TrainingLog {
        pretrain: pretrain_losses,
        finetune: finetune_losses,
        n_train_rows: y.len(),
        n_positive_rows: n_pos,
        warnings: Vec::new(),
    };
    training_log.check_convergence();
    for w in &training_log.warnings {
        log::warn!("{organ}/{set}: {w}");
    }

    Ok(TrainedOrgan {
        model: SdaeModel {
            organ_id: organ.to_string(),
            feature_set: set,
            network,
            scaling,
            seed: cfg.train.seed,
            training_log,
        },
        spdm_roi,
    })
}

/// Classify every ROI voxel of `image` and post-process the result.
pub fn segment(
    model: &SdaeModel,
    spdm_roi: &SpdmRoi,
    image: &Volume3D,
    class_threshold: f64,
) -> Result<SegmentationResult> {
    image.grid().ensure_same(spdm_roi.roi.grid(), "image vs ROI")?;
    if model.input_width() != model.feature_set.dimensionality() {
        return Err(Error::WidthMismatch {
            expected: model.feature_set.dimensionality(),
            found: model.input_width(),
        });
    }
    if spdm_roi.roi.is_empty() {
        let empty = LabelMap::empty(*image.grid());
        return Ok(SegmentationResult {
            organ_id: model.organ_id.clone(),
            raw_proba: Vec::new(),
            mask_pre: empty.clone(),
            mask_post: empty,
        });
    }
    let fm = features::extract(model.feature_set, image, &spdm_roi.spdm, &spdm_roi.roi)?;
    segment_features(model, &fm, &spdm_roi.roi, class_threshold)
}

/// Classify pre-extracted rows. Rows whose voxel lies outside `roi` are
/// never labelled.
pub fn segment_features(
    model: &SdaeModel,
    fm: &FeatureMatrix,
    roi: &LabelMap,
    class_threshold: f64,
) -> Result<SegmentationResult> {
    let proba = model.predict_proba(fm)?;
    let grid = *roi.grid();
    let mut mask_pre = LabelMap::empty(grid);
    let mut raw_proba = Vec::with_capacity(proba.len());
    for (&v, p) in fm.voxel_index.iter().zip(&proba) {
        if v >= grid.len() {
            return Err(Error::InvalidArgument(format!(
                "row voxel index {v} outside grid of {} voxels",
                grid.len()
            )));
        }
        raw_proba.push((v, p[1]));
        if p[1] > class_threshold && roi.is_set(v) {
            mask_pre.set(v, true);
        }
    }
    let mask_post = remove_small_blobs(&mask_pre);
    Ok(SegmentationResult {
        organ_id: model.organ_id.clone(),
        raw_proba,
        mask_pre,
        mask_post,
    })
}

/// 26-connected components in order of their smallest voxel index.
pub fn connected_components(mask: &LabelMap) -> Vec<Vec<usize>> {
    let grid = *mask.grid();
    let mut seen = vec![false; grid.len()];
    let mut comps = Vec::new();
    let mut queue = VecDeque::new();
    for start in mask.indices() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let [x, y, z] = grid.coords(i).map(|c| c as i64);
            for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny, nz) = (x + dx, y + dy, z + dz);
                        if !grid.contains(nx, ny, nz) {
                            continue;
                        }
                        let j = grid.index(nx as usize, ny as usize, nz as usize);
                        if !seen[j] && mask.is_set(j) {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Keep only the largest 26-connected component. Equal sizes resolve to
/// the component holding the smallest voxel index.
pub fn remove_small_blobs(mask: &LabelMap) -> LabelMap {
    let comps = connected_components(mask);
    let mut best: Option<&Vec<usize>> = None;
    for c in &comps {
        if best.is_none_or(|b| c.len() > b.len()) {
            best = Some(c);
        }
    }
    LabelMap::from_indices(*mask.grid(), best.into_iter().flatten().copied())
}

/// Result of one leave-one-out fold.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub case_id: String,
    pub trained: TrainedOrgan,
    pub segmentation: SegmentationResult,
    pub report: EvalReport,
    /// Dice of the mask before blob removal.
    pub dsc_pre: f64,
}

/// Train on every case but `held_out`, then segment and score it.
pub fn run_fold(
    cases: &[CaseRecord],
    held_out: usize,
    organ: &str,
    set: FeatureSetId,
    cfg: &PipelineConfig,
) -> Result<FoldOutcome> {
    let train: Vec<&CaseRecord> = cases
        .iter()
        .enumerate()
        .filter_map(|(i, c)| (i != held_out).then_some(c))
        .collect();
    let test = &cases[held_out];
    let trained = train_organ(&train, organ, set, cfg)?;
    let segmentation = segment(
        &trained.model,
        &trained.spdm_roi,
        &test.image,
        cfg.class_threshold,
    )?;
    let reference = test.label(organ)?;
    let report = metrics::evaluate(EvalInputs {
        case_id: &test.case_id,
        organ_id: organ,
        auto: &segmentation.mask_post,
        auto_pre: Some(&segmentation.mask_pre),
        reference,
        domain: Some(&trained.spdm_roi.roi),
        thresholds: cfg.roc_thresholds,
    })?;
    let dsc_pre = metrics::dice(&segmentation.mask_pre, reference)?;
    info!(
        "fold {}: {organ}/{set} dsc {:.4} (pre {:.4})",
        test.case_id, report.dsc, dsc_pre
    );
    Ok(FoldOutcome {
        case_id: test.case_id.clone(),
        trained,
        segmentation,
        report,
        dsc_pre,
    })
}

/// Leave-one-out cross-validation over `cases`, folds in case order.
///
/// `jobs > 1` runs folds on a dedicated thread pool; each fold is
/// deterministic so the outcome does not depend on `jobs`.
pub fn loocv(
    cases: &[CaseRecord],
    organ: &str,
    set: FeatureSetId,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<Vec<FoldOutcome>> {
    use rayon::prelude::*;
    if cases.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "leave-one-out needs at least 3 cases, got {}",
            cases.len()
        )));
    }
    let run = || -> Result<Vec<FoldOutcome>> {
        (0..cases.len())
            .into_par_iter()
            .with_max_len(1)
            .map(|i| run_fold(cases, i, organ, set, cfg))
            .collect()
    };
    if jobs <= 1 {
        (0..cases.len())
            .map(|i| run_fold(cases, i, organ, set, cfg))
            .collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        pool.install(run)
    }
}

/// Write `model.sdae.json`, `mask_pre.lbl`, `mask_post.lbl` and
/// `report.json` for one fold into `dir`.
pub fn write_fold(dir: &Path, outcome: &FoldOutcome) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    sdae::save_model(&outcome.trained.model, dir.join("model.sdae.json"))?;
    outcome.segmentation.mask_pre.save(dir.join("mask_pre.lbl"))?;
    outcome.segmentation.mask_post.save(dir.join("mask_post.lbl"))?;
    let report = dir.join("report.json");
    fs::write(&report, serde_json::to_string_pretty(&outcome.report)?)
        .map_err(|e| Error::io(&report, e))?;
    Ok(())
}

/// Lay out folds as `<root>/<organ>/<case_id>/...`. Returns the fold dirs.
pub fn write_run(root: &Path, organ: &str, outcomes: &[FoldOutcome]) -> Result<Vec<PathBuf>> {
    outcomes
        .iter()
        .map(|o| {
            let dir = root.join(organ).join(&o.case_id);
            write_fold(&dir, o).map(|_| dir)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn grid(d: [usize; 3]) -> Grid {
        Grid::new(d, [1.0; 3]).unwrap()
    }

    #[test]
    fn blobs_keep_largest() {
        let g = grid([20, 20, 5]);
        assert!(remove_small_blobs(&LabelMap::empty(g)).is_empty());

        let big = LabelMap::from_fn(g, |x, y, z| x < 10 && y < 10 && z == 0);
        let mut both = big.clone();
        for i in [g.index(15, 15, 3), g.index(16, 15, 3), g.index(17, 16, 4)] {
            both.set(i, true);
        }
        assert_eq!(big.count(), 100);
        assert_eq!(connected_components(&both).len(), 2);
        assert_eq!(remove_small_blobs(&both), big);
        assert_eq!(remove_small_blobs(&big), big);
    }

    #[test]
    fn blobs_diagonal_is_connected_and_ties_break_low() {
        let g = grid([6, 6, 6]);
        let diag = LabelMap::from_indices(g, (0..6).map(|k| g.index(k, k, k)));
        assert_eq!(connected_components(&diag).len(), 1);

        let a = LabelMap::from_indices(g, [g.index(5, 5, 5), g.index(0, 0, 0), g.index(1, 0, 0)]);
        let mut two = a.clone();
        two.set(g.index(4, 5, 5), true);
        let kept = remove_small_blobs(&two);
        assert_eq!(kept.indices(), vec![g.index(0, 0, 0), g.index(1, 0, 0)]);
    }

    #[test]
    fn empty_roi_gives_empty_masks() {
        let g = grid([8, 8, 8]);
        let sr = SpdmRoi {
            organ_id: "x".into(),
            spdm: Volume3D::filled(g, 0.0),
            roi: LabelMap::empty(g),
        };
        let model = crate::sdae::SdaeModel {
            organ_id: "x".into(),
            feature_set: FeatureSetId::Classical,
            network: crate::sdae::Network {
                encoders: vec![crate::sdae::LayerParams::zeros(137, 3)],
                softmax: crate::sdae::LayerParams::zeros(3, 2),
            },
            scaling: Scaling {
                min: vec![0.0; 137],
                max: vec![1.0; 137],
            },
            seed: 0,
            training_log: TrainingLog::default(),
        };
        let r = segment(&model, &sr, &Volume3D::filled(g, 1.0), 0.5).unwrap();
        assert!(r.mask_pre.is_empty() && r.mask_post.is_empty());
        assert!(r.raw_proba.is_empty());
    }
}
