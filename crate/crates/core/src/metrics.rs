//! Segmentation evaluation: overlap, surface distance, volume difference,
//! confusion counts, ROC sub-space verdicts, and majority-vote fusion.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Grid, LabelMap};

/// Voxel counts restricted to an evaluation domain.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// `TP/(TP+FN)`; 0 when the reference is empty.
    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// `TN/(TN+FP)`; 0 when the domain has no negatives.
    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    /// `2TP/(2TP+FP+FN)`, 1 when both masks are empty inside the domain.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }
}

fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

/// Dice similarity `2|a∩b|/(|a|+|b|)`; 1 when both masks are empty.
pub fn dice(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    a.grid().ensure_same(b.grid(), "dice")?;
    let mut inter = 0u64;
    let mut na = 0u64;
    let mut nb = 0u64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += u64::from(x & y);
        na += u64::from(x);
        nb += u64::from(y);
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok((2 * inter) as f64 / (na + nb) as f64)
}

/// `|V_auto − V_expert| / V_expert · 100` with volumes in mm³.
pub fn relative_volume_diff(auto: &LabelMap, expert: &LabelMap) -> Result<f64> {
    auto.grid().ensure_same(expert.grid(), "relative volume difference")?;
    let voxel = expert.grid().voxel_volume_mm3();
    let ve = expert.count() as f64 * voxel;
    if ve == 0.0 {
        return Err(Error::Empty("expert mask is empty".into()));
    }
    let va = auto.count() as f64 * voxel;
    Ok((va - ve).abs() / ve * 100.0)
}

/// Foreground voxels with at least one background 6-neighbour. Neighbours
/// outside the grid count as background.
pub fn boundary_voxels(mask: &LabelMap) -> Vec<[usize; 3]> {
    let grid = mask.grid();
    let mut out = Vec::new();
    for i in mask.indices() {
        let c = grid.coords(i);
        let [x, y, z] = c.map(|v| v as i64);
        let on = |x: i64, y: i64, z: i64| {
            grid.contains(x, y, z) && mask.is_set(grid.index(x as usize, y as usize, z as usize))
        };
        let interior = on(x - 1, y, z)
            && on(x + 1, y, z)
            && on(x, y - 1, z)
            && on(x, y + 1, z)
            && on(x, y, z - 1)
            && on(x, y, z + 1);
        if !interior {
            out.push(c);
        }
    }
    out
}

fn to_mm(grid: &Grid, pts: &[[usize; 3]]) -> Vec<[f64; 3]> {
    pts.iter()
        .map(|p| {
            [
                p[0] as f64 * grid.spacing[0],
                p[1] as f64 * grid.spacing[1],
                p[2] as f64 * grid.spacing[2],
            ]
        })
        .collect()
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Largest nearest-neighbour distance from `from` to `to`, squared.
///
/// Scans `to` for each point but stops as soon as a point closer than the
/// current maximum is found, since that point cannot raise the maximum.
fn directed_max_min2(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let mut cmax = 0.0f64;
    for a in from {
        let mut cmin = f64::INFINITY;
        for b in to {
            let d = dist2(a, b);
            if d < cmin {
                cmin = d;
                if cmin <= cmax {
                    break;
                }
            }
        }
        if cmin > cmax {
            cmax = cmin;
        }
    }
    cmax
}

/// Symmetric Hausdorff distance (mm) between the boundary voxel centres of
/// two masks.
pub fn hausdorff(a: &LabelMap, b: &LabelMap) -> Result<f64> {
    a.grid().ensure_same(b.grid(), "hausdorff")?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("Hausdorff distance of an empty mask".into()));
    }
    let pa = to_mm(a.grid(), &boundary_voxels(a));
    let pb = to_mm(b.grid(), &boundary_voxels(b));
    let d2 = directed_max_min2(&pa, &pb).max(directed_max_min2(&pb, &pa));
    Ok(d2.sqrt())
}

/// Voxelwise TP/TN/FP/FN counted only inside `domain`.
pub fn confusion(auto: &LabelMap, reference: &LabelMap, domain: &LabelMap) -> Result<Confusion> {
    auto.grid().ensure_same(reference.grid(), "confusion")?;
    auto.grid().ensure_same(domain.grid(), "confusion domain")?;
    let mut c = Confusion::default();
    for ((&a, &r), &d) in auto.data().iter().zip(reference.data()).zip(domain.data()) {
        if d == 0 {
            continue;
        }
        match (a != 0, r != 0) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Sub-space of the ROC plane an outcome falls into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RocQuadrant {
    /// Organ spared and target covered.
    Acceptable,
    /// Organ may be spared but target not covered.
    HighRisk,
    /// Target covered but organ not spared.
    Poor,
    /// Neither.
    Unacceptable,
}

/// Minimum sensitivity and specificity of the acceptable sub-space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RocThresholds {
    pub sensitivity: f64,
    pub specificity: f64,
}

impl Default for RocThresholds {
    fn default() -> Self {
        RocThresholds {
            sensitivity: 0.5,
            specificity: 0.5,
        }
    }
}

pub fn roc_quadrant(sensitivity: f64, specificity: f64, t: RocThresholds) -> RocQuadrant {
    match (sensitivity >= t.sensitivity, specificity >= t.specificity) {
        (true, true) => RocQuadrant::Acceptable,
        (true, false) => RocQuadrant::HighRisk,
        (false, true) => RocQuadrant::Poor,
        (false, false) => RocQuadrant::Unacceptable,
    }
}

/// Voxelwise mode of the rater masks; ties go to background.
pub fn majority_vote(labels: &[&LabelMap]) -> Result<LabelMap> {
    if labels.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "majority vote needs at least 2 label maps, got {}",
            labels.len()
        )));
    }
    let grid = *labels[0].grid();
    for l in &labels[1..] {
        grid.ensure_same(l.grid(), "majority vote")?;
    }
    let mut votes = vec![0usize; grid.len()];
    for l in labels {
        for (v, &x) in votes.iter_mut().zip(l.data()) {
            *v += usize::from(x);
        }
    }
    let n = labels.len();
    Ok(LabelMap::from_indices(
        grid,
        votes
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (2 * v > n).then_some(i)),
    ))
}

/// Per-case evaluation, serialized as `report.json`.
///
/// Overlap, surface and volume metrics score `auto` (the post-processed
/// mask); sensitivity, specificity and `counts` score the mask before
/// post-processing when one is supplied, counted inside the ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub case_id: String,
    pub organ_id: String,
    pub dsc: f64,
    /// `None` when the automatic mask is empty.
    pub hausdorff_mm: Option<f64>,
    pub rvd_percent: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub roc_quadrant: RocQuadrant,
    pub counts: Confusion,
}

pub struct EvalInputs<'a> {
    pub case_id: &'a str,
    pub organ_id: &'a str,
    pub auto: &'a LabelMap,
    /// Mask before post-processing; defaults to `auto`.
    pub auto_pre: Option<&'a LabelMap>,
    pub reference: &'a LabelMap,
    /// Counting domain for the confusion matrix; whole grid when `None`.
    pub domain: Option<&'a LabelMap>,
    pub thresholds: RocThresholds,
}

pub fn evaluate(inp: EvalInputs<'_>) -> Result<EvalReport> {
    let dsc = dice(inp.auto, inp.reference)?;
    let hausdorff_mm = if inp.auto.is_empty() {
        None
    } else {
        Some(hausdorff(inp.auto, inp.reference)?)
    };
    let rvd_percent = relative_volume_diff(inp.auto, inp.reference)?;
    let full;
    let domain = match inp.domain {
        Some(d) => d,
        None => {
            full = LabelMap::from_fn(*inp.reference.grid(), |_, _, _| true);
            &full
        }
    };
    let counts = confusion(inp.auto_pre.unwrap_or(inp.auto), inp.reference, domain)?;
    let sensitivity = counts.sensitivity();
    let specificity = counts.specificity();
    Ok(EvalReport {
        case_id: inp.case_id.to_string(),
        organ_id: inp.organ_id.to_string(),
        dsc,
        hausdorff_mm,
        rvd_percent,
        sensitivity,
        specificity,
        roc_quadrant: roc_quadrant(sensitivity, specificity, inp.thresholds),
        counts,
    })
}

/// Mean, sample standard deviation, min and max of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Summary {
            mean,
            sd,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

pub const SUMMARY_METRICS: [&str; 5] = [
    "dsc",
    "hausdorff_mm",
    "rvd_percent",
    "sensitivity",
    "specificity",
];

fn metric_values(reports: &[EvalReport], metric: &str) -> Vec<f64> {
    reports
        .iter()
        .filter_map(|r| match metric {
            "dsc" => Some(r.dsc),
            "hausdorff_mm" => r.hausdorff_mm,
            "rvd_percent" => Some(r.rvd_percent),
            "sensitivity" => Some(r.sensitivity),
            "specificity" => Some(r.specificity),
            _ => None,
        })
        .collect()
}

/// Summaries of every metric over a cohort.
pub fn summarize(reports: &[EvalReport]) -> Vec<(&'static str, Summary)> {
    SUMMARY_METRICS
        .iter()
        .filter_map(|&m| Summary::of(&metric_values(reports, m)).map(|s| (m, s)))
        .collect()
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub organ: String,
    pub set: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

pub fn summary_rows(organ: &str, set: &str, reports: &[EvalReport]) -> Vec<SummaryRow> {
    summarize(reports)
        .into_iter()
        .map(|(metric, s)| SummaryRow {
            organ: organ.to_string(),
            set: set.to_string(),
            metric: metric.to_string(),
            mean: s.mean,
            sd: s.sd,
            min: s.min,
            max: s.max,
        })
        .collect()
}

/// Write `organ,set,metric,mean,sd,min,max` rows with a header.
pub fn write_summary_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("summary.csv", e))?;
    Ok(())
}
