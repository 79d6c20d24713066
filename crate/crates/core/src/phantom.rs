//! Synthetic multi-case datasets.
//!
//! Each case holds a smooth background, one bright structure per organ
//! archetype, additive Gaussian noise, the exact rasterized reference mask of
//! every organ, and several simulated rater contours. Organs are jittered in
//! position and size from case to case.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{remove_small_blobs, CaseRecord};
use crate::sdae::rng_for;
use crate::volume::{Grid, LabelMap, Volume3D};

/// Organ morphology classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    /// Elongated tube, nerve-like.
    Tube,
    /// Small ellipsoid, gland-like.
    Ellipsoid,
    /// Thin vertical cylinder, stalk-like.
    Stalk,
    /// Two crossing tubes, chiasm-like.
    Chiasm,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::Tube,
        Archetype::Ellipsoid,
        Archetype::Stalk,
        Archetype::Chiasm,
    ];

    /// Organ id used for labels, models and run directories.
    pub fn organ_id(self) -> &'static str {
        match self {
            Archetype::Tube => "nerve",
            Archetype::Ellipsoid => "gland",
            Archetype::Stalk => "stalk",
            Archetype::Chiasm => "chiasm",
        }
    }

    /// Nominal shape on a grid of `dims` voxels.
    fn nominal(self, dims: [usize; 3]) -> Shape {
        let at = |f: [f64; 3]| [f[0] * dims[0] as f64, f[1] * dims[1] as f64, f[2] * dims[2] as f64];
        match self {
            Archetype::Tube => Shape::Capsules(vec![Capsule {
                a: at([0.20, 0.25, 0.50]),
                b: at([0.55, 0.35, 0.45]),
                radius: 2.2,
            }]),
            Archetype::Ellipsoid => Shape::Ellipsoid {
                centre: at([0.70, 0.70, 0.35]),
                semi_axes: [5.0, 4.0, 3.5],
            },
            Archetype::Stalk => Shape::Capsules(vec![Capsule {
                a: at([0.30, 0.72, 0.30]),
                b: at([0.30, 0.72, 0.62]),
                radius: 1.7,
            }]),
            Archetype::Chiasm => {
                let c = at([0.72, 0.28, 0.68]);
                let half = 8.0;
                let arm = |deg: f64| {
                    let t = deg.to_radians();
                    let d = [half * t.cos(), half * t.sin(), 0.0];
                    Capsule {
                        a: [c[0] - d[0], c[1] - d[1], c[2]],
                        b: [c[0] + d[0], c[1] + d[1], c[2]],
                        radius: 1.8,
                    }
                };
                Shape::Capsules(vec![arm(30.0), arm(-30.0)])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Capsule {
    a: [f64; 3],
    b: [f64; 3],
    radius: f64,
}

impl Capsule {
    fn contains(&self, p: [f64; 3]) -> bool {
        let ab = sub(self.b, self.a);
        let ap = sub(p, self.a);
        let len2 = dot(ab, ab);
        let t = if len2 == 0.0 {
            0.0
        } else {
            (dot(ap, ab) / len2).clamp(0.0, 1.0)
        };
        let closest = [self.a[0] + t * ab[0], self.a[1] + t * ab[1], self.a[2] + t * ab[2]];
        let d = sub(p, closest);
        dot(d, d) <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    Capsules(Vec<Capsule>),
    Ellipsoid { centre: [f64; 3], semi_axes: [f64; 3] },
}

impl Shape {
    fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Shape::Capsules(cs) => cs.iter().any(|c| c.contains(p)),
            Shape::Ellipsoid { centre, semi_axes } => {
                let mut s = 0.0;
                for a in 0..3 {
                    let d = (p[a] - centre[a]) / semi_axes[a];
                    s += d * d;
                }
                s <= 1.0
            }
        }
    }

    fn centre(&self) -> [f64; 3] {
        match self {
            Shape::Ellipsoid { centre, .. } => *centre,
            Shape::Capsules(cs) => {
                let mut s = [0.0; 3];
                for c in cs {
                    for a in 0..3 {
                        s[a] += (c.a[a] + c.b[a]) / (2 * cs.len()) as f64;
                    }
                }
                s
            }
        }
    }

    /// Scale about the shape centre, then translate.
    fn jittered(&self, scale: f64, shift: [f64; 3]) -> Shape {
        let c = self.centre();
        let map = |p: [f64; 3]| {
            [
                c[0] + (p[0] - c[0]) * scale + shift[0],
                c[1] + (p[1] - c[1]) * scale + shift[1],
                c[2] + (p[2] - c[2]) * scale + shift[2],
            ]
        };
        match self {
            Shape::Capsules(cs) => Shape::Capsules(
                cs.iter()
                    .map(|k| Capsule {
                        a: map(k.a),
                        b: map(k.b),
                        radius: k.radius * scale,
                    })
                    .collect(),
            ),
            Shape::Ellipsoid { centre, semi_axes } => Shape::Ellipsoid {
                centre: map(*centre),
                semi_axes: semi_axes.map(|s| s * scale),
            },
        }
    }

    /// Axis-aligned bounds `(lo, hi)` in voxel coordinates.
    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match self {
            Shape::Ellipsoid { centre, semi_axes } => (
                [0, 1, 2].map(|a| centre[a] - semi_axes[a]),
                [0, 1, 2].map(|a| centre[a] + semi_axes[a]),
            ),
            Shape::Capsules(cs) => {
                let mut lo = [f64::INFINITY; 3];
                let mut hi = [f64::NEG_INFINITY; 3];
                for c in cs {
                    for a in 0..3 {
                        lo[a] = lo[a].min(c.a[a].min(c.b[a]) - c.radius);
                        hi[a] = hi[a].max(c.a[a].max(c.b[a]) + c.radius);
                    }
                }
                (lo, hi)
            }
        }
    }

    fn rasterize(&self, grid: Grid) -> LabelMap {
        LabelMap::from_fn(grid, |x, y, z| self.contains([x as f64, y as f64, z as f64]))
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Minimum distance (voxels) between any organ and the grid border.
pub const GRID_MARGIN: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub organs: Vec<Archetype>,
    /// Organ intensity above background.
    pub contrast: f64,
    pub noise_sigma: f64,
    /// Per-case translation jitter in voxels; sizes jitter by ±5% per voxel
    /// of amplitude.
    pub deformation_amplitude: f64,
    pub n_cases: usize,
    pub n_raters: usize,
    /// Boundary perturbation of rater contours, in voxels.
    pub rater_disagreement: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        default_suite()
    }
}

/// 8 cases on a 64×64×48 grid at 1 mm with all four archetypes.
pub fn default_suite() -> PhantomSpec {
    PhantomSpec {
        dims: [64, 64, 48],
        spacing_mm: [1.0; 3],
        organs: Archetype::ALL.to_vec(),
        contrast: 0.3,
        noise_sigma: 0.05,
        deformation_amplitude: 2.0,
        n_cases: 8,
        n_raters: 3,
        rater_disagreement: 1,
        seed: 2017,
    }
}

impl PhantomSpec {
    fn scale_range(&self) -> f64 {
        0.05 * self.deformation_amplitude
    }

    pub fn validate(&self) -> Result<Grid> {
        let grid = Grid::new(self.dims, self.spacing_mm)?;
        if self.contrast.is_nan() || self.contrast <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "contrast must be positive, got {}",
                self.contrast
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.deformation_amplitude >= 0.0) {
            return Err(Error::InvalidArgument(
                "noise and deformation must be non-negative".into(),
            ));
        }
        if self.n_cases == 0 || self.organs.is_empty() {
            return Err(Error::InvalidArgument("need at least one case and organ".into()));
        }
        let smax = 1.0 + self.scale_range();
        for &o in &self.organs {
            let shape = o.nominal(self.dims).jittered(smax, [0.0; 3]);
            let (lo, hi) = shape.bounds();
            for a in 0..3 {
                let reach_lo = lo[a] - self.deformation_amplitude;
                let reach_hi = hi[a] + self.deformation_amplitude;
                if reach_lo < GRID_MARGIN || reach_hi > self.dims[a] as f64 - 1.0 - GRID_MARGIN {
                    return Err(Error::OrganOutsideGrid {
                        organ: o.organ_id().to_string(),
                    });
                }
            }
        }
        Ok(grid)
    }
}

fn background(dims: [usize; 3], x: usize, y: usize, z: usize) -> f64 {
    let fx = x as f64 / dims[0] as f64;
    let fy = y as f64 / dims[1] as f64;
    let fz = z as f64 / dims[2] as f64;
    0.4 + 0.05 * (2.0 * PI * fx).sin() * (2.0 * PI * fy).cos() + 0.03 * fz
}

fn symmetric(rng: &mut ChaCha8Rng, amp: f64) -> f64 {
    if amp > 0.0 {
        rng.random_range(-amp..=amp)
    } else {
        0.0
    }
}

/// 6-connected dilation (`grow`) or erosion of `mask`; each changed voxel is
/// accepted with probability ½.
fn perturb_once(mask: &LabelMap, grow: bool, rng: &mut ChaCha8Rng) -> LabelMap {
    let grid = *mask.grid();
    let mut out = mask.clone();
    for i in 0..grid.len() {
        let [x, y, z] = grid.coords(i).map(|c| c as i64);
        let on = mask.is_set(i);
        if on == grow {
            continue;
        }
        let mut touches = false;
        for (dx, dy, dz) in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)] {
            let (nx, ny, nz) = (x + dx, y + dy, z + dz);
            let n_on = grid.contains(nx, ny, nz)
                && mask.is_set(grid.index(nx as usize, ny as usize, nz as usize));
            if n_on == grow {
                touches = true;
                break;
            }
        }
        if touches && rng.random::<bool>() {
            out.set(i, grow);
        }
    }
    out
}

fn rater_mask(reference: &LabelMap, disagreement: usize, rng: &mut ChaCha8Rng) -> LabelMap {
    let mut m = reference.clone();
    for _ in 0..disagreement {
        let grow = rng.random::<bool>();
        m = perturb_once(&m, grow, rng);
    }
    let m = remove_small_blobs(&m);
    if m.is_empty() {
        reference.clone()
    } else {
        m
    }
}

fn generate_case(spec: &PhantomSpec, grid: Grid, index: usize) -> Result<CaseRecord> {
    let mut rng = rng_for(spec.seed, index as u64 + 1);
    let mut labels = BTreeMap::new();
    for &o in &spec.organs {
        let scale = 1.0 + symmetric(&mut rng, spec.scale_range());
        let shift = [0, 1, 2].map(|_| symmetric(&mut rng, spec.deformation_amplitude));
        let shape = o.nominal(spec.dims).jittered(scale, shift);
        labels.insert(o.organ_id().to_string(), shape.rasterize(grid));
    }

    let mut inside = vec![false; grid.len()];
    for m in labels.values() {
        for i in m.indices() {
            inside[i] = true;
        }
    }
    let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut k = 0;
    let image = Volume3D::from_fn(grid, |x, y, z| {
        let mut v = background(spec.dims, x, y, z);
        if inside[k] {
            v += spec.contrast;
        }
        if spec.noise_sigma > 0.0 {
            v += noise.sample(&mut rng);
        }
        k += 1;
        v as f32
    })?;

    let mut raters = BTreeMap::new();
    for (organ, reference) in &labels {
        let rs = (0..spec.n_raters)
            .map(|_| rater_mask(reference, spec.rater_disagreement, &mut rng))
            .collect();
        raters.insert(organ.clone(), rs);
    }

    Ok(CaseRecord {
        case_id: format!("case_{index:02}"),
        image,
        labels,
        raters,
    })
}

/// Generate every case of `spec`. Cases use independent seeded streams, so
/// the output does not depend on thread scheduling.
pub fn generate(spec: &PhantomSpec) -> Result<Vec<CaseRecord>> {
    let grid = spec.validate()?;
    (0..spec.n_cases)
        .into_par_iter()
        .map(|i| generate_case(spec, grid, i))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub spec: Option<PhantomSpec>,
    pub organs: Vec<String>,
    pub n_raters: usize,
    pub cases: Vec<ManifestCase>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestCase {
    pub case_id: String,
    /// Paths relative to the manifest directory.
    pub image: String,
    pub labels: BTreeMap<String, String>,
    pub raters: BTreeMap<String, Vec<String>>,
}

/// Write cases in the volume format plus `manifest.json`.
pub fn write_dataset(cases: &[CaseRecord], spec: Option<&PhantomSpec>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(cases.len());
    let mut organs: Vec<String> = Vec::new();
    let mut n_raters = 0;
    for case in cases {
        let cdir = dir.join(&case.case_id);
        fs::create_dir_all(&cdir).map_err(|e| Error::io(&cdir, e))?;
        let image = format!("{}/image.vol", case.case_id);
        case.image.save(dir.join(&image))?;
        let mut labels = BTreeMap::new();
        for (organ, l) in &case.labels {
            let p = format!("{}/{organ}.lbl", case.case_id);
            l.save(dir.join(&p))?;
            labels.insert(organ.clone(), p);
            if !organs.contains(organ) {
                organs.push(organ.clone());
            }
        }
        let mut raters = BTreeMap::new();
        for (organ, rs) in &case.raters {
            let mut paths = Vec::new();
            for (r, l) in rs.iter().enumerate() {
                let p = format!("{}/{organ}.rater{}.lbl", case.case_id, r + 1);
                l.save(dir.join(&p))?;
                paths.push(p);
            }
            n_raters = n_raters.max(rs.len());
            raters.insert(organ.clone(), paths);
        }
        entries.push(ManifestCase {
            case_id: case.case_id.clone(),
            image,
            labels,
            raters,
        });
    }
    let manifest = Manifest {
        spec: spec.cloned(),
        organs,
        n_raters,
        cases: entries,
    };
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Vec<CaseRecord>> {
    let path = dir.join("manifest.json");
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    manifest
        .cases
        .into_iter()
        .map(|c| {
            let image = Volume3D::load(dir.join(&c.image))?;
            let labels = c
                .labels
                .iter()
                .map(|(o, p)| Ok((o.clone(), LabelMap::load(dir.join(p))?)))
                .collect::<Result<_>>()?;
            let raters = c
                .raters
                .iter()
                .map(|(o, ps)| {
                    let maps = ps
                        .iter()
                        .map(|p| LabelMap::load(dir.join(p)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((o.clone(), maps))
                })
                .collect::<Result<_>>()?;
            let case = CaseRecord {
                case_id: c.case_id,
                image,
                labels,
                raters,
            };
            case.validate()?;
            Ok(case)
        })
        .collect()
}
