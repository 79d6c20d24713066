//! Scalar volumes and binary label maps on a regular grid.
//!
//! Linear index order is x fastest: `i = x + nx * (y + ny * z)`. Every
//! out-of-bounds access in the crate clamps to the nearest border voxel.
//!
//! On disk a volume is a raw little-endian payload (`.vol` float32 or `.lbl`
//! uint8) next to a JSON sidecar with the same stem:
//!
//! ```json
//! {"dims":[nx,ny,nz],"spacing_mm":[sx,sy,sz],"dtype":"f32"}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Voxel counts and spacing shared by volumes and label maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    /// Millimetres per voxel along x, y, z.
    pub spacing: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "grid dims must be positive, got {dims:?}"
            )));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid spacing must be positive and finite, got {spacing:?}"
            )));
        }
        Ok(Grid { dims, spacing })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    /// Index of the voxel at signed coordinates, clamped to the border.
    #[inline]
    pub fn clamped_index(&self, x: i64, y: i64, z: i64) -> usize {
        let cx = x.clamp(0, self.dims[0] as i64 - 1) as usize;
        let cy = y.clamp(0, self.dims[1] as i64 - 1) as usize;
        let cz = z.clamp(0, self.dims[2] as i64 - 1) as usize;
        self.index(cx, cy, cz)
    }

    #[inline]
    pub fn contains(&self, x: i64, y: i64, z: i64) -> bool {
        x >= 0
            && y >= 0
            && z >= 0
            && (x as usize) < self.dims[0]
            && (y as usize) < self.dims[1]
            && (z as usize) < self.dims[2]
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub(crate) fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{what}: {:?}/{:?} vs {:?}/{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )));
        }
        Ok(())
    }

    /// Output grid of an isotropic resampling; dims round half up.
    pub fn isotropic(&self, target_mm: f64) -> Result<Grid> {
        if !target_mm.is_finite() || target_mm <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "target spacing must be positive, got {target_mm}"
            )));
        }
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let extent = self.dims[a] as f64 * self.spacing[a] / target_mm;
            dims[a] = (extent + 0.5).floor() as usize;
        }
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "resampling to {target_mm} mm gives degenerate dims {dims:?}"
            )));
        }
        Ok(Grid {
            dims,
            spacing: [target_mm; 3],
        })
    }
}

/// Scalar 3D image. Values are finite `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    grid: Grid,
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Volume3D { grid, data })
    }

    pub fn filled(grid: Grid, value: f32) -> Self {
        Volume3D {
            data: vec![value; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume3D::new(grid, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.index(x, y, z)]
    }

    /// Value at signed coordinates with clamp-to-border.
    #[inline]
    pub fn get_clamped(&self, x: i64, y: i64, z: i64) -> f32 {
        self.data[self.grid.clamped_index(x, y, z)]
    }

    /// Trilinear interpolation at a continuous voxel coordinate.
    ///
    /// Coordinates outside the grid clamp to the border.
    pub fn trilinear_sample(&self, p: [f64; 3]) -> f64 {
        self.sample_offset([0, 0, 0], p)
    }

    /// Trilinear sample at `base + offset`.
    ///
    /// The integer part of `offset` is folded into `base` before the
    /// fractional weights are formed, so the interpolation weights depend
    /// only on `offset`. Translating `base` by whole voxels therefore gives
    /// bit-identical samples away from the border.
    pub fn sample_offset(&self, base: [i64; 3], offset: [f64; 3]) -> f64 {
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        let mut frac = [0f64; 3];
        for a in 0..3 {
            let n = self.grid.dims[a] as i64;
            let fl = offset[a].floor();
            let f = offset[a] - fl;
            let i = base[a].saturating_add(fl as i64);
            if i < 0 {
                lo[a] = 0;
                hi[a] = 0;
                frac[a] = 0.0;
            } else if i >= n - 1 {
                lo[a] = n - 1;
                hi[a] = n - 1;
                frac[a] = 0.0;
            } else {
                lo[a] = i;
                hi[a] = i + 1;
                frac[a] = f;
            }
        }
        let v = |x: i64, y: i64, z: i64| self.get_clamped(x, y, z) as f64;
        let [fx, fy, fz] = frac;
        let c00 = v(lo[0], lo[1], lo[2]) * (1.0 - fx) + v(hi[0], lo[1], lo[2]) * fx;
        let c10 = v(lo[0], hi[1], lo[2]) * (1.0 - fx) + v(hi[0], hi[1], lo[2]) * fx;
        let c01 = v(lo[0], lo[1], hi[2]) * (1.0 - fx) + v(hi[0], lo[1], hi[2]) * fx;
        let c11 = v(lo[0], hi[1], hi[2]) * (1.0 - fx) + v(hi[0], hi[1], hi[2]) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }

    /// Resample to isotropic `target_mm` spacing with trilinear interpolation.
    ///
    /// Voxel 0 of both grids shares its centre. Resampling at the volume's own
    /// (isotropic) spacing returns an identical copy.
    pub fn resample_isotropic(&self, target_mm: f64) -> Result<Volume3D> {
        let out = self.grid.isotropic(target_mm)?;
        let scale = resample_scale(&self.grid, target_mm);
        Volume3D::from_fn(out, |x, y, z| {
            self.trilinear_sample([
                x as f64 * scale[0],
                y as f64 * scale[1],
                z as f64 * scale[2],
            ]) as f32
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut payload = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        write_with_sidecar(path.as_ref(), &self.grid, Dtype::F32, &payload)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (grid, bytes) = read_with_sidecar(path, Dtype::F32)?;
        if bytes.len() % 4 != 0 || bytes.len() / 4 != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                found: bytes.len() / 4,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Volume3D::new(grid, data)
    }
}

/// Binary mask sharing a [`Volume3D`] grid. Values are exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    grid: Grid,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(grid: Grid, data: Vec<u8>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|&v| v > 1) {
            return Err(Error::NotBinary {
                index,
                value: data[index],
            });
        }
        Ok(LabelMap { grid, data })
    }

    pub fn empty(grid: Grid) -> Self {
        LabelMap {
            data: vec![0; grid.len()],
            grid,
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..grid.dims[2] {
            for y in 0..grid.dims[1] {
                for x in 0..grid.dims[0] {
                    data.push(f(x, y, z) as u8);
                }
            }
        }
        LabelMap { grid, data }
    }

    pub fn from_indices(grid: Grid, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut map = LabelMap::empty(grid);
        for i in indices {
            map.data[i] = 1;
        }
        map
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn is_set(&self, i: usize) -> bool {
        self.data[i] != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize, on: bool) {
        self.data[i] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Linear indices of foreground voxels, ascending.
    pub fn indices(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v != 0).then_some(i))
            .collect()
    }

    pub fn intersect(&self, other: &LabelMap) -> Result<LabelMap> {
        self.grid.ensure_same(&other.grid, "intersect")?;
        Ok(LabelMap {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a & b)
                .collect(),
        })
    }

    /// True when every foreground voxel of `self` is set in `other`.
    pub fn is_subset_of(&self, other: &LabelMap) -> bool {
        self.grid == other.grid && self.data.iter().zip(&other.data).all(|(a, b)| a <= b)
    }

    /// Nearest-neighbour resampling to isotropic `target_mm` spacing.
    pub fn resample_isotropic(&self, target_mm: f64) -> Result<LabelMap> {
        let out = self.grid.isotropic(target_mm)?;
        let scale = resample_scale(&self.grid, target_mm);
        Ok(LabelMap::from_fn(out, |x, y, z| {
            let p = [x as f64 * scale[0], y as f64 * scale[1], z as f64 * scale[2]];
            let i = self.grid.clamped_index(
                (p[0] + 0.5).floor() as i64,
                (p[1] + 0.5).floor() as i64,
                (p[2] + 0.5).floor() as i64,
            );
            self.data[i] != 0
        }))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_with_sidecar(path.as_ref(), &self.grid, Dtype::U8, &self.data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (grid, bytes) = read_with_sidecar(path.as_ref(), Dtype::U8)?;
        LabelMap::new(grid, bytes)
    }
}

fn resample_scale(grid: &Grid, target_mm: f64) -> [f64; 3] {
    let mut scale = [1.0; 3];
    for a in 0..3 {
        if grid.spacing[a] != target_mm {
            scale[a] = target_mm / grid.spacing[a];
        }
    }
    scale
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    Volume3D::load(path)
}

pub fn save_volume(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    v.save(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F32,
    U8,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: Dtype,
}

/// Sidecar path for a payload: same stem, `.json` extension.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

fn write_with_sidecar(path: &Path, grid: &Grid, dtype: Dtype, payload: &[u8]) -> Result<()> {
    let sidecar = Sidecar {
        dims: grid.dims,
        spacing_mm: grid.spacing,
        dtype,
    };
    let json = serde_json::to_vec(&sidecar)?;
    fs::write(path, payload).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, json).map_err(|e| Error::io(side, e))?;
    Ok(())
}

fn read_with_sidecar(path: &Path, expected: Dtype) -> Result<(Grid, Vec<u8>)> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Err(Error::MissingSidecar(side));
    }
    let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: Sidecar = serde_json::from_slice(&text).map_err(|e| Error::Sidecar {
        path: side.clone(),
        msg: e.to_string(),
    })?;
    if sidecar.dtype != expected {
        return Err(Error::Sidecar {
            path: side,
            msg: format!("dtype {:?}, expected {:?}", sidecar.dtype, expected),
        });
    }
    let grid = Grid::new(sidecar.dims, sidecar.spacing_mm).map_err(|e| Error::Sidecar {
        path: side.clone(),
        msg: e.to_string(),
    })?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok((grid, bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(dims: [usize; 3]) -> Grid {
        Grid::new(dims, [1.0; 3]).unwrap()
    }

    #[test]
    fn index_round_trips_coords() {
        let g = unit([3, 4, 5]);
        for i in 0..g.len() {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
        assert_eq!(g.index(1, 0, 0), 1);
        assert_eq!(g.index(0, 1, 0), 3);
        assert_eq!(g.index(0, 0, 1), 12);
    }

    #[test]
    fn constructor_rejects_bad_input() {
        assert!(Grid::new([0, 1, 1], [1.0; 3]).is_err());
        assert!(Grid::new([1, 1, 1], [1.0, 0.0, 1.0]).is_err());
        assert!(Grid::new([1, 1, 1], [1.0, f64::NAN, 1.0]).is_err());
        let g = unit([2, 1, 1]);
        assert!(matches!(
            Volume3D::new(g, vec![0.0, f32::INFINITY]),
            Err(Error::NonFinite(1))
        ));
        assert!(matches!(
            LabelMap::new(g, vec![0, 2]),
            Err(Error::NotBinary { index: 1, value: 2 })
        ));
    }

    #[test]
    fn trilinear_exact_at_grid_points() {
        let g = unit([3, 3, 3]);
        let v = Volume3D::from_fn(g, |x, y, z| (x * 9 + y * 3 + z) as f32 * 0.5).unwrap();
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    let s = v.trilinear_sample([x as f64, y as f64, z as f64]);
                    assert_eq!(s, v.get(x, y, z) as f64);
                }
            }
        }
    }

    #[test]
    fn trilinear_midpoint_and_clamp() {
        let g = unit([2, 1, 1]);
        let v = Volume3D::new(g, vec![0.0, 2.0]).unwrap();
        assert_eq!(v.trilinear_sample([0.5, 0.0, 0.0]), 1.0);

        let g = unit([3, 3, 3]);
        let v = Volume3D::from_fn(g, |x, y, z| (1 + x + 2 * y + 3 * z) as f32).unwrap();
        assert_eq!(v.trilinear_sample([-5.0, -5.0, -5.0]), v.get(0, 0, 0) as f64);
        assert_eq!(v.trilinear_sample([9.0, 9.5, 10.0]), v.get(2, 2, 2) as f64);
    }

    #[test]
    fn resample_identity_at_own_spacing() {
        let g = Grid::new([4, 5, 6], [1.0; 3]).unwrap();
        let v = Volume3D::from_fn(g, |x, y, z| (x as f32).sin() + y as f32 * 0.3 - z as f32).unwrap();
        assert_eq!(v.resample_isotropic(1.0).unwrap(), v);

        let g = Grid::new([4, 5, 6], [0.7; 3]).unwrap();
        let v = Volume3D::from_fn(g, |x, y, z| (x * y + z) as f32 * 0.1).unwrap();
        assert_eq!(v.resample_isotropic(0.7).unwrap(), v);
    }

    #[test]
    fn resample_constant_stays_constant() {
        let g = Grid::new([7, 6, 5], [0.8203, 0.8203, 1.3]).unwrap();
        let v = Volume3D::filled(g, 3.25);
        for target in [0.5, 1.0, 2.0] {
            let r = v.resample_isotropic(target).unwrap();
            assert!(r.data().iter().all(|&x| x == 3.25));
            assert_eq!(r.spacing(), [target; 3]);
        }
    }

    #[test]
    fn resample_dims_follow_round_half_up() {
        // 256 * 0.8203 = 209.9968 -> 210
        let g = Grid::new([256, 256, 7], [0.8203, 0.8203, 1.0]).unwrap();
        assert_eq!(g.isotropic(1.0).unwrap().dims, [210, 210, 7]);
        // 5 * 0.5 / 1.0 = 2.5 -> 3
        let g = Grid::new([5, 5, 5], [0.5; 3]).unwrap();
        assert_eq!(g.isotropic(1.0).unwrap().dims, [3, 3, 3]);
        // 1 * 0.1 / 1.0 rounds to 0
        let g = Grid::new([1, 1, 1], [0.1; 3]).unwrap();
        assert!(g.isotropic(1.0).is_err());
        assert!(g.isotropic(0.0).is_err());
    }

    #[test]
    fn label_resample_nearest_neighbour() {
        let g = Grid::new([4, 1, 1], [0.5, 1.0, 1.0]).unwrap();
        let m = LabelMap::new(g, vec![0, 0, 1, 1]).unwrap();
        let r = m.resample_isotropic(1.0).unwrap();
        assert_eq!(r.dims(), [2, 1, 1]);
        // output x=1 maps to input 2.0
        assert_eq!(r.data(), &[0, 1]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new([2, 2, 2], [1.0; 3]).unwrap();
        let ones = Volume3D::filled(g, 1.0);
        let p = dir.path().join("ones.vol");
        ones.save(&p).unwrap();
        let back = Volume3D::load(&p).unwrap();
        assert_eq!(back.data(), &[1.0; 8]);

        let g = Grid::new([4, 5, 6], [0.5, 1.0, 2.5]).unwrap();
        let mut state = 12345u32;
        let v = Volume3D::from_fn(g, |_, _, _| {
            state = state.wrapping_mul(1664525).wrapping_add(1013904223);
            state as f32 / u32::MAX as f32 - 0.5
        })
        .unwrap();
        let p = dir.path().join("rand.vol");
        save_volume(&v, &p).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back.grid(), v.grid());
        assert!(back
            .data()
            .iter()
            .zip(v.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        let m = LabelMap::from_fn(g, |x, y, z| (x + y + z) % 3 == 0);
        let p = dir.path().join("mask.lbl");
        m.save(&p).unwrap();
        assert_eq!(LabelMap::load(&p).unwrap(), m);
        let side: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("mask.json")).unwrap()).unwrap();
        assert_eq!(side["dtype"], "u8");
        assert_eq!(side["dims"], serde_json::json!([4, 5, 6]));
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.vol");
        fs::write(&p, vec![0u8; 26 * 4]).unwrap();
        assert!(matches!(Volume3D::load(&p), Err(Error::MissingSidecar(_))));
        fs::write(
            dir.path().join("short.json"),
            r#"{"dims":[3,3,3],"spacing_mm":[1,1,1],"dtype":"f32"}"#,
        )
        .unwrap();
        let err = Volume3D::load(&p).unwrap_err();
        assert!(err.to_string().contains("length mismatch"), "{err}");

        let p = dir.path().join("nan.vol");
        fs::write(&p, f32::NAN.to_le_bytes()).unwrap();
        fs::write(
            dir.path().join("nan.json"),
            r#"{"dims":[1,1,1],"spacing_mm":[1,1,1],"dtype":"f32"}"#,
        )
        .unwrap();
        assert!(matches!(Volume3D::load(&p), Err(Error::NonFinite(0))));
    }

    #[test]
    fn save_to_missing_directory_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let v = Volume3D::filled(unit([1, 1, 1]), 0.0);
        let err = v.save(dir.path().join("no/such/dir/x.vol")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    proptest! {
        #[test]
        fn trilinear_bounded_by_neighbours(
            vals in proptest::collection::vec(-10.0f32..10.0, 27),
            p in proptest::array::uniform3(-1.0f64..3.0),
        ) {
            let v = Volume3D::new(unit([3, 3, 3]), vals).unwrap();
            let s = v.trilinear_sample(p);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let c: Vec<[i64; 2]> = p.iter().map(|c| {
                let f = c.floor() as i64;
                [f, f + 1]
            }).collect();
            for &x in &c[0] { for &y in &c[1] { for &z in &c[2] {
                let n = v.get_clamped(x, y, z) as f64;
                lo = lo.min(n);
                hi = hi.max(n);
            }}}
            prop_assert!(s >= lo - 1e-9 && s <= hi + 1e-9);
        }
    }
}
