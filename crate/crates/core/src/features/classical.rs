use crate::volume::Volume3D;

pub const CLASSICAL_WIDTH: usize = 137;

const RAY_STEPS: usize = 8;

/// Classical block, 137 values in this order:
///
/// * `[0]` centre intensity
/// * `[1..125]` 5×5×5 neighbourhood without the centre, z-major then y then x
/// * `[125]` SPDM value at the voxel
/// * `[126..129]` spherical coordinates (r mm, polar θ, azimuth φ) relative
///   to `origin`; all zero at the origin
/// * `[129..137]` trilinear samples at steps 1..=8 along the unit image
///   gradient (central differences); a zero gradient repeats the centre
pub fn classical_features(v: usize, img: &Volume3D, spdm: &Volume3D, origin: [f64; 3]) -> Vec<f64> {
    let grid = img.grid();
    let [x, y, z] = grid.coords(v).map(|c| c as i64);
    let mut out = Vec::with_capacity(CLASSICAL_WIDTH);

    let centre = f64::from(img.get_clamped(x, y, z));
    out.push(centre);
    for dz in -2..=2i64 {
        for dy in -2..=2i64 {
            for dx in -2..=2i64 {
                if dx == 0 && dy == 0 && dz == 0 {
                    continue;
                }
                out.push(f64::from(img.get_clamped(x + dx, y + dy, z + dz)));
            }
        }
    }

    out.push(f64::from(spdm.data()[v]));

    let spacing = grid.spacing;
    let d = [
        (x as f64 - origin[0]) * spacing[0],
        (y as f64 - origin[1]) * spacing[1],
        (z as f64 - origin[2]) * spacing[2],
    ];
    out.extend(spherical(d));

    let g = central_gradient(img, [x, y, z]);
    let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    if norm == 0.0 {
        out.extend(std::iter::repeat_n(centre, RAY_STEPS));
    } else {
        let u = g.map(|c| c / norm);
        for k in 1..=RAY_STEPS {
            let t = k as f64;
            out.push(img.sample_offset([x, y, z], [u[0] * t, u[1] * t, u[2] * t]));
        }
    }
    debug_assert_eq!(out.len(), CLASSICAL_WIDTH);
    out
}

fn spherical(d: [f64; 3]) -> [f64; 3] {
    let r = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if r == 0.0 {
        return [0.0, 0.0, 0.0];
    }
    let theta = (d[2] / r).clamp(-1.0, 1.0).acos();
    let phi = d[1].atan2(d[0]);
    [r, theta, phi]
}

pub(super) fn central_gradient(img: &Volume3D, p: [i64; 3]) -> [f64; 3] {
    let [x, y, z] = p;
    let at = |x, y, z| f64::from(img.get_clamped(x, y, z));
    [
        (at(x + 1, y, z) - at(x - 1, y, z)) / 2.0,
        (at(x, y + 1, z) - at(x, y - 1, z)) / 2.0,
        (at(x, y, z + 1) - at(x, y, z - 1)) / 2.0,
    ]
}
