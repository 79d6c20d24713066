use crate::volume::Volume3D;

pub const GRADIENT_PATCH_WIDTH: usize = 75;

/// 2D gradient over the 5×5×1 axial patch centred at `v`.
///
/// Pixels are visited y-major then x (offsets −2..=2). Output is 25
/// horizontal central differences, then 25 vertical ones, then 25
/// orientations `atan2(vertical, horizontal)` (0 when both are 0).
pub fn gradient_patch_features(v: usize, img: &Volume3D) -> Vec<f64> {
    let [x, y, z] = img.grid().coords(v).map(|c| c as i64);
    let at = |x, y| f64::from(img.get_clamped(x, y, z));
    let mut horiz = [0.0f64; 25];
    let mut vert = [0.0f64; 25];
    let mut k = 0;
    for dy in -2..=2i64 {
        for dx in -2..=2i64 {
            let (px, py) = (x + dx, y + dy);
            horiz[k] = (at(px + 1, py) - at(px - 1, py)) / 2.0;
            vert[k] = (at(px, py + 1) - at(px, py - 1)) / 2.0;
            k += 1;
        }
    }
    let mut out = Vec::with_capacity(GRADIENT_PATCH_WIDTH);
    out.extend_from_slice(&horiz);
    out.extend_from_slice(&vert);
    out.extend(horiz.iter().zip(&vert).map(|(&h, &vv)| {
        if h == 0.0 && vv == 0.0 {
            0.0
        } else {
            vv.atan2(h)
        }
    }));
    out
}
