use crate::volume::Volume3D;

pub const TEXTURE_WIDTH: usize = 10;

const HIST_BINS: usize = 8;
const WAVELET_LEVELS: usize = 4;
const WAVELET_LEN: usize = 32;

/// First-order statistics and wavelet energies of the 3×3×3 patch at `v`.
///
/// Order: mean, population variance, skewness, kurtosis (raw fourth
/// standardized moment), entropy (bits) and energy `Σp²` of an 8-bin
/// histogram over the patch range, then Haar detail energies for levels
/// 1..=4. Moments of a flat patch are 0; its histogram has one bin.
///
/// The wavelet input is the z-major patch minus its mean, zero-padded to 32
/// samples, so the wavelet block ignores intensity offsets.
pub fn texture_features(v: usize, img: &Volume3D) -> Vec<f64> {
    let [x, y, z] = img.grid().coords(v).map(|c| c as i64);
    let mut patch = [0.0f64; 27];
    let mut k = 0;
    for dz in -1..=1i64 {
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                patch[k] = f64::from(img.get_clamped(x + dx, y + dy, z + dz));
                k += 1;
            }
        }
    }

    let n = patch.len() as f64;
    let mean = patch.iter().sum::<f64>() / n;
    let lo = patch.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = patch.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let flat = hi == lo;

    let (variance, skewness, kurtosis) = if flat {
        (0.0, 0.0, 0.0)
    } else {
        let mut m2 = 0.0;
        let mut m3 = 0.0;
        let mut m4 = 0.0;
        for &p in &patch {
            let d = p - mean;
            let d2 = d * d;
            m2 += d2;
            m3 += d2 * d;
            m4 += d2 * d2;
        }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        (m2, m3 / m2.powf(1.5), m4 / (m2 * m2))
    };

    let mut hist = [0usize; HIST_BINS];
    if flat {
        hist[0] = patch.len();
    } else {
        let width = hi - lo;
        for &p in &patch {
            let b = (((p - lo) / width) * HIST_BINS as f64).floor() as usize;
            hist[b.min(HIST_BINS - 1)] += 1;
        }
    }
    let mut entropy = 0.0;
    let mut energy = 0.0;
    for &c in &hist {
        if c > 0 {
            let p = c as f64 / n;
            entropy -= p * p.log2();
            energy += p * p;
        }
    }
    // -0.0 for a single bin
    entropy += 0.0;

    let mut signal = [0.0f64; WAVELET_LEN];
    if !flat {
        for (s, &p) in signal.iter_mut().zip(&patch) {
            *s = p - mean;
        }
    }
    let wavelet = haar_detail_energies(&signal, WAVELET_LEVELS);

    let mut out = Vec::with_capacity(TEXTURE_WIDTH);
    out.extend([mean, variance, skewness, kurtosis, entropy, energy]);
    out.extend(wavelet);
    out
}

/// Squared L2 norm of the detail coefficients at each of `levels` levels of
/// an orthonormal 1D Haar decomposition.
///
/// `signal.len()` must be divisible by `2^levels`.
pub fn haar_detail_energies(signal: &[f64], levels: usize) -> Vec<f64> {
    assert!(
        levels < usize::BITS as usize && signal.len() % (1usize << levels) == 0,
        "signal length {} not divisible by 2^{levels}",
        signal.len()
    );
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut approx = signal.to_vec();
    let mut out = Vec::with_capacity(levels);
    for _ in 0..levels {
        let mut next = Vec::with_capacity(approx.len() / 2);
        let mut e = 0.0;
        for pair in approx.chunks_exact(2) {
            let d = (pair[0] - pair[1]) * s;
            e += d * d;
            next.push((pair[0] + pair[1]) * s);
        }
        out.push(e);
        approx = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn patch_volume(vals: &[f32; 27]) -> (Volume3D, usize) {
        let g = Grid::new([3, 3, 3], [1.0; 3]).unwrap();
        (Volume3D::new(g, vals.to_vec()).unwrap(), g.index(1, 1, 1))
    }

    #[test]
    fn flat_patch() {
        let (img, v) = patch_volume(&[2.5; 27]);
        let f = texture_features(v, &img);
        assert_eq!(f.len(), 10);
        assert_eq!(f[0], 2.5);
        assert_eq!(&f[1..6], &[0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(f[6..].iter().all(|&e| e == 0.0));
    }

    #[test]
    fn symmetric_patch_has_no_skew() {
        let mut vals = [0.0f32; 27];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = i as f32 - 13.0;
        }
        let (img, v) = patch_volume(&vals);
        let f = texture_features(v, &img);
        assert!(f[2].abs() < 1e-12);
        // uniform on 27 points: var = (27^2 - 1)/12
        assert!((f[1] - 728.0 / 12.0).abs() < 1e-9);
    }

    #[test]
    fn two_level_patch_statistics() {
        // 9 ones and 18 zeros
        let mut vals = [0.0f32; 27];
        for v in vals.iter_mut().take(9) {
            *v = 1.0;
        }
        let (img, v) = patch_volume(&vals);
        let f = texture_features(v, &img);
        let p = 1.0 / 3.0f64;
        assert!((f[0] - p).abs() < 1e-15);
        assert!((f[1] - p * (1.0 - p)).abs() < 1e-15);
        // Bernoulli: skew = (1-2p)/sqrt(p(1-p)), kurtosis = (1-3p(1-p))/(p(1-p))
        let q = p * (1.0 - p);
        assert!((f[2] - (1.0 - 2.0 * p) / q.sqrt()).abs() < 1e-12);
        assert!((f[3] - (1.0 - 3.0 * q) / q).abs() < 1e-12);
        let h = -(p * p.log2() + (1.0 - p) * (1.0 - p).log2());
        assert!((f[4] - h).abs() < 1e-12);
        assert!((f[5] - (p * p + (1.0 - p) * (1.0 - p))).abs() < 1e-12);
    }

    #[test]
    fn haar_constant_signal_has_no_detail() {
        let e = haar_detail_energies(&[3.7; 32], 4);
        assert_eq!(e, vec![0.0; 4]);
    }

    #[test]
    fn haar_is_energy_preserving() {
        let sig: Vec<f64> = (0..32).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let e = haar_detail_energies(&sig, 5);
        let total: f64 = sig.iter().map(|v| v * v).sum();
        // after 5 levels one approximation coefficient remains: sum/sqrt(32)
        let mean_part = sig.iter().sum::<f64>().powi(2) / 32.0;
        assert!((e.iter().sum::<f64>() + mean_part - total).abs() < 1e-9);
    }

    #[test]
    fn haar_alternating_signal_lives_in_level_one() {
        let sig: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let e = haar_detail_energies(&sig, 3);
        assert!((e[0] - 8.0).abs() < 1e-12);
        assert!(e[1].abs() < 1e-24 && e[2].abs() < 1e-24);
    }
}
