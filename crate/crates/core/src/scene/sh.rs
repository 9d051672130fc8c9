//! Real spherical harmonics in the 3DGS reference convention.
//!
//! Coefficients follow the trainer export layout: the DC triplet first,
//! then higher bands channel-major. Colors are `sum(c * Y) + 0.5`, clamped
//! to [0, 1], matching PLYs produced by existing 3DGS trainers.

use super::SceneError;
use glam::Vec3;

/// Y₀₀ normalization constant.
pub const SH_C0: f32 = 0.282_094_791_773_878_14;

const SH_C1: f32 = 0.488_602_511_902_919_92;
const SH_C2: [f32; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f32; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of SH basis functions per channel for a degree: (deg+1)².
pub const fn sh_coeff_count(degree: u8) -> usize {
    let d = degree as usize;
    (d + 1) * (d + 1)
}

/// Evaluates the basis functions (with the reference sign convention folded
/// in) for a unit direction, filling `out[0..(degree+1)²]`.
fn sh_basis(degree: u8, dir: Vec3, out: &mut [f32; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    out[0] = SH_C0;
    if degree >= 1 {
        out[1] = -SH_C1 * y;
        out[2] = SH_C1 * z;
        out[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[4] = SH_C2[0] * x * y;
        out[5] = SH_C2[1] * y * z;
        out[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        out[7] = SH_C2[3] * x * z;
        out[8] = SH_C2[4] * (xx - yy);
    }
    if degree >= 3 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        out[9] = SH_C3[0] * y * (3.0 * xx - yy);
        out[10] = SH_C3[1] * x * y * z;
        out[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
        out[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
        out[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
        out[14] = SH_C3[5] * z * (xx - yy);
        out[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    }
}

/// View-dependent color from SH coefficients along a unit direction.
///
/// `sh` is laid out DC triplet first, then per-channel rest bands
/// (`sh[3 + c*(B-1) + (f-1)]` for basis index `f >= 1`, `B = (degree+1)²`).
/// Each channel gets the +0.5 offset and is clamped to [0, 1].
pub fn eval_sh(sh: &[f32], degree: u8, dir: Vec3) -> Result<[f32; 3], SceneError> {
    let bases = sh_coeff_count(degree);
    if sh.len() != 3 * bases {
        return Err(SceneError::DegreeMismatch {
            degree,
            expected: 3 * bases,
            got: sh.len(),
        });
    }
    let mut basis = [0.0f32; 16];
    sh_basis(degree, dir, &mut basis);

    let mut rgb = [0.0f32; 3];
    let rest = bases - 1;
    for (c, out) in rgb.iter_mut().enumerate() {
        let mut v = basis[0] * sh[c];
        for f in 1..bases {
            v += basis[f] * sh[3 + c * rest + (f - 1)];
        }
        *out = (v + 0.5).clamp(0.0, 1.0);
    }
    Ok(rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degree0_is_dc_times_y00_plus_half() {
        let d = 0.7f32;
        let rgb = eval_sh(&[d, d, d], 0, Vec3::Z).unwrap();
        for c in rgb {
            assert_relative_eq!(c, 0.282_094_791_77 * d + 0.5, epsilon = 1e-7);
        }
    }

    #[test]
    fn degree0_independent_of_direction() {
        let sh = [0.2, -0.1, 0.4];
        let a = eval_sh(&sh, 0, Vec3::X).unwrap();
        let b = eval_sh(&sh, 0, Vec3::new(-0.3, 0.5, 0.2).normalize()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_coefficients_give_mid_gray() {
        let sh = vec![0.0; 12];
        assert_eq!(eval_sh(&sh, 1, Vec3::Y).unwrap(), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn band1_m1_flips_with_x_direction() {
        // Only the (l=1, m=1) coefficient of the red channel is set; the
        // pre-clamp color must differ by 2*C1*coef between +x and -x.
        let coef = 0.05f32;
        let mut sh = vec![0.0f32; 12];
        sh[3 + 2] = coef; // red channel, basis index 3
        let px = eval_sh(&sh, 1, Vec3::X).unwrap();
        let nx = eval_sh(&sh, 1, Vec3::NEG_X).unwrap();
        let diff = (px[0] - nx[0]).abs();
        assert_relative_eq!(diff, 2.0 * 0.488_602_511_90 * coef, epsilon = 1e-6);
    }

    #[test]
    fn linear_in_coefficients_before_clamp() {
        // Small coefficients keep the result inside [0,1] so the clamp is
        // inactive and eval(a*c) - 0.5 == a * (eval(c) - 0.5).
        let sh: Vec<f32> = (0..27).map(|i| 0.01 * (i as f32 - 13.0) / 13.0).collect();
        let dir = Vec3::new(0.4, -0.2, 0.89).normalize();
        let one = eval_sh(&sh, 2, dir).unwrap();
        let scaled: Vec<f32> = sh.iter().map(|c| 3.0 * c).collect();
        let three = eval_sh(&scaled, 2, dir).unwrap();
        for c in 0..3 {
            assert_relative_eq!(three[c] - 0.5, 3.0 * (one[c] - 0.5), epsilon = 1e-5);
        }
    }

    #[test]
    fn wrong_coefficient_count_is_rejected() {
        assert!(matches!(
            eval_sh(&[0.0; 5], 0, Vec3::Z),
            Err(SceneError::DegreeMismatch { .. })
        ));
    }
}
