//! Deterministic synthetic scene generation for tests and benchmarks.

use super::{sh_coeff_count, Gaussian3D, GaussianScene, SceneError, SceneLayout, SyntheticSceneSpec};
use super::sh::SH_C0;
use glam::{Quat, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f32::consts::TAU;

/// Generates `spec.count` Gaussians with the requested layout. The same spec
/// and seed always produce byte-identical scenes.
pub fn generate_synthetic_scene(spec: &SyntheticSceneSpec) -> Result<GaussianScene, SceneError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rest = sh_coeff_count(spec.sh_degree) - 1;
    let grid_side = (spec.count as f64).cbrt().ceil() as usize;

    let mut gaussians = Vec::with_capacity(spec.count);
    for index in 0..spec.count {
        let mean = match spec.layout {
            SceneLayout::Grid => grid_point(index, grid_side, spec.extent),
            SceneLayout::SphereShell => spec.extent * unit_direction(&mut rng),
            SceneLayout::UniformBox => {
                let half = 0.5 * spec.extent;
                Vec3::new(
                    rng.random_range(-half..=half),
                    rng.random_range(-half..=half),
                    rng.random_range(-half..=half),
                )
            }
        };

        let rotation = random_rotation(&mut rng);
        let (smin, smax) = spec.scale_range;
        let scale = Vec3::new(
            rng.random_range(smin..=smax),
            rng.random_range(smin..=smax),
            rng.random_range(smin..=smax),
        );
        let (omin, omax) = spec.opacity_range;
        let opacity = rng.random_range(omin..=omax);

        let mut sh = Vec::with_capacity(3 * (rest + 1));
        let rgb = palette_color(mean, spec.extent);
        for c in rgb {
            sh.push((c - 0.5) / SH_C0);
        }
        for _ in 0..3 * rest {
            sh.push(rng.random_range(-0.1..=0.1));
        }

        gaussians.push(Gaussian3D {
            mean,
            rotation,
            scale,
            opacity,
            sh,
        });
    }
    GaussianScene::new(gaussians, spec.sh_degree)
}

fn grid_point(index: usize, side: usize, extent: f32) -> Vec3 {
    let coord = |i: usize| {
        if side <= 1 {
            0.0
        } else {
            (i as f32 / (side - 1) as f32 - 0.5) * extent
        }
    };
    Vec3::new(
        coord(index % side),
        coord((index / side) % side),
        coord(index / (side * side)),
    )
}

fn unit_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    // Uniform over the sphere via z in [-1,1] and a uniform azimuth.
    let z: f32 = rng.random_range(-1.0..=1.0);
    let phi: f32 = rng.random_range(0.0..TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Quat {
    // Shoemake's uniform quaternion from three uniforms.
    let u1: f32 = rng.random_range(0.0..1.0);
    let u2: f32 = rng.random_range(0.0..TAU);
    let u3: f32 = rng.random_range(0.0..TAU);
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    Quat::from_xyzw(a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos()).normalize()
}

/// Hash the quantized position into a hue so nearby Gaussians share colors
/// but the scene as a whole has view-distinguishable structure.
fn palette_color(mean: Vec3, extent: f32) -> [f32; 3] {
    let cell = (extent / 8.0).max(1e-6);
    let q = |v: f32| (v / cell).floor() as i64 as u64;
    let mut h = 0xcbf2_9ce4_8422_2325u64; // FNV-1a
    for part in [q(mean.x), q(mean.y), q(mean.z)] {
        for byte in part.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    let hue = (h % 360) as f32;
    hsv_to_rgb(hue, 0.75, 0.85)
}

pub(crate) fn hsv_to_rgb(h_deg: f32, s: f32, v: f32) -> [f32; 3] {
    let h = (h_deg.rem_euclid(360.0)) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(count: usize, layout: SceneLayout) -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            count,
            layout,
            extent: 2.0,
            scale_range: (0.05, 0.15),
            opacity_range: (0.2, 0.9),
            sh_degree: 1,
            seed: 7,
        }
    }

    #[test]
    fn single_grid_gaussian_sits_at_center() {
        let scene = generate_synthetic_scene(&spec(1, SceneLayout::Grid)).unwrap();
        assert_eq!(scene.gaussians()[0].mean, Vec3::ZERO);
    }

    #[test]
    fn same_seed_reproduces_identical_scene() {
        let a = generate_synthetic_scene(&spec(50, SceneLayout::UniformBox)).unwrap();
        let b = generate_synthetic_scene(&spec(50, SceneLayout::UniformBox)).unwrap();
        assert_eq!(a.gaussians(), b.gaussians());
    }

    #[test]
    fn sphere_shell_means_sit_on_the_shell() {
        let s = spec(1000, SceneLayout::SphereShell);
        let scene = generate_synthetic_scene(&s).unwrap();
        let max_scale = s.scale_range.1;
        for g in scene.gaussians() {
            assert!((g.mean.length() - s.extent).abs() <= max_scale + 1e-4);
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut s = spec(0, SceneLayout::Grid);
        assert!(generate_synthetic_scene(&s).is_err());
        s.count = 1;
        s.scale_range = (0.3, 0.1);
        assert!(generate_synthetic_scene(&s).is_err());
    }

    #[test]
    fn ply_round_trip_preserves_fields() {
        let scene = generate_synthetic_scene(&spec(64, SceneLayout::UniformBox)).unwrap();
        let bytes = super::super::save_ply(&scene);
        let reloaded = super::super::load_ply(&bytes).unwrap();
        assert_eq!(scene.len(), reloaded.len());
        assert_eq!(scene.sh_degree(), reloaded.sh_degree());
        for (a, b) in scene.gaussians().iter().zip(reloaded.gaussians()) {
            assert!((a.mean - b.mean).abs().max_element() < 1e-6);
            assert!((a.scale - b.scale).abs().max_element() < 1e-6);
            assert!((a.opacity - b.opacity).abs() < 1e-6);
            let qd = (a.rotation.dot(b.rotation)).abs();
            assert!(qd > 1.0 - 1e-6, "quaternion drift: dot {qd}");
            for (x, y) in a.sh.iter().zip(&b.sh) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
