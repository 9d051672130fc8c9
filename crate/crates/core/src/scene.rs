//! 3D Gaussian scenes: domain types, covariance construction, PLY ingest,
//! and synthetic scene generation.

mod ply;
mod sh;
mod synth;

pub use ply::{load_ply, save_ply};
pub use sh::{eval_sh, sh_coeff_count, SH_C0};
pub use synth::generate_synthetic_scene;
pub(crate) use synth::hsv_to_rgb;

use glam::{Mat3, Quat, Vec3};
use thiserror::Error;

/// Errors raised by scene ingestion, validation, and generation.
#[derive(Debug, Error)]
pub enum SceneError {
    #[error("malformed PLY header: {0}")]
    MalformedHeader(String),
    #[error("PLY body truncated: need {need} bytes, have {have}")]
    TruncatedBody { need: usize, have: usize },
    #[error("unsupported PLY format: {0}")]
    UnsupportedFormat(String),
    #[error("non-finite value in field {0}")]
    NonFiniteValue(&'static str),
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("SH degree mismatch: degree {degree} expects {expected} coefficients, got {got}")]
    DegreeMismatch {
        degree: u8,
        expected: usize,
        got: usize,
    },
}

/// One anisotropic 3D Gaussian.
///
/// `sh` holds `3 * (degree+1)^2` coefficients: the DC triplet (r, g, b)
/// first, then the higher bands channel-major (all red band coefficients,
/// then green, then blue) — the same order the PLY file stores them in.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vec3,
    /// Unit quaternion; renormalized on ingest.
    pub rotation: Quat,
    /// Per-axis standard deviations, strictly positive.
    pub scale: Vec3,
    /// Opacity in [0, 1] (post-sigmoid).
    pub opacity: f32,
    pub sh: Vec<f32>,
}

impl Gaussian3D {
    /// World-space covariance Σ = R S Sᵀ Rᵀ of this Gaussian.
    pub fn covariance(&self) -> Mat3 {
        covariance_from_params(self.rotation, self.scale)
    }
}

/// Σ = R S Sᵀ Rᵀ from a unit quaternion and per-axis standard deviations.
///
/// Invariant under the quaternion sign flip q → −q; eigenvalues equal the
/// squared scales.
pub fn covariance_from_params(rotation: Quat, scale: Vec3) -> Mat3 {
    let r = Mat3::from_quat(rotation);
    let m = r * Mat3::from_diagonal(scale);
    m * m.transpose()
}

/// Axis-aligned bounding box over Gaussian means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn center(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }
}

/// An ordered set of Gaussians sharing one SH degree.
///
/// Gaussian order is stable: list order equals file order for loaded scenes.
/// Scenes are immutable after construction and safe to share across workers.
#[derive(Debug, Clone)]
pub struct GaussianScene {
    gaussians: Vec<Gaussian3D>,
    sh_degree: u8,
    bounds: Aabb,
}

impl GaussianScene {
    /// Builds a scene, validating SH coefficient counts and finiteness.
    pub fn new(gaussians: Vec<Gaussian3D>, sh_degree: u8) -> Result<Self, SceneError> {
        if sh_degree > 3 {
            return Err(SceneError::InvalidSpec(format!(
                "sh_degree {sh_degree} out of range 0..=3"
            )));
        }
        let expected = 3 * sh_coeff_count(sh_degree);
        for g in &gaussians {
            if g.sh.len() != expected {
                return Err(SceneError::DegreeMismatch {
                    degree: sh_degree,
                    expected,
                    got: g.sh.len(),
                });
            }
            if !(g.mean.is_finite()
                && g.scale.is_finite()
                && g.rotation.is_finite()
                && g.opacity.is_finite()
                && g.sh.iter().all(|c| c.is_finite()))
            {
                return Err(SceneError::NonFiniteValue("gaussian"));
            }
            if g.scale.min_element() <= 0.0 {
                return Err(SceneError::InvalidSpec("non-positive scale".into()));
            }
        }
        let bounds = bounds_of(&gaussians);
        Ok(Self {
            gaussians,
            sh_degree,
            bounds,
        })
    }

    pub fn gaussians(&self) -> &[Gaussian3D] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn sh_degree(&self) -> u8 {
        self.sh_degree
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }
}

fn bounds_of(gaussians: &[Gaussian3D]) -> Aabb {
    let mut min = Vec3::splat(f32::INFINITY);
    let mut max = Vec3::splat(f32::NEG_INFINITY);
    for g in gaussians {
        min = min.min(g.mean);
        max = max.max(g.mean);
    }
    if gaussians.is_empty() {
        min = Vec3::ZERO;
        max = Vec3::ZERO;
    }
    Aabb { min, max }
}

/// Spatial layouts for synthetic test scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneLayout {
    Grid,
    SphereShell,
    UniformBox,
}

impl std::str::FromStr for SceneLayout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "grid" => Ok(Self::Grid),
            "sphere-shell" => Ok(Self::SphereShell),
            "uniform-box" => Ok(Self::UniformBox),
            other => Err(format!(
                "unknown layout {other:?} (expected grid, sphere-shell, or uniform-box)"
            )),
        }
    }
}

/// Parameters for [`generate_synthetic_scene`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub count: usize,
    pub layout: SceneLayout,
    /// Scene half-size (grid/box side = extent, shell radius = extent).
    pub extent: f32,
    pub scale_range: (f32, f32),
    pub opacity_range: (f32, f32),
    pub sh_degree: u8,
    pub seed: u64,
}

impl SyntheticSceneSpec {
    pub(crate) fn validate(&self) -> Result<(), SceneError> {
        if self.count < 1 {
            return Err(SceneError::InvalidSpec("count must be >= 1".into()));
        }
        if self.sh_degree > 3 {
            return Err(SceneError::InvalidSpec("sh_degree out of range".into()));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(SceneError::InvalidSpec("extent must be positive".into()));
        }
        let (smin, smax) = self.scale_range;
        if !(smin > 0.0 && smin <= smax && smax.is_finite()) {
            return Err(SceneError::InvalidSpec("bad scale_range".into()));
        }
        let (omin, omax) = self.opacity_range;
        if !(0.0..=1.0).contains(&omin) || !(0.0..=1.0).contains(&omax) || omin > omax {
            return Err(SceneError::InvalidSpec("bad opacity_range".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f32::consts::FRAC_1_SQRT_2;

    #[test]
    fn covariance_identity_rotation_is_diag_of_squared_scales() {
        let cov = covariance_from_params(Quat::IDENTITY, Vec3::new(1.0, 2.0, 3.0));
        let expect = Mat3::from_diagonal(Vec3::new(1.0, 4.0, 9.0));
        assert_relative_eq!(cov.to_cols_array()[..], expect.to_cols_array()[..], epsilon = 1e-6);
    }

    #[test]
    fn covariance_z_rotation_swaps_xy_axes() {
        // 90° about z maps the x-axis scale onto y and vice versa.
        let q = Quat::from_xyzw(0.0, 0.0, FRAC_1_SQRT_2, FRAC_1_SQRT_2);
        let cov = covariance_from_params(q, Vec3::new(1.0, 2.0, 1.0));
        let expect = Mat3::from_diagonal(Vec3::new(4.0, 1.0, 1.0));
        assert_relative_eq!(cov.to_cols_array()[..], expect.to_cols_array()[..], epsilon = 1e-5);
    }

    #[test]
    fn covariance_invariant_under_quaternion_sign_flip() {
        let q = Quat::from_xyzw(0.1, -0.4, 0.2, 0.88).normalize();
        let s = Vec3::new(0.5, 1.5, 2.5);
        let a = covariance_from_params(q, s);
        let b = covariance_from_params(Quat::from_xyzw(-q.x, -q.y, -q.z, -q.w), s);
        assert_relative_eq!(a.to_cols_array()[..], b.to_cols_array()[..], epsilon = 1e-6);
    }

    #[test]
    fn covariance_is_symmetric_positive_definite() {
        let q = Quat::from_xyzw(0.3, 0.1, -0.2, 0.92).normalize();
        let cov = covariance_from_params(q, Vec3::new(0.2, 0.7, 1.1));
        assert_relative_eq!(cov.col(0).y, cov.col(1).x, epsilon = 1e-7);
        assert_relative_eq!(cov.col(0).z, cov.col(2).x, epsilon = 1e-7);
        assert_relative_eq!(cov.col(1).z, cov.col(2).y, epsilon = 1e-7);
        // det > 0 and positive diagonal imply PD for a symmetric 3x3 built as M Mᵀ.
        assert!(cov.determinant() > 0.0);
        assert!(cov.col(0).x > 0.0 && cov.col(1).y > 0.0 && cov.col(2).z > 0.0);
    }

    #[test]
    fn scene_rejects_wrong_coefficient_count() {
        let g = Gaussian3D {
            mean: Vec3::ZERO,
            rotation: Quat::IDENTITY,
            scale: Vec3::ONE,
            opacity: 0.5,
            sh: vec![0.0; 3],
        };
        let err = GaussianScene::new(vec![g], 1).unwrap_err();
        assert!(matches!(err, SceneError::DegreeMismatch { .. }));
    }
}
