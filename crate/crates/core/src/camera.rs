//! Viewpoint rigs, view clustering, and the splat projection operators.

use crate::scene::{eval_sh, Gaussian3D};
use glam::{Mat3, Vec2, Vec3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default near plane in scene units.
pub const DEFAULT_ZNEAR: f32 = 0.01;

/// Effective-opacity threshold below which a splat never contributes.
pub const ALPHA_MIN: f32 = 1.0 / 255.0;

/// Low-pass dilation added to the projected covariance diagonal (pixels²).
pub const LOWPASS_DILATION: f32 = 0.3;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("invalid rig spec: {0}")]
    InvalidSpec(String),
    #[error("invalid cluster size: {0}")]
    InvalidSize(String),
    #[error("degenerate projected covariance (non-finite input?)")]
    DegenerateCovariance,
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("rig file: {0}")]
    RigFormat(String),
}

/// A pinhole camera: x right, y down, z forward, world-to-camera rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// World-to-camera rotation, row-major in serialized form.
    #[serde(with = "mat3_rows")]
    pub rotation: Mat3,
    pub translation: Vec3,
    pub fx: f32,
    pub fy: f32,
    pub cx: f32,
    pub cy: f32,
    pub width: u32,
    pub height: u32,
    pub znear: f32,
}

mod mat3_rows {
    use glam::Mat3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat3, s: S) -> Result<S::Ok, S::Error> {
        let t = m.transpose(); // glam is column-major; emit rows
        t.to_cols_array().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat3, D::Error> {
        let rows = <[f32; 9]>::deserialize(d)?;
        Ok(Mat3::from_cols_array(&rows).transpose())
    }
}

impl Camera {
    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.znear > 0.0) {
            return Err(CameraError::InvalidCamera(
                "focal lengths and znear must be positive".into(),
            ));
        }
        let rtr = self.rotation.transpose() * self.rotation;
        let err = (rtr - Mat3::IDENTITY)
            .to_cols_array()
            .iter()
            .fold(0.0f32, |m, v| m.max(v.abs()));
        if err > 1e-5 {
            return Err(CameraError::InvalidCamera(format!(
                "rotation is not orthonormal (max deviation {err:.2e})"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn position(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    /// Camera forward axis (+z row) in world space.
    pub fn forward(&self) -> Vec3 {
        self.rotation.transpose() * Vec3::Z
    }
}

/// Orbit rig parameters: `num_views` cameras spread over `angular_range`
/// degrees of a horizontal arc around `look_at`, all facing inward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub num_views: u32,
    pub angular_range: f32,
    pub orbit_radius: f32,
    pub look_at: Vec3,
    pub up: Vec3,
    pub fov_y: f32,
    pub width: u32,
    pub height: u32,
}

/// A camera list plus the generator spec it came from, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rig {
    pub schema_version: u32,
    pub generator: Option<RigSpec>,
    pub cameras: Vec<Camera>,
}

impl Rig {
    pub fn from_json(text: &str) -> Result<Self, CameraError> {
        let rig: Rig =
            serde_json::from_str(text).map_err(|e| CameraError::RigFormat(e.to_string()))?;
        for (i, cam) in rig.cameras.iter().enumerate() {
            cam.validate()
                .map_err(|e| CameraError::RigFormat(format!("camera {i}: {e}")))?;
        }
        Ok(rig)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rig serialization")
    }
}

/// Look-at orientation: rows are (right, down, forward) so that +y grows
/// downward in the image.
fn look_at_rotation(position: Vec3, target: Vec3, up: Vec3) -> Result<Mat3, CameraError> {
    let forward = (target - position).normalize();
    let right = forward.cross(up.normalize());
    if right.length() < 1e-6 {
        return Err(CameraError::InvalidSpec(
            "up vector is parallel to the view direction".into(),
        ));
    }
    let right = right.normalize();
    let down = forward.cross(right);
    Ok(Mat3::from_cols(right, down, forward).transpose())
}

/// Generates the orbit rig: equal angular spacing over the fan, single
/// camera at the arc center when `num_views == 1`, horizontal-parallax only
/// (all cameras share height along `up`).
pub fn generate_orbit_rig(spec: &RigSpec) -> Result<Vec<Camera>, CameraError> {
    if spec.num_views < 1 {
        return Err(CameraError::InvalidSpec("num_views must be >= 1".into()));
    }
    if !(spec.orbit_radius > 0.0) {
        return Err(CameraError::InvalidSpec("orbit_radius must be > 0".into()));
    }
    if spec.angular_range < 0.0 {
        return Err(CameraError::InvalidSpec("angular_range must be >= 0".into()));
    }
    if !(spec.fov_y > 0.0 && spec.fov_y < 180.0) {
        return Err(CameraError::InvalidSpec("fov_y out of (0, 180)".into()));
    }
    if spec.width < 1 || spec.height < 1 {
        return Err(CameraError::InvalidSpec("zero image dimension".into()));
    }
    let up = spec.up.normalize();
    if !up.is_finite() {
        return Err(CameraError::InvalidSpec("up vector has zero length".into()));
    }

    // Arc basis: azimuth 0 points along world +z projected off `up`,
    // falling back to +x when they are parallel.
    let mut base = Vec3::Z - Vec3::Z.dot(up) * up;
    if base.length() < 1e-6 {
        base = Vec3::X - Vec3::X.dot(up) * up;
    }
    let base = base.normalize();
    let side = up.cross(base);

    let fy = spec.height as f32 / (2.0 * (spec.fov_y.to_radians() / 2.0).tan());
    let n = spec.num_views;
    let step = if n > 1 {
        spec.angular_range.to_radians() / (n - 1) as f32
    } else {
        0.0
    };

    let mut cameras = Vec::with_capacity(n as usize);
    for j in 0..n {
        let theta = (j as f32 - (n - 1) as f32 / 2.0) * step;
        let dir = theta.cos() * base + theta.sin() * side;
        let position = spec.look_at + spec.orbit_radius * dir;
        let rotation = look_at_rotation(position, spec.look_at, up)?;
        cameras.push(Camera {
            rotation,
            translation: -(rotation * position),
            fx: fy,
            fy,
            cx: spec.width as f32 / 2.0,
            cy: spec.height as f32 / 2.0,
            width: spec.width,
            height: spec.height,
            znear: DEFAULT_ZNEAR,
        });
    }
    Ok(cameras)
}

/// Contiguous partition of `num_views` views into clusters of `cluster_size`,
/// the last cluster padded by duplicating the final view. The representative
/// of each cluster is the camera at local index `cluster_size / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    num_views: u32,
    cluster_size: u32,
    /// Padded view ids, `num_clusters * cluster_size` entries.
    padded_views: Vec<u32>,
    representatives: Vec<u32>,
}

pub fn cluster_views(num_views: u32, cluster_size: u32) -> Result<Clustering, CameraError> {
    if num_views < 1 || cluster_size < 1 {
        return Err(CameraError::InvalidSize(format!(
            "num_views {num_views}, cluster_size {cluster_size}"
        )));
    }
    let num_clusters = num_views.div_ceil(cluster_size);
    let mut padded_views = Vec::with_capacity((num_clusters * cluster_size) as usize);
    for slot in 0..num_clusters * cluster_size {
        padded_views.push(slot.min(num_views - 1));
    }
    let representatives = (0..num_clusters)
        .map(|k| padded_views[(k * cluster_size + cluster_size / 2) as usize])
        .collect();
    Ok(Clustering {
        num_views,
        cluster_size,
        padded_views,
        representatives,
    })
}

impl Clustering {
    pub fn num_views(&self) -> u32 {
        self.num_views
    }

    pub fn cluster_size(&self) -> u32 {
        self.cluster_size
    }

    pub fn num_clusters(&self) -> u32 {
        self.representatives.len() as u32
    }

    #[inline]
    pub fn cluster_of(&self, view: u32) -> u32 {
        view / self.cluster_size
    }

    pub fn representative(&self, cluster: u32) -> u32 {
        self.representatives[cluster as usize]
    }

    /// Padded member view ids of one cluster (duplicates possible in the
    /// last cluster).
    pub fn members(&self, cluster: u32) -> &[u32] {
        let s = (cluster * self.cluster_size) as usize;
        &self.padded_views[s..s + self.cluster_size as usize]
    }
}

/// Inverse projected 2D covariance with its blending metadata.
///
/// The quadratic form is `a dx² + 2 b dx dy + c dy²`. `extent` is the
/// half-size of the ellipse's axis-aligned bounding box at the opacity
/// cutoff, `radius` the principal-axis cutoff radius, and `compensation`
/// the opacity factor preserving total energy under the low-pass dilation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conic2D {
    pub a: f32,
    pub b: f32,
    pub c: f32,
    pub extent: Vec2,
    pub radius: f32,
    pub compensation: f32,
}

/// Shared per-cluster attributes of one projected Gaussian.
#[derive(Debug, Clone, Copy)]
pub struct SharedProjection {
    pub conic: Conic2D,
    pub depth: f32,
    pub color: [f32; 3],
    /// opacity * dilation compensation
    pub eff_opacity: f32,
}

/// Pinhole projection of a world point. `visible` is false when the
/// camera-space depth is in front of the near plane; the returned position
/// is zeroed in that case.
pub fn project_mean(camera: &Camera, mean: Vec3) -> (Vec2, f32, bool) {
    let p = camera.world_to_camera(mean);
    if p.z < camera.znear {
        return (Vec2::ZERO, p.z, false);
    }
    let mu = Vec2::new(
        camera.fx * p.x / p.z + camera.cx,
        camera.fy * p.y / p.z + camera.cy,
    );
    (mu, p.z, true)
}

/// Projects the cluster-shared attributes (covariance, depth, SH color) of a
/// Gaussian from one camera. The caller must have checked visibility; the
/// Gaussian's mean is assumed to be at depth >= znear.
pub fn project_shared(
    camera: &Camera,
    gaussian: &Gaussian3D,
    sh_degree: u8,
) -> Result<SharedProjection, CameraError> {
    let p = camera.world_to_camera(gaussian.mean);
    let depth = p.z;

    // EWA: Sigma2D = J W Sigma Wt Jt with the perspective Jacobian at the mean.
    let cov3 = gaussian.covariance();
    let w = camera.rotation;
    let cam_cov = w * cov3 * w.transpose();
    let inv_z = 1.0 / p.z;
    let j = Mat3::from_cols(
        Vec3::new(camera.fx * inv_z, 0.0, 0.0),
        Vec3::new(0.0, camera.fy * inv_z, 0.0),
        Vec3::new(
            -camera.fx * p.x * inv_z * inv_z,
            -camera.fy * p.y * inv_z * inv_z,
            0.0,
        ),
    );
    let full = j * cam_cov * j.transpose();
    let (sxx, sxy, syy) = (full.col(0).x, full.col(1).x, full.col(1).y);

    let det_raw = sxx * syy - sxy * sxy;
    let (dxx, dyy) = (sxx + LOWPASS_DILATION, syy + LOWPASS_DILATION);
    let det = dxx * dyy - sxy * sxy;
    if !(det > 0.0) || !det.is_finite() {
        return Err(CameraError::DegenerateCovariance);
    }
    let compensation = (det_raw.max(0.0) / det).sqrt();
    let eff_opacity = gaussian.opacity * compensation;

    let inv_det = 1.0 / det;
    let conic_a = dyy * inv_det;
    let conic_b = -sxy * inv_det;
    let conic_c = dxx * inv_det;

    // Cutoff where alpha falls to 1/255: q_max = 2 ln(255 * eff_opacity).
    let power = 2.0 * (eff_opacity / ALPHA_MIN).ln();
    let (extent, radius) = if power > 0.0 {
        let mid = 0.5 * (dxx + dyy);
        let disc = (mid * mid - det).max(0.0).sqrt();
        let lambda_max = mid + disc;
        (
            Vec2::new((power * dxx).sqrt(), (power * dyy).sqrt()),
            (power * lambda_max).sqrt(),
        )
    } else {
        (Vec2::ZERO, 0.0)
    };

    let dir = (gaussian.mean - camera.position()).normalize();
    let color = eval_sh(&gaussian.sh, sh_degree, dir)
        .map_err(|_| CameraError::InvalidCamera("sh degree mismatch".into()))?;

    Ok(SharedProjection {
        conic: Conic2D {
            a: conic_a,
            b: conic_b,
            c: conic_c,
            extent,
            radius,
            compensation,
        },
        depth,
        color,
        eff_opacity,
    })
}
