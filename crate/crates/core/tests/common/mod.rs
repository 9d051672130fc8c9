//! Shared desk-scale fixtures for the integration and acceptance suites.

use glam::Vec3;
use lfraster_core::camera::{generate_orbit_rig, Camera, RigSpec};
use lfraster_core::scene::{generate_synthetic_scene, GaussianScene, SceneLayout, SyntheticSceneSpec};
use lfraster_core::DisplayConfig;

pub fn desk_scene(count: usize, seed: u64) -> GaussianScene {
    generate_synthetic_scene(&SyntheticSceneSpec {
        count,
        layout: SceneLayout::SphereShell,
        extent: 1.5,
        scale_range: (0.03, 0.12),
        opacity_range: (0.25, 0.95),
        sh_degree: 1,
        seed,
    })
    .unwrap()
}

pub fn desk_display(width: u32, height: u32, num_views: u32, line_count: f32) -> DisplayConfig {
    DisplayConfig {
        width,
        height,
        tilt: 0.08,
        line_count,
        offset: 0.35,
        num_views,
        tile_size: 16,
    }
}

pub fn desk_rig(num_views: u32, angular_range: f32, width: u32, height: u32) -> Vec<Camera> {
    generate_orbit_rig(&RigSpec {
        num_views,
        angular_range,
        orbit_radius: 4.5,
        look_at: Vec3::ZERO,
        up: Vec3::Y,
        fov_y: 42.0,
        width,
        height,
    })
    .unwrap()
}

/// A rig whose cameras all share one pose (the rig's center view).
pub fn degenerate_rig(num_views: u32, width: u32, height: u32) -> Vec<Camera> {
    let center = desk_rig(1, 0.0, width, height)[0];
    vec![center; num_views as usize]
}

pub fn run_in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}
