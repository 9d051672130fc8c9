//! Full-frame reference renderer and image quality metrics.
//!
//! The reference path renders every viewpoint at full resolution with the
//! standard single-view tile pipeline (all attributes taken from that view)
//! and interlaces afterwards. It shares the projection operators and blend
//! numerics with the clustered rasterizer but none of its reuse machinery,
//! which makes it the pseudo-ground-truth the clustered outputs are
//! measured against.

mod metrics;

pub use metrics::{image_metrics, lightfield_view_metrics, ImageMetricsReport, ViewMetrics};

use crate::camera::Camera;
use crate::display::{interlace, DisplayConfig, InterlacedImage};
use crate::image_io::ImageBuffer;
use crate::raster::blend_math::{splat_alpha, TRANSMITTANCE_MIN};
use crate::raster::splat_pixel_rect;
use crate::scene::GaussianScene;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("mask selects no entries")]
    EmptyMask,
    #[error(transparent)]
    Display(#[from] crate::display::DisplayError),
}

struct ViewSplat {
    mean: glam::Vec2,
    conic: [f32; 3],
    color: [f32; 3],
    eff_opacity: f32,
    rect: (u32, u32, u32, u32),
}

/// Standard single-view tile-based render: per-view projection of all
/// attributes, (tile, depth) keys, stable sort, per-pixel front-to-back
/// blending with the shared numerics.
pub fn render_view_fullframe(
    scene: &GaussianScene,
    camera: &Camera,
    background: [f32; 3],
) -> ImageBuffer {
    let (width, height) = (camera.width, camera.height);
    let grid = crate::display::TileGrid::new(width, height, 16);

    let splats: Vec<Option<(ViewSplat, f32)>> = scene
        .gaussians()
        .par_iter()
        .map(|g| {
            let (mu, _, visible) = crate::camera::project_mean(camera, g.mean);
            if !visible {
                return None;
            }
            let p = crate::camera::project_shared(camera, g, scene.sh_degree()).ok()?;
            let rect = splat_pixel_rect(mu, p.conic.extent, width, height)?;
            Some((
                ViewSplat {
                    mean: mu,
                    conic: [p.conic.a, p.conic.b, p.conic.c],
                    color: p.color,
                    eff_opacity: p.eff_opacity,
                    rect,
                },
                p.depth,
            ))
        })
        .collect();

    let mut splat_list: Vec<ViewSplat> = Vec::new();
    let mut keys: Vec<(u64, u32)> = Vec::new();
    for entry in splats.into_iter().flatten() {
        let (splat, depth) = entry;
        let idx = splat_list.len() as u32;
        let (x0, y0, x1, y1) = splat.rect;
        for ty in y0 / grid.tile_size..=y1 / grid.tile_size {
            for tx in x0 / grid.tile_size..=x1 / grid.tile_size {
                let tile = ty * grid.tiles_x + tx;
                keys.push((((tile as u64) << 32) | depth.to_bits() as u64, idx));
            }
        }
        splat_list.push(splat);
    }
    keys.par_sort_by_key(|(k, _)| *k);

    let mut tile_ranges = vec![(0u32, 0u32); grid.num_tiles() as usize];
    let mut start = 0usize;
    while start < keys.len() {
        let tile = keys[start].0 >> 32;
        let mut end = start + 1;
        while end < keys.len() && keys[end].0 >> 32 == tile {
            end += 1;
        }
        tile_ranges[tile as usize] = (start as u32, end as u32);
        start = end;
    }
    let order: Vec<u32> = keys.into_iter().map(|(_, i)| i).collect();

    let mut image = ImageBuffer::new(width, height);
    let row_len = width as usize * 3;
    image
        .data
        .par_chunks_mut(grid.tile_size as usize * row_len)
        .enumerate()
        .for_each(|(ty, slab)| {
            let ty = ty as u32;
            let y_base = ty * grid.tile_size;
            for tx in 0..grid.tiles_x {
                let t = ty * grid.tiles_x + tx;
                let (s, e) = tile_ranges[t as usize];
                let (x0, y0, x1, y1) = grid.tile_rect(t);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
                        let mut accum = [0.0f32; 3];
                        let mut transmittance = 1.0f32;
                        for &idx in &order[s as usize..e as usize] {
                            let splat = &splat_list[idx as usize];
                            let Some(alpha) = splat_alpha(
                                &splat.conic,
                                splat.eff_opacity,
                                px - splat.mean.x,
                                py - splat.mean.y,
                            ) else {
                                continue;
                            };
                            for c in 0..3 {
                                accum[c] += splat.color[c] * alpha * transmittance;
                            }
                            transmittance *= 1.0 - alpha;
                            if transmittance < TRANSMITTANCE_MIN {
                                break;
                            }
                        }
                        let base = ((y - y_base) as usize * width as usize + x as usize) * 3;
                        for c in 0..3 {
                            slab[base + c] = accum[c] + background[c] * transmittance;
                        }
                    }
                }
            }
        });
    image
}

/// Renders every view of the rig at full resolution and interlaces the
/// results — the pseudo-ground-truth light-field renderer.
pub fn render_lightfield_fullframe(
    scene: &GaussianScene,
    display: &DisplayConfig,
    rig: &[Camera],
    background: [f32; 3],
) -> Result<InterlacedImage, OracleError> {
    let matrix = crate::display::build_viewpoint_matrix(display)?;
    let views: Vec<ImageBuffer> = rig
        .iter()
        .map(|cam| render_view_fullframe(scene, cam, background))
        .collect();
    Ok(interlace(&views, &matrix)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Gaussian3D, GaussianScene};
    use glam::{Quat, Vec3};

    fn camera(width: u32, height: u32) -> Camera {
        Camera {
            rotation: glam::Mat3::IDENTITY,
            translation: Vec3::ZERO,
            fx: 80.0,
            fy: 80.0,
            cx: width as f32 / 2.0,
            cy: height as f32 / 2.0,
            width,
            height,
            znear: crate::camera::DEFAULT_ZNEAR,
        }
    }

    #[test]
    fn empty_scene_renders_background() {
        let scene = GaussianScene::new(vec![], 0).unwrap();
        let img = render_view_fullframe(&scene, &camera(32, 24), [0.1, 0.2, 0.3]);
        for px in img.data.chunks_exact(3) {
            assert_eq!(px, [0.1, 0.2, 0.3]);
        }
    }

    #[test]
    fn centered_isotropic_gaussian_is_radially_symmetric() {
        let g = Gaussian3D {
            mean: Vec3::new(0.0, 0.0, 4.0),
            rotation: Quat::IDENTITY,
            scale: Vec3::splat(0.2),
            opacity: 0.8,
            sh: vec![0.4, 0.4, 0.4],
        };
        let scene = GaussianScene::new(vec![g], 0).unwrap();
        let img = render_view_fullframe(&scene, &camera(64, 64), [0.0; 3]);
        // principal point at (32, 32) => pixel centers mirror around 31.5/32.5
        for y in 0..64u32 {
            for x in 0..64u32 {
                let (mx, my) = (63 - x, 63 - y);
                for c in 0..3 {
                    let a = img.get(x, y, c);
                    let b = img.get(mx, my, c);
                    assert!((a - b).abs() < 1e-5, "asymmetry at ({x},{y}): {a} vs {b}");
                }
            }
        }
    }
}
