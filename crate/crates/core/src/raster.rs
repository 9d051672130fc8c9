//! The clustered subpixel rasterization pipeline: cross-view attribute
//! reuse in projection and key generation, (tile, cluster, depth) sorting,
//! and view-coherent remapped alpha blending into the interlaced image.

use crate::camera::{project_mean, project_shared, Camera, Clustering};
use crate::display::{DisplayConfig, InterlacedImage, RemapTable, TileGrid, ViewpointMatrix};
use crate::image_io::ImageBuffer;
use glam::Vec2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("tile id overflow: {tiles} tiles need more than {bits} bits")]
    TileIdOverflow { tiles: u32, bits: u32 },
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
    #[error(transparent)]
    Display(#[from] crate::display::DisplayError),
    #[error(transparent)]
    Camera(#[from] crate::camera::CameraError),
}

/// Blending constants shared by the clustered pipeline and the full-frame
/// reference renderer; both must evaluate splats with identical numerics.
pub(crate) mod blend_math {
    /// Contributions below this opacity are skipped.
    pub const ALPHA_SKIP: f32 = 1.0 / 255.0;
    /// Upper clamp on a single splat's opacity.
    pub const ALPHA_CLAMP: f32 = 0.99;
    /// Front-to-back traversal stops once transmittance falls below this.
    pub const TRANSMITTANCE_MIN: f32 = 1e-4;

    /// Splat opacity at an offset from its projected mean, or `None` when
    /// the contribution is negligible.
    #[inline(always)]
    pub fn splat_alpha(conic: &[f32; 3], eff_opacity: f32, dx: f32, dy: f32) -> Option<f32> {
        let q = conic[0] * dx * dx + 2.0 * conic[1] * dx * dy + conic[2] * dy * dy;
        if q < 0.0 {
            return None;
        }
        let alpha = eff_opacity * (-0.5 * q).exp();
        if alpha < ALPHA_SKIP {
            return None;
        }
        Some(alpha.min(ALPHA_CLAMP))
    }
}

/// Per-(gaussian, view) projected mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct ViewMean {
    pub pos: Vec2,
    pub visible: bool,
}

/// Per-(gaussian, cluster) attributes shared across the cluster's views.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClusterSplat {
    /// Inverse 2D covariance quadratic form (a, b, c).
    pub conic: [f32; 3],
    /// Ellipse AABB half-extents at the opacity cutoff, pixels.
    pub extent: Vec2,
    pub depth: f32,
    pub color: [f32; 3],
    pub eff_opacity: f32,
    pub visible: bool,
}

/// Dense projection outputs: means per view, everything else per cluster.
#[derive(Debug, Clone)]
pub struct ProjectionBuffers {
    num_gaussians: usize,
    num_views: usize,
    num_clusters: usize,
    /// `gaussian * num_views + view`
    view_means: Vec<ViewMean>,
    /// `gaussian * num_clusters + cluster`
    cluster_splats: Vec<ClusterSplat>,
    /// Gaussians dropped because their projected covariance degenerated.
    pub degenerate_skips: u32,
}

impl ProjectionBuffers {
    /// Assembles buffers from raw rows; the hook tests and simulations use
    /// to drive the blend stage with hand-built splats.
    pub fn from_parts(
        num_views: usize,
        num_clusters: usize,
        view_means: Vec<ViewMean>,
        cluster_splats: Vec<ClusterSplat>,
    ) -> Result<Self, RasterError> {
        if num_views == 0
            || num_clusters == 0
            || view_means.len() % num_views != 0
            || cluster_splats.len() % num_clusters != 0
            || view_means.len() / num_views != cluster_splats.len() / num_clusters
        {
            return Err(RasterError::InconsistentInputs(
                "buffer lengths do not agree on a gaussian count".into(),
            ));
        }
        Ok(Self {
            num_gaussians: view_means.len() / num_views,
            num_views,
            num_clusters,
            view_means,
            cluster_splats,
            degenerate_skips: 0,
        })
    }

    pub fn num_gaussians(&self) -> usize {
        self.num_gaussians
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    #[inline]
    pub fn view_mean(&self, gaussian: usize, view: usize) -> &ViewMean {
        &self.view_means[gaussian * self.num_views + view]
    }

    #[inline]
    pub fn cluster_splat(&self, gaussian: usize, cluster: usize) -> &ClusterSplat {
        &self.cluster_splats[gaussian * self.num_clusters + cluster]
    }

    /// Bytes held by the dense projection buffers.
    pub fn byte_size(&self) -> u64 {
        (self.view_means.len() * std::mem::size_of::<ViewMean>()
            + self.cluster_splats.len() * std::mem::size_of::<ClusterSplat>()) as u64
    }
}

/// Stage 1: per-view means for every (gaussian, view) pair and shared
/// attributes once per (gaussian, cluster) from the representative camera.
/// A Gaussian invisible from the representative is dropped for the whole
/// cluster; degenerate covariances are skipped and counted.
pub fn project_all(
    scene: &crate::scene::GaussianScene,
    views: &[Camera],
    clustering: &Clustering,
) -> Result<ProjectionBuffers, RasterError> {
    if views.len() != clustering.num_views() as usize {
        return Err(RasterError::InconsistentInputs(format!(
            "{} cameras for {} clustered views",
            views.len(),
            clustering.num_views()
        )));
    }
    let m = scene.len();
    let n = views.len();
    let k = clustering.num_clusters() as usize;
    let sh_degree = scene.sh_degree();

    let mut view_means = vec![ViewMean::default(); m * n];
    let mut cluster_splats = vec![ClusterSplat::default(); m * k];

    let degenerate_skips = scene
        .gaussians()
        .par_iter()
        .zip(view_means.par_chunks_mut(n.max(1)))
        .zip(cluster_splats.par_chunks_mut(k.max(1)))
        .map(|((gaussian, means_row), splats_row)| {
            for (j, cam) in views.iter().enumerate() {
                let (pos, _, visible) = project_mean(cam, gaussian.mean);
                means_row[j] = ViewMean { pos, visible };
            }
            let mut skips = 0u32;
            for (c, out) in splats_row.iter_mut().enumerate() {
                let rep = clustering.representative(c as u32) as usize;
                let cam = &views[rep];
                if cam.world_to_camera(gaussian.mean).z < cam.znear {
                    continue; // whole cluster culled
                }
                match project_shared(cam, gaussian, sh_degree) {
                    Ok(p) => {
                        *out = ClusterSplat {
                            conic: [p.conic.a, p.conic.b, p.conic.c],
                            extent: p.conic.extent,
                            depth: p.depth,
                            color: p.color,
                            eff_opacity: p.eff_opacity,
                            visible: true,
                        };
                    }
                    Err(_) => skips += 1,
                }
            }
            skips
        })
        .sum();

    Ok(ProjectionBuffers {
        num_gaussians: m,
        num_views: n,
        num_clusters: k,
        view_means,
        cluster_splats,
        degenerate_skips,
    })
}

/// Inclusive pixel rect `[x0..=x1, y0..=y1]` touched by an ellipse with the
/// given center and AABB half-extents, clipped to the panel. Pixel centers
/// sit at `(x + 0.5, y + 0.5)`.
pub(crate) fn splat_pixel_rect(
    mu: Vec2,
    extent: Vec2,
    width: u32,
    height: u32,
) -> Option<(u32, u32, u32, u32)> {
    if extent.x <= 0.0 || extent.y <= 0.0 {
        return None;
    }
    let x0 = (mu.x - extent.x - 0.5).ceil().max(0.0) as i64;
    let y0 = (mu.y - extent.y - 0.5).ceil().max(0.0) as i64;
    let x1 = ((mu.x + extent.x - 0.5).floor().min(width as f32) as i64).min(width as i64 - 1);
    let y1 = ((mu.y + extent.y - 0.5).floor().min(height as f32) as i64).min(height as i64 - 1);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some((x0 as u32, y0 as u32, x1 as u32, y1 as u32))
}

/// Number of low bits reserved for the cluster id in the packed key.
pub fn cluster_bits(num_clusters: u32) -> u32 {
    num_clusters.max(2).next_power_of_two().trailing_zeros()
}

/// Packs (tile, cluster, depth) into one radix-sortable 64-bit key: tile id
/// in the top bits, cluster id next, and the raw bit pattern of the positive
/// f32 depth in the low 32 so unsigned order equals float order.
#[inline]
pub fn pack_key(tile: u32, cluster: u32, bit_k: u32, depth: f32) -> u64 {
    ((tile as u64) << (32 + bit_k)) | ((cluster as u64) << 32) | depth.to_bits() as u64
}

/// Unsorted (key, gaussian index) pairs plus the key-space geometry.
#[derive(Debug, Clone)]
pub struct SplatKeys {
    pub entries: Vec<(u64, u32)>,
    pub num_tiles: u32,
    pub num_clusters: u32,
    pub bit_k: u32,
}

/// Stage 2: one key per (gaussian, cluster, tile), where the tile set is the
/// union over the cluster's views of tiles overlapped by the splat ellipse.
/// Tiles covered from several views are emitted once.
pub fn generate_keys(
    buffers: &ProjectionBuffers,
    clustering: &Clustering,
    display: &DisplayConfig,
) -> Result<SplatKeys, RasterError> {
    generate_keys_inflated(buffers, clustering, display, 0.0)
}

/// [`generate_keys`] with every splat extent inflated by `inflate_px`
/// pixels. Diagnostic for the superfluous-splat tolerance: the extra keys
/// name tiles the Gaussian barely (or never) touches, and blending must be
/// nearly unchanged because those contributions fall below the opacity skip.
pub fn generate_keys_inflated(
    buffers: &ProjectionBuffers,
    clustering: &Clustering,
    display: &DisplayConfig,
    inflate_px: f32,
) -> Result<SplatKeys, RasterError> {
    if buffers.num_views() != clustering.num_views() as usize
        || buffers.num_clusters() != clustering.num_clusters() as usize
    {
        return Err(RasterError::InconsistentInputs(
            "projection buffers do not match the clustering".into(),
        ));
    }
    let grid = display.tile_grid();
    let num_clusters = clustering.num_clusters();
    let bit_k = cluster_bits(num_clusters);
    let tile_bits = 32 - bit_k;
    if u64::from(grid.num_tiles()) > 1u64 << tile_bits {
        return Err(RasterError::TileIdOverflow {
            tiles: grid.num_tiles(),
            bits: tile_bits,
        });
    }

    let per_gaussian: Vec<Vec<(u64, u32)>> = (0..buffers.num_gaussians())
        .into_par_iter()
        .map(|i| {
            let mut keys = Vec::new();
            let mut rects: Vec<(u32, u32, u32, u32)> = Vec::new();
            for c in 0..num_clusters {
                let splat = buffers.cluster_splat(i, c as usize);
                if !splat.visible {
                    continue;
                }
                rects.clear();
                for &j in clustering.members(c) {
                    let vm = buffers.view_mean(i, j as usize);
                    if !vm.visible {
                        continue;
                    }
                    if let Some(r) =
                        splat_pixel_rect(vm.pos, splat.extent, display.width, display.height)
                    {
                        let tr = (
                            r.0 / grid.tile_size,
                            r.1 / grid.tile_size,
                            r.2 / grid.tile_size,
                            r.3 / grid.tile_size,
                        );
                        if !rects.contains(&tr) {
                            rects.push(tr);
                        }
                    }
                }
                if rects.is_empty() {
                    continue;
                }
                emit_tile_union(&rects, &grid, |tile| {
                    keys.push((pack_key(tile, c, bit_k, splat.depth), i as u32));
                });
            }
            keys
        })
        .collect();

    let total = per_gaussian.iter().map(Vec::len).sum();
    let mut entries = Vec::with_capacity(total);
    for keys in per_gaussian {
        entries.extend_from_slice(&keys);
    }
    Ok(SplatKeys {
        entries,
        num_tiles: grid.num_tiles(),
        num_clusters,
        bit_k,
    })
}

/// Visits every tile in the union of inclusive tile rects, in ascending
/// tile id order, each tile exactly once.
fn emit_tile_union(
    rects: &[(u32, u32, u32, u32)],
    grid: &TileGrid,
    mut emit: impl FnMut(u32),
) {
    let ty_min = rects.iter().map(|r| r.1).min().unwrap();
    let ty_max = rects.iter().map(|r| r.3).max().unwrap();
    let mut spans: Vec<(u32, u32)> = Vec::with_capacity(rects.len());
    for ty in ty_min..=ty_max {
        spans.clear();
        for r in rects {
            if r.1 <= ty && ty <= r.3 {
                spans.push((r.0, r.2));
            }
        }
        if spans.is_empty() {
            continue;
        }
        spans.sort_unstable();
        let mut cur = spans[0];
        let mut merged: Vec<(u32, u32)> = Vec::with_capacity(spans.len());
        for &s in &spans[1..] {
            if s.0 <= cur.1 + 1 {
                cur.1 = cur.1.max(s.1);
            } else {
                merged.push(cur);
                cur = s;
            }
        }
        merged.push(cur);
        for (x0, x1) in merged {
            for tx in x0..=x1 {
                emit(ty * grid.tiles_x + tx);
            }
        }
    }
}

/// Sorted splat ranges: `(tile, cluster) -> [start, end)` offsets into the
/// sorted payload array.
#[derive(Debug, Clone)]
pub struct GaussianRangeTable {
    num_tiles: u32,
    num_clusters: u32,
    ranges: Vec<(u32, u32)>,
}

impl GaussianRangeTable {
    pub fn num_tiles(&self) -> u32 {
        self.num_tiles
    }

    pub fn num_clusters(&self) -> u32 {
        self.num_clusters
    }

    #[inline]
    pub fn get(&self, tile: u32, cluster: u32) -> (u32, u32) {
        self.ranges[(tile * self.num_clusters + cluster) as usize]
    }

    /// Non-empty ranges in ascending (tile, cluster) order.
    pub fn iter_nonempty(&self) -> impl Iterator<Item = (u32, u32, u32, u32)> + '_ {
        self.ranges.iter().enumerate().filter_map(move |(i, r)| {
            (r.0 != r.1).then(|| {
                (
                    i as u32 / self.num_clusters,
                    i as u32 % self.num_clusters,
                    r.0,
                    r.1,
                )
            })
        })
    }

    pub fn byte_size(&self) -> u64 {
        (self.ranges.len() * std::mem::size_of::<(u32, u32)>()) as u64
    }
}

/// Depth-sorted payloads plus their range table.
#[derive(Debug, Clone)]
pub struct SortedSplats {
    pub payload: Vec<u32>,
    pub ranges: GaussianRangeTable,
}

/// Stage 3: stable sort by the packed key; equal keys keep emission order.
pub fn sort_splats(keys: SplatKeys) -> SortedSplats {
    let mut entries = keys.entries;
    entries.par_sort_by_key(|(key, _)| *key);

    let mut ranges = vec![(0u32, 0u32); (keys.num_tiles * keys.num_clusters) as usize];
    let bit_k = keys.bit_k;
    let mut start = 0usize;
    while start < entries.len() {
        let group = entries[start].0 >> 32;
        let mut end = start + 1;
        while end < entries.len() && entries[end].0 >> 32 == group {
            end += 1;
        }
        let tile = (group >> bit_k) as u32;
        let cluster = (group & ((1 << bit_k) - 1)) as u32;
        ranges[(tile * keys.num_clusters + cluster) as usize] = (start as u32, end as u32);
        start = end;
    }

    SortedSplats {
        payload: entries.into_iter().map(|(_, i)| i).collect(),
        ranges: GaussianRangeTable {
            num_tiles: keys.num_tiles,
            num_clusters: keys.num_clusters,
            ranges,
        },
    }
}

/// Thread-to-subpixel assignment order for the blend stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendOrder {
    /// Viewpoint-sorted ranks through the remap table.
    Remapped,
    /// Plain row-major subpixel order within each tile.
    RowMajor,
}

struct RunPixel {
    px: f32,
    py: f32,
    chan: usize,
    view: usize,
    out: usize,
    accum: f32,
    transmittance: f32,
    alive: bool,
}

/// Stage 4: front-to-back alpha blending per subpixel.
///
/// Threads walk ranks in `order`; consecutive ranks sharing one
/// (tile, cluster) list are processed as a run so each splat record is
/// fetched once per run — the software analog of a warp sharing one
/// coalesced read. Per-subpixel results are independent of the order.
pub fn blend(
    sorted: &SortedSplats,
    buffers: &ProjectionBuffers,
    remap: &RemapTable,
    matrix: &ViewpointMatrix,
    clustering: &Clustering,
    background: [f32; 3],
    order: BlendOrder,
) -> Result<InterlacedImage, RasterError> {
    let config = *remap.config();
    if matrix.config() != &config {
        return Err(RasterError::InconsistentInputs(
            "remap table and viewpoint matrix configs differ".into(),
        ));
    }
    if clustering.num_views() != config.num_views {
        return Err(RasterError::InconsistentInputs(
            "clustering view count differs from display".into(),
        ));
    }
    if sorted.ranges.num_clusters() != clustering.num_clusters()
        || buffers.num_clusters() != clustering.num_clusters() as usize
        || buffers.num_views() != clustering.num_views() as usize
    {
        return Err(RasterError::InconsistentInputs(
            "range table or buffers do not match the clustering".into(),
        ));
    }
    let grid = *remap.grid();
    if sorted.ranges.num_tiles() != grid.num_tiles() {
        return Err(RasterError::InconsistentInputs(
            "range table tile count differs from panel grid".into(),
        ));
    }

    let mut image = ImageBuffer::new(config.width, config.height);
    let slab_rows = grid.tile_size as usize;
    let row_len = config.width as usize * 3;

    image
        .data
        .par_chunks_mut(slab_rows * row_len)
        .enumerate()
        .for_each(|(ty, slab)| {
            let ty = ty as u32;
            let y_base = ty * grid.tile_size;
            let mut rowmajor: Vec<u32> = Vec::new();
            let mut run: Vec<RunPixel> = Vec::new();

            for tx in 0..grid.tiles_x {
                let t = ty * grid.tiles_x + tx;
                let perm: &[u32] = match order {
                    BlendOrder::Remapped => remap.tile_perm(t),
                    BlendOrder::RowMajor => {
                        rowmajor.clear();
                        rowmajor.extend(grid.tile_subpixels(t));
                        &rowmajor
                    }
                };

                let mut r = 0;
                while r < perm.len() {
                    let first = clustering.cluster_of(matrix.get_linear(perm[r] as usize));
                    let mut r_end = r + 1;
                    while r_end < perm.len()
                        && clustering.cluster_of(matrix.get_linear(perm[r_end] as usize)) == first
                    {
                        r_end += 1;
                    }

                    run.clear();
                    for &s in &perm[r..r_end] {
                        let u = s % 3;
                        let p = s / 3;
                        let (x, y) = (p % config.width, p / config.width);
                        run.push(RunPixel {
                            px: x as f32 + 0.5,
                            py: y as f32 + 0.5,
                            chan: u as usize,
                            view: matrix.get_linear(s as usize) as usize,
                            out: ((y - y_base) as usize * config.width as usize
                                + x as usize)
                                * 3
                                + u as usize,
                            accum: 0.0,
                            transmittance: 1.0,
                            alive: true,
                        });
                    }

                    blend_run(sorted, buffers, t, first, &mut run);

                    for p in &run {
                        slab[p.out] = p.accum + background[p.chan] * p.transmittance;
                    }
                    r = r_end;
                }
            }
        });

    Ok(InterlacedImage { image, config })
}

/// Walks one (tile, cluster) list front to back over a run of subpixels.
fn blend_run(sorted: &SortedSplats, buffers: &ProjectionBuffers, tile: u32, cluster: u32, run: &mut [RunPixel]) {
    use blend_math::*;
    let (start, end) = sorted.ranges.get(tile, cluster);
    let mut alive = run.len();
    for e in start..end {
        if alive == 0 {
            break;
        }
        let i = sorted.payload[e as usize] as usize;
        let splat = buffers.cluster_splat(i, cluster as usize);
        let conic = splat.conic;
        let eff = splat.eff_opacity;
        let color = splat.color;
        let mean_row = &buffers.view_means[i * buffers.num_views()
            ..i * buffers.num_views() + buffers.num_views()];
        for p in run.iter_mut() {
            if !p.alive {
                continue;
            }
            let vm = &mean_row[p.view];
            if !vm.visible {
                continue;
            }
            let Some(alpha) = splat_alpha(&conic, eff, p.px - vm.pos.x, p.py - vm.pos.y) else {
                continue;
            };
            p.accum += color[p.chan] * alpha * p.transmittance;
            p.transmittance *= 1.0 - alpha;
            if p.transmittance < TRANSMITTANCE_MIN {
                p.alive = false;
                alive -= 1;
            }
        }
    }
}

/// Pipeline toggles mirroring the ablation rows: `disable_reuse` forces
/// singleton clusters and `disable_remap` keeps row-major thread order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub cluster_size: u32,
    pub disable_reuse: bool,
    pub disable_remap: bool,
    pub background: [f32; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            cluster_size: 1,
            disable_reuse: false,
            disable_remap: false,
            background: [0.0; 3],
        }
    }
}

/// Wall time per stage plus the pair count and peak pipeline buffer bytes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StageTimings {
    pub projection_ms: f64,
    pub key_gen_ms: f64,
    pub sort_ms: f64,
    pub blend_ms: f64,
    /// Total Gaussian-tile pairs emitted by key generation.
    pub pair_count: u64,
    /// Bytes held by the per-frame pipeline buffers (projection buffers,
    /// keys, sorted payload, range table, output image). Reused display
    /// tables are not counted.
    pub peak_buffer_bytes: u64,
}

/// Runs the full pipeline with freshly built display tables.
pub fn render_lightfield(
    scene: &crate::scene::GaussianScene,
    display: &DisplayConfig,
    rig: &[Camera],
    options: &RenderOptions,
) -> Result<(InterlacedImage, StageTimings), RasterError> {
    let matrix = crate::display::build_viewpoint_matrix(display)?;
    let remap = crate::display::build_remap_table(&matrix, display)?;
    render_lightfield_with_tables(scene, rig, &matrix, &remap, options)
}

/// Runs the pipeline against precomputed display tables (the tables depend
/// only on display parameters and are reusable across frames).
pub fn render_lightfield_with_tables(
    scene: &crate::scene::GaussianScene,
    rig: &[Camera],
    matrix: &ViewpointMatrix,
    remap: &RemapTable,
    options: &RenderOptions,
) -> Result<(InterlacedImage, StageTimings), RasterError> {
    let display = *matrix.config();
    if rig.len() != display.num_views as usize {
        return Err(RasterError::InconsistentInputs(format!(
            "rig has {} cameras, display expects {}",
            rig.len(),
            display.num_views
        )));
    }
    let cluster_size = if options.disable_reuse {
        1
    } else {
        options.cluster_size.max(1)
    };
    let clustering = crate::camera::cluster_views(display.num_views, cluster_size)?;

    let t0 = Instant::now();
    let buffers = project_all(scene, rig, &clustering)?;
    let projection_ms = t0.elapsed().as_secs_f64() * 1e3;

    let t1 = Instant::now();
    let keys = generate_keys(&buffers, &clustering, &display)?;
    let key_gen_ms = t1.elapsed().as_secs_f64() * 1e3;
    let pair_count = keys.entries.len() as u64;
    let keys_bytes = (keys.entries.len() * std::mem::size_of::<(u64, u32)>()) as u64;

    let t2 = Instant::now();
    let sorted = sort_splats(keys);
    let sort_ms = t2.elapsed().as_secs_f64() * 1e3;

    let order = if options.disable_remap {
        BlendOrder::RowMajor
    } else {
        BlendOrder::Remapped
    };
    let t3 = Instant::now();
    let image = blend(
        &sorted,
        &buffers,
        remap,
        matrix,
        &clustering,
        options.background,
        order,
    )?;
    let blend_ms = t3.elapsed().as_secs_f64() * 1e3;

    let peak_buffer_bytes = buffers.byte_size()
        + keys_bytes
        + (sorted.payload.len() * 4) as u64
        + sorted.ranges.byte_size()
        + (image.image.data.len() * 4) as u64;

    Ok((
        image,
        StageTimings {
            projection_ms,
            key_gen_ms,
            sort_ms,
            blend_ms,
            pair_count,
            peak_buffer_bytes,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::cluster_views;
    use crate::display::{build_remap_table, build_viewpoint_matrix};
    use glam::Vec2;

    fn display(width: u32, height: u32, num_views: u32) -> DisplayConfig {
        DisplayConfig {
            width,
            height,
            tilt: 0.0,
            line_count: num_views as f32,
            offset: 0.0,
            num_views,
            tile_size: 16,
        }
    }

    fn single_view_setup(
        splats: Vec<ClusterSplat>,
        means: Vec<ViewMean>,
    ) -> (ProjectionBuffers, DisplayConfig) {
        let buffers = ProjectionBuffers::from_parts(1, 1, means, splats).unwrap();
        (buffers, display(16, 16, 1))
    }

    fn centered_splat(eff_opacity: f32) -> ClusterSplat {
        ClusterSplat {
            conic: [1.0, 0.0, 1.0],
            extent: Vec2::splat(4.0),
            depth: 2.0,
            color: [1.0, 1.0, 1.0],
            eff_opacity,
            visible: true,
        }
    }

    fn mean_at(x: u32, y: u32) -> ViewMean {
        ViewMean {
            pos: Vec2::new(x as f32 + 0.5, y as f32 + 0.5),
            visible: true,
        }
    }

    #[test]
    fn pack_key_matches_bit_layout() {
        // t=5, K=8 (bit_k=3), depth 1.0f
        assert_eq!(cluster_bits(8), 3);
        let key = pack_key(5, 2, 3, 1.0);
        assert_eq!(key, 5 * (1u64 << 35) + 2 * (1u64 << 32) + 0x3F80_0000);
    }

    #[test]
    fn cluster_bits_handles_small_counts() {
        assert_eq!(cluster_bits(1), 1);
        assert_eq!(cluster_bits(2), 1);
        assert_eq!(cluster_bits(3), 2);
        assert_eq!(cluster_bits(4), 2);
        assert_eq!(cluster_bits(5), 3);
    }

    #[test]
    fn sort_orders_by_depth_within_one_list() {
        let keys = SplatKeys {
            entries: vec![
                (pack_key(0, 0, 1, 3.0), 10),
                (pack_key(0, 0, 1, 1.0), 11),
                (pack_key(0, 0, 1, 2.0), 12),
            ],
            num_tiles: 1,
            num_clusters: 1,
            bit_k: 1,
        };
        let sorted = sort_splats(keys);
        assert_eq!(sorted.payload, vec![11, 12, 10]);
        assert_eq!(sorted.ranges.get(0, 0), (0, 3));
    }

    #[test]
    fn sort_is_stable_for_identical_keys() {
        let keys = SplatKeys {
            entries: vec![(pack_key(2, 1, 2, 5.0), 7), (pack_key(2, 1, 2, 5.0), 3)],
            num_tiles: 4,
            num_clusters: 3,
            bit_k: 2,
        };
        let sorted = sort_splats(keys);
        assert_eq!(sorted.payload, vec![7, 3]);
        assert_eq!(sorted.ranges.get(2, 1), (0, 2));
        assert_eq!(sorted.ranges.get(0, 0), (0, 0));
    }

    #[test]
    fn range_table_covers_sorted_array_in_order() {
        let keys = SplatKeys {
            entries: vec![
                (pack_key(1, 0, 1, 1.0), 0),
                (pack_key(0, 1, 1, 2.0), 1),
                (pack_key(0, 0, 1, 1.5), 2),
                (pack_key(1, 0, 1, 0.5), 3),
            ],
            num_tiles: 2,
            num_clusters: 2,
            bit_k: 1,
        };
        let sorted = sort_splats(keys);
        let mut cursor = 0;
        for (_, _, s, e) in sorted.ranges.iter_nonempty() {
            assert_eq!(s, cursor);
            cursor = e;
        }
        assert_eq!(cursor as usize, sorted.payload.len());
    }

    fn blend_single_view(
        buffers: &ProjectionBuffers,
        cfg: &DisplayConfig,
        entries: Vec<(u64, u32)>,
        background: [f32; 3],
    ) -> InterlacedImage {
        let matrix = build_viewpoint_matrix(cfg).unwrap();
        let remap = build_remap_table(&matrix, cfg).unwrap();
        let clustering = cluster_views(1, 1).unwrap();
        let sorted = sort_splats(SplatKeys {
            entries,
            num_tiles: cfg.tile_grid().num_tiles(),
            num_clusters: 1,
            bit_k: 1,
        });
        blend(
            &sorted,
            buffers,
            &remap,
            &matrix,
            &clustering,
            background,
            BlendOrder::Remapped,
        )
        .unwrap()
    }

    #[test]
    fn centered_half_opacity_splat_blends_to_half() {
        let (buffers, cfg) = single_view_setup(vec![centered_splat(0.5)], vec![mean_at(3, 4)]);
        let out = blend_single_view(&buffers, &cfg, vec![(pack_key(0, 0, 1, 2.0), 0)], [0.0; 3]);
        for u in 0..3 {
            assert_eq!(out.image.get(3, 4, u), 0.5);
        }
    }

    #[test]
    fn two_coincident_half_splats_blend_to_three_quarters() {
        let (buffers, cfg) = single_view_setup(
            vec![centered_splat(0.5), centered_splat(0.5)],
            vec![mean_at(3, 4), mean_at(3, 4)],
        );
        let out = blend_single_view(
            &buffers,
            &cfg,
            vec![(pack_key(0, 0, 1, 2.0), 0), (pack_key(0, 0, 1, 2.0), 1)],
            [0.0; 3],
        );
        for u in 0..3 {
            assert_eq!(out.image.get(3, 4, u), 0.75);
        }
    }

    #[test]
    fn empty_list_blends_to_background() {
        let (buffers, cfg) = single_view_setup(vec![centered_splat(0.5)], vec![mean_at(3, 4)]);
        let bg = [0.125, 0.25, 0.5];
        let out = blend_single_view(&buffers, &cfg, vec![], bg);
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                for u in 0..3 {
                    assert_eq!(out.image.get(x, y, u), bg[u as usize]);
                }
            }
        }
    }

    #[test]
    fn remapped_and_rowmajor_orders_agree_bit_exactly() {
        let cfg = display(48, 32, 4);
        let matrix = build_viewpoint_matrix(&cfg).unwrap();
        let remap = build_remap_table(&matrix, &cfg).unwrap();
        let clustering = cluster_views(4, 2).unwrap();
        let mut means = Vec::new();
        let mut splats = Vec::new();
        for g in 0..6u32 {
            for j in 0..4u32 {
                means.push(ViewMean {
                    pos: Vec2::new(8.0 + 5.0 * g as f32 + 0.3 * j as f32, 9.0 + 2.0 * g as f32),
                    visible: true,
                });
            }
            for _k in 0..2u32 {
                splats.push(ClusterSplat {
                    conic: [0.05, 0.01, 0.07],
                    extent: Vec2::splat(12.0),
                    depth: 1.0 + g as f32,
                    color: [0.9, 0.4, 0.2],
                    eff_opacity: 0.6,
                    visible: true,
                });
            }
        }
        let buffers = ProjectionBuffers::from_parts(4, 2, means, splats).unwrap();
        let clustering_ref = &clustering;
        let mut entries = Vec::new();
        for g in 0..6u32 {
            for k in 0..2u32 {
                for t in 0..cfg.tile_grid().num_tiles() {
                    entries.push((pack_key(t, k, 1, 1.0 + g as f32), g));
                }
            }
        }
        let sorted = sort_splats(SplatKeys {
            entries,
            num_tiles: cfg.tile_grid().num_tiles(),
            num_clusters: 2,
            bit_k: 1,
        });
        let a = blend(&sorted, &buffers, &remap, &matrix, clustering_ref, [0.0; 3], BlendOrder::Remapped).unwrap();
        let b = blend(&sorted, &buffers, &remap, &matrix, clustering_ref, [0.0; 3], BlendOrder::RowMajor).unwrap();
        assert_eq!(a.image.data, b.image.data);
    }

    #[test]
    fn union_of_coincident_view_tiles_emits_once() {
        // 4 views in one cluster, all means inside the same tile: 1 key.
        let means = (0..4)
            .map(|j| ViewMean {
                pos: Vec2::new(5.0 + 0.2 * j as f32, 6.0),
                visible: true,
            })
            .collect();
        let splats = vec![ClusterSplat {
            conic: [1.0, 0.0, 1.0],
            extent: Vec2::splat(2.0),
            depth: 3.0,
            color: [1.0; 3],
            eff_opacity: 0.9,
            visible: true,
        }];
        let buffers = ProjectionBuffers::from_parts(4, 1, means, splats).unwrap();
        let clustering = cluster_views(4, 4).unwrap();
        let cfg = display(16, 16, 4);
        let keys = generate_keys(&buffers, &clustering, &cfg).unwrap();
        assert_eq!(keys.entries.len(), 1);
        assert_eq!(keys.entries[0].1, 0);
    }

    #[test]
    fn single_gaussian_single_tile_single_key() {
        let buffers = ProjectionBuffers::from_parts(
            1,
            1,
            vec![mean_at(8, 8)],
            vec![centered_splat(0.8)],
        )
        .unwrap();
        let clustering = cluster_views(1, 1).unwrap();
        let keys = generate_keys(&buffers, &clustering, &display(16, 16, 1)).unwrap();
        assert_eq!(keys.entries.len(), 1);
    }

    #[test]
    fn tile_id_overflow_is_detected() {
        // 2^31 tiles cannot fit in 32 - bit_k bits once bit_k >= 2.
        let buffers = ProjectionBuffers::from_parts(
            3,
            3,
            vec![mean_at(0, 0); 3],
            vec![centered_splat(0.5); 3],
        )
        .unwrap();
        let clustering = cluster_views(3, 1).unwrap();
        let cfg = DisplayConfig {
            width: 1 << 16,
            height: 1 << 15,
            tilt: 0.0,
            line_count: 3.0,
            offset: 0.0,
            num_views: 3,
            tile_size: 1,
        };
        assert!(matches!(
            generate_keys(&buffers, &clustering, &cfg),
            Err(RasterError::TileIdOverflow { .. })
        ));
    }

    #[test]
    fn splat_pixel_rect_clips_and_rejects() {
        assert_eq!(
            splat_pixel_rect(Vec2::new(8.0, 8.0), Vec2::splat(1.0), 16, 16),
            Some((7, 7, 8, 8))
        );
        assert_eq!(splat_pixel_rect(Vec2::new(-50.0, 8.0), Vec2::splat(1.0), 16, 16), None);
        assert_eq!(splat_pixel_rect(Vec2::new(8.0, 8.0), Vec2::ZERO, 16, 16), None);
        // overhanging the right edge clips to the last column
        assert_eq!(
            splat_pixel_rect(Vec2::new(15.9, 8.0), Vec2::splat(3.0), 16, 16),
            Some((13, 5, 15, 10))
        );
    }
}
