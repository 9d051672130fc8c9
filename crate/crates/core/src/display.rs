//! Lenticular display model: the per-subpixel viewpoint index matrix, the
//! view-coherent remap table, and image interlacing.

use crate::image_io::ImageBuffer;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DisplayError {
    #[error("invalid display config: {0}")]
    InvalidConfig(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("expected {expected} views, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("view index {view} out of range 0..{num_views}")]
    ViewOutOfRange { view: u32, num_views: u32 },
}

/// Lenticular panel parameters.
///
/// `line_count` is the grating pitch in subpixel units and may be
/// fractional; `tilt` is in radians. `offset` is the lens-to-panel
/// misalignment in subpixel units and may have either sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplayConfig {
    pub width: u32,
    pub height: u32,
    pub tilt: f32,
    pub line_count: f32,
    pub offset: f32,
    pub num_views: u32,
    pub tile_size: u32,
}

impl DisplayConfig {
    pub fn validate(&self) -> Result<(), DisplayError> {
        if self.width < 1 || self.height < 1 {
            return Err(DisplayError::InvalidConfig("zero panel dimension".into()));
        }
        if self.num_views < 1 {
            return Err(DisplayError::InvalidConfig("num_views must be >= 1".into()));
        }
        if self.num_views > u16::MAX as u32 {
            return Err(DisplayError::InvalidConfig(format!(
                "num_views {} exceeds the supported maximum {}",
                self.num_views,
                u16::MAX
            )));
        }
        if self.tile_size < 1 {
            return Err(DisplayError::InvalidConfig("tile_size must be >= 1".into()));
        }
        if !(self.line_count > 0.0 && self.line_count.is_finite()) {
            return Err(DisplayError::InvalidConfig("line_count must be > 0".into()));
        }
        if !(self.tilt.is_finite() && self.offset.is_finite()) {
            return Err(DisplayError::InvalidConfig("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Parses the flat `key=value` config file format. Angles in the file
    /// are degrees; `tile` defaults to 16.
    pub fn from_key_values(text: &str) -> Result<Self, DisplayError> {
        let mut width = None;
        let mut height = None;
        let mut tilt_deg: Option<f32> = None;
        let mut line_count = None;
        let mut offset = None;
        let mut views = None;
        let mut tile = 16u32;

        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                DisplayError::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |k: &str| DisplayError::InvalidConfig(format!("bad value for {k}"));
            match key {
                "width" => width = Some(value.parse().map_err(|_| bad(key))?),
                "height" => height = Some(value.parse().map_err(|_| bad(key))?),
                "tilt_deg" => tilt_deg = Some(value.parse().map_err(|_| bad(key))?),
                "line_count" => line_count = Some(value.parse().map_err(|_| bad(key))?),
                "offset" => offset = Some(value.parse().map_err(|_| bad(key))?),
                "views" => views = Some(value.parse().map_err(|_| bad(key))?),
                "tile" => tile = value.parse().map_err(|_| bad(key))?,
                other => {
                    return Err(DisplayError::InvalidConfig(format!("unknown key {other:?}")));
                }
            }
        }

        let missing = |k: &str| DisplayError::InvalidConfig(format!("missing key {k}"));
        let config = Self {
            width: width.ok_or_else(|| missing("width"))?,
            height: height.ok_or_else(|| missing("height"))?,
            tilt: tilt_deg.ok_or_else(|| missing("tilt_deg"))?.to_radians(),
            line_count: line_count.ok_or_else(|| missing("line_count"))?,
            offset: offset.ok_or_else(|| missing("offset"))?,
            num_views: views.ok_or_else(|| missing("views"))?,
            tile_size: tile,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "width={}\nheight={}\ntilt_deg={}\nline_count={}\noffset={}\nviews={}\ntile={}\n",
            self.width,
            self.height,
            self.tilt.to_degrees(),
            self.line_count,
            self.offset,
            self.num_views,
            self.tile_size
        )
    }

    pub fn tile_grid(&self) -> TileGrid {
        TileGrid::new(self.width, self.height, self.tile_size)
    }

    pub fn subpixel_count(&self) -> usize {
        self.width as usize * self.height as usize * 3
    }
}

/// The fixed tile partition of a panel. Boundary tiles are clipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
}

impl TileGrid {
    pub fn new(width: u32, height: u32, tile_size: u32) -> Self {
        Self {
            width,
            height,
            tile_size,
            tiles_x: width.div_ceil(tile_size),
            tiles_y: height.div_ceil(tile_size),
        }
    }

    pub fn num_tiles(&self) -> u32 {
        self.tiles_x * self.tiles_y
    }

    pub fn tile_of_pixel(&self, x: u32, y: u32) -> u32 {
        (y / self.tile_size) * self.tiles_x + x / self.tile_size
    }

    /// Pixel rect `[x0, x1) x [y0, y1)` of tile `t`, clipped to the panel.
    pub fn tile_rect(&self, t: u32) -> (u32, u32, u32, u32) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (
            x0,
            y0,
            (x0 + self.tile_size).min(self.width),
            (y0 + self.tile_size).min(self.height),
        )
    }

    pub fn tile_subpixel_count(&self, t: u32) -> u32 {
        let (x0, y0, x1, y1) = self.tile_rect(t);
        (x1 - x0) * (y1 - y0) * 3
    }

    /// Global subpixel linear ids of tile `t` in row-major, channel-minor
    /// order.
    pub fn tile_subpixels(&self, t: u32) -> impl Iterator<Item = u32> + '_ {
        let (x0, y0, x1, y1) = self.tile_rect(t);
        let width = self.width;
        (y0..y1).flat_map(move |y| {
            (x0..x1).flat_map(move |x| (0..3).map(move |u| (y * width + x) * 3 + u))
        })
    }
}

/// Per-subpixel viewpoint assignment derived from the lenticular geometry:
/// `j = floor(N * x_offset / L_x)` with
/// `x_offset = (3x + u + 3y tan(alpha) - K_offset) mod L_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewpointMatrix {
    config: DisplayConfig,
    data: Vec<u16>,
}

/// Evaluates the lenticular assignment for one subpixel in f64; the
/// `3y tan(alpha)` term accumulates too much error in f32 at 4K heights.
#[inline]
fn view_index(config: &DisplayConfig, x: u32, y: u32, u: u32) -> u16 {
    let lx = config.line_count as f64;
    let d_offset =
        (3 * x + u) as f64 + 3.0 * y as f64 * (config.tilt as f64).tan() - config.offset as f64;
    let mut x_offset = d_offset.rem_euclid(lx);
    if x_offset >= lx {
        // rem_euclid of a tiny negative value can round up to exactly lx
        x_offset = 0.0;
    }
    let j = (config.num_views as f64 * x_offset / lx).floor() as i64;
    j.clamp(0, config.num_views as i64 - 1) as u16
}

/// Builds the viewpoint index matrix for a display config.
pub fn build_viewpoint_matrix(config: &DisplayConfig) -> Result<ViewpointMatrix, DisplayError> {
    config.validate()?;
    let row_len = config.width as usize * 3;
    let mut data = vec![0u16; config.subpixel_count()];
    data.par_chunks_mut(row_len)
        .enumerate()
        .for_each(|(y, row)| {
            let y = y as u32;
            for x in 0..config.width {
                for u in 0..3 {
                    row[(x * 3 + u) as usize] = view_index(config, x, y, u);
                }
            }
        });
    Ok(ViewpointMatrix {
        config: *config,
        data,
    })
}

impl ViewpointMatrix {
    pub fn config(&self) -> &DisplayConfig {
        &self.config
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, u: u32) -> u32 {
        self.data[((y * self.config.width + x) * 3 + u) as usize] as u32
    }

    /// View index by global subpixel linear index `(y*W + x)*3 + u`.
    #[inline]
    pub fn get_linear(&self, subpixel: usize) -> u32 {
        self.data[subpixel] as u32
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.data
    }

    /// CSV export: one row per panel row, entries x-major and channel-minor.
    pub fn to_csv(&self) -> String {
        let row_len = self.config.width as usize * 3;
        let mut out = String::with_capacity(self.data.len() * 3);
        for row in self.data.chunks_exact(row_len) {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                out.push_str(itoa(*v).as_str());
                first = false;
            }
            out.push('\n');
        }
        out
    }

    /// False-color image, one pixel per subpixel (width `3W`), view index
    /// mapped to hue.
    pub fn to_false_color(&self) -> ImageBuffer {
        let n = self.config.num_views as f32;
        let mut img = ImageBuffer::new(self.config.width * 3, self.config.height);
        for (i, v) in self.data.iter().enumerate() {
            let rgb = crate::scene::hsv_to_rgb(*v as f32 / n * 360.0, 0.9, 0.95);
            img.data[i * 3..i * 3 + 3].copy_from_slice(&rgb);
        }
        img
    }
}

fn itoa(v: u16) -> String {
    v.to_string()
}

/// Per-tile permutation of subpixels sorted by viewpoint index.
///
/// Ranks are assigned tile-major: tile `t` owns the contiguous rank span
/// `[offset(t), offset(t+1))`. Within a tile the subpixels are listed in
/// row-major, channel-minor order and then stably sorted by view index, so
/// `V[perm(r)] <= V[perm(r+1)]` holds for consecutive ranks of one tile and
/// ties keep row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct RemapTable {
    config: DisplayConfig,
    grid: TileGrid,
    /// Prefix sums of per-tile subpixel counts; len `num_tiles + 1`.
    offsets: Vec<u32>,
    /// Global subpixel linear index per rank.
    perm: Vec<u32>,
}

/// Builds the remap table for a viewpoint matrix. The table depends only on
/// display parameters and is reusable across frames.
pub fn build_remap_table(
    matrix: &ViewpointMatrix,
    config: &DisplayConfig,
) -> Result<RemapTable, DisplayError> {
    if matrix.config() != config {
        return Err(DisplayError::ConfigMismatch(
            "viewpoint matrix was built from a different config".into(),
        ));
    }
    let grid = config.tile_grid();
    let num_tiles = grid.num_tiles();

    let mut offsets = Vec::with_capacity(num_tiles as usize + 1);
    let mut acc = 0u32;
    offsets.push(0);
    for t in 0..num_tiles {
        acc += grid.tile_subpixel_count(t);
        offsets.push(acc);
    }

    let per_tile: Vec<Vec<u32>> = (0..num_tiles)
        .into_par_iter()
        .map(|t| {
            let (x0, y0, x1, y1) = grid.tile_rect(t);
            let mut entries: Vec<u32> = Vec::with_capacity(((x1 - x0) * (y1 - y0) * 3) as usize);
            for y in y0..y1 {
                for x in x0..x1 {
                    for u in 0..3 {
                        entries.push((y * config.width + x) * 3 + u);
                    }
                }
            }
            entries.sort_by_key(|&s| matrix.get_linear(s as usize));
            entries
        })
        .collect();

    let mut perm = Vec::with_capacity(acc as usize);
    for tile in per_tile {
        perm.extend_from_slice(&tile);
    }

    Ok(RemapTable {
        config: *config,
        grid,
        offsets,
        perm,
    })
}

impl RemapTable {
    pub fn config(&self) -> &DisplayConfig {
        &self.config
    }

    pub fn grid(&self) -> &TileGrid {
        &self.grid
    }

    pub fn num_ranks(&self) -> usize {
        self.perm.len()
    }

    /// Rank span `[start, end)` owned by tile `t`.
    pub fn tile_span(&self, t: u32) -> (u32, u32) {
        (self.offsets[t as usize], self.offsets[t as usize + 1])
    }

    /// The permutation slice for one tile: rank-ordered global subpixel ids.
    pub fn tile_perm(&self, t: u32) -> &[u32] {
        let (s, e) = self.tile_span(t);
        &self.perm[s as usize..e as usize]
    }

    /// Global thread rank to subpixel coordinate `(x, y, u)`.
    pub fn rank_to_subpixel(&self, rank: u32) -> (u32, u32, u32) {
        let s = self.perm[rank as usize];
        let u = s % 3;
        let p = s / 3;
        (p % self.config.width, p / self.config.width, u)
    }
}

/// An interlaced light-field image together with the display it targets.
#[derive(Debug, Clone, PartialEq)]
pub struct InterlacedImage {
    pub image: ImageBuffer,
    pub config: DisplayConfig,
}

/// Full-frame interlacing: `out[x,y,u] = views[V[x,y,u]][x,y,u]`.
pub fn interlace(
    views: &[ImageBuffer],
    matrix: &ViewpointMatrix,
) -> Result<InterlacedImage, DisplayError> {
    let config = matrix.config();
    if views.len() != config.num_views as usize {
        return Err(DisplayError::CountMismatch {
            expected: config.num_views as usize,
            got: views.len(),
        });
    }
    for (j, v) in views.iter().enumerate() {
        if v.width != config.width || v.height != config.height {
            return Err(DisplayError::SizeMismatch(format!(
                "view {j} is {}x{}, panel is {}x{}",
                v.width, v.height, config.width, config.height
            )));
        }
    }
    let mut image = ImageBuffer::new(config.width, config.height);
    image
        .data
        .par_iter_mut()
        .enumerate()
        .for_each(|(s, out)| *out = views[matrix.get_linear(s) as usize].data[s]);
    Ok(InterlacedImage {
        image,
        config: *config,
    })
}

/// One view extracted from an interlaced image: values are copied where the
/// viewpoint matrix assigns view `j`, zero elsewhere.
#[derive(Debug, Clone)]
pub struct DeinterlacedView {
    pub view: u32,
    pub image: ImageBuffer,
    pub mask: Vec<bool>,
    pub masked_count: usize,
}

pub fn deinterlace(
    img: &InterlacedImage,
    matrix: &ViewpointMatrix,
    view: u32,
) -> Result<DeinterlacedView, DisplayError> {
    let config = matrix.config();
    if view >= config.num_views {
        return Err(DisplayError::ViewOutOfRange {
            view,
            num_views: config.num_views,
        });
    }
    if img.config != *config {
        return Err(DisplayError::ConfigMismatch(
            "interlaced image config differs from matrix config".into(),
        ));
    }
    let mut image = ImageBuffer::new(config.width, config.height);
    let mut mask = vec![false; config.subpixel_count()];
    let mut masked_count = 0usize;
    for s in 0..config.subpixel_count() {
        if matrix.get_linear(s) == view {
            image.data[s] = img.image.data[s];
            mask[s] = true;
            masked_count += 1;
        }
    }
    Ok(DeinterlacedView {
        view,
        image,
        mask,
        masked_count,
    })
}
