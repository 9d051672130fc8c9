//! Planar float image buffers plus PNG and raw-dump serialization.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image size mismatch: {0}")]
    SizeMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("png error: {0}")]
    Png(#[from] image::ImageError),
    #[error("raw dump length {got} does not match {width}x{height}x3 floats")]
    RawLength { got: usize, width: u32, height: u32 },
}

/// A `width x height x 3` float image, row-major with the channel innermost.
/// Subpixel `(x, y, u)` lives at `(y * width + x) * 3 + u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width as usize * height as usize * 3],
        }
    }

    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    #[inline]
    pub fn index(&self, x: u32, y: u32, u: u32) -> usize {
        ((y * self.width + x) * 3 + u) as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, u: u32) -> f32 {
        self.data[self.index(x, y, u)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, u: u32, v: f32) {
        let i = self.index(x, y, u);
        self.data[i] = v;
    }

    pub fn same_size(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// 8-bit RGB bytes, linear values scaled by 255 and rounded half-up.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
            .collect()
    }

    pub fn write_png(&self, path: &std::path::Path) -> Result<(), ImageError> {
        image::save_buffer(
            path,
            &self.to_rgb8(),
            self.width,
            self.height,
            image::ColorType::Rgb8,
        )?;
        Ok(())
    }

    pub fn read_png(path: &std::path::Path) -> Result<Self, ImageError> {
        let img = image::open(path)?.into_rgb8();
        let (width, height) = img.dimensions();
        let data = img.as_raw().iter().map(|b| *b as f32 / 255.0).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Headerless little-endian f32 dump, row-major, channel innermost.
    /// The exchange format for bit-exact comparisons.
    pub fn to_raw_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_raw_bytes(bytes: &[u8], width: u32, height: u32) -> Result<Self, ImageError> {
        let expect = width as usize * height as usize * 3 * 4;
        if bytes.len() != expect {
            return Err(ImageError::RawLength {
                got: bytes.len(),
                width,
                height,
            });
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn write_raw(&self, path: &std::path::Path) -> Result<(), ImageError> {
        std::fs::write(path, self.to_raw_bytes())?;
        Ok(())
    }

    pub fn read_raw(path: &std::path::Path, width: u32, height: u32) -> Result<Self, ImageError> {
        Self::from_raw_bytes(&std::fs::read(path)?, width, height)
    }

    /// Largest absolute per-subpixel difference; `None` on size mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Option<f32> {
        if !self.same_size(other) {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max),
        )
    }
}
