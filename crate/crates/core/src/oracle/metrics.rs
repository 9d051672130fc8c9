//! PSNR and SSIM on [0,1] float images, with optional subpixel masks and a
//! per-view breakdown over deinterlaced views.

use super::OracleError;
use crate::display::{deinterlace, InterlacedImage, ViewpointMatrix};
use crate::image_io::ImageBuffer;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

/// SSIM window: 11x11 Gaussian, sigma 1.5, C1 = 0.01², C2 = 0.03².
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Quality metrics for one image pair. `psnr_db` is `+inf` for identical
/// inputs and serializes as the string `"inf"`.
#[derive(Debug, Clone)]
pub struct ImageMetricsReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_view: Option<Vec<ViewMetrics>>,
}

#[derive(Debug, Clone)]
pub struct ViewMetrics {
    pub view: u32,
    pub psnr_db: f64,
    pub ssim: f64,
    pub masked_pixel_count: usize,
}

fn serialize_db<S: Serializer>(v: f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(v)
    } else {
        s.serialize_str("inf")
    }
}

impl Serialize for ImageMetricsReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("ImageMetricsReport", 4)?;
        st.serialize_field("schema_version", &crate::SCHEMA_VERSION)?;
        st.serialize_field("psnr_db", &DbField(self.psnr_db))?;
        st.serialize_field("ssim", &self.ssim)?;
        st.serialize_field("per_view", &self.per_view)?;
        st.end()
    }
}

impl Serialize for ViewMetrics {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("ViewMetrics", 4)?;
        st.serialize_field("view", &self.view)?;
        st.serialize_field("psnr_db", &DbField(self.psnr_db))?;
        st.serialize_field("ssim", &self.ssim)?;
        st.serialize_field("masked_pixel_count", &self.masked_pixel_count)?;
        st.end()
    }
}

struct DbField(f64);

impl Serialize for DbField {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serialize_db(self.0, s)
    }
}

/// Mean squared error in fixed (row-major) order with 64-bit accumulation.
fn masked_mse(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&[bool]>) -> (f64, usize) {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    match mask {
        None => {
            for (x, y) in a.data.iter().zip(&b.data) {
                let d = (*x - *y) as f64;
                sum += d * d;
            }
            count = a.data.len();
        }
        Some(mask) => {
            for ((x, y), m) in a.data.iter().zip(&b.data).zip(mask) {
                if *m {
                    let d = (*x - *y) as f64;
                    sum += d * d;
                    count += 1;
                }
            }
        }
    }
    (if count > 0 { sum / count as f64 } else { 0.0 }, count)
}

fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// PSNR and SSIM between two equally sized images. The mask, when given,
/// restricts PSNR to masked subpixels and SSIM to windows whose center
/// subpixel is masked.
pub fn image_metrics(
    a: &ImageBuffer,
    b: &ImageBuffer,
    mask: Option<&[bool]>,
) -> Result<ImageMetricsReport, OracleError> {
    if !a.same_size(b) {
        return Err(OracleError::SizeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if let Some(mask) = mask {
        if mask.len() != a.data.len() {
            return Err(OracleError::SizeMismatch("mask length".into()));
        }
        if !mask.iter().any(|&m| m) {
            return Err(OracleError::EmptyMask);
        }
    }
    let (mse, _) = masked_mse(a, b, mask);
    let ssim = ssim(a, b, mask);
    Ok(ImageMetricsReport {
        psnr_db: psnr_from_mse(mse),
        ssim,
        per_view: None,
    })
}

/// Per-view quality of an interlaced pair: each view is deinterlaced from
/// both images and compared on its own mask.
pub fn lightfield_view_metrics(
    a: &InterlacedImage,
    b: &InterlacedImage,
    matrix: &ViewpointMatrix,
) -> Result<Vec<ViewMetrics>, OracleError> {
    if a.config != b.config || &a.config != matrix.config() {
        return Err(OracleError::SizeMismatch(
            "interlaced images and matrix configs differ".into(),
        ));
    }
    let mut out = Vec::with_capacity(matrix.config().num_views as usize);
    for view in 0..matrix.config().num_views {
        let da = deinterlace(a, matrix, view)?;
        let db = deinterlace(b, matrix, view)?;
        let report = image_metrics(&da.image, &db.image, Some(&da.mask))?;
        out.push(ViewMetrics {
            view,
            psnr_db: report.psnr_db,
            ssim: report.ssim,
            masked_pixel_count: da.masked_count,
        });
    }
    Ok(out)
}

/// Separable valid-mode convolution of one channel plane with the SSIM
/// Gaussian window.
fn blur_valid(plane: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let out_w = width + 1 - k;
    let out_h = height + 1 - k;
    let mut horiz = vec![0.0f64; out_w * height];
    for y in 0..height {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                acc += w * plane[y * width + x + i];
            }
            horiz[y * out_w + x] = acc;
        }
    }
    let mut out = vec![0.0f64; out_w * out_h];
    for y in 0..out_h {
        for x in 0..out_w {
            let mut acc = 0.0;
            for (i, w) in kernel.iter().enumerate() {
                acc += w * horiz[(y + i) * out_w + x];
            }
            out[y * out_w + x] = acc;
        }
    }
    out
}

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0f64; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Channel-averaged SSIM over valid windows. With a mask, a window counts
/// only when its center subpixel (per channel) is masked. Returns NaN when
/// the image is smaller than the window.
fn ssim(a: &ImageBuffer, b: &ImageBuffer, mask: Option<&[bool]>) -> f64 {
    let (width, height) = (a.width as usize, a.height as usize);
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return f64::NAN;
    }
    let kernel = ssim_kernel();
    let out_w = width + 1 - SSIM_WINDOW;
    let out_h = height + 1 - SSIM_WINDOW;
    let half = SSIM_WINDOW / 2;

    let mut sum = 0.0f64;
    let mut count = 0usize;
    for chan in 0..3 {
        let pa: Vec<f64> = a.data[chan..].iter().step_by(3).map(|v| *v as f64).collect();
        let pb: Vec<f64> = b.data[chan..].iter().step_by(3).map(|v| *v as f64).collect();
        let paa: Vec<f64> = pa.iter().map(|v| v * v).collect();
        let pbb: Vec<f64> = pb.iter().map(|v| v * v).collect();
        let pab: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x * y).collect();

        let mu_a = blur_valid(&pa, width, height, &kernel);
        let mu_b = blur_valid(&pb, width, height, &kernel);
        let m_aa = blur_valid(&paa, width, height, &kernel);
        let m_bb = blur_valid(&pbb, width, height, &kernel);
        let m_ab = blur_valid(&pab, width, height, &kernel);

        for wy in 0..out_h {
            for wx in 0..out_w {
                if let Some(mask) = mask {
                    let center = ((wy + half) * width + wx + half) * 3 + chan;
                    if !mask[center] {
                        continue;
                    }
                }
                let i = wy * out_w + wx;
                let (ma, mb) = (mu_a[i], mu_b[i]);
                let var_a = m_aa[i] - ma * ma;
                let var_b = m_bb[i] - mb * mb;
                let cov = m_ab[i] - ma * mb;
                let v = ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2));
                sum += v;
                count += 1;
            }
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(width: u32, height: u32, scale: f32) -> ImageBuffer {
        let mut img = ImageBuffer::new(width, height);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i % 97) as f32 / 96.0 * scale).min(1.0);
        }
        img
    }

    #[test]
    fn identical_images_report_inf_and_unit_ssim() {
        let a = ramp(24, 20, 0.8);
        let r = image_metrics(&a, &a, None).unwrap();
        assert!(r.psnr_db.is_infinite());
        assert!((r.ssim - 1.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_error_of_point_one_is_twenty_db() {
        let a = ImageBuffer::filled(16, 16, [0.3; 3]);
        let b = ImageBuffer::filled(16, 16, [0.4; 3]);
        let r = image_metrics(&a, &b, None).unwrap();
        assert!((r.psnr_db - 20.0).abs() < 1e-6, "psnr {}", r.psnr_db);
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = ramp(20, 14, 1.0);
        let b = ramp(20, 14, 0.7);
        let ab = image_metrics(&a, &b, None).unwrap();
        let ba = image_metrics(&b, &a, None).unwrap();
        assert_eq!(ab.psnr_db, ba.psnr_db);
    }

    #[test]
    fn inverted_checkerboard_has_negative_ssim() {
        let mut a = ImageBuffer::new(32, 32);
        let mut b = ImageBuffer::new(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                let v = ((x + y) % 2) as f32;
                for c in 0..3 {
                    a.set(x, y, c, v);
                    b.set(x, y, c, 1.0 - v);
                }
            }
        }
        let r = image_metrics(&a, &b, None).unwrap();
        assert!(r.ssim < 0.0, "ssim {}", r.ssim);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let a = ImageBuffer::new(4, 4);
        let b = ImageBuffer::new(4, 5);
        assert!(matches!(
            image_metrics(&a, &b, None),
            Err(OracleError::SizeMismatch(_))
        ));
    }

    #[test]
    fn empty_mask_is_rejected() {
        let a = ImageBuffer::new(4, 4);
        let mask = vec![false; a.data.len()];
        assert!(matches!(
            image_metrics(&a, &a, Some(&mask)),
            Err(OracleError::EmptyMask)
        ));
    }

    #[test]
    fn infinite_psnr_serializes_as_string() {
        let r = ImageMetricsReport {
            psnr_db: f64::INFINITY,
            ssim: 1.0,
            per_view: None,
        };
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"psnr_db\":\"inf\""), "{json}");
    }
}
