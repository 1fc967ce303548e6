use nalgebra::{Matrix3, Vector3};

use super::{GrayImage, ImageError};

#[derive(Debug, Clone, PartialEq)]
pub struct WarpOutput {
    pub image: GrayImage,
    /// Fraction of destination pixels whose source sample fell inside the
    /// source image.
    pub coverage: f64,
}

/// Bilinear sample at a continuous position, `None` outside the image.
/// Integer coordinates address pixel centres.
pub(crate) fn sample_bilinear(src: &GrayImage, u: f64, v: f64) -> Option<f64> {
    const EDGE: f64 = 1e-9;
    let (w, h) = (src.width(), src.height());
    if w == 0 || h == 0 {
        return None;
    }
    let max_u = (w - 1) as f64;
    let max_v = (h - 1) as f64;
    if !(u >= -EDGE && v >= -EDGE && u <= max_u + EDGE && v <= max_v + EDGE) {
        return None;
    }
    let u = u.clamp(0.0, max_u);
    let v = v.clamp(0.0, max_v);
    let x0 = (u.floor() as usize).min(w - 1);
    let y0 = (v.floor() as usize).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = u - x0 as f64;
    let fy = v - y0 as f64;
    let p00 = src.get(x0, y0) as f64;
    let p10 = src.get(x1, y0) as f64;
    let p01 = src.get(x0, y1) as f64;
    let p11 = src.get(x1, y1) as f64;
    let top = p00 + (p10 - p00) * fx;
    let bottom = p01 + (p11 - p01) * fx;
    Some(top + (bottom - top) * fy)
}

/// Warps `src` by the homography `w` (source pixels to destination
/// pixels). Each destination pixel is mapped back through `w^-1` and
/// sampled bilinearly; samples outside the source are zero.
pub fn perspective_warp(
    src: &GrayImage,
    w: &Matrix3<f64>,
    out_w: usize,
    out_h: usize,
) -> Result<WarpOutput, ImageError> {
    let det = w.determinant();
    if !(det.abs() >= 1e-12) {
        return Err(ImageError::SingularWarp { det });
    }
    let inv = w
        .try_inverse()
        .ok_or(ImageError::SingularWarp { det })?;
    let mut out = GrayImage::new(out_w, out_h);
    let mut covered = 0usize;
    for y in 0..out_h {
        for x in 0..out_w {
            let p = inv * Vector3::new(x as f64, y as f64, 1.0);
            if p.z.abs() < f64::EPSILON {
                continue;
            }
            if let Some(v) = sample_bilinear(src, p.x / p.z, p.y / p.z) {
                out.set(x, y, v.round().clamp(0.0, 255.0) as u8);
                covered += 1;
            }
        }
    }
    let total = out_w * out_h;
    let coverage = if total == 0 {
        0.0
    } else {
        covered as f64 / total as f64
    };
    Ok(WarpOutput {
        image: out,
        coverage,
    })
}
