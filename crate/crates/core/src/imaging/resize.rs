use super::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMethod {
    /// Catmull-Rom cubic convolution (a = -0.5).
    Bicubic,
    Bilinear,
}

const CUBIC_A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((CUBIC_A * x - 5.0 * CUBIC_A) * x + 8.0 * CUBIC_A) * x - 4.0 * CUBIC_A
    } else {
        0.0
    }
}

/// Per destination index: source taps and weights along one axis. Pixel
/// centres are aligned and borders replicate.
fn axis_weights(src_len: usize, dst_len: usize, method: ResizeMethod) -> Vec<Vec<(usize, f64)>> {
    let scale = src_len as f64 / dst_len as f64;
    let last = src_len as isize - 1;
    (0..dst_len)
        .map(|d| {
            let s = (d as f64 + 0.5) * scale - 0.5;
            let base = s.floor();
            let t = s - base;
            let base = base as isize;
            let taps: Vec<(isize, f64)> = match method {
                ResizeMethod::Bicubic => (-1..=2).map(|k| (base + k, cubic(t - k as f64))).collect(),
                ResizeMethod::Bilinear => vec![(base, 1.0 - t), (base + 1, t)],
            };
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(4);
            for (i, w) in taps {
                let i = i.clamp(0, last) as usize;
                match merged.iter_mut().find(|(j, _)| *j == i) {
                    Some(e) => e.1 += w,
                    None => merged.push((i, w)),
                }
            }
            merged
        })
        .collect()
}

pub fn resize(img: &GrayImage, w: usize, h: usize, method: ResizeMethod) -> GrayImage {
    assert!(w >= 1 && h >= 1, "target size must be at least 1x1");
    if img.width() == w && img.height() == h {
        return img.clone();
    }
    let (sw, sh) = (img.width(), img.height());
    let wx = axis_weights(sw, w, method);
    let wy = axis_weights(sh, h, method);

    let mut horiz = vec![0.0f64; sh * w];
    for y in 0..sh {
        let row = &img.pixels()[y * sw..(y + 1) * sw];
        for (x, taps) in wx.iter().enumerate() {
            horiz[y * w + x] = taps.iter().map(|&(i, k)| row[i] as f64 * k).sum();
        }
    }
    GrayImage::from_fn(w, h, |x, y| {
        let v: f64 = wy[y].iter().map(|&(j, k)| horiz[j * w + x] * k).sum();
        v.round().clamp(0.0, 255.0) as u8
    })
}
