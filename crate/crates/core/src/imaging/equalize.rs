use super::GrayImage;

/// Intensity lookup table `v -> round(255 * cdf(v))`.
pub fn equalization_map(img: &GrayImage) -> [u8; 256] {
    let mut hist = [0usize; 256];
    for &p in img.pixels() {
        hist[p as usize] += 1;
    }
    let n = img.pixels().len();
    let mut map = [0u8; 256];
    if n == 0 {
        return map;
    }
    let mut cum = 0usize;
    for (v, count) in hist.iter().enumerate() {
        cum += count;
        map[v] = (255.0 * cum as f64 / n as f64).round() as u8;
    }
    map
}

pub fn equalize_histogram(img: &GrayImage) -> GrayImage {
    let map = equalization_map(img);
    let pixels = img.pixels().iter().map(|&p| map[p as usize]).collect();
    GrayImage::from_pixels(img.width(), img.height(), pixels).expect("same size")
}
