//! Intensity and label statistics over frames or normalized samples.

use std::collections::BTreeMap;

use super::{DatasetError, NormalizedSample};
use crate::imaging::GrayImage;

/// Fixed-width histogram over `[lo, hi)`. Values outside the range are
/// counted in the first or last bin so the counts always sum to the number
/// of values added.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        assert!(hi > lo && bins > 0, "invalid histogram range");
        Self {
            lo,
            hi,
            counts: vec![0; bins],
        }
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let n = self.counts.len();
        let t = (v - self.lo) / (self.hi - self.lo) * n as f64;
        if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(n - 1)
        }
    }

    pub fn add(&mut self, v: f64) {
        let b = self.bin_of(v);
        self.counts[b] += 1;
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        self.lo + (i as f64 + 0.5) * w
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// 2D histogram, counts stored row-major with y as the row.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram2d {
    pub x: Histogram,
    pub y: Histogram,
    pub counts: Vec<usize>,
}

impl Histogram2d {
    pub fn new(x: (f64, f64), y: (f64, f64), bins_x: usize, bins_y: usize) -> Self {
        Self {
            x: Histogram::new(x.0, x.1, bins_x),
            y: Histogram::new(y.0, y.1, bins_y),
            counts: vec![0; bins_x * bins_y],
        }
    }

    pub fn add(&mut self, x: f64, y: f64) {
        let (bx, by) = (self.x.bin_of(x), self.y.bin_of(y));
        self.counts[by * self.x.counts.len() + bx] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub count: usize,
    /// Per-image mean intensity.
    pub means: Vec<f64>,
    /// Per-image left-half minus right-half mean intensity.
    pub differences: Vec<f64>,
    pub mean_intensity: Histogram,
    pub lr_difference: Histogram,
    pub per_person: BTreeMap<String, usize>,
    /// Gaze and head angle histograms in degrees (yaw by pitch); only for
    /// labelled samples.
    pub gaze: Option<Histogram2d>,
    pub head: Option<Histogram2d>,
}

const INTENSITY_BINS: usize = 32;
const DIFFERENCE_RANGE: f64 = 128.0;
const ANGLE_RANGE_DEG: f64 = 40.0;
const ANGLE_BINS: usize = 16;

/// Intensity statistics of raw images (for example face crops).
pub fn image_statistics(images: &[GrayImage]) -> Result<DatasetStats, DatasetError> {
    if images.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let mut mean_intensity = Histogram::new(0.0, 256.0, INTENSITY_BINS);
    let mut lr_difference = Histogram::new(-DIFFERENCE_RANGE, DIFFERENCE_RANGE, INTENSITY_BINS);
    let mut means = Vec::with_capacity(images.len());
    let mut differences = Vec::with_capacity(images.len());
    for img in images {
        let m = img.mean();
        let d = img.left_right_difference();
        mean_intensity.add(m);
        lr_difference.add(d);
        means.push(m);
        differences.push(d);
    }
    Ok(DatasetStats {
        count: images.len(),
        means,
        differences,
        mean_intensity,
        lr_difference,
        per_person: BTreeMap::new(),
        gaze: None,
        head: None,
    })
}

pub fn dataset_statistics(samples: &[NormalizedSample]) -> Result<DatasetStats, DatasetError> {
    let patches: Vec<GrayImage> = samples.iter().map(|s| s.patch.clone()).collect();
    let mut stats = image_statistics(&patches)?;
    let r = (-ANGLE_RANGE_DEG, ANGLE_RANGE_DEG);
    let mut gaze = Histogram2d::new(r, r, ANGLE_BINS, ANGLE_BINS);
    let mut head = Histogram2d::new(r, r, ANGLE_BINS, ANGLE_BINS);
    for s in samples {
        *stats.per_person.entry(s.person.clone()).or_default() += 1;
        let (gy, gp) = s.gaze.to_degrees();
        let (hy, hp) = s.head.to_degrees();
        gaze.add(gy, gp);
        head.add(hy, hp);
    }
    stats.gaze = Some(gaze);
    stats.head = Some(head);
    Ok(stats)
}
