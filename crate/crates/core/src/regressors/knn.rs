use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_patch, patch_size, RegressorError};
use crate::dataset::NormalizedSample;
use crate::geometry::{GazeAngles, HeadAngles};
use crate::imaging::GrayImage;

const KMEANS_MAX_ITER: usize = 100;

/// Stored training patches, optionally partitioned by k-means on head
/// angles. Samples are kept in a canonical order so that predictions do not
/// depend on the order of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub k: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Row-major `n x (width * height)` pixels.
    pub patches: Vec<u8>,
    pub heads: Vec<[f64; 2]>,
    pub gazes: Vec<[f64; 2]>,
    /// Empty when search is exhaustive.
    pub centroids: Vec<[f64; 2]>,
    pub assignment: Vec<u32>,
    members: Vec<Vec<u32>>,
}

fn sq_dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(centroids: &[[f64; 2]], p: &[f64; 2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist2(c, p);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Seeded k-means++ followed by Lloyd iterations. Returns the centroids that
/// kept at least one member and each point's index into them.
pub fn kmeans(
    points: &[[f64; 2]],
    clusters: usize,
    seed: u64,
) -> Result<(Vec<[f64; 2]>, Vec<u32>), RegressorError> {
    if points.is_empty() {
        return Err(RegressorError::EmptyTrainingSet);
    }
    if clusters == 0 || clusters > points.len() {
        return Err(RegressorError::InvalidConfig(format!(
            "{clusters} clusters for {} points",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.gen_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist2(p, &centroids[0])).collect();
    while centroids.len() < clusters {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(0);
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    chosen = i;
                    break;
                }
                r -= d;
            }
            chosen
        } else {
            // Fewer distinct points than clusters; duplicates end up empty.
            0
        };
        let c = points[pick];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist2(p, &c));
        }
        centroids.push(c);
    }

    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![[0.0f64; 3]; centroids.len()];
        for (p, &a) in points.iter().zip(&assignment) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            sums[a][2] += 1.0;
        }
        for (c, s) in centroids.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centroids, p)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }

    let mut remap = vec![u32::MAX; centroids.len()];
    let mut kept = Vec::new();
    for &a in &assignment {
        if remap[a] == u32::MAX {
            remap[a] = 0;
        }
    }
    for (i, c) in centroids.iter().enumerate() {
        if remap[i] != u32::MAX {
            remap[i] = kept.len() as u32;
            kept.push(*c);
        }
    }
    Ok((kept, assignment.iter().map(|&a| remap[a]).collect()))
}

/// Fits the store. `clusters = None` searches exhaustively.
pub fn knn_fit(
    samples: &[NormalizedSample],
    k: usize,
    clusters: Option<usize>,
    seed: u64,
) -> Result<KnnModel, RegressorError> {
    if k == 0 {
        return Err(RegressorError::InvalidConfig("k must be at least 1".into()));
    }
    let (width, height) = patch_size(samples)?;
    let mut order: Vec<&NormalizedSample> = samples.iter().collect();
    let key = |s: &NormalizedSample| {
        (
            s.head.yaw.to_bits(),
            s.head.pitch.to_bits(),
            s.gaze.yaw.to_bits(),
            s.gaze.pitch.to_bits(),
        )
    };
    order.sort_by(|a, b| {
        a.patch
            .pixels()
            .cmp(b.patch.pixels())
            .then_with(|| key(a).cmp(&key(b)))
    });

    let patches: Vec<u8> = order
        .iter()
        .flat_map(|s| s.patch.pixels().iter().copied())
        .collect();
    let heads: Vec<[f64; 2]> = order.iter().map(|s| [s.head.yaw, s.head.pitch]).collect();
    let gazes: Vec<[f64; 2]> = order.iter().map(|s| [s.gaze.yaw, s.gaze.pitch]).collect();
    let (centroids, assignment) = match clusters {
        Some(c) => kmeans(&heads, c, seed)?,
        None => (Vec::new(), Vec::new()),
    };
    KnnModel::from_parts(k, width, height, seed, patches, heads, gazes, centroids, assignment)
}

impl KnnModel {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        k: usize,
        width: usize,
        height: usize,
        seed: u64,
        patches: Vec<u8>,
        heads: Vec<[f64; 2]>,
        gazes: Vec<[f64; 2]>,
        centroids: Vec<[f64; 2]>,
        assignment: Vec<u32>,
    ) -> Result<Self, RegressorError> {
        let n = heads.len();
        if n == 0 {
            return Err(RegressorError::EmptyTrainingSet);
        }
        let consistent = patches.len() == n * width * height
            && gazes.len() == n
            && (centroids.is_empty() && assignment.is_empty()
                || assignment.len() == n
                    && assignment.iter().all(|&a| (a as usize) < centroids.len()));
        if !consistent {
            return Err(RegressorError::ShapeMismatch("inconsistent kNN store".into()));
        }
        let mut members = vec![Vec::new(); centroids.len()];
        for (i, &a) in assignment.iter().enumerate() {
            members[a as usize].push(i as u32);
        }
        Ok(Self {
            k,
            width,
            height,
            seed,
            patches,
            heads,
            gazes,
            centroids,
            assignment,
            members,
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Mean gaze of the `k` nearest stored patches by pixel L2 distance,
    /// searched within the cluster nearest to `head`. Ties go to the
    /// earlier sample in canonical order.
    pub fn predict_one(&self, patch: &GrayImage, head: &HeadAngles) -> Result<GazeAngles, RegressorError> {
        check_patch(patch, (self.width, self.height))?;
        let q = patch.pixels();
        let dim = self.width * self.height;
        let dist = |i: usize| -> u64 {
            self.patches[i * dim..(i + 1) * dim]
                .iter()
                .zip(q)
                .map(|(&a, &b)| {
                    let d = a as i32 - b as i32;
                    (d * d) as u64
                })
                .sum()
        };
        let mut scored: Vec<(u64, u32)> = if self.centroids.is_empty() {
            (0..self.len()).map(|i| (dist(i), i as u32)).collect()
        } else {
            let c = nearest(&self.centroids, &[head.yaw, head.pitch]);
            self.members[c].iter().map(|&i| (dist(i as usize), i)).collect()
        };
        let k = self.k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable(k - 1);
            scored.truncate(k);
        }
        scored.sort_unstable();
        let (mut yaw, mut pitch) = (0.0, 0.0);
        for &(_, i) in &scored {
            yaw += self.gazes[i as usize][0];
            pitch += self.gazes[i as usize][1];
        }
        Ok(GazeAngles::new(yaw / k as f64, pitch / k as f64))
    }

    pub fn predict(&self, samples: &[NormalizedSample]) -> Result<Vec<GazeAngles>, RegressorError> {
        samples
            .par_iter()
            .map(|s| self.predict_one(&s.patch, &s.head))
            .collect()
    }
}
