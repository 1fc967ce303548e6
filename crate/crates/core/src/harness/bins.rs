use nalgebra::{DMatrix, DVector};

use super::{HarnessError, SampleResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinAxis {
    /// True gaze yaw in degrees.
    GazeYaw,
    /// Left-right mean intensity difference of the patch.
    IntensityDiff,
}

impl BinAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::GazeYaw => "gaze_yaw_deg",
            Self::IntensityDiff => "intensity_diff",
        }
    }

    pub fn value(&self, r: &SampleResult) -> f64 {
        match self {
            Self::GazeYaw => r.truth.yaw.to_degrees(),
            Self::IntensityDiff => r.lr_difference,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinReport {
    pub axis: BinAxis,
    pub centers: Vec<f64>,
    pub counts: Vec<usize>,
    /// Mean error per bin; NaN for empty bins.
    pub means: Vec<f64>,
    /// `[c0, c1, c2]` of `c0 + c1 x + c2 x^2` fitted to the non-empty bins.
    pub fit: [f64; 3],
}

/// Least-squares quadratic through the points.
pub fn quadratic_fit(xs: &[f64], ys: &[f64]) -> Result<[f64; 3], HarnessError> {
    assert_eq!(xs.len(), ys.len());
    let distinct = {
        let mut v: Vec<f64> = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    if distinct < 3 {
        return Err(HarnessError::InsufficientBins { found: distinct });
    }
    let a = DMatrix::from_fn(xs.len(), 3, |i, j| xs[i].powi(j as i32));
    let b = DVector::from_column_slice(ys);
    let c = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| HarnessError::InvalidConfig(format!("quadratic fit: {e}")))?;
    Ok([c[0], c[1], c[2]])
}

/// Mean error in `bins` equal-width bins over `[lo, hi)`; values outside
/// the range go to the end bins. Fits a quadratic to the bin centres and
/// means of the non-empty bins.
pub fn error_by_bin(
    results: &[SampleResult],
    axis: BinAxis,
    lo: f64,
    hi: f64,
    bins: usize,
) -> Result<BinReport, HarnessError> {
    if !(hi > lo) || bins == 0 {
        return Err(HarnessError::InvalidConfig(format!("bins {bins} over [{lo}, {hi})")));
    }
    let width = (hi - lo) / bins as f64;
    let mut sums = vec![0.0; bins];
    let mut counts = vec![0usize; bins];
    for r in results {
        let t = ((axis.value(r) - lo) / width).floor();
        let b = if t.is_nan() || t < 0.0 { 0 } else { (t as usize).min(bins - 1) };
        sums[b] += r.error_deg;
        counts[b] += 1;
    }
    let centers: Vec<f64> = (0..bins).map(|i| lo + (i as f64 + 0.5) * width).collect();
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = centers
        .iter()
        .zip(&means)
        .filter(|(_, m)| !m.is_nan())
        .map(|(&x, &m)| (x, m))
        .unzip();
    if xs.len() < 3 {
        return Err(HarnessError::InsufficientBins { found: xs.len() });
    }
    let fit = quadratic_fit(&xs, &ys)?;
    Ok(BinReport {
        axis,
        centers,
        counts,
        means,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{EyeSide, GazeAngles, HeadAngles};
    use nalgebra::Matrix3;

    fn result(yaw_deg: f64, err: f64) -> SampleResult {
        SampleResult {
            id: String::new(),
            person: "p".into(),
            eye: EyeSide::Right,
            fold: 0,
            truth: GazeAngles::from_degrees(yaw_deg, 0.0),
            predicted: GazeAngles::ZERO,
            head: HeadAngles::ZERO,
            error_deg: err,
            lr_difference: 0.0,
            camera: None,
        }
    }

    #[test]
    fn exact_quadratic_is_recovered() {
        let xs: Vec<f64> = (0..9).map(|i| i as f64 * 4.0 - 16.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 - 0.3 * x + 0.04 * x * x).collect();
        let c = quadratic_fit(&xs, &ys).unwrap();
        for (a, b) in c.iter().zip([2.5, -0.3, 0.04]) {
            assert!((a - b).abs() < 1e-9, "{c:?}");
        }
    }

    #[test]
    fn constant_errors_fit_flat() {
        let results: Vec<SampleResult> = (0..40).map(|i| result(i as f64 - 20.0, 3.25)).collect();
        let r = error_by_bin(&results, BinAxis::GazeYaw, -20.0, 20.0, 8).unwrap();
        assert!((r.fit[0] - 3.25).abs() < 1e-12);
        assert!(r.fit[1].abs() < 1e-12 && r.fit[2].abs() < 1e-12);
        assert_eq!(r.counts.iter().sum::<usize>(), 40);
    }

    #[test]
    fn noisy_quadratic_matches_normal_equations() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 3.0 - 17.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 4.0 + 0.1 * x + 0.02 * x * x + 0.7 * ((i * 7919) % 13) as f64 / 13.0)
            .collect();
        let c = quadratic_fit(&xs, &ys).unwrap();
        let mut ata = Matrix3::<f64>::zeros();
        let mut atb = nalgebra::Vector3::<f64>::zeros();
        for (x, y) in xs.iter().zip(&ys) {
            let row = nalgebra::Vector3::new(1.0, *x, x * x);
            ata += row * row.transpose();
            atb += row * *y;
        }
        let oracle = ata.try_inverse().unwrap() * atb;
        for j in 0..3 {
            assert!((c[j] - oracle[j]).abs() < 1e-9, "{c:?} vs {oracle:?}");
        }
    }

    #[test]
    fn too_few_bins_is_an_error() {
        let results = vec![result(-10.0, 1.0), result(10.0, 2.0)];
        let err = error_by_bin(&results, BinAxis::GazeYaw, -20.0, 20.0, 8).unwrap_err();
        assert!(matches!(err, HarnessError::InsufficientBins { found: 2 }));
    }
}
