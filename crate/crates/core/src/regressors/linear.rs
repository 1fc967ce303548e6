use nalgebra::{DMatrix, DVector};

use super::{check_patch, patch_size, FeatureConfig, RegressorError};
use crate::dataset::NormalizedSample;
use crate::geometry::GazeAngles;

/// Relative singular-value cut-off for the rank test at `lambda = 0`.
const RANK_TOL: f64 = 1e-10;

/// Ridge regression from scaled pixels and geometry features to gaze angles.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub width: usize,
    pub height: usize,
    pub features: FeatureConfig,
    pub lambda: f64,
    /// Row-major `dim x 2`, one column per output angle.
    pub weights: Vec<f64>,
    pub intercept: [f64; 2],
}

fn design_row(s: &NormalizedSample, features: &FeatureConfig) -> Result<Vec<f64>, RegressorError> {
    let mut row: Vec<f64> = s.patch.pixels().iter().map(|&p| p as f64 / 255.0).collect();
    row.extend(features.extract(s)?);
    Ok(row)
}

/// Closed-form ridge on centred data; the intercept is not penalized. Uses
/// the primal normal equations when there are at least as many samples as
/// inputs and the dual (kernel) form otherwise.
pub fn linear_fit(
    samples: &[NormalizedSample],
    features: FeatureConfig,
    lambda: f64,
) -> Result<LinearModel, RegressorError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(RegressorError::InvalidConfig(format!("ridge lambda {lambda}")));
    }
    let (width, height) = patch_size(samples)?;
    let n = samples.len();
    let dim = width * height + features.dim();

    let mut x = DMatrix::<f64>::zeros(n, dim);
    let mut y = DMatrix::<f64>::zeros(n, 2);
    for (i, s) in samples.iter().enumerate() {
        for (j, v) in design_row(s, &features)?.into_iter().enumerate() {
            x[(i, j)] = v;
        }
        y[(i, 0)] = s.gaze.yaw;
        y[(i, 1)] = s.gaze.pitch;
    }
    let x_mean: DVector<f64> = x.row_mean().transpose();
    let y_mean: DVector<f64> = y.row_mean().transpose();
    for mut row in x.row_iter_mut() {
        row -= x_mean.transpose();
    }
    for mut row in y.row_iter_mut() {
        row -= y_mean.transpose();
    }

    if lambda == 0.0 {
        // Centring removes one degree of freedom.
        if dim + 1 > n {
            return Err(RegressorError::SingularSystem);
        }
        let sv = x.singular_values();
        let max = sv.max();
        if !(max > 0.0) || sv.min() <= RANK_TOL * max {
            return Err(RegressorError::SingularSystem);
        }
    }

    let w = if dim <= n {
        let mut a = x.tr_mul(&x);
        for i in 0..dim {
            a[(i, i)] += lambda;
        }
        let b = x.tr_mul(&y);
        solve_spd(a, b)?
    } else {
        let mut g = &x * x.transpose();
        for i in 0..n {
            g[(i, i)] += lambda;
        }
        let alpha = solve_spd(g, y)?;
        x.tr_mul(&alpha)
    };

    let b = y_mean - w.tr_mul(&x_mean);
    let mut weights = Vec::with_capacity(dim * 2);
    for r in 0..dim {
        weights.extend([w[(r, 0)], w[(r, 1)]]);
    }
    Ok(LinearModel {
        width,
        height,
        features,
        lambda,
        weights,
        intercept: [b[0], b[1]],
    })
}

fn solve_spd(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<DMatrix<f64>, RegressorError> {
    match a.clone().cholesky() {
        Some(c) => Ok(c.solve(&b)),
        None => a
            .svd(true, true)
            .solve(&b, RANK_TOL)
            .map_err(|_| RegressorError::SingularSystem),
    }
}

impl LinearModel {
    pub fn dim(&self) -> usize {
        self.width * self.height + self.features.dim()
    }

    pub fn predict_one(&self, sample: &NormalizedSample) -> Result<GazeAngles, RegressorError> {
        check_patch(&sample.patch, (self.width, self.height))?;
        let row = design_row(sample, &self.features)?;
        let (mut yaw, mut pitch) = (self.intercept[0], self.intercept[1]);
        for (j, v) in row.iter().enumerate() {
            yaw += v * self.weights[2 * j];
            pitch += v * self.weights[2 * j + 1];
        }
        Ok(GazeAngles::new(yaw, pitch))
    }

    pub fn predict(&self, samples: &[NormalizedSample]) -> Result<Vec<GazeAngles>, RegressorError> {
        samples.iter().map(|s| self.predict_one(s)).collect()
    }
}
