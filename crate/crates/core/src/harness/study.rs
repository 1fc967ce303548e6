use std::collections::BTreeMap;

use rayon::prelude::*;

use super::eval::{predict_samples, prepare_samples, resize_sample, score, EvalConfig, SampleResult};
use super::HarnessError;
use crate::dataset::NormalizedSample;
use crate::geometry::{angular_error, fuse_both_eyes, gaze_target_to_vector, EyeSide};
use crate::regressors::fit_estimator;

pub const DEFAULT_RESOLUTIONS: [(usize, usize); 4] = [(60, 36), (30, 18), (15, 9), (8, 5)];

/// Mean error for every (training, test) resolution pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub resolutions: Vec<(usize, usize)>,
    /// `errors[i][j]`: trained at `resolutions[i]`, tested at `resolutions[j]`.
    pub errors: Vec<Vec<f64>>,
    pub config: String,
}

/// Trains one model per resolution. Test patches are first reduced to the
/// test resolution, then resized back to the training resolution, both
/// with bicubic interpolation.
pub fn resolution_study(
    train: &[NormalizedSample],
    test: &[NormalizedSample],
    resolutions: &[(usize, usize)],
    config: &EvalConfig,
) -> Result<GridReport, HarnessError> {
    if resolutions.is_empty() || resolutions.iter().any(|&(w, h)| w == 0 || h == 0) {
        return Err(HarnessError::InvalidConfig("resolution list is empty or has a zero size".into()));
    }
    if train.is_empty() {
        return Err(HarnessError::EmptyArchive("training archive".into()));
    }
    if test.is_empty() {
        return Err(HarnessError::EmptyArchive("test archive".into()));
    }
    let tests: Vec<Vec<NormalizedSample>> = resolutions
        .iter()
        .map(|&r| {
            // Resize in the mirrored frame so that, at the training
            // resolution, this is exactly the preparation of a single run.
            let mut t = test.to_vec();
            t.par_iter_mut().for_each(|s| {
                if s.eye == EyeSide::Left {
                    s.patch = s.patch.flipped_horizontal();
                    resize_sample(s, r);
                    s.patch = s.patch.flipped_horizontal();
                } else {
                    resize_sample(s, r);
                }
            });
            t
        })
        .collect();
    let errors = resolutions
        .par_iter()
        .map(|&r| {
            let canon = prepare_samples(train, Some(r));
            let (model, _) = fit_estimator(&canon, &config.estimator)?;
            tests
                .iter()
                .map(|t| {
                    let pred = predict_samples(&model, t)?;
                    let res = score(t, &pred, 0);
                    Ok(res.iter().map(|r| r.error_deg).sum::<f64>() / res.len() as f64)
                })
                .collect::<Result<Vec<f64>, HarnessError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GridReport {
        resolutions: resolutions.to_vec(),
        errors,
        config: config.describe(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionReport {
    pub pairs: usize,
    /// Mean over pairs of the average of the two eyes' errors.
    pub per_eye_mean: f64,
    /// Mean over pairs of the smaller of the two errors.
    pub oracle_best: f64,
    /// Error of the mean gaze vector from the midpoint of the eye centres.
    pub fused: f64,
}

/// Pairs left and right results of the same person and record.
pub fn fusion_eval(results: &[SampleResult]) -> Result<FusionReport, HarnessError> {
    type Key<'a> = (&'a str, usize);
    let mut pairs: BTreeMap<Key, [Option<&SampleResult>; 2]> = BTreeMap::new();
    for r in results {
        if let Some(c) = &r.camera {
            let slot = if r.eye == EyeSide::Right { 0 } else { 1 };
            pairs.entry((&r.person, c.record)).or_default()[slot] = Some(r);
        }
    }
    let (mut n, mut per_eye, mut oracle, mut fused) = (0usize, 0.0, 0.0, 0.0);
    for (_, slots) in pairs {
        let [Some(right), Some(left)] = slots else {
            continue;
        };
        let (cr, cl) = (right.camera.unwrap(), left.camera.unwrap());
        let (origin, dir) = fuse_both_eyes(&cl.predicted, &cr.predicted, &cl.eye_center, &cr.eye_center)
            .map_err(|e| HarnessError::InvalidConfig(format!("fusion: {e}")))?;
        let truth = gaze_target_to_vector(&cr.target, &origin)
            .map_err(|e| HarnessError::InvalidConfig(format!("fusion: {e}")))?;
        per_eye += 0.5 * (right.error_deg + left.error_deg);
        oracle += right.error_deg.min(left.error_deg);
        fused += angular_error(&dir, &truth);
        n += 1;
    }
    if n == 0 {
        return Err(HarnessError::NoPairedSamples);
    }
    let k = n as f64;
    Ok(FusionReport {
        pairs: n,
        per_eye_mean: per_eye / k,
        oracle_best: oracle / k,
        fused: fused / k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GazeAngles, HeadAngles, Vec3};
    use crate::harness::{CameraGaze, EvalConfig};
    use crate::imaging::GrayImage;
    use crate::regressors::{EstimatorConfig, EstimatorKind};

    fn result(person: &str, record: usize, eye: EyeSide, err: f64, pred: Vec3, center: Vec3) -> SampleResult {
        SampleResult {
            id: format!("{record:06}_{eye:?}"),
            person: person.into(),
            eye,
            fold: 0,
            truth: GazeAngles::ZERO,
            predicted: GazeAngles::ZERO,
            head: HeadAngles::ZERO,
            error_deg: err,
            lr_difference: 0.0,
            camera: Some(CameraGaze {
                record,
                eye_center: center,
                predicted: pred.normalize(),
                target: Vec3::new(0.0, 0.0, 0.0),
            }),
        }
    }

    #[test]
    fn identical_eyes_give_identical_numbers() {
        let center = Vec3::new(0.0, 0.0, 600.0);
        let pred = Vec3::new(0.05, 0.0, -1.0);
        let err = angular_error(&pred, &(-center));
        let rs = vec![
            result("a", 0, EyeSide::Right, err, pred, center),
            result("a", 0, EyeSide::Left, err, pred, center),
        ];
        let f = fusion_eval(&rs).unwrap();
        assert_eq!(f.pairs, 1);
        assert!((f.per_eye_mean - f.oracle_best).abs() < 1e-12);
        assert!((f.fused - f.per_eye_mean).abs() < 1e-9, "{f:?}");
    }

    #[test]
    fn oracle_never_exceeds_the_mean() {
        let c = Vec3::new(0.0, 0.0, 600.0);
        let mut rs = Vec::new();
        for i in 0..20 {
            let e1 = (i * 37 % 11) as f64;
            let e2 = (i * 13 % 7) as f64;
            rs.push(result("a", i, EyeSide::Right, e1, Vec3::new(0.01 * i as f64, 0.0, -1.0), c));
            rs.push(result("a", i, EyeSide::Left, e2, Vec3::new(-0.02, 0.01, -1.0), c));
        }
        rs.push(result("b", 99, EyeSide::Left, 50.0, Vec3::new(0.0, 0.0, -1.0), c));
        let f = fusion_eval(&rs).unwrap();
        assert_eq!(f.pairs, 20);
        assert!(f.oracle_best <= f.per_eye_mean);
    }

    #[test]
    fn unpaired_results_are_rejected() {
        let c = Vec3::new(0.0, 0.0, 600.0);
        let rs = vec![result("a", 0, EyeSide::Right, 1.0, -c, c)];
        assert!(matches!(fusion_eval(&rs), Err(HarnessError::NoPairedSamples)));
        assert!(matches!(fusion_eval(&[]), Err(HarnessError::NoPairedSamples)));
    }

    #[test]
    fn grid_diagonal_matches_single_runs() {
        let data: Vec<NormalizedSample> = (0..24)
            .map(|i| {
                let gaze = GazeAngles::new(0.01 * i as f64, -0.005 * i as f64);
                NormalizedSample {
                    id: format!("s{i}"),
                    person: format!("p{}", i % 3),
                    eye: if i % 2 == 0 { EyeSide::Right } else { EyeSide::Left },
                    patch: GrayImage::from_fn(16, 10, |x, y| ((x * 13 + y * 7 + i * 5) % 256) as u8),
                    head: HeadAngles::ZERO,
                    gaze,
                    pupil: None,
                    geometry: None,
                }
            })
            .collect();
        let cfg = EvalConfig {
            estimator: EstimatorConfig {
                kind: EstimatorKind::Knn,
                knn_k: 2,
                knn_clusters: None,
                ..EstimatorConfig::default()
            },
            input_size: None,
        };
        let res = [(16, 10), (8, 5), (4, 3)];
        let grid = resolution_study(&data[..16], &data[16..], &res, &cfg).unwrap();
        assert_eq!(grid.errors.len(), 3);
        assert!(grid.errors.iter().all(|row| row.len() == 3 && row.iter().all(|e| e.is_finite())));
        for (i, &r) in res.iter().enumerate() {
            let single = crate::harness::cross_dataset_eval(
                &data[..16],
                &data[16..],
                &EvalConfig {
                    input_size: Some(r),
                    ..cfg
                },
            )
            .unwrap();
            assert!((grid.errors[i][i] - single.overall_mean).abs() < 1e-12);
        }
    }
}
