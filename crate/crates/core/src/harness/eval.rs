use std::collections::BTreeMap;

use rayon::prelude::*;

use super::HarnessError;
use crate::dataset::NormalizedSample;
use crate::geometry::{
    angles_to_vector, angular_error, EyeSide, GazeAngles, HeadAngles, Point2, Vec3,
};
use crate::imaging::{resize, ResizeMethod};
use crate::regressors::{fit_estimator, mean_predictor, EstimatorConfig, EstimatorModel};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalConfig {
    pub estimator: EstimatorConfig,
    /// Patches are resized (bicubic) to this size before training and
    /// testing; `None` keeps the archive's size.
    pub input_size: Option<(usize, usize)>,
}

impl EvalConfig {
    pub fn describe(&self) -> String {
        let size = self
            .input_size
            .map_or_else(|| "archive".to_string(), |(w, h)| format!("{w}x{h}"));
        format!("{} input={size}", self.estimator.describe())
    }
}

/// Prediction and ground truth mapped back to camera space, for fusion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraGaze {
    pub record: usize,
    pub eye_center: Vec3,
    /// Unit predicted gaze direction in camera coordinates.
    pub predicted: Vec3,
    pub target: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub id: String,
    pub person: String,
    pub eye: EyeSide,
    pub fold: usize,
    /// Angles in the sample's own (unflipped) normalized space.
    pub truth: GazeAngles,
    pub predicted: GazeAngles,
    pub head: HeadAngles,
    pub error_deg: f64,
    pub lr_difference: f64,
    pub camera: Option<CameraGaze>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonSummary {
    pub person: String,
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub protocol: String,
    pub config: String,
    pub folds: usize,
    pub results: Vec<SampleResult>,
    pub per_person: Vec<PersonSummary>,
    /// Mean over all samples, which equals the count-weighted mean of the
    /// per-person means.
    pub overall_mean: f64,
    pub overall_std: f64,
    /// Mean-predictor error on the same folds.
    pub baseline_mean: Option<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    /// Aggregates per-sample results. Persons are listed in sorted order.
    pub fn from_results(
        protocol: &str,
        config: String,
        folds: usize,
        results: Vec<SampleResult>,
        baseline_mean: Option<f64>,
    ) -> Self {
        let mut by_person: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &results {
            by_person.entry(&r.person).or_default().push(r.error_deg);
        }
        let per_person = by_person
            .into_iter()
            .map(|(person, errs)| {
                let (mean, std) = mean_std(&errs);
                PersonSummary {
                    person: person.to_string(),
                    count: errs.len(),
                    mean,
                    std,
                }
            })
            .collect();
        let all: Vec<f64> = results.iter().map(|r| r.error_deg).collect();
        let (overall_mean, overall_std) = if all.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_std(&all)
        };
        Self {
            protocol: protocol.to_string(),
            config,
            folds,
            results,
            per_person,
            overall_mean,
            overall_std,
            baseline_mean,
        }
    }
}

/// Bicubic resize of the patch; the pupil follows with pixel centres kept
/// aligned.
pub(crate) fn resize_sample(s: &mut NormalizedSample, (w, h): (usize, usize)) {
    if (s.patch.width(), s.patch.height()) == (w, h) {
        return;
    }
    let sx = w as f64 / s.patch.width() as f64;
    let sy = h as f64 / s.patch.height() as f64;
    s.patch = resize(&s.patch, w, h, ResizeMethod::Bicubic);
    s.pupil = s
        .pupil
        .map(|p| Point2::new((p.x + 0.5) * sx - 0.5, (p.y + 0.5) * sy - 0.5));
}

/// Mirrors left eyes into the right-eye frame and resizes to `size`.
/// Returned samples keep their ids and persons.
pub fn prepare_samples(samples: &[NormalizedSample], size: Option<(usize, usize)>) -> Vec<NormalizedSample> {
    samples
        .par_iter()
        .map(|s| {
            let mut c = if s.eye == EyeSide::Left { s.flipped() } else { s.clone() };
            if let Some(size) = size {
                resize_sample(&mut c, size);
            }
            c
        })
        .collect()
}

/// Predictions in each sample's own frame. Left eyes are mirrored in,
/// predicted, and the prediction mirrored back; patches are resized to the
/// model's input size.
pub fn predict_samples(
    model: &EstimatorModel,
    samples: &[NormalizedSample],
) -> Result<Vec<GazeAngles>, HarnessError> {
    let canon = prepare_samples(samples, model.input_size());
    let pred = model.predict(&canon)?;
    Ok(samples
        .iter()
        .zip(pred)
        .map(|(s, p)| if s.eye == EyeSide::Left { p.mirrored() } else { p })
        .collect())
}

/// Per-sample errors; camera-space gaze is attached when the sample carries
/// its normalization geometry.
pub fn score(samples: &[NormalizedSample], predictions: &[GazeAngles], fold: usize) -> Vec<SampleResult> {
    samples
        .iter()
        .zip(predictions)
        .map(|(s, p)| SampleResult {
            id: s.id.clone(),
            person: s.person.clone(),
            eye: s.eye,
            fold,
            truth: s.gaze,
            predicted: *p,
            head: s.head,
            error_deg: angular_error(p, &s.gaze),
            lr_difference: s.patch.left_right_difference(),
            camera: s.geometry.map(|g| CameraGaze {
                record: g.record,
                eye_center: g.eye_center,
                predicted: g.rotation.inverse() * angles_to_vector(p),
                target: g.target,
            }),
        })
        .collect()
}

struct FoldOutput {
    results: Vec<SampleResult>,
    baseline_errors: Vec<f64>,
}

fn run_fold(
    train: &[NormalizedSample],
    test: &[NormalizedSample],
    fold: usize,
    config: &EvalConfig,
) -> Result<FoldOutput, HarnessError> {
    let canon = prepare_samples(train, config.input_size);
    let (model, _) = fit_estimator(&canon, &config.estimator)?;
    let pred = predict_samples(&model, test)?;
    let baseline = EstimatorModel::Mean(mean_predictor(&canon)?);
    let base_pred = predict_samples(&baseline, test)?;
    Ok(FoldOutput {
        results: score(test, &pred, fold),
        baseline_errors: test
            .iter()
            .zip(&base_pred)
            .map(|(s, p)| angular_error(p, &s.gaze))
            .collect(),
    })
}

/// One fold per person in sorted order, each trained on all other persons.
pub fn leave_one_person_out(
    samples: &[NormalizedSample],
    config: &EvalConfig,
) -> Result<EvalReport, HarnessError> {
    let mut persons: Vec<&str> = samples.iter().map(|s| s.person.as_str()).collect();
    persons.sort_unstable();
    persons.dedup();
    if persons.len() < 2 {
        return Err(HarnessError::TooFewPersons {
            found: persons.len(),
        });
    }
    let folds: Vec<FoldOutput> = persons
        .par_iter()
        .enumerate()
        .map(|(fold, &p)| {
            let (test, train): (Vec<NormalizedSample>, Vec<NormalizedSample>) =
                samples.iter().cloned().partition(|s| s.person == p);
            run_fold(&train, &test, fold, config)
        })
        .collect::<Result<_, _>>()?;
    let baseline: Vec<f64> = folds.iter().flat_map(|f| f.baseline_errors.iter().copied()).collect();
    let results = folds.into_iter().flat_map(|f| f.results).collect();
    Ok(EvalReport::from_results(
        "lopo",
        config.describe(),
        persons.len(),
        results,
        Some(mean_std(&baseline).0),
    ))
}

/// Trains once on `train` and tests on `test`.
pub fn cross_dataset_eval(
    train: &[NormalizedSample],
    test: &[NormalizedSample],
    config: &EvalConfig,
) -> Result<EvalReport, HarnessError> {
    if train.is_empty() {
        return Err(HarnessError::EmptyArchive("training archive".into()));
    }
    if test.is_empty() {
        return Err(HarnessError::EmptyArchive("test archive".into()));
    }
    let out = run_fold(train, test, 0, config)?;
    Ok(EvalReport::from_results(
        "cross",
        config.describe(),
        1,
        out.results,
        Some(mean_std(&out.baseline_errors).0),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::GrayImage;
    use crate::regressors::EstimatorKind;

    fn samples(persons: usize, per: usize) -> Vec<NormalizedSample> {
        let mut out = Vec::new();
        for p in 0..persons {
            for i in 0..per {
                let t = (p * per + i) as f64;
                let gaze = GazeAngles::new(0.2 * (t * 0.37).sin(), 0.1 * (t * 0.91).cos());
                out.push(NormalizedSample {
                    id: format!("{p}_{i}"),
                    person: format!("p{p}"),
                    eye: if i % 2 == 0 { EyeSide::Right } else { EyeSide::Left },
                    patch: GrayImage::from_fn(6, 4, |x, y| ((x * 40 + y * 9 + 7 * (p * per + i)) % 256) as u8),
                    head: HeadAngles::new(0.05, 0.0),
                    gaze,
                    pupil: None,
                    geometry: None,
                });
            }
        }
        out
    }

    fn config(kind: EstimatorKind) -> EvalConfig {
        EvalConfig {
            estimator: EstimatorConfig {
                kind,
                knn_k: 1,
                knn_clusters: None,
                ..EstimatorConfig::default()
            },
            input_size: None,
        }
    }

    #[test]
    fn lopo_folds_are_disjoint_and_cover_everything() {
        let data = samples(4, 6);
        let report = leave_one_person_out(&data, &config(EstimatorKind::Knn)).unwrap();
        assert_eq!(report.folds, 4);
        assert_eq!(report.results.len(), data.len());
        let mut ids: Vec<&str> = report.results.iter().map(|r| r.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), data.len());
        for r in &report.results {
            // each person is tested in exactly one fold, the one named after it
            assert_eq!(r.fold, r.person[1..].parse::<usize>().unwrap());
        }
        for p in &report.per_person {
            let errs: Vec<f64> = report.results.iter().filter(|r| r.person == p.person).map(|r| r.error_deg).collect();
            assert_eq!(p.count, errs.len());
            assert!((p.mean - errs.iter().sum::<f64>() / errs.len() as f64).abs() < 1e-12);
        }
        let weighted: f64 = report.per_person.iter().map(|p| p.mean * p.count as f64).sum::<f64>() / data.len() as f64;
        assert!((weighted - report.overall_mean).abs() < 1e-12);
        assert!(report.results.iter().all(|r| r.error_deg >= 0.0));
    }

    #[test]
    fn lopo_needs_two_persons() {
        let err = leave_one_person_out(&samples(1, 5), &config(EstimatorKind::Mean)).unwrap_err();
        assert!(matches!(err, HarnessError::TooFewPersons { found: 1 }));
        assert!(err.is_validation());
    }

    #[test]
    fn lopo_is_repeatable() {
        let data = samples(3, 5);
        let cfg = config(EstimatorKind::Linear);
        assert_eq!(leave_one_person_out(&data, &cfg).unwrap(), leave_one_person_out(&data, &cfg).unwrap());
    }

    #[test]
    fn memorizing_knn_scores_zero_on_its_training_set() {
        let data = samples(3, 8);
        let cfg = config(EstimatorKind::Knn);
        let cross = cross_dataset_eval(&data, &data, &cfg).unwrap();
        assert!(cross.overall_mean < 1e-6, "{}", cross.overall_mean);
        let lopo = leave_one_person_out(&data, &cfg).unwrap();
        assert!(cross.overall_mean <= lopo.overall_mean);
    }

    #[test]
    fn mean_predictor_error_on_symmetric_gaze() {
        // Four gazes symmetric about the origin: the mean direction is (0, 0).
        let mut data = samples(1, 4);
        let d = 5f64.to_radians();
        for (s, g) in data.iter_mut().zip([(d, 0.0), (-d, 0.0), (0.0, d), (0.0, -d)]) {
            s.gaze = GazeAngles::new(g.0, g.1);
            s.eye = EyeSide::Right;
        }
        let report = cross_dataset_eval(&data, &data, &config(EstimatorKind::Mean)).unwrap();
        let direct: f64 = data.iter().map(|s| angular_error(&s.gaze, &GazeAngles::ZERO)).sum::<f64>() / 4.0;
        assert!((report.overall_mean - direct).abs() < 1e-9);
        assert!((report.baseline_mean.unwrap() - direct).abs() < 1e-9);
    }

    #[test]
    fn left_eye_predictions_are_mirrored_back() {
        let data = samples(1, 4);
        let model = EstimatorModel::Mean(crate::regressors::MeanModel {
            gaze: GazeAngles::new(0.1, 0.05),
        });
        let pred = predict_samples(&model, &data).unwrap();
        for (s, p) in data.iter().zip(&pred) {
            let want = if s.eye == EyeSide::Left { -0.1 } else { 0.1 };
            assert_eq!(p.yaw, want);
        }
    }

    #[test]
    fn empty_archives_are_rejected() {
        let data = samples(2, 2);
        let cfg = config(EstimatorKind::Mean);
        assert!(matches!(cross_dataset_eval(&[], &data, &cfg), Err(HarnessError::EmptyArchive(_))));
        assert!(matches!(cross_dataset_eval(&data, &[], &cfg), Err(HarnessError::EmptyArchive(_))));
    }
}
