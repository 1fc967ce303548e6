//! Annotated frames to normalized eye samples.

use std::path::PathBuf;

use rayon::prelude::*;

use super::{AnnotationRecord, CalibrationFile, DatasetError, NormalizedSample, SampleGeometry};
use crate::geometry::{
    compute_normalization, eye_center_camera, gaze_target_to_vector, normalize_gaze,
    normalize_head, solve_pnp, CameraIntrinsics, EyeSide, FaceModel, Mat3, NormalizationSpec,
    PnpOptions, Point2, Vec3,
};
use crate::imaging::{equalize_histogram, perspective_warp, GrayImage};

/// Supplies the frame referenced by an annotation record.
pub trait ImageSource: Sync {
    fn load(&self, index: usize, record: &AnnotationRecord) -> Result<GrayImage, DatasetError>;
}

/// Reads `record.image` as a PGM file relative to a root directory.
#[derive(Debug, Clone)]
pub struct DirectorySource {
    pub root: PathBuf,
}

impl DirectorySource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
}

impl ImageSource for DirectorySource {
    fn load(&self, _index: usize, record: &AnnotationRecord) -> Result<GrayImage, DatasetError> {
        Ok(GrayImage::read_pgm(self.root.join(&record.image))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub spec: NormalizationSpec,
    pub face: FaceModel,
    pub pnp: PnpOptions,
    /// Records whose warped patch has less source coverage are rejected.
    pub min_coverage: f64,
    /// Also emit the horizontal mirror of every sample.
    pub flip_augment: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            spec: NormalizationSpec::default(),
            face: FaceModel::generic(),
            pnp: PnpOptions::default(),
            min_coverage: 0.9,
            flip_augment: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordFailure {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutput {
    /// Samples ordered by record index, right eye before left.
    pub samples: Vec<NormalizedSample>,
    pub failures: Vec<RecordFailure>,
    /// Records that produced samples.
    pub records_ok: usize,
}

/// Runs the normalization pipeline on every record. A record fails as a
/// whole if either eye fails; failures are collected, not fatal.
pub fn build_normalized_dataset(
    records: &[AnnotationRecord],
    calib: &CalibrationFile,
    source: &dyn ImageSource,
    opts: &BuildOptions,
) -> Result<BuildOutput, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    opts.spec.validate()?;
    calib.camera.validate()?;

    let results: Vec<Result<Vec<NormalizedSample>, String>> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let image = source.load(i, rec).map_err(|e| e.to_string())?;
            normalize_record(i, rec, &image, &calib.camera, opts).map_err(|e| e.to_string())
        })
        .collect();

    let mut samples = Vec::new();
    let mut failures = Vec::new();
    let mut records_ok = 0;
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(s) => {
                records_ok += 1;
                samples.extend(s);
            }
            Err(reason) => failures.push(RecordFailure { index, reason }),
        }
    }
    if records_ok == 0 {
        return Err(DatasetError::EmptyOutput {
            failures: failures.len(),
        });
    }
    Ok(BuildOutput {
        samples,
        failures,
        records_ok,
    })
}

fn map_point(w: &Mat3, p: &Point2) -> Point2 {
    let q = w * Vec3::new(p.x, p.y, 1.0);
    Point2::new(q.x / q.z, q.y / q.z)
}

/// Both eye samples for one record (plus their mirrors when augmenting).
pub fn normalize_record(
    index: usize,
    record: &AnnotationRecord,
    image: &GrayImage,
    camera: &CameraIntrinsics,
    opts: &BuildOptions,
) -> Result<Vec<NormalizedSample>, DatasetError> {
    let pnp = solve_pnp(&opts.face.landmarks, &record.landmarks, camera, &opts.pnp)?;
    let pose = pnp.pose;
    let spec = &opts.spec;

    let mut out = Vec::with_capacity(if opts.flip_augment { 4 } else { 2 });
    for (k, eye) in EyeSide::BOTH.into_iter().enumerate() {
        let e_r = eye_center_camera(&pose, &opts.face, eye);
        let xform = compute_normalization(&e_r, &pose.rotation, spec, camera)?;
        let warped = perspective_warp(image, &xform.w, spec.out_width, spec.out_height)?;
        if warped.coverage < opts.min_coverage {
            return Err(DatasetError::Validation {
                file: record.image.clone(),
                line: index + 1,
                message: format!(
                    "{eye} eye patch coverage {:.3} below {}",
                    warped.coverage, opts.min_coverage
                ),
            });
        }
        let patch = equalize_histogram(&warped.image);
        let head = normalize_head(&pose.rotation, &xform)?;
        let g_r = gaze_target_to_vector(&record.target, &e_r)?;
        let gaze = normalize_gaze(&g_r, &xform);
        let pupil = record.pupils.map(|p| map_point(&xform.w, &p[k]));

        let sample = NormalizedSample {
            id: format!("{index:06}_{eye}"),
            person: record.person.clone(),
            eye,
            patch,
            head,
            gaze,
            pupil,
            geometry: Some(SampleGeometry {
                record: index,
                eye_center: e_r,
                rotation: xform.r,
                warp: xform.w,
                head_rotation: pose.rotation,
                target: record.target,
            }),
        };
        if opts.flip_augment {
            let mut f = sample.flipped();
            f.id = format!("{}_flip", sample.id);
            out.push(sample);
            out.push(f);
        } else {
            out.push(sample);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{angles_to_vector, Rot3};

    struct Constant(GrayImage);

    impl ImageSource for Constant {
        fn load(&self, _: usize, _: &AnnotationRecord) -> Result<GrayImage, DatasetError> {
            Ok(self.0.clone())
        }
    }

    fn camera() -> CameraIntrinsics {
        CameraIntrinsics::new(960.0, 960.0, 320.0, 240.0).unwrap()
    }

    fn frontal_record(target: Vec3) -> AnnotationRecord {
        let face = FaceModel::generic();
        let t = Vec3::new(0.0, 0.0, 600.0);
        let cam = camera();
        let landmarks = face.landmarks.map(|p| cam.project(&(p + t)));
        AnnotationRecord {
            person: "p00".into(),
            image: "frame.pgm".into(),
            landmarks,
            target,
            pupils: None,
            timestamp: "2016-01-01T00:00:00Z".into(),
        }
    }

    fn textured() -> GrayImage {
        GrayImage::from_fn(640, 480, |x, y| ((x * 7 + y * 13) % 251) as u8)
    }

    #[test]
    fn frontal_record_looking_back_along_each_eye_axis() {
        let face = FaceModel::generic();
        let calib = CalibrationFile::new(camera());
        let opts = BuildOptions::default();
        // Target straight back along the right eye's line of sight to the
        // camera centre: its normalized gaze is exactly (0, 0).
        let e_right = face.eye_center(EyeSide::Right) + Vec3::new(0.0, 0.0, 600.0);
        let target = e_right * 0.5;
        let recs = vec![frontal_record(target)];
        let out = build_normalized_dataset(&recs, &calib, &Constant(textured()), &opts).unwrap();
        assert!(out.failures.is_empty());
        let right = &out.samples[0];
        assert_eq!(right.eye, EyeSide::Right);
        assert!(right.gaze.yaw.abs() < 1e-6 && right.gaze.pitch.abs() < 1e-6);
        // The head faces along the camera axis, so in the eye's normalized
        // space h is the eye's angular offset from that axis.
        let expected_yaw = (-e_right.x / e_right.z).atan();
        assert!((right.head.yaw - expected_yaw).abs() < 1e-6, "{:?}", right.head);
        assert!(right.head.pitch.abs() < 1e-6);
    }

    #[test]
    fn eyes_midpoint_on_axis_gives_zero_angles() {
        // A face model with a single eye at the origin would be degenerate,
        // so check the midpoint case through the transform instead: place
        // the right eye on the optical axis at 600 mm.
        let face = FaceModel::generic();
        let shift = -face.eye_center(EyeSide::Right);
        let t = Vec3::new(0.0, 0.0, 600.0) + shift;
        let cam = camera();
        let mut rec = frontal_record(Vec3::new(0.0, 0.0, 100.0));
        rec.landmarks = face.landmarks.map(|p| cam.project(&(p + t)));
        let calib = CalibrationFile::new(cam);
        let out =
            build_normalized_dataset(&[rec], &calib, &Constant(textured()), &BuildOptions::default())
                .unwrap();
        let s = &out.samples[0];
        assert!(s.head.yaw.abs() < 1e-6 && s.head.pitch.abs() < 1e-6, "{:?}", s.head);
        assert!(s.gaze.yaw.abs() < 1e-6 && s.gaze.pitch.abs() < 1e-6, "{:?}", s.gaze);
        assert_eq!((s.patch.width(), s.patch.height()), (60, 36));
    }

    #[test]
    fn stored_geometry_regenerates_angles() {
        let recs = vec![frontal_record(Vec3::new(40.0, -30.0, 0.0))];
        let calib = CalibrationFile::new(camera());
        let out =
            build_normalized_dataset(&recs, &calib, &Constant(textured()), &BuildOptions::default())
                .unwrap();
        for s in &out.samples {
            let g = s.geometry.unwrap();
            let gr = (recs[0].target - g.eye_center).normalize();
            let v = g.rotation * gr;
            assert!((angles_to_vector(&s.gaze) - v).norm() < 1e-9);
            let rn: Rot3 = g.rotation * g.head_rotation;
            let facing = -rn.matrix().column(2).into_owned();
            assert!((angles_to_vector(&s.head) - facing).norm() < 1e-9);
        }
    }

    #[test]
    fn low_coverage_and_divergence_are_counted() {
        let calib = CalibrationFile::new(camera());
        let good = frontal_record(Vec3::zeros());
        let mut garbage = good.clone();
        garbage.landmarks = [
            Point2::new(10.0, 10.0),
            Point2::new(600.0, 20.0),
            Point2::new(30.0, 400.0),
            Point2::new(300.0, 300.0),
            Point2::new(500.0, 100.0),
            Point2::new(20.0, 470.0),
        ];
        let small = GrayImage::filled(640, 480, 90);
        let recs = vec![good.clone(), garbage, good];
        let out = build_normalized_dataset(&recs, &calib, &Constant(small), &BuildOptions::default())
            .unwrap();
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].index, 1);
        assert_eq!(out.records_ok, recs.len() - out.failures.len());
        assert_eq!(out.samples.len(), 2 * out.records_ok);

        // Frame too small to contain the eyes: every record fails.
        let tiny = GrayImage::filled(64, 48, 90);
        let err = build_normalized_dataset(&recs[..1], &calib, &Constant(tiny), &BuildOptions::default())
            .unwrap_err();
        assert!(matches!(err, DatasetError::EmptyOutput { failures: 1 }));
    }

    #[test]
    fn flip_augmentation_doubles_and_keeps_person() {
        let calib = CalibrationFile::new(camera());
        let recs = vec![frontal_record(Vec3::new(10.0, 50.0, 0.0))];
        let opts = BuildOptions {
            flip_augment: true,
            ..BuildOptions::default()
        };
        let plain =
            build_normalized_dataset(&recs, &calib, &Constant(textured()), &BuildOptions::default())
                .unwrap();
        let aug = build_normalized_dataset(&recs, &calib, &Constant(textured()), &opts).unwrap();
        assert_eq!(aug.samples.len(), 2 * plain.samples.len());
        assert!(aug.samples.iter().all(|s| s.person == "p00"));
        assert_eq!(aug.samples[1].gaze, plain.samples[0].gaze.mirrored());
    }

    #[test]
    fn pupils_follow_the_warp() {
        let cam = camera();
        let face = FaceModel::generic();
        let t = Vec3::new(0.0, 0.0, 600.0);
        let mut rec = frontal_record(Vec3::zeros());
        let pr = cam.project(&(face.eye_center(EyeSide::Right) + t));
        let pl = cam.project(&(face.eye_center(EyeSide::Left) + t));
        rec.pupils = Some([pr, pl]);
        let out = build_normalized_dataset(
            &[rec],
            &CalibrationFile::new(cam),
            &Constant(textured()),
            &BuildOptions::default(),
        )
        .unwrap();
        for s in &out.samples {
            let p = s.pupil.unwrap();
            assert!((p - Point2::new(30.0, 18.0)).norm() < 1e-6, "{p:?}");
        }
    }
}
