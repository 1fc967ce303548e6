//! Synthetic faces in full camera frames: head poses, gaze targets,
//! landmark annotations and rendered frames that run through the same
//! normalization pipeline as real data.

use std::fs;
use std::path::Path;

use nalgebra::Unit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::render::{quantize, EyeAppearance, EyeModel, KAPPA, PATCH_HEIGHT, PATCH_WIDTH};
use super::SynthError;
use crate::dataset::{
    build_normalized_dataset, format_annotations, AnnotationRecord, BuildOptions, BuildOutput,
    CalibrationFile, DatasetError, ImageSource,
};
use crate::geometry::{
    angles_to_vector, compute_normalization, eye_center_camera, gaze_target_to_vector,
    normalize_gaze, normalize_head, CameraIntrinsics, EyeSide, FaceModel, GazeAngles, HeadAngles,
    HeadPose, Mat3, NormalizationSpec, NormalizationTransform, Point2, Rot3, Vec3,
};
use crate::imaging::GrayImage;

/// Patch pixels beyond the patch border that are still drawn with the eye
/// model, so slightly misaligned warps see consistent content.
const WINDOW_MARGIN: f64 = 8.0;
/// Eyes-midpoint height above the frame centre, px.
const EYES_ABOVE_CENTER_PX: f64 = 25.0;
const FRAME_MARGIN_PX: f64 = 10.0;

/// Splitmix-style seed derivation for independent sub-streams.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRanges {
    /// Maximum absolute head yaw, pitch and roll, degrees.
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    pub roll_deg: f64,
    /// Depth of the eyes midpoint, mm.
    pub depth: (f64, f64),
    /// Maximum offset of the face from its nominal image position, px.
    pub jitter_px: f64,
}

impl Default for PoseRanges {
    fn default() -> Self {
        Self {
            yaw_deg: 15.0,
            pitch_deg: 10.0,
            roll_deg: 5.0,
            depth: (500.0, 700.0),
            jitter_px: 15.0,
        }
    }
}

/// Default synthetic camera: 400x300 frames.
pub fn synthetic_camera() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 960.0,
        fy: 960.0,
        cx: 199.5,
        cy: 149.5,
    }
}

pub const FRAME_WIDTH: usize = 400;
pub const FRAME_HEIGHT: usize = 300;

/// Head rotation from yaw (about y), pitch (about x) and roll (about z).
pub fn head_rotation(yaw: f64, pitch: f64, roll: f64) -> Rot3 {
    Rot3::from_axis_angle(&Vec3::y_axis(), yaw)
        * Rot3::from_axis_angle(&Vec3::x_axis(), pitch)
        * Rot3::from_axis_angle(&Unit::new_unchecked(Vec3::z()), roll)
}

fn sample_sym(rng: &mut impl Rng, max: f64) -> f64 {
    if max > 0.0 {
        rng.gen_range(-max..=max)
    } else {
        0.0
    }
}

fn sample_range(rng: &mut impl Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.gen_range(r.0..=r.1)
    } else {
        r.0
    }
}

fn inside_frame(p: &Point2, w: usize, h: usize) -> bool {
    p.x >= FRAME_MARGIN_PX
        && p.y >= FRAME_MARGIN_PX
        && p.x <= w as f64 - 1.0 - FRAME_MARGIN_PX
        && p.y <= h as f64 - 1.0 - FRAME_MARGIN_PX
}

fn sample_pose(
    rng: &mut impl Rng,
    ranges: &PoseRanges,
    face: &FaceModel,
    cam: &CameraIntrinsics,
    frame: (usize, usize),
) -> HeadPose {
    loop {
        let rotation = head_rotation(
            sample_sym(rng, ranges.yaw_deg).to_radians(),
            sample_sym(rng, ranges.pitch_deg).to_radians(),
            sample_sym(rng, ranges.roll_deg).to_radians(),
        );
        let z = sample_range(rng, ranges.depth);
        let u = cam.cx + sample_sym(rng, ranges.jitter_px);
        let v = cam.cy - EYES_ABOVE_CENTER_PX + sample_sym(rng, ranges.jitter_px);
        let t = Vec3::new((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z);
        let pose = HeadPose { rotation, translation: t };
        let ok = face
            .landmarks
            .iter()
            .all(|p| inside_frame(&cam.project(&pose.transform(p)), frame.0, frame.1));
        if ok {
            return pose;
        }
    }
}

fn project_landmarks(face: &FaceModel, pose: &HeadPose, cam: &CameraIntrinsics) -> [Point2; 6] {
    face.landmarks.map(|p| cam.project(&pose.transform(&p)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpScene {
    pub face: FaceModel,
    pub pose: HeadPose,
    pub camera: CameraIntrinsics,
    pub clean: [Point2; 6],
    /// Landmarks with Gaussian noise of the requested sigma.
    pub landmarks: [Point2; 6],
}

/// Projects the generic face under a random pose into the synthetic
/// camera, perturbing the landmarks by `sigma` px.
pub fn generate_pnp_scene(ranges: &PoseRanges, sigma: f64, seed: u64) -> PnpScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let face = FaceModel::generic();
    let camera = synthetic_camera();
    let pose = sample_pose(&mut rng, ranges, &face, &camera, (FRAME_WIDTH, FRAME_HEIGHT));
    let clean = project_landmarks(&face, &pose, &camera);
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let landmarks = if sigma > 0.0 {
        clean.map(|p| Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng)))
    } else {
        clean
    };
    PnpScene {
        face,
        pose,
        camera,
        clean,
        landmarks,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub persons: usize,
    pub samples_per_person: usize,
    /// Gaze ranges in the right eye's normalized space, degrees.
    pub gaze_yaw_deg: (f64, f64),
    pub gaze_pitch_deg: (f64, f64),
    pub pose: PoseRanges,
    /// Distance of the gaze target from the right eye, mm.
    pub target_distance: (f64, f64),
    pub landmark_noise_px: f64,
    /// Extra random-direction shading of the given strength on one eye.
    pub corrupt_eye: Option<(EyeSide, f64)>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            persons: 8,
            samples_per_person: 400,
            gaze_yaw_deg: (-18.0, 18.0),
            gaze_pitch_deg: (-1.5, 20.0),
            pose: PoseRanges::default(),
            target_distance: (300.0, 600.0),
            landmark_noise_px: 0.5,
            corrupt_eye: None,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.persons == 0 || self.samples_per_person == 0 {
            return bad("persons and samples per person must be at least 1");
        }
        let (y, p) = (self.gaze_yaw_deg, self.gaze_pitch_deg);
        if y.0 > y.1 || p.0 > p.1 {
            return bad("gaze ranges must be ordered");
        }
        if [y.0, y.1, p.0, p.1].iter().any(|v| v.abs() > 25.0) {
            return bad("gaze ranges must lie within 25 degrees");
        }
        if !(self.target_distance.0 >= 100.0 && self.target_distance.1 >= self.target_distance.0) {
            return bad("target distance must be ordered and at least 100 mm");
        }
        if !(self.pose.depth.0 > 100.0 && self.pose.depth.1 >= self.pose.depth.0) {
            return bad("depth range must be ordered and beyond 100 mm");
        }
        Ok(())
    }
}

/// Generating values for one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordTruth {
    pub person: usize,
    pub pose: HeadPose,
    /// Right then left eye, in each eye's normalized space.
    pub gaze: [GazeAngles; 2],
    pub head: [HeadAngles; 2],
    pub eye_centers: [Vec3; 2],
    pub warps: [Mat3; 2],
    /// Per-eye extra shading gradient.
    pub extra_shading: [[f64; 2]; 2],
    pub noise_seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub config: SynthConfig,
    pub calibration: CalibrationFile,
    pub frame_size: (usize, usize),
    pub appearances: Vec<EyeAppearance>,
    pub records: Vec<AnnotationRecord>,
    pub truth: Vec<RecordTruth>,
}

pub fn person_id(i: usize) -> String {
    format!("p{i:02}")
}

fn timestamp(index: usize) -> String {
    let day_index = index / 1440;
    format!(
        "{:04}-{:02}-{:02}T{:02}:{:02}:00Z",
        2016 + day_index / 336,
        1 + (day_index / 28) % 12,
        1 + day_index % 28,
        (index / 60) % 24,
        index % 60
    )
}

fn normalization(
    pose: &HeadPose,
    face: &FaceModel,
    eye: EyeSide,
    cam: &CameraIntrinsics,
) -> Result<(Vec3, NormalizationTransform), SynthError> {
    let e = eye_center_camera(pose, face, eye);
    let x = compute_normalization(&e, &pose.rotation, &NormalizationSpec::default(), cam)?;
    Ok((e, x))
}

fn within_render_range(g: &GazeAngles) -> bool {
    let (y, p) = g.to_degrees();
    y.abs() <= super::render::MAX_GAZE_DEG && p.abs() <= super::render::MAX_GAZE_DEG
}

/// Synthetic persons with per-person appearance and per-sample pose and
/// gaze. Records are ordered by person, then sample.
pub fn generate_persons(config: &SynthConfig) -> Result<SyntheticDataset, SynthError> {
    config.validate()?;
    let face = FaceModel::generic();
    let cam = synthetic_camera();
    let appearances: Vec<EyeAppearance> = (0..config.persons)
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, p as u64, u64::MAX));
            EyeAppearance::sample(&mut rng)
        })
        .collect();

    let n = config.persons * config.samples_per_person;
    let generated: Vec<(AnnotationRecord, RecordTruth)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let person = i / config.samples_per_person;
            let sample = i % config.samples_per_person;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, person as u64, sample as u64));
            generate_record(config, &face, &cam, &mut rng, i, person, sample)
        })
        .collect::<Result<_, _>>()?;
    let (records, truth) = generated.into_iter().unzip();
    Ok(SyntheticDataset {
        config: config.clone(),
        calibration: CalibrationFile::new(cam),
        frame_size: (FRAME_WIDTH, FRAME_HEIGHT),
        appearances,
        records,
        truth,
    })
}

fn generate_record(
    config: &SynthConfig,
    face: &FaceModel,
    cam: &CameraIntrinsics,
    rng: &mut ChaCha8Rng,
    index: usize,
    person: usize,
    sample: usize,
) -> Result<(AnnotationRecord, RecordTruth), SynthError> {
    let frame = (FRAME_WIDTH, FRAME_HEIGHT);
    loop {
        let pose = sample_pose(rng, &config.pose, face, cam, frame);
        let (e_r, x_r) = normalization(&pose, face, EyeSide::Right, cam)?;
        let (e_l, x_l) = normalization(&pose, face, EyeSide::Left, cam)?;
        let g_right = GazeAngles::from_degrees(
            sample_range(rng, config.gaze_yaw_deg),
            sample_range(rng, config.gaze_pitch_deg),
        );
        let dir = x_r.r.inverse() * angles_to_vector(&g_right);
        let target = e_r + dir * sample_range(rng, config.target_distance);
        let g_left = normalize_gaze(&gaze_target_to_vector(&target, &e_l)?, &x_l);
        if !within_render_range(&g_left) {
            continue;
        }
        let head = [normalize_head(&pose.rotation, &x_r)?, normalize_head(&pose.rotation, &x_l)?];
        let gaze = [g_right, g_left];

        let noise = Normal::new(0.0, config.landmark_noise_px.max(0.0)).expect("finite sigma");
        let mut landmarks = project_landmarks(face, &pose, cam);
        if config.landmark_noise_px > 0.0 {
            for p in landmarks.iter_mut() {
                p.x += noise.sample(rng);
                p.y += noise.sample(rng);
            }
        }

        let warps = [x_r.w, x_l.w];
        let mut pupils = [Point2::zeros(); 2];
        for k in 0..2 {
            let c = (
                (PATCH_WIDTH as f64 - 1.0) / 2.0 + KAPPA * gaze[k].yaw.tan(),
                (PATCH_HEIGHT as f64 - 1.0) / 2.0 - KAPPA * gaze[k].pitch.tan(),
            );
            let inv = warps[k].try_inverse().ok_or(SynthError::InvalidConfig(
                "singular normalization warp".into(),
            ))?;
            let q = inv * Vec3::new(c.0, c.1, 1.0);
            pupils[k] = Point2::new(q.x / q.z, q.y / q.z);
        }

        let mut extra_shading = [[0.0; 2]; 2];
        if let Some((side, strength)) = config.corrupt_eye {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = rng.gen_range(0.5..1.0) * strength;
            extra_shading[side as usize] = [s * a.cos(), s * a.sin()];
        }

        let pid = person_id(person);
        let record = AnnotationRecord {
            person: pid.clone(),
            image: format!("frames/{pid}_{sample:04}.pgm"),
            landmarks,
            target,
            pupils: Some(pupils),
            timestamp: timestamp(index),
        };
        let truth = RecordTruth {
            person,
            pose,
            gaze,
            head,
            eye_centers: [e_r, e_l],
            warps,
            extra_shading,
            noise_seed: rng.gen(),
        };
        return Ok((record, truth));
    }
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Noise-free eye model for one eye of a record, in that eye's patch
    /// coordinates. The left eye evaluates a mirrored right-eye model.
    fn eye_models(&self, index: usize) -> Result<[EyeModel; 2], SynthError> {
        let t = &self.truth[index];
        let app = self.appearances[t.person];
        let with_extra = |a: EyeAppearance, e: [f64; 2]| EyeAppearance {
            shading: [a.shading[0] + e[0], a.shading[1] + e[1]],
            ..a
        };
        let right = EyeModel::new(&t.gaze[0], &t.head[0], &with_extra(app, t.extra_shading[0]))?;
        let left_app = with_extra(app, t.extra_shading[1]).mirrored();
        let left = EyeModel::new(&t.gaze[1].mirrored(), &t.head[1].mirrored(), &left_app)?;
        Ok([right, left])
    }

    /// Renders the full camera frame of one record.
    pub fn render_frame(&self, index: usize) -> Result<GrayImage, SynthError> {
        let t = &self.truth[index];
        let app = self.appearances[t.person];
        let models = self.eye_models(index)?;
        let (w, h) = self.frame_size;
        let mut values = vec![app.skin; w * h];

        let (pw, ph) = (PATCH_WIDTH as f64, PATCH_HEIGHT as f64);
        for k in 0..2 {
            let warp = t.warps[k];
            let inv = warp.try_inverse().ok_or(SynthError::InvalidConfig(
                "singular normalization warp".into(),
            ))?;
            let corners = [
                (-WINDOW_MARGIN, -WINDOW_MARGIN),
                (pw - 1.0 + WINDOW_MARGIN, -WINDOW_MARGIN),
                (-WINDOW_MARGIN, ph - 1.0 + WINDOW_MARGIN),
                (pw - 1.0 + WINDOW_MARGIN, ph - 1.0 + WINDOW_MARGIN),
            ];
            let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for (u, v) in corners {
                let q = inv * Vec3::new(u, v, 1.0);
                let (x, y) = (q.x / q.z, q.y / q.z);
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
            let xs = (x0.floor().max(0.0) as usize)..=(x1.ceil().min(w as f64 - 1.0).max(0.0) as usize);
            let ys = (y0.floor().max(0.0) as usize)..=(y1.ceil().min(h as f64 - 1.0).max(0.0) as usize);
            for y in ys {
                for x in xs.clone() {
                    let q = warp * Vec3::new(x as f64, y as f64, 1.0);
                    let (u, v) = (q.x / q.z, q.y / q.z);
                    let inside = u >= -WINDOW_MARGIN
                        && v >= -WINDOW_MARGIN
                        && u <= pw - 1.0 + WINDOW_MARGIN
                        && v <= ph - 1.0 + WINDOW_MARGIN;
                    if inside {
                        let u_model = if k == 0 { u } else { pw - 1.0 - u };
                        values[y * w + x] = models[k].intensity(u_model, v);
                    }
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(t.noise_seed);
        let noise = Normal::new(0.0, app.noise_sigma.max(0.0)).expect("finite sigma");
        let noisy = app.noise_sigma > 0.0;
        let pixels = values
            .into_iter()
            .map(|v| quantize(if noisy { v + noise.sample(&mut rng) } else { v }))
            .collect();
        Ok(GrayImage::from_pixels(w, h, pixels)?)
    }

    /// Runs the normalization pipeline over all records.
    pub fn normalize(&self, opts: &BuildOptions) -> Result<BuildOutput, DatasetError> {
        build_normalized_dataset(&self.records, &self.calibration, self, opts)
    }

    /// Writes `calibration.txt`, `annotations.txt` and, when requested,
    /// every frame under `frames/`.
    pub fn write_raw(&self, dir: impl AsRef<Path>, frames: bool) -> Result<(), SynthError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
        self.calibration.write(dir.join("calibration.txt"))?;
        let ann = dir.join("annotations.txt");
        fs::write(&ann, format_annotations(&self.records)).map_err(|e| DatasetError::io(&ann, e))?;
        if frames {
            let fdir = dir.join("frames");
            fs::create_dir_all(&fdir).map_err(|e| DatasetError::io(&fdir, e))?;
            (0..self.len()).into_par_iter().try_for_each(|i| {
                let img = self.render_frame(i)?;
                img.write_pgm(dir.join(&self.records[i].image))?;
                Ok::<_, SynthError>(())
            })?;
        }
        Ok(())
    }
}

impl ImageSource for SyntheticDataset {
    fn load(&self, index: usize, _record: &AnnotationRecord) -> Result<GrayImage, DatasetError> {
        self.render_frame(index).map_err(|e| match e {
            SynthError::Dataset(d) => d,
            other => DatasetError::Validation {
                file: "synthetic".into(),
                line: index + 1,
                message: other.to_string(),
            },
        })
    }
}
