//! Normalized-sample archive: `manifest.tsv`, one PGM per sample under
//! `patches/`, and `transforms.tsv` with the per-sample geometry needed to
//! regenerate labels and to map predictions back to camera space.
//!
//! Angles are stored in radians. A missing pupil is written as `NA`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{fmt_real, DatasetError};
use crate::geometry::{EyeSide, GazeAngles, HeadAngles, Mat3, Point2, Rot3, Vec3};
use crate::imaging::GrayImage;

pub const MANIFEST_HEADER: &str =
    "sample_id\tperson\teye\th_yaw\th_pitch\tg_yaw\tg_pitch\tpupil_u\tpupil_v\tpatch";

const TRANSFORMS_HEADER: &str = "sample_id\trecord\teye_center\tnorm_rotation\twarp\thead_rotation\ttarget";

/// Geometry behind one normalized sample, all in real-camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGeometry {
    /// Index of the source annotation record.
    pub record: usize,
    pub eye_center: Vec3,
    /// Normalization rotation `R`.
    pub rotation: Rot3,
    pub warp: Mat3,
    /// Estimated head rotation `R_r`.
    pub head_rotation: Rot3,
    pub target: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSample {
    pub id: String,
    pub person: String,
    pub eye: EyeSide,
    pub patch: GrayImage,
    pub head: HeadAngles,
    pub gaze: GazeAngles,
    /// Pupil centre in patch pixel coordinates.
    pub pupil: Option<Point2>,
    pub geometry: Option<SampleGeometry>,
}

impl NormalizedSample {
    /// Horizontal mirror of image, angles and pupil; the eye side swaps.
    /// Geometry is dropped since it no longer describes the patch.
    pub fn flipped(&self) -> Self {
        let w = self.patch.width() as f64;
        Self {
            id: self.id.clone(),
            person: self.person.clone(),
            eye: self.eye.other(),
            patch: self.patch.flipped_horizontal(),
            head: self.head.mirrored(),
            gaze: self.gaze.mirrored(),
            pupil: self.pupil.map(|p| Point2::new(w - 1.0 - p.x, p.y)),
            geometry: None,
        }
    }
}

fn mat_fields(m: &Mat3) -> String {
    let v: Vec<String> = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| fmt_real(m[(i, j)]))
        .collect();
    v.join(",")
}

fn vec_fields(v: &Vec3) -> String {
    format!("{},{},{}", fmt_real(v.x), fmt_real(v.y), fmt_real(v.z))
}

pub fn write_archive(dir: impl AsRef<Path>, samples: &[NormalizedSample]) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    let patches = dir.join("patches");
    fs::create_dir_all(&patches).map_err(|e| DatasetError::io(&patches, e))?;

    let mut manifest = String::from(MANIFEST_HEADER);
    manifest.push('\n');
    let mut transforms = String::from(TRANSFORMS_HEADER);
    transforms.push('\n');
    for s in samples {
        let rel = format!("patches/{}.pgm", s.id);
        let (pu, pv) = match s.pupil {
            Some(p) => (fmt_real(p.x), fmt_real(p.y)),
            None => ("NA".to_string(), "NA".to_string()),
        };
        let _ = writeln!(
            manifest,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.id,
            s.person,
            s.eye,
            fmt_real(s.head.yaw),
            fmt_real(s.head.pitch),
            fmt_real(s.gaze.yaw),
            fmt_real(s.gaze.pitch),
            pu,
            pv,
            rel
        );
        if let Some(g) = &s.geometry {
            let _ = writeln!(
                transforms,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                s.id,
                g.record,
                vec_fields(&g.eye_center),
                mat_fields(g.rotation.matrix()),
                mat_fields(&g.warp),
                mat_fields(g.head_rotation.matrix()),
                vec_fields(&g.target)
            );
        }
        let path = dir.join(&rel);
        s.patch.write_pgm(&path)?;
    }
    let mpath = dir.join("manifest.tsv");
    fs::write(&mpath, manifest).map_err(|e| DatasetError::io(&mpath, e))?;
    let tpath = dir.join("transforms.tsv");
    fs::write(&tpath, transforms).map_err(|e| DatasetError::io(&tpath, e))?;
    Ok(())
}

pub fn read_archive(dir: impl AsRef<Path>) -> Result<Vec<NormalizedSample>, DatasetError> {
    let dir = dir.as_ref();
    let mpath = dir.join("manifest.tsv");
    let file = mpath.display().to_string();
    let text = fs::read_to_string(&mpath).map_err(|e| DatasetError::io(&mpath, e))?;
    let geometry = read_transforms(dir)?;

    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if idx == 0 {
            if line != MANIFEST_HEADER {
                return Err(DatasetError::Parse {
                    file,
                    line: 1,
                    message: "unexpected manifest header".into(),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DatasetError::Parse {
            file: file.clone(),
            line: line_no,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(err(format!("expected 10 columns, got {}", cols.len())));
        }
        let real = |i: usize| -> Result<f64, DatasetError> {
            cols[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("column {}: bad number '{}'", i + 1, cols[i])))
        };
        let eye: EyeSide = cols[2].parse().map_err(err)?;
        let pupil = if cols[7] == "NA" && cols[8] == "NA" {
            None
        } else {
            Some(Point2::new(real(7)?, real(8)?))
        };
        let patch = GrayImage::read_pgm(dir.join(cols[9]))?;
        out.push(NormalizedSample {
            id: cols[0].to_string(),
            person: cols[1].to_string(),
            eye,
            patch,
            head: HeadAngles::new(real(3)?, real(4)?),
            gaze: GazeAngles::new(real(5)?, real(6)?),
            pupil,
            geometry: geometry.get(cols[0]).copied(),
        });
    }
    Ok(out)
}

fn read_transforms(dir: &Path) -> Result<HashMap<String, SampleGeometry>, DatasetError> {
    let path = dir.join("transforms.tsv");
    let mut map = HashMap::new();
    if !path.exists() {
        return Ok(map);
    }
    let file = path.display().to_string();
    let text = fs::read_to_string(&path).map_err(|e| DatasetError::io(&path, e))?;
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| DatasetError::Parse {
            file: file.clone(),
            line: idx + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 7 {
            return Err(err(format!("expected 7 columns, got {}", cols.len())));
        }
        let record = cols[1]
            .parse::<usize>()
            .map_err(|_| err(format!("bad record index '{}'", cols[1])))?;
        let vec3 = |s: &str| -> Result<Vec3, DatasetError> {
            let v = super::parse_reals(s, 3).map_err(&err)?;
            Ok(Vec3::new(v[0], v[1], v[2]))
        };
        let mat3 = |s: &str| -> Result<Mat3, DatasetError> {
            let v = super::parse_reals(s, 9).map_err(&err)?;
            Ok(Mat3::from_row_slice(&v))
        };
        map.insert(
            cols[0].to_string(),
            SampleGeometry {
                record,
                eye_center: vec3(cols[2])?,
                rotation: Rot3::from_matrix_unchecked(mat3(cols[3])?),
                warp: mat3(cols[4])?,
                head_rotation: Rot3::from_matrix_unchecked(mat3(cols[5])?),
                target: vec3(cols[6])?,
            },
        );
    }
    Ok(map)
}
