use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{fmt_real, parse_reals, DatasetError};
use crate::geometry::{CameraIntrinsics, Mat3, Vec3};

/// Screen plane pose in camera coordinates (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationFile {
    pub camera: CameraIntrinsics,
    pub screen: Option<ScreenPose>,
}

impl CalibrationFile {
    pub fn new(camera: CameraIntrinsics) -> Self {
        Self {
            camera,
            screen: None,
        }
    }

    /// `key=value` lines; `screen_r` is row-major.
    pub fn to_text(&self) -> String {
        let c = &self.camera;
        let mut out = String::new();
        let _ = writeln!(out, "fx={}", fmt_real(c.fx));
        let _ = writeln!(out, "fy={}", fmt_real(c.fy));
        let _ = writeln!(out, "cx={}", fmt_real(c.cx));
        let _ = writeln!(out, "cy={}", fmt_real(c.cy));
        if let Some(s) = &self.screen {
            let r: Vec<String> = (0..3)
                .flat_map(|i| (0..3).map(move |j| (i, j)))
                .map(|(i, j)| fmt_real(s.rotation[(i, j)]))
                .collect();
            let t: Vec<String> = s.translation.iter().map(|&v| fmt_real(v)).collect();
            let _ = writeln!(out, "screen_r={}", r.join(","));
            let _ = writeln!(out, "screen_t={}", t.join(","));
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| DatasetError::io(path, e))
    }
}

pub fn parse_calibration(path: impl AsRef<Path>) -> Result<CalibrationFile, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_calibration_str(&text, &path.display().to_string())
}

pub fn parse_calibration_str(text: &str, file: &str) -> Result<CalibrationFile, DatasetError> {
    let err = |line: usize, message: String| DatasetError::Parse {
        file: file.to_string(),
        line,
        message,
    };
    let mut fx = None;
    let mut fy = None;
    let mut cx = None;
    let mut cy = None;
    let mut screen_r = None;
    let mut screen_t = None;
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        last_line = line_no;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected key=value, got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        let scalar = |v: &str| {
            parse_reals(v, 1)
                .map(|v| v[0])
                .map_err(|m| err(line_no, format!("{key}: {m}")))
        };
        match key {
            "fx" => fx = Some(scalar(value)?),
            "fy" => fy = Some(scalar(value)?),
            "cx" => cx = Some(scalar(value)?),
            "cy" => cy = Some(scalar(value)?),
            "screen_r" => {
                let v = parse_reals(value, 9).map_err(|m| err(line_no, format!("screen_r: {m}")))?;
                screen_r = Some(Mat3::from_row_slice(&v));
            }
            "screen_t" => {
                let v = parse_reals(value, 3).map_err(|m| err(line_no, format!("screen_t: {m}")))?;
                screen_t = Some(Vec3::new(v[0], v[1], v[2]));
            }
            other => return Err(err(line_no, format!("unknown key '{other}'"))),
        }
    }

    let missing = |k: &str| err(last_line, format!("missing required key '{k}'"));
    let camera = CameraIntrinsics {
        fx: fx.ok_or_else(|| missing("fx"))?,
        fy: fy.ok_or_else(|| missing("fy"))?,
        cx: cx.ok_or_else(|| missing("cx"))?,
        cy: cy.ok_or_else(|| missing("cy"))?,
    };
    camera.validate().map_err(|e| DatasetError::Validation {
        file: file.to_string(),
        line: last_line,
        message: e.to_string(),
    })?;
    let screen = match (screen_r, screen_t) {
        (Some(rotation), Some(translation)) => Some(ScreenPose {
            rotation,
            translation,
        }),
        (None, None) => None,
        _ => {
            return Err(err(
                last_line,
                "screen_r and screen_t must be given together".into(),
            ))
        }
    };
    Ok(CalibrationFile { camera, screen })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let c = parse_calibration_str("fx=960\nfy=960\ncx=640\ncy=360\n", "calib").unwrap();
        assert_eq!(c.camera, CameraIntrinsics::new(960.0, 960.0, 640.0, 360.0).unwrap());
        assert!(c.screen.is_none());
    }

    #[test]
    fn with_screen_round_trips() {
        let c = CalibrationFile {
            camera: CameraIntrinsics::new(1000.5, 999.25, 320.0, 240.0).unwrap(),
            screen: Some(ScreenPose {
                rotation: Mat3::new(1.0, 0.0, 0.0, 0.0, 0.8, -0.6, 0.0, 0.6, 0.8),
                translation: Vec3::new(-150.0, 12.5, 30.0),
            }),
        };
        let back = parse_calibration_str(&c.to_text(), "calib").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_calibration_str("# camera\nfx=960\nfy=abc\n", "calib").unwrap_err();
        match e {
            DatasetError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let e = parse_calibration_str("fx=960\nfy=960\ncx=1\n", "calib").unwrap_err();
        assert!(e.to_string().contains("cy"));
        let e = parse_calibration_str("fx=0\nfy=960\ncx=1\ncy=1\n", "calib").unwrap_err();
        assert!(matches!(e, DatasetError::Validation { .. }));
        let e = parse_calibration_str("fx=1\nfy=1\ncx=1\ncy=1\nscreen_t=1,2,3\n", "c").unwrap_err();
        assert!(e.to_string().contains("together"));
    }
}
