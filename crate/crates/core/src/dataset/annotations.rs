//! One annotation record per line, tab-separated `key=value` fields in a
//! fixed order:
//!
//! ```text
//! person=p00  image=frames/p00_0000.pgm  landmarks=x1,y1,...,x6,y6  target=x,y,z  [pupils=ur,vr,ul,vl]  time=2016-05-01T12:00:00Z
//! ```
//!
//! Landmarks follow [`crate::geometry::Landmark`] order; pupils are the
//! right then the left eye. Blank lines and `#` comments are skipped.

use std::fs;
use std::path::Path;

use super::{fmt_real, parse_reals, DatasetError};
use crate::geometry::{Point2, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub person: String,
    pub image: String,
    pub landmarks: [Point2; 6],
    /// Gaze target in camera coordinates, mm.
    pub target: Vec3,
    /// Right then left pupil centre, pixels.
    pub pupils: Option<[Point2; 2]>,
    pub timestamp: String,
}

impl AnnotationRecord {
    pub fn to_line(&self) -> String {
        let lm: Vec<String> = self
            .landmarks
            .iter()
            .flat_map(|p| [fmt_real(p.x), fmt_real(p.y)])
            .collect();
        let target: Vec<String> = self.target.iter().map(|&v| fmt_real(v)).collect();
        let mut fields = vec![
            format!("person={}", self.person),
            format!("image={}", self.image),
            format!("landmarks={}", lm.join(",")),
            format!("target={}", target.join(",")),
        ];
        if let Some(p) = &self.pupils {
            let vals: Vec<String> = p.iter().flat_map(|q| [fmt_real(q.x), fmt_real(q.y)]).collect();
            fields.push(format!("pupils={}", vals.join(",")));
        }
        fields.push(format!("time={}", self.timestamp));
        fields.join("\t")
    }

    fn check_bounds(&self, width: usize, height: usize) -> Result<(), String> {
        // Pixel centres sit at integer coordinates, so the image area spans
        // half a pixel beyond the outermost centres.
        let inside = |p: &Point2| {
            p.x >= -0.5 && p.y >= -0.5 && p.x <= width as f64 - 0.5 && p.y <= height as f64 - 0.5
        };
        if let Some(i) = self.landmarks.iter().position(|p| !inside(p)) {
            let p = self.landmarks[i];
            return Err(format!(
                "landmark {} at ({}, {}) lies outside the {width}x{height} image",
                i + 1,
                p.x,
                p.y
            ));
        }
        Ok(())
    }
}

pub fn format_annotations(records: &[AnnotationRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

pub fn parse_annotations(
    path: impl AsRef<Path>,
    bounds: Option<(usize, usize)>,
) -> Result<Vec<AnnotationRecord>, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_annotations_str(&text, &path.display().to_string(), bounds)
}

/// Parses annotation text; when `bounds` is given every landmark must lie
/// inside a `width x height` image.
pub fn parse_annotations_str(
    text: &str,
    file: &str,
    bounds: Option<(usize, usize)>,
) -> Result<Vec<AnnotationRecord>, DatasetError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let rec = parse_line(line).map_err(|message| DatasetError::Parse {
            file: file.to_string(),
            line: idx + 1,
            message,
        })?;
        if let Some((w, h)) = bounds {
            rec.check_bounds(w, h)
                .map_err(|message| DatasetError::Validation {
                    file: file.to_string(),
                    line: idx + 1,
                    message,
                })?;
        }
        out.push(rec);
    }
    Ok(out)
}

/// Bounds check for already parsed records; errors carry the 1-based
/// record number.
pub fn validate_bounds(
    records: &[AnnotationRecord],
    width: usize,
    height: usize,
    file: &str,
) -> Result<(), DatasetError> {
    for (i, r) in records.iter().enumerate() {
        r.check_bounds(width, height)
            .map_err(|message| DatasetError::Validation {
                file: file.to_string(),
                line: i + 1,
                message,
            })?;
    }
    Ok(())
}

fn parse_line(line: &str) -> Result<AnnotationRecord, String> {
    let fields: Vec<(&str, &str)> = line
        .split('\t')
        .map(|f| {
            f.split_once('=')
                .ok_or_else(|| format!("field '{f}' is not key=value"))
        })
        .collect::<Result<_, _>>()?;
    let mut it = fields.into_iter().peekable();
    let mut take = |key: &str| -> Result<&str, String> {
        match it.next() {
            Some((k, v)) if k == key => Ok(v),
            Some((k, _)) => Err(format!("expected field '{key}', found '{k}'")),
            None => Err(format!("missing field '{key}'")),
        }
    };
    let person = take("person")?.to_string();
    if person.is_empty() {
        return Err("person id is empty".into());
    }
    let image = take("image")?.to_string();
    if image.is_empty() {
        return Err("image path is empty".into());
    }
    let lm = parse_reals(take("landmarks")?, 12).map_err(|m| format!("landmarks: {m}"))?;
    let t = parse_reals(take("target")?, 3).map_err(|m| format!("target: {m}"))?;

    let mut pupils = None;
    if it.peek().is_some_and(|(k, _)| *k == "pupils") {
        let (_, v) = it.next().expect("peeked");
        let p = parse_reals(v, 4).map_err(|m| format!("pupils: {m}"))?;
        pupils = Some([Point2::new(p[0], p[1]), Point2::new(p[2], p[3])]);
    }
    let timestamp = match it.next() {
        Some(("time", v)) => v.to_string(),
        Some((k, _)) => return Err(format!("expected field 'time', found '{k}'")),
        None => return Err("missing field 'time'".into()),
    };
    if !is_iso8601(&timestamp) {
        return Err(format!("'{timestamp}' is not an ISO-8601 timestamp"));
    }
    if let Some((k, _)) = it.next() {
        return Err(format!("unexpected trailing field '{k}'"));
    }

    let mut landmarks = [Point2::zeros(); 6];
    for (i, p) in landmarks.iter_mut().enumerate() {
        *p = Point2::new(lm[2 * i], lm[2 * i + 1]);
    }
    Ok(AnnotationRecord {
        person,
        image,
        landmarks,
        target: Vec3::new(t[0], t[1], t[2]),
        pupils,
        timestamp,
    })
}

/// `YYYY-MM-DDTHH:MM:SS` with optional fraction and zone suffix.
fn is_iso8601(s: &str) -> bool {
    let b = s.as_bytes();
    if b.len() < 19 {
        return false;
    }
    let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
    let shape = digits(0..4)
        && b[4] == b'-'
        && digits(5..7)
        && b[7] == b'-'
        && digits(8..10)
        && (b[10] == b'T' || b[10] == b' ')
        && digits(11..13)
        && b[13] == b':'
        && digits(14..16)
        && b[16] == b':'
        && digits(17..19);
    if !shape {
        return false;
    }
    let num = |r: std::ops::Range<usize>| s[r].parse::<u32>().unwrap_or(0);
    let (month, day, hour, minute, second) = (num(5..7), num(8..10), num(11..13), num(14..16), num(17..19));
    (1..=12).contains(&month) && (1..=31).contains(&day) && hour < 24 && minute < 60 && second < 61
        && s[19..].chars().all(|c| c.is_ascii_digit() || "+-:.Z".contains(c))
}
