//! CSV output (the canonical machine-readable results) and plot files.
//! Reals are printed in shortest round-trip form so a CSV can be read back
//! without loss.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::bins::{error_by_bin, BinAxis, BinReport};
use super::eval::{CameraGaze, EvalReport, SampleResult};
use super::study::{FusionReport, GridReport};
use super::svg::{bar_chart, heatmap, line_plot, Series};
use super::{io_err, HarnessError};
use crate::geometry::{GazeAngles, HeadAngles, Vec3};

/// Context for reading synthetic numbers next to full-scale ones.
pub const REFERENCE_NOTE: &str = "reference only, not comparable: full-scale real-data results \
with an ImageNet-pretrained VGG-16 are about 10.8 deg cross-dataset and 5.5 deg leave-one-person-out";

const SAMPLES_HEADER: &str = "id,person,eye,fold,true_yaw,true_pitch,pred_yaw,pred_pitch,head_yaw,head_pitch,\
error_deg,lr_difference,record,eye_x,eye_y,eye_z,pred_x,pred_y,pred_z,target_x,target_y,target_z";

/// Gaze-yaw binning used in reports, degrees.
const YAW_RANGE: (f64, f64) = (-24.0, 24.0);
const YAW_BINS: usize = 12;
const DIFF_RANGE: (f64, f64) = (-64.0, 64.0);
const DIFF_BINS: usize = 8;

fn r(v: f64) -> String {
    format!("{v:?}")
}

fn write(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn check_field(s: &str) -> Result<&str, HarnessError> {
    if s.contains([',', '"', '\n', '\r']) {
        return Err(HarnessError::InvalidConfig(format!("identifier '{s}' cannot be written to CSV")));
    }
    Ok(s)
}

/// Per-person rows, then `overall` and (if present) `baseline` rows.
pub fn write_report_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut out = String::from("kind,person,count,mean_deg,std_deg\n");
    for p in &report.per_person {
        let _ = writeln!(out, "person,{},{},{},{}", check_field(&p.person)?, p.count, r(p.mean), r(p.std));
    }
    let _ = writeln!(
        out,
        "overall,all,{},{},{}",
        report.results.len(),
        r(report.overall_mean),
        r(report.overall_std)
    );
    if let Some(b) = report.baseline_mean {
        let _ = writeln!(out, "baseline,all,{},{},", report.results.len(), r(b));
    }
    write(path.as_ref(), &out)
}

pub fn write_samples_csv(results: &[SampleResult], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut out = String::from(SAMPLES_HEADER);
    out.push('\n');
    for s in results {
        let camera = match &s.camera {
            Some(c) => {
                let v = |v: &Vec3| format!("{},{},{}", r(v.x), r(v.y), r(v.z));
                format!("{},{},{},{}", c.record, v(&c.eye_center), v(&c.predicted), v(&c.target))
            }
            None => ["NA"; 10].join(","),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            check_field(&s.id)?,
            check_field(&s.person)?,
            s.eye,
            s.fold,
            r(s.truth.yaw),
            r(s.truth.pitch),
            r(s.predicted.yaw),
            r(s.predicted.pitch),
            r(s.head.yaw),
            r(s.head.pitch),
            r(s.error_deg),
            r(s.lr_difference),
            camera
        );
    }
    write(path.as_ref(), &out)
}

/// Reads back [`write_samples_csv`] output.
pub fn read_samples_csv(path: impl AsRef<Path>) -> Result<Vec<SampleResult>, HarnessError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file = path.display().to_string();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SAMPLES_HEADER => {}
        _ => {
            return Err(HarnessError::Parse {
                file,
                line: 1,
                message: "unexpected header".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let bad = |message: String| HarnessError::Parse {
            file: file.clone(),
            line: i + 1,
            message,
        };
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 22 {
            return Err(bad(format!("expected 22 fields, found {}", c.len())));
        }
        let f = |k: usize| c[k].parse::<f64>().map_err(|_| bad(format!("bad number '{}'", c[k])));
        let v = |k: usize| -> Result<Vec3, HarnessError> { Ok(Vec3::new(f(k)?, f(k + 1)?, f(k + 2)?)) };
        let camera = if c[12] == "NA" {
            None
        } else {
            Some(CameraGaze {
                record: c[12].parse().map_err(|_| bad(format!("bad record '{}'", c[12])))?,
                eye_center: v(13)?,
                predicted: v(16)?,
                target: v(19)?,
            })
        };
        out.push(SampleResult {
            id: c[0].to_string(),
            person: c[1].to_string(),
            eye: c[2].parse().map_err(bad)?,
            fold: c[3].parse().map_err(|_| bad(format!("bad fold '{}'", c[3])))?,
            truth: GazeAngles::new(f(4)?, f(5)?),
            predicted: GazeAngles::new(f(6)?, f(7)?),
            head: HeadAngles::new(f(8)?, f(9)?),
            error_deg: f(10)?,
            lr_difference: f(11)?,
            camera,
        });
    }
    Ok(out)
}

pub fn write_bins_csv(bins: &[BinReport], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut out = String::from("axis,bin_center,count,mean_error_deg,fit_deg\n");
    for b in bins {
        for ((c, n), m) in b.centers.iter().zip(&b.counts).zip(&b.means) {
            let fit = b.fit[0] + b.fit[1] * c + b.fit[2] * c * c;
            let mean = if n > &0 { r(*m) } else { "NA".into() };
            let _ = writeln!(out, "{},{},{},{},{}", b.axis.name(), r(*c), n, mean, r(fit));
        }
    }
    write(path.as_ref(), &out)
}

fn fits_csv(bins: &[BinReport]) -> String {
    let mut out = String::from("axis,c0,c1,c2\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{},{}", b.axis.name(), r(b.fit[0]), r(b.fit[1]), r(b.fit[2]));
    }
    out
}

pub fn write_grid_csv(grid: &GridReport, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut out = String::from("train_w,train_h,test_w,test_h,mean_error_deg\n");
    for (i, tr) in grid.resolutions.iter().enumerate() {
        for (j, te) in grid.resolutions.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{},{}", tr.0, tr.1, te.0, te.1, r(grid.errors[i][j]));
        }
    }
    write(path.as_ref(), &out)
}

pub fn write_fusion_csv(f: &FusionReport, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let out = format!(
        "pairs,per_eye_mean_deg,oracle_best_deg,fused_deg\n{},{},{},{}\n",
        f.pairs,
        r(f.per_eye_mean),
        r(f.oracle_best),
        r(f.fused)
    );
    write(path.as_ref(), &out)
}

pub fn write_loss_csv(trace: &[f64], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let mut out = String::from("iteration,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, r(*l));
    }
    write(path.as_ref(), &out)?;
    let stride = (trace.len() / 500).max(1);
    let svg = line_plot(
        "training loss",
        "iteration",
        "mean loss per sample",
        &[Series {
            name: "loss",
            points: trace
                .iter()
                .enumerate()
                .step_by(stride)
                .map(|(i, l)| ((i + 1) as f64, *l))
                .collect(),
            markers: false,
        }],
    );
    let dir = path.as_ref().parent().unwrap_or(Path::new("."));
    write(&dir.join("plots").join("loss.svg"), &svg)
}

fn bin_plot(b: &BinReport, title: &str) -> String {
    let lo = b.centers.first().copied().unwrap_or(0.0);
    let hi = b.centers.last().copied().unwrap_or(1.0);
    let curve = (0..=40)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / 40.0;
            (x, b.fit[0] + b.fit[1] * x + b.fit[2] * x * x)
        })
        .collect();
    line_plot(
        title,
        b.axis.name(),
        "mean error (deg)",
        &[
            Series {
                name: "bin mean",
                points: b.centers.iter().copied().zip(b.means.iter().copied()).collect(),
                markers: true,
            },
            Series {
                name: "quadratic fit",
                points: curve,
                markers: false,
            },
        ],
    )
}

/// Writes `report.csv`, `samples.csv`, binned errors with their fits and the
/// plots for an evaluation into `dir`. Analyses that lack data (too few
/// bins) are skipped and listed in the returned notes.
pub fn write_eval_outputs(report: &EvalReport, dir: impl AsRef<Path>) -> Result<Vec<String>, HarnessError> {
    let dir = dir.as_ref();
    let mut notes = Vec::new();
    write_report_csv(report, dir.join("report.csv"))?;
    write_samples_csv(&report.results, dir.join("samples.csv"))?;

    let mut bins = Vec::new();
    for (axis, (lo, hi), n) in [
        (BinAxis::GazeYaw, YAW_RANGE, YAW_BINS),
        (BinAxis::IntensityDiff, DIFF_RANGE, DIFF_BINS),
    ] {
        match error_by_bin(&report.results, axis, lo, hi, n) {
            Ok(b) => bins.push(b),
            Err(HarnessError::InsufficientBins { found }) => {
                notes.push(format!("{}: only {found} non-empty bins, no fit", axis.name()))
            }
            Err(e) => return Err(e),
        }
    }
    write_bins_csv(&bins, dir.join("bins.csv"))?;
    write(&dir.join("fits.csv"), &fits_csv(&bins))?;

    let plots = dir.join("plots");
    let labels: Vec<String> = report.per_person.iter().map(|p| p.person.clone()).collect();
    let means: Vec<f64> = report.per_person.iter().map(|p| p.mean).collect();
    let stds: Vec<f64> = report.per_person.iter().map(|p| p.std).collect();
    write(
        &plots.join("per_person.svg"),
        &bar_chart("mean angular error per person", "error (deg)", &labels, &means, &stds),
    )?;
    for b in &bins {
        let name = match b.axis {
            BinAxis::GazeYaw => "error_by_gaze_yaw",
            BinAxis::IntensityDiff => "error_by_intensity_diff",
        };
        write(&plots.join(format!("{name}.svg")), &bin_plot(b, name))?;
    }
    Ok(notes)
}

impl GridReport {
    pub fn write_plot(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let labels: Vec<String> = self.resolutions.iter().map(|(w, h)| format!("{w}x{h}")).collect();
        write(
            path.as_ref(),
            &heatmap("mean error (deg) by resolution", &labels, &labels, &self.errors),
        )
    }
}

impl FusionReport {
    pub fn write_plot(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let labels = vec!["per-eye mean".to_string(), "best eye".to_string(), "fused".to_string()];
        write(
            path.as_ref(),
            &bar_chart(
                "two-eye fusion",
                "error (deg)",
                &labels,
                &[self.per_eye_mean, self.oracle_best, self.fused],
                &[0.0; 3],
            ),
        )
    }
}
