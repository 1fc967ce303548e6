//! Small self-contained SVG writer for report plots. Numbers are printed
//! with fixed precision so output is reproducible byte for byte.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n\
         <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n\
         <text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 14 {:.1})\">{}</text>\n",
        W / 2.0,
        escape(title),
        W / 2.0,
        H - 8.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }
    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }

    fn axes(&self, out: &mut String, x_ticks: bool) {
        let (l, r, t, b) = (MARGIN, W - MARGIN, MARGIN, H - MARGIN);
        let _ = writeln!(
            out,
            "<path d=\"M{l:.1} {t:.1} L{l:.1} {b:.1} L{r:.1} {b:.1}\" stroke=\"black\" fill=\"none\"/>"
        );
        for i in 0..=4 {
            let v = self.y0 + (self.y1 - self.y0) * i as f64 / 4.0;
            let y = self.py(v);
            let _ = writeln!(
                out,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"10\">{v:.2}</text>",
                l - 4.0,
                y + 3.0
            );
        }
        if x_ticks {
            for i in 0..=4 {
                let v = self.x0 + (self.x1 - self.x0) * i as f64 / 4.0;
                let _ = writeln!(
                    out,
                    "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{v:.2}</text>",
                    self.px(v),
                    b + 14.0
                );
            }
        }
    }
}

fn nice_max(v: f64) -> f64 {
    if v.is_finite() && v > 0.0 {
        v * 1.1
    } else {
        1.0
    }
}

/// Bars with symmetric error bars.
pub fn bar_chart(title: &str, y_label: &str, labels: &[String], values: &[f64], errors: &[f64]) -> String {
    let mut out = String::new();
    header(&mut out, title, "", y_label);
    let top = values
        .iter()
        .zip(errors)
        .map(|(v, e)| v + e)
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let f = Frame {
        x0: 0.0,
        x1: labels.len().max(1) as f64,
        y0: 0.0,
        y1: nice_max(top),
    };
    f.axes(&mut out, false);
    for (i, ((label, &v), &e)) in labels.iter().zip(values).zip(errors).enumerate() {
        if !v.is_finite() {
            continue;
        }
        let (xa, xb) = (f.px(i as f64 + 0.15), f.px(i as f64 + 0.85));
        let (y, base) = (f.py(v), f.py(0.0));
        let _ = writeln!(
            out,
            "<rect x=\"{xa:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"/>",
            xb - xa,
            base - y,
            PALETTE[0]
        );
        let xm = f.px(i as f64 + 0.5);
        if e.is_finite() && e > 0.0 {
            let _ = writeln!(
                out,
                "<path d=\"M{xm:.1} {:.1} L{xm:.1} {:.1}\" stroke=\"black\"/>",
                f.py(v + e),
                f.py((v - e).max(0.0))
            );
        }
        let _ = writeln!(
            out,
            "<text x=\"{xm:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
            H - MARGIN + 14.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
    /// Draw markers instead of a connected line.
    pub markers: bool,
}

/// Line and scatter series on shared axes; non-finite points are skipped.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut out = String::new();
    header(&mut out, title, x_label, y_label);
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1) = pts().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if !(x1 > x0) {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let y1 = nice_max(pts().map(|p| p.1).fold(0.0, f64::max));
    let y0 = pts().map(|p| p.1).fold(0.0, f64::min);
    let f = Frame { x0, x1, y0, y1 };
    f.axes(&mut out, true);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let finite: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        if s.markers {
            for (x, y) in &finite {
                let _ = writeln!(out, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>", f.px(*x), f.py(*y));
            }
        } else if !finite.is_empty() {
            let d: Vec<String> = finite
                .iter()
                .enumerate()
                .map(|(i, (x, y))| format!("{}{:.1} {:.1}", if i == 0 { "M" } else { "L" }, f.px(*x), f.py(*y)))
                .collect();
            let _ = writeln!(out, "<path d=\"{}\" stroke=\"{color}\" fill=\"none\"/>", d.join(" "));
        }
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"{color}\">{}</text>",
            W - MARGIN - 150.0,
            MARGIN + 14.0 * k as f64,
            escape(s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grid of labelled cells shaded by value.
pub fn heatmap(title: &str, row_labels: &[String], col_labels: &[String], values: &[Vec<f64>]) -> String {
    let mut out = String::new();
    header(&mut out, title, "test resolution", "training resolution");
    let finite = values.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (rows, cols) = (row_labels.len().max(1) as f64, col_labels.len().max(1) as f64);
    let cw = (W - 2.0 * MARGIN) / cols;
    let ch = (H - 2.0 * MARGIN) / rows;
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let t = if hi > lo && v.is_finite() { (v - lo) / (hi - lo) } else { 0.0 };
            let shade = (255.0 * (1.0 - 0.8 * t)).round() as u8;
            let (x, y) = (MARGIN + j as f64 * cw, MARGIN + i as f64 * ch);
            let _ = writeln!(
                out,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cw:.1}\" height=\"{ch:.1}\" fill=\"rgb(255,{shade},{shade})\" stroke=\"black\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"12\">{v:.2}</text>",
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
    }
    for (i, l) in row_labels.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"11\">{}</text>",
            MARGIN - 4.0,
            MARGIN + (i as f64 + 0.5) * ch + 4.0,
            escape(l)
        );
    }
    for (j, l) in col_labels.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"11\">{}</text>",
            MARGIN + (j as f64 + 0.5) * cw,
            H - MARGIN + 14.0,
            escape(l)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_well_formed_and_deterministic() {
        let labels = vec!["a<b".to_string(), "c".to_string()];
        let a = bar_chart("t", "deg", &labels, &[1.0, f64::NAN], &[0.5, 0.0]);
        assert_eq!(a, bar_chart("t", "deg", &labels, &[1.0, f64::NAN], &[0.5, 0.0]));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a&lt;b"));
        let s = [Series {
            name: "x",
            points: vec![(0.0, 1.0), (1.0, f64::INFINITY), (2.0, 3.0)],
            markers: false,
        }];
        let l = line_plot("t", "x", "y", &s);
        assert!(!l.contains("inf") && !l.contains("NaN"));
        let h = heatmap("g", &labels, &labels, &[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(h.matches("<rect").count(), 5);
    }
}
