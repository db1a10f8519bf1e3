//! Minimal self-contained SVG charts built from `rect`, `path` and `text`.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One named data series.
#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

impl Series {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, mut y0: f64, mut y1: f64) -> Self {
        if y1.is_nan() || y0.is_nan() || y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let x1 = if x1 > x0 { x1 } else { x0 + 1.0 };
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (bx, by) = (f.px(f.x0), f.py(f.y0));
    let _ = writeln!(
        out,
        r##"<path d="M{bx:.2},{:.2} L{bx:.2},{by:.2} L{:.2},{by:.2}" fill="none" stroke="#333"/>"##,
        TOP,
        WIDTH - RIGHT
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let yv = f.y0 + t * (f.y1 - f.y0);
        let xv = f.x0 + t * (f.x1 - f.x0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            bx - 6.0,
            f.py(yv) + 4.0,
            tick(yv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            f.px(xv),
            by + 18.0,
            tick(xv)
        );
    }
    label_axes(out, x_label, y_label);
}

fn label_axes(out: &mut String, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let cy = (TOP + HEIGHT - BOTTOM) / 2.0;
    let _ = writeln!(
        out,
        r#"<text x="16" y="{cy:.2}" text-anchor="middle" transform="rotate(-90 16 {cy:.2})">{}</text>"#,
        escape(y_label)
    );
}

fn legend(out: &mut String, series: &[Series]) {
    for (i, s) in series.iter().enumerate() {
        let y = TOP + 6.0 + 16.0 * i as f64;
        let x = WIDTH - RIGHT - 150.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#,
            y - 9.0
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, x + 14.0, escape(&s.name));
    }
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn bounds<'a>(values: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if lo.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

/// Overlaid step outlines of normalized histograms sharing the bin range
/// `[lo, hi]`.
pub fn histogram_chart(title: &str, lo: f64, hi: f64, series: &[Series]) -> String {
    let (_, ymax) = bounds(series.iter().flat_map(|s| s.values.iter()));
    let f = Frame::new(lo, hi, 0.0, ymax.max(1e-12));
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "value", "fraction of entries");
    for (i, s) in series.iter().enumerate() {
        let n = s.values.len();
        if n == 0 {
            continue;
        }
        let w = (hi - lo) / n as f64;
        let mut d = format!("M{:.2},{:.2}", f.px(lo), f.py(0.0));
        for (b, v) in s.values.iter().enumerate() {
            let x0 = lo + b as f64 * w;
            let _ = write!(d, " L{:.2},{:.2} L{:.2},{:.2}", f.px(x0), f.py(*v), f.px(x0 + w), f.py(*v));
        }
        let _ = write!(d, " L{:.2},{:.2}", f.px(hi), f.py(0.0));
        let _ = writeln!(
            out,
            r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            PALETTE[i % PALETTE.len()]
        );
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

/// Line chart; every series is plotted against the shared `x`.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, x: &[f64], series: &[Series]) -> String {
    let (x0, x1) = bounds(x.iter());
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.values.iter()));
    let f = Frame::new(x0, x1, y0, y1);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let mut d = String::new();
        for (j, (xv, yv)) in x.iter().zip(&s.values).enumerate() {
            let _ = write!(d, "{}{:.2},{:.2} ", if j == 0 { "M" } else { "L" }, f.px(*xv), f.py(*yv));
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            d.trim_end(),
            PALETTE[i % PALETTE.len()]
        );
    }
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars, one group per category. Undefined values are skipped.
pub fn bar_chart(title: &str, y_label: &str, categories: &[String], series: &[Series]) -> String {
    let (lo, hi) = bounds(series.iter().flat_map(|s| s.values.iter()));
    let f = Frame::new(0.0, categories.len().max(1) as f64, lo.min(0.0), hi.max(0.0));
    let mut out = String::new();
    header(&mut out, title);
    let base = f.py(0.0);
    let _ = writeln!(
        out,
        r##"<path d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{base:.2} L{:.2},{base:.2}" fill="none" stroke="#333"/>"##,
        LEFT,
        TOP,
        LEFT,
        HEIGHT - BOTTOM,
        LEFT,
        WIDTH - RIGHT
    );
    for i in 0..=4 {
        let yv = f.y0 + i as f64 / 4.0 * (f.y1 - f.y0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            f.py(yv) + 4.0,
            tick(yv)
        );
    }
    let groups = series.len().max(1) as f64;
    for (c, name) in categories.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            f.px(c as f64 + 0.5),
            HEIGHT - BOTTOM + 18.0,
            escape(name)
        );
        for (i, s) in series.iter().enumerate() {
            let Some(v) = s.values.get(c).copied().filter(|v| v.is_finite()) else {
                continue;
            };
            let x = f.px(c as f64 + 0.1 + 0.8 * i as f64 / groups);
            let w = f.px(0.8 / groups) - f.px(0.0);
            let (y, h) = (f.py(v.max(0.0)), (f.py(v) - base).abs());
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{}"/>"#,
                PALETTE[i % PALETTE.len()]
            );
        }
    }
    label_axes(&mut out, "segment", y_label);
    legend(&mut out, series);
    out.push_str("</svg>\n");
    out
}
