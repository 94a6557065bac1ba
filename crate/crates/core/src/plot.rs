//! Bare-bones SVG line and arrow plots for quick inspection of CSV outputs.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#c0392b", "#111111", "#2471a3", "#7d3c98", "#1e8449", "#b9770e"];

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub dashed: bool,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for v in it.filter(|v| v.is_finite()) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if !lo.is_finite() {
                return (-1.0, 1.0);
            }
            if hi - lo < 1e-12 {
                return (lo - 0.5, hi + 0.5);
            }
            (lo, hi)
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn axes(&self, s: &mut String, title: &str) {
        let _ = writeln!(s, r##"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="#888"/>"##, W - 2.0 * PAD, H - 2.0 * PAD);
        let _ = writeln!(s, r#"<text x="{}" y="30" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
        let _ = writeln!(s, r#"<text x="{PAD}" y="{}" font-size="11">{:.3}</text>"#, H - PAD + 16.0, self.x0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{:.3}</text>"#, W - PAD, H - PAD + 16.0, self.x1);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{:.3}</text>"#, PAD - 4.0, H - PAD, self.y0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{:.3}</text>"#, PAD - 4.0, PAD + 10.0, self.y1);
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open() -> String {
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n")
}

fn draw_series(s: &mut String, frame: &Frame, series: &[Series<'_>]) {
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = ser
            .x
            .iter()
            .zip(ser.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let dash = if ser.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{}"/>"#, pts.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#, W - PAD - 150.0, PAD + 16.0 + 15.0 * k as f64, escape(ser.label));
    }
}

pub fn line_plot(title: &str, series: &[Series<'_>]) -> String {
    let frame = Frame::fit(
        series.iter().flat_map(|s| s.x.iter().copied()),
        series.iter().flat_map(|s| s.y.iter().copied()),
    );
    let mut s = open();
    frame.axes(&mut s, title);
    draw_series(&mut s, &frame, series);
    s.push_str("</svg>\n");
    s
}

/// Direction arrows of length proportional to `|(dx, dy)|`, with overlaid paths.
pub fn vector_field(title: &str, arrows: &[[f64; 4]], paths: &[Series<'_>]) -> String {
    let frame = Frame::fit(
        arrows.iter().map(|a| a[0]).chain(paths.iter().flat_map(|p| p.x.iter().copied())),
        arrows.iter().map(|a| a[1]).chain(paths.iter().flat_map(|p| p.y.iter().copied())),
    );
    let mut s = open();
    frame.axes(&mut s, title);
    let longest = arrows.iter().map(|a| a[2].hypot(a[3])).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let scale = if longest > 0.0 { 18.0 / longest } else { 0.0 };
    for a in arrows.iter().filter(|a| a.iter().all(|v| v.is_finite())) {
        let (x, y) = (frame.px(a[0]), frame.py(a[1]));
        let dx = a[2] / (frame.x1 - frame.x0);
        let dy = -a[3] / (frame.y1 - frame.y0);
        let norm = dx.hypot(dy).max(1e-12);
        let len = a[2].hypot(a[3]) * scale;
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{:.2}" stroke="#aaa" stroke-width="1"/>"##,
            x + dx / norm * len,
            y + dy / norm * len
        );
    }
    draw_series(&mut s, &frame, paths);
    s.push_str("</svg>\n");
    s
}
