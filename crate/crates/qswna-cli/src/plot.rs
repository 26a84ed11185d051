//! Minimal deterministic SVG output: line/marker plots and heatmaps.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 440.0;
const ML: f64 = 78.0;
const MR: f64 = 150.0;
const MT: f64 = 36.0;
const MB: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mark {
    Line,
    Dots,
    Dashed,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub mark: Mark,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>, mark: Mark) -> Self {
        Self { name: name.into(), points, mark }
    }
}

#[derive(Clone, Debug)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

#[derive(Clone, Debug)]
pub struct Heatmap {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// values[iy * xs.len() + ix]; None is drawn grey
    pub values: Vec<Option<f64>>,
    pub overlays: Vec<Series>,
}

fn num(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() < 1e-2 || v.abs() >= 1e4 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn from_points<'a>(pts: impl Iterator<Item = &'a (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts.filter(|p| p.0.is_finite() && p.1.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5 * a.abs().max(1.0), b + 0.5 * b.abs().max(1.0)) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        let dy = 0.05 * (y1 - y0);
        Frame { x0, x1, y0: y0 - dy, y1: y1 + dy }
    }

    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)
    }

    fn py(&self, y: f64) -> f64 {
        H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, num((W - MR + ML) / 2.0), escape(title));
}

fn axes(out: &mut String, f: &Frame, xl: &str, yl: &str) {
    let (l, r, t, b) = (ML, W - MR, MT, H - MB);
    let _ = writeln!(out, r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#, num(l), num(t), num(r - l), num(b - t));
    for k in 0..=4 {
        let fx = f.x0 + (f.x1 - f.x0) * k as f64 / 4.0;
        let fy = f.y0 + (f.y1 - f.y0) * k as f64 / 4.0;
        let (x, y) = (f.px(fx), f.py(fy));
        let _ = writeln!(out, r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="black"/><text x="{0}" y="{3}" text-anchor="middle">{4}</text>"#, num(x), num(b), num(b + 5.0), num(b + 18.0), tick_label(fx));
        let _ = writeln!(out, r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="black"/><text x="{3}" y="{4}" text-anchor="end">{5}</text>"#, num(l - 5.0), num(y), num(l), num(l - 8.0), num(y + 4.0), tick_label(fy));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, num((l + r) / 2.0), num(H - 14.0), escape(xl));
    let _ = writeln!(out, r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#, num((t + b) / 2.0), escape(yl));
}

fn draw_series(out: &mut String, f: &Frame, s: &Series, color: &str) {
    let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    match s.mark {
        Mark::Line | Mark::Dashed if pts.len() > 1 => {
            let d: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", num(f.px(x)), num(f.py(y)))).collect();
            let dash = if s.mark == Mark::Dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{}"/>"#, d.join(" "));
        }
        _ => {
            for &(x, y) in &pts {
                let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#, num(f.px(x)), num(f.py(y)));
            }
        }
    }
}

fn legend(out: &mut String, series: &[Series]) {
    for (k, s) in series.iter().enumerate() {
        let y = MT + 12.0 + 18.0 * k as f64;
        let c = PALETTE[k % PALETTE.len()];
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="12" height="4" fill="{c}"/><text x="{}" y="{}">{}</text>"#, num(W - MR + 12.0), num(y - 4.0), num(W - MR + 30.0), num(y + 1.0), escape(&s.name));
    }
}

impl LinePlot {
    pub fn to_svg(&self) -> String {
        let f = Frame::from_points(self.series.iter().flat_map(|s| s.points.iter()));
        let mut out = String::new();
        header(&mut out, &self.title);
        axes(&mut out, &f, &self.x_label, &self.y_label);
        for (k, s) in self.series.iter().enumerate() {
            draw_series(&mut out, &f, s, PALETTE[k % PALETTE.len()]);
        }
        legend(&mut out, &self.series);
        out.push_str("</svg>\n");
        out
    }
}

/// Blue-white-red ramp on [0, 1].
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let s = t / 0.5;
        (40.0 + 215.0 * s, 80.0 + 175.0 * s, 200.0 + 55.0 * s)
    } else {
        let s = (t - 0.5) / 0.5;
        (255.0, 255.0 - 200.0 * s, 255.0 - 215.0 * s)
    };
    format!("#{:02x}{:02x}{:02x}", r as u8, g as u8, b as u8)
}

/// Cell edges halfway between sample positions.
fn edges(v: &[f64]) -> Vec<f64> {
    if v.len() == 1 {
        return vec![v[0] - 0.5, v[0] + 0.5];
    }
    let mut e = vec![v[0] - 0.5 * (v[1] - v[0])];
    e.extend(v.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    e.push(v[v.len() - 1] + 0.5 * (v[v.len() - 1] - v[v.len() - 2]));
    e
}

impl Heatmap {
    pub fn to_svg(&self) -> String {
        let (ex, ey) = (edges(&self.xs), edges(&self.ys));
        let corners = [(ex[0], ey[0]), (ex[ex.len() - 1], ey[ey.len() - 1])];
        let f = Frame::from_points(corners.iter());
        let f = Frame { y0: ey[0], y1: ey[ey.len() - 1], ..f };
        let lo = self.values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let mut out = String::new();
        header(&mut out, &self.title);
        for iy in 0..self.ys.len() {
            for ix in 0..self.xs.len() {
                let fill = match self.values.get(iy * self.xs.len() + ix).copied().flatten() {
                    Some(v) => ramp((v - lo) / span),
                    None => "#bbbbbb".into(),
                };
                let (x0, x1) = (f.px(ex[ix]), f.px(ex[ix + 1]));
                let (y0, y1) = (f.py(ey[iy + 1]), f.py(ey[iy]));
                let _ = writeln!(out, r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{fill}"/>"#, num(x0.min(x1)), num(y0.min(y1)), num((x1 - x0).abs()), num((y1 - y0).abs()));
            }
        }
        axes(&mut out, &f, &self.x_label, &self.y_label);
        for (k, s) in self.overlays.iter().enumerate() {
            draw_series(&mut out, &f, s, ["black", "#444444", "#00aa00"][k % 3]);
        }
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            let y = H - MB - t * (H - MT - MB) * 0.5;
            let _ = writeln!(out, r#"<rect x="{}" y="{}" width="14" height="14" fill="{}"/><text x="{}" y="{}">{}</text>"#, num(W - MR + 12.0), num(y - 7.0), ramp(t), num(W - MR + 32.0), num(y + 4.0), tick_label(lo + t * span));
        }
        for (k, s) in self.overlays.iter().enumerate() {
            let y = MT + 12.0 + 18.0 * k as f64;
            let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, num(W - MR + 12.0), num(y), escape(&s.name));
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_deterministic_and_skips_nan() {
        let p = LinePlot {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y<1".into(),
            series: vec![Series::new("a", vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)], Mark::Line)],
        };
        let a = p.to_svg();
        assert_eq!(a, p.to_svg());
        assert!(a.contains("y&lt;1"));
        assert!(!a.contains("NaN"));
    }

    #[test]
    fn heatmap_draws_every_cell() {
        let h = Heatmap {
            title: "h".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            xs: vec![0.0, 1.0, 2.0],
            ys: vec![0.0, 1.0],
            values: vec![Some(0.0), Some(1.0), None, Some(2.0), Some(0.5), Some(1.5)],
            overlays: vec![],
        };
        let s = h.to_svg();
        assert!(s.contains("#bbbbbb"));
        assert!(s.matches("<rect").count() >= 6 + 5 + 2);
    }
}
