//! Self-contained SVG figure: empirical MSD curve in dB against iteration,
//! with a horizontal line at the theoretical value.

use std::fmt::Write;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
/// Longest polyline emitted; longer curves are strided.
pub const MAX_POINTS: usize = 2000;

/// Linear map from data coordinates to the plot rectangle. SVG `y` grows
/// downwards, so `y_lo` lands on the bottom edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axes {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Axes {
    pub fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let fx = if self.x_hi > self.x_lo { (x - self.x_lo) / (self.x_hi - self.x_lo) } else { 0.5 };
        let fy = if self.y_hi > self.y_lo { (y - self.y_lo) / (self.y_hi - self.y_lo) } else { 0.5 };
        (LEFT + fx * (WIDTH - LEFT - RIGHT), HEIGHT - BOTTOM - fy * (HEIGHT - TOP - BOTTOM))
    }
}

/// Ticks at 1, 2 or 5 times a power of ten covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(lo.is_finite() && hi.is_finite()) || hi <= lo || target == 0 {
        return vec![lo];
    }
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn label(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// What to draw.
#[derive(Debug, Clone, PartialEq)]
pub struct Figure {
    pub title: String,
    pub digest: String,
    /// `(iteration, mean dB)`.
    pub curve: Vec<(f64, f64)>,
    /// `-inf` is drawn as an annotation instead of a line.
    pub theory_db: Option<f64>,
}

fn stride(curve: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let pts: Vec<(f64, f64)> = curve.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
    if pts.len() <= MAX_POINTS {
        return pts;
    }
    let step = pts.len().div_ceil(MAX_POINTS);
    let mut out: Vec<(f64, f64)> = pts.iter().copied().step_by(step).collect();
    if out.last() != pts.last() {
        out.push(*pts.last().unwrap());
    }
    out
}

pub fn axes_for(fig: &Figure) -> Axes {
    let pts = stride(&fig.curve);
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if let Some(t) = fig.theory_db.filter(|t| t.is_finite()) {
        y_lo = y_lo.min(t);
        y_hi = y_hi.max(t);
    }
    if !x_lo.is_finite() {
        (x_lo, x_hi) = (0.0, 1.0);
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (-1.0, 1.0);
    }
    let pad = ((y_hi - y_lo) * 0.05).max(0.5);
    Axes {
        x_lo,
        x_hi,
        y_lo: ((y_lo - pad) / 5.0).floor() * 5.0,
        y_hi: ((y_hi + pad) / 5.0).ceil() * 5.0,
    }
}

pub fn render(fig: &Figure) -> String {
    let ax = axes_for(fig);
    let pts = stride(&fig.curve);
    let mut s = String::new();
    let (w, h) = (WIDTH, HEIGHT);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, "<!-- digest: {} -->", fig.digest);
    let _ = writeln!(s, "<desc>digest {}</desc>", fig.digest);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, escape(&fig.title));

    let (x0, y0) = ax.map(ax.x_lo, ax.y_lo);
    let (x1, y1) = ax.map(ax.x_hi, ax.y_hi);
    let _ = writeln!(
        s,
        r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for t in nice_ticks(ax.x_lo, ax.x_hi, 8) {
        let (x, _) = ax.map(t, ax.y_lo);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, y0 + 20.0, label(t));
    }
    for t in nice_ticks(ax.y_lo, ax.y_hi, 8) {
        let (_, y) = ax.map(ax.x_lo, t);
        let _ = writeln!(s, r##"<line x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 8.0, y + 4.0, label(t));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#, (x0 + x1) / 2.0, h - 15.0);
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">MSD (dB)</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    let mut poly = String::new();
    for (i, &(x, y)) in pts.iter().enumerate() {
        let (px, py) = ax.map(x, y);
        if i > 0 {
            poly.push(' ');
        }
        let _ = write!(poly, "{px:.2},{py:.2}");
    }
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{poly}"/>"##);

    let (lx, ly) = (x1 - 190.0, y1 + 20.0);
    let _ = writeln!(s, r##"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="#1f77b4" stroke-width="1.5"/>"##, lx + 25.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">simulation (mean)</text>"#, lx + 32.0, ly + 4.0);
    match fig.theory_db {
        Some(t) if t.is_finite() => {
            let (_, ty) = ax.map(ax.x_lo, t);
            let _ = writeln!(
                s,
                r##"<line x1="{x0:.2}" y1="{ty:.2}" x2="{x1:.2}" y2="{ty:.2}" stroke="#d62728" stroke-width="1.5" stroke-dasharray="6 4"/>"##
            );
            let _ = writeln!(
                s,
                r##"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="1.5" stroke-dasharray="6 4"/>"##,
                ly + 18.0,
                lx + 25.0,
                ly + 18.0
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">theory {t:.2} dB</text>"#, lx + 32.0, ly + 22.0);
        }
        Some(_) => {
            let _ = writeln!(
                s,
                r##"<text x="{:.2}" y="{:.2}" fill="#d62728">theory: MSD = 0 (-inf dB), line omitted</text>"##,
                lx - 60.0,
                ly + 22.0
            );
        }
        None => {}
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
