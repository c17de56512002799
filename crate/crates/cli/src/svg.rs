//! Minimal deterministic SVG charts on a fixed 960×540 canvas.

use std::fmt::Write as _;

pub const WIDTH: f64 = 960.0;
pub const HEIGHT: f64 = 540.0;
const LEFT: f64 = 90.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;

pub const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
];
pub const MUTED: &str = "#c8c8c8";

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scale {
    Linear { lo: f64, hi: f64 },
    /// Base-10 axis; both bounds must be positive.
    Log { lo: f64, hi: f64 },
}

impl Scale {
    /// Linear axis covering `values` (finite ones), padded by 5%.
    pub fn linear_for(values: impl IntoIterator<Item = f64>) -> Scale {
        let (lo, hi) = bounds(values.into_iter().filter(|v| v.is_finite()));
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5_f64.max(0.05 * hi.abs()) };
        Scale::Linear { lo: lo - pad, hi: hi + pad }
    }

    /// Log axis snapped outward to whole decades; non-positive values are ignored.
    pub fn log_for(values: impl IntoIterator<Item = f64>) -> Scale {
        let (lo, hi) = bounds(values.into_iter().filter(|v| v.is_finite() && *v > 0.0));
        let (lo, hi) = if lo > hi { (1.0, 10.0) } else { (lo, hi) };
        let lo = 10f64.powf(lo.log10().floor());
        let mut hi = 10f64.powf(hi.log10().ceil());
        if hi <= lo {
            hi = lo * 10.0;
        }
        Scale::Log { lo, hi }
    }

    /// Position in `[0, 1]`, or `None` where the value cannot be drawn.
    pub fn unit(&self, v: f64) -> Option<f64> {
        if !v.is_finite() {
            return None;
        }
        match *self {
            Scale::Linear { lo, hi } => Some((v - lo) / (hi - lo)),
            Scale::Log { lo, hi } => (v > 0.0).then(|| (v.log10() - lo.log10()) / (hi.log10() - lo.log10())),
        }
    }

    pub fn ticks(&self) -> Vec<f64> {
        match *self {
            Scale::Linear { lo, hi } => {
                let raw = (hi - lo) / 5.0;
                let mag = 10f64.powf(raw.log10().floor());
                let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
                let mut t = (lo / step).ceil() * step;
                let mut out = Vec::new();
                while t <= hi + 1e-9 * step {
                    out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
                    t += step;
                }
                out
            }
            Scale::Log { lo, hi } => {
                let (a, b) = (lo.log10().round() as i32, hi.log10().round() as i32);
                let stride = ((b - a) / 8 + 1).max(1);
                (a..=b).step_by(stride as usize).map(|e| 10f64.powi(e)).collect()
            }
        }
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

pub fn tick_label(v: f64, scale: &Scale) -> String {
    match scale {
        Scale::Log { .. } => format!("1e{}", v.log10().round() as i32),
        Scale::Linear { .. } if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) => format!("{v:.1e}"),
        Scale::Linear { .. } => {
            let s = format!("{v:.4}");
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        }
    }
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub struct Chart {
    x: Scale,
    y: Scale,
    body: String,
    legend: Vec<(String, String, bool)>,
}

impl Chart {
    pub fn new(title: &str, x: Scale, y: Scale, x_label: &str, y_label: &str) -> Chart {
        let mut c = Chart { x, y, body: String::new(), legend: Vec::new() };
        let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
        let _ = writeln!(
            c.body,
            r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
        );
        let _ = writeln!(
            c.body,
            r#"<text x="{:.2}" y="30" text-anchor="middle" font-size="18">{}</text>"#,
            WIDTH / 2.0,
            escape(title)
        );
        let _ = writeln!(
            c.body,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 20.0,
            escape(x_label)
        );
        let _ = writeln!(
            c.body,
            r#"<text x="20" y="{:.2}" text-anchor="middle" font-size="14" transform="rotate(-90 20 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(y_label)
        );
        for t in y.ticks() {
            if let Some(py) = c.py(t) {
                let _ = writeln!(
                    c.body,
                    r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#eee"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="12">{}</text>"##,
                    WIDTH - RIGHT,
                    LEFT - 6.0,
                    py + 4.0,
                    tick_label(t, &y)
                );
            }
        }
        c
    }

    /// Adds x ticks at numeric positions.
    pub fn x_ticks(&mut self) {
        for t in self.x.ticks() {
            if let Some(px) = self.px(t) {
                self.x_tick(px, &tick_label(t, &self.x));
            }
        }
    }

    /// Adds categorical x labels at positions `0, 1, …`.
    pub fn x_categories(&mut self, labels: &[String]) {
        for (i, l) in labels.iter().enumerate() {
            if let Some(px) = self.px(i as f64) {
                self.x_tick(px, l);
            }
        }
    }

    fn x_tick(&mut self, px: f64, label: &str) {
        let base = HEIGHT - BOTTOM;
        let _ = writeln!(
            self.body,
            r##"<line x1="{px:.2}" y1="{base:.2}" x2="{px:.2}" y2="{:.2}" stroke="#333"/><text x="{px:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"##,
            base + 5.0,
            base + 20.0,
            escape(label)
        );
    }

    fn px(&self, v: f64) -> Option<f64> {
        self.x.unit(v).map(|u| LEFT + u * (WIDTH - LEFT - RIGHT))
    }

    fn py(&self, v: f64) -> Option<f64> {
        self.y.unit(v).map(|u| HEIGHT - BOTTOM - u * (HEIGHT - TOP - BOTTOM))
    }

    /// One polyline per series. Non-finite points are dropped; values at or
    /// below zero on a log axis sit on the axis floor.
    pub fn polyline(&mut self, points: &[(f64, f64)], class: &str, color: &str, dashed: bool) {
        let floor = match self.y {
            Scale::Log { lo, .. } => lo,
            Scale::Linear { .. } => f64::NEG_INFINITY,
        };
        let pts: Vec<String> = points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .filter_map(|&(x, y)| Some((self.px(x)?, self.py(y.max(floor))?)))
            .map(|(a, b)| format!("{a:.2},{b:.2}"))
            .collect();
        let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
            pts.join(" ")
        );
    }

    /// Dashed horizontal reference line with a label.
    pub fn threshold(&mut self, y: f64, label: &str) {
        if let Some(py) = self.py(y) {
            let _ = writeln!(
                self.body,
                r##"<line class="threshold" x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#000" stroke-dasharray="8 5"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="12">{}</text>"##,
                WIDTH - RIGHT,
                WIDTH - RIGHT - 4.0,
                py - 5.0,
                escape(label)
            );
        }
    }

    /// Marker at `(x, mean)` with a vertical whisker from `lo` to `hi`.
    pub fn point_with_whisker(&mut self, x: f64, mean: f64, lo: f64, hi: f64, color: &str) {
        let Some(px) = self.px(x) else { return };
        if let (Some(a), Some(b)) = (self.py(lo), self.py(hi)) {
            let _ = writeln!(
                self.body,
                r#"<line class="whisker" x1="{px:.2}" y1="{a:.2}" x2="{px:.2}" y2="{b:.2}" stroke="{color}"/><line x1="{:.2}" y1="{a:.2}" x2="{:.2}" y2="{a:.2}" stroke="{color}"/><line x1="{:.2}" y1="{b:.2}" x2="{:.2}" y2="{b:.2}" stroke="{color}"/>"#,
                px - 5.0,
                px + 5.0,
                px - 5.0,
                px + 5.0
            );
        }
        if let Some(py) = self.py(mean) {
            let _ = writeln!(self.body, r#"<circle class="mean" cx="{px:.2}" cy="{py:.2}" r="4" fill="{color}"/>"#);
        }
    }

    pub fn legend(&mut self, label: &str, color: &str, dashed: bool) {
        self.legend.push((label.to_string(), color.to_string(), dashed));
    }

    pub fn finish(mut self) -> String {
        for (i, (label, color, dashed)) in self.legend.iter().enumerate() {
            let y = TOP + 15.0 + 16.0 * i as f64;
            let x = WIDTH - RIGHT - 150.0;
            let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                self.body,
                r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}" font-size="12">{}</text>"#,
                x + 20.0,
                x + 26.0,
                y + 4.0,
                escape(label)
            );
        }
        document(&self.body)
    }
}

fn document(body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" width=\"{WIDTH}\" height=\"{HEIGHT}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>\n{body}</svg>\n"
    )
}

/// Diverging red/blue colour for `v` in `[-1, 1]`.
fn diverging(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let fade = |t: f64| (255.0 * (1.0 - t)).round() as u8;
    if v >= 0.0 {
        format!("#ff{:02x}{:02x}", fade(v), fade(v))
    } else {
        format!("#{:02x}{:02x}ff", fade(-v), fade(-v))
    }
}

/// `n×n` coefficient heatmap; `entries` are 0-based `(row, col, value)`.
/// Colours are scaled by the largest magnitude.
pub fn heatmap(title: &str, n: usize, entries: &[(usize, usize, f64)]) -> String {
    let mut body = String::new();
    let _ = writeln!(
        body,
        r#"<text x="{:.2}" y="30" text-anchor="middle" font-size="18">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let side = (HEIGHT - TOP - BOTTOM).min(WIDTH - LEFT - RIGHT);
    let cell = side / n.max(1) as f64;
    let x0 = (WIDTH - side) / 2.0;
    let scale = entries.iter().map(|e| e.2.abs()).filter(|v| v.is_finite()).fold(0.0, f64::max);
    for &(i, j, v) in entries {
        let c = if scale > 0.0 && v.is_finite() { diverging(v / scale) } else { "#ffffff".into() };
        let _ = writeln!(
            body,
            r##"<rect class="cell" x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{c}" stroke="#ddd" stroke-width="0.3"><title>A[{},{}] = {v:e}</title></rect>"##,
            x0 + j as f64 * cell,
            TOP + i as f64 * cell,
            i + 1,
            j + 1
        );
    }
    let _ = writeln!(
        body,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">colour scale ±{scale:.3e} (red positive, blue negative)</text>"#,
        WIDTH / 2.0,
        HEIGHT - 25.0
    );
    document(&body)
}
