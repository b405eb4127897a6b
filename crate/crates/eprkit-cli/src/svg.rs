//! Minimal SVG line/scatter plots. Plots are conveniences next to the CSV
//! and JSON outputs, so this stays deliberately small: linear axes, fixed
//! tick count, no text measurement.

use std::fmt::Write;

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 72.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;

pub struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    x_range: (f64, f64),
    y_range: (f64, f64),
    body: String,
}

fn nice(v: f64) -> String {
    let s = format!("{v:.4}");
    let trimmed = s.trim_end_matches('0').trim_end_matches('.');
    if trimmed.is_empty() || trimmed == "-" {
        "0".to_string()
    } else {
        trimmed.to_string()
    }
}

impl Plot {
    /// Axis ranges are fixed up front from the data extents the caller
    /// already knows; a degenerate range is padded so points stay visible.
    pub fn new(
        title: &str,
        x_label: &str,
        y_label: &str,
        mut x_range: (f64, f64),
        mut y_range: (f64, f64),
    ) -> Plot {
        for range in [&mut x_range, &mut y_range] {
            if range.1 - range.0 <= 0.0 {
                let pad = range.0.abs().max(1.0) * 0.05;
                range.0 -= pad;
                range.1 += pad;
            }
        }
        Plot {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            x_range,
            y_range,
            body: String::new(),
        }
    }

    fn x(&self, v: f64) -> f64 {
        let t = (v - self.x_range.0) / (self.x_range.1 - self.x_range.0);
        MARGIN_LEFT + t * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let t = (v - self.y_range.0) / (self.y_range.1 - self.y_range.0);
        HEIGHT - MARGIN_BOTTOM - t * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], color: &str, width: f64, opacity: f64) {
        if points.len() < 2 {
            self.scatter(points, color, width.max(2.0));
            return;
        }
        let mut d = String::new();
        for (k, &(px, py)) in points.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2},{:.2}",
                if k == 0 { "M" } else { " L" },
                self.x(px),
                self.y(py)
            );
        }
        let _ = writeln!(
            self.body,
            r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="{width:.2}" stroke-opacity="{opacity:.3}"/>"#
        );
    }

    pub fn scatter(&mut self, points: &[(f64, f64)], color: &str, radius: f64) {
        for &(px, py) in points {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{radius:.2}" fill="{color}"/>"#,
                self.x(px),
                self.y(py)
            );
        }
    }

    /// Vertical tick mark spanning a fraction of the plot height, anchored
    /// at the bottom; used for measured line positions.
    pub fn rug(&mut self, x_values: &[f64], color: &str, fraction: f64) {
        let y0 = HEIGHT - MARGIN_BOTTOM;
        let y1 = y0 - fraction * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM);
        for &v in x_values {
            let _ = writeln!(
                self.body,
                r#"<line x1="{0:.2}" y1="{y0:.2}" x2="{0:.2}" y2="{y1:.2}" stroke="{color}" stroke-width="1.5"/>"#,
                self.x(v)
            );
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let (x0, x1) = (MARGIN_LEFT, WIDTH - MARGIN_RIGHT);
        let (y0, y1) = (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP);
        for k in 0..=5 {
            let t = k as f64 / 5.0;
            let vx = self.x_range.0 + t * (self.x_range.1 - self.x_range.0);
            let vy = self.y_range.0 + t * (self.y_range.1 - self.y_range.0);
            let px = self.x(vx);
            let py = self.y(vy);
            let _ = writeln!(
                out,
                r##"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{y1}" stroke="#e0e0e0"/>
<line x1="{x0}" y1="{py:.2}" x2="{x1}" y2="{py:.2}" stroke="#e0e0e0"/>
<text x="{px:.2}" y="{:.2}" font-size="12" text-anchor="middle" font-family="sans-serif">{}</text>
<text x="{:.2}" y="{py:.2}" font-size="12" text-anchor="end" dominant-baseline="middle" font-family="sans-serif">{}</text>"##,
                y0 + 18.0,
                nice(vx),
                x0 - 8.0,
                nice(vy),
            );
        }
        let _ = writeln!(
            out,
            r##"<rect x="{x0}" y="{y1}" width="{:.2}" height="{:.2}" fill="none" stroke="#404040"/>"##,
            x1 - x0,
            y0 - y1
        );
        out.push_str(&self.body);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="24" font-size="15" text-anchor="middle" font-family="sans-serif">{}</text>
<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle" font-family="sans-serif">{}</text>
<text x="18" y="{:.2}" font-size="13" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 18 {:.2})">{}</text>
</svg>"#,
            (x0 + x1) / 2.0,
            escape(&self.title),
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label),
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(&self.y_label),
        );
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
