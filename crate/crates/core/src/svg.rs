//! Minimal SVG plots: line charts, scatter charts and the complex plane.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Points,
}

pub struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    log_y: bool,
    series: Vec<(Style, Vec<(f64, f64)>)>,
    circle: bool,
    equal_aspect: bool,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-3 && v.abs() < 1e4 {
        format!("{:.3}", v).trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_y: false,
            series: Vec::new(),
            circle: false,
            equal_aspect: false,
        }
    }

    pub fn log_y(mut self) -> Self {
        self.log_y = true;
        self
    }

    /// Draws the unit circle and uses equal scales on both axes.
    pub fn complex_plane(mut self) -> Self {
        self.circle = true;
        self.equal_aspect = true;
        self
    }

    pub fn add(mut self, style: Style, pts: Vec<(f64, f64)>) -> Self {
        self.series.push((style, pts));
        self
    }

    pub fn render(&self) -> String {
        let ty = |y: f64| if self.log_y { y.log10() } else { y };
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.1.iter().copied())
            .filter(|p| p.0.is_finite() && p.1.is_finite() && (!self.log_y || p.1 > 0.0))
            .map(|(x, y)| (x, ty(y)))
            .collect();
        let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
        );
        if self.circle {
            x0 = x0.min(-1.0);
            x1 = x1.max(1.0);
            y0 = y0.min(-1.0);
            y1 = y1.max(1.0);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 <= 0.0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let (pw, ph) = (W - 2.0 * MARGIN, H - 2.0 * MARGIN);
        let (mut sx, mut sy) = (pw / (x1 - x0), ph / (y1 - y0));
        if self.equal_aspect {
            let s = sx.min(sy);
            sx = s;
            sy = s;
        }
        let px = |x: f64| MARGIN + (x - x0) * sx;
        let py = |y: f64| H - MARGIN - (y - y0) * sy;

        let mut out = String::new();
        let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
            W / 2.0,
            esc(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>"#
        );
        for k in 0..=4 {
            let fx = x0 + (x1 - x0) * k as f64 / 4.0;
            let fy = y0 + (y1 - y0) * k as f64 / 4.0;
            let label_y = if self.log_y { format!("1e{}", tick(fy)) } else { tick(fy) };
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
                px(fx),
                H - MARGIN + 16.0,
                tick(fx)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
                MARGIN - 6.0,
                py(fy) + 4.0,
                esc(&label_y)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            W / 2.0,
            H - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            esc(&self.y_label)
        );
        if self.circle {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="gray" stroke-dasharray="4 3"/>"#,
                px(0.0),
                py(0.0),
                sx
            );
        }
        let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
        for (i, (style, series)) in self.series.iter().enumerate() {
            let color = colors[i % colors.len()];
            let visible: Vec<(f64, f64)> = series
                .iter()
                .copied()
                .filter(|p| p.0.is_finite() && p.1.is_finite() && (!self.log_y || p.1 > 0.0))
                .map(|(x, y)| (px(x), py(ty(y))))
                .collect();
            match style {
                Style::Line => {
                    let path: Vec<String> = visible.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        out,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                        path.join(" ")
                    );
                }
                Style::Points => {
                    for (x, y) in visible {
                        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.8" fill="{color}"/>"#);
                    }
                }
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let svg = Plot::new("a < b", "x", "y").add(Style::Line, vec![(0.0, 1.0), (1.0, 2.0)]).render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert!(svg.contains("<polyline"));
    }

    #[test]
    fn log_axis_drops_nonpositive_values() {
        let svg = Plot::new("t", "N", "C").log_y().add(Style::Points, vec![(0.0, 1.0), (1.0, 0.0), (2.0, 1e-3)]).render();
        assert_eq!(svg.matches("r=\"1.8\"").count(), 2);
    }

    #[test]
    fn empty_plot_still_renders() {
        let svg = Plot::new("empty", "x", "y").complex_plane().render();
        assert!(svg.contains("<circle"));
    }
}
