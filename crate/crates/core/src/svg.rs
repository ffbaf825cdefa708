//! Minimal SVG line charts for the CLI figures.

use std::fmt::Write;

use chrono::{Duration, NaiveDate};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 450.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Step,
    Points,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: &'static str,
    pub style: Style,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>, color: &'static str) -> Self {
        Self {
            label: label.into(),
            points,
            color,
            style: Style::Line,
            dashed: false,
        }
    }

    pub fn style(mut self, style: Style) -> Self {
        self.style = style;
        self
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Ribbon {
    pub label: String,
    pub x: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub color: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub ribbons: Vec<Ribbon>,
    pub vlines: Vec<f64>,
    pub hlines: Vec<f64>,
    /// When set, x values are days since this date and ticks show dates.
    pub date_origin: Option<NaiveDate>,
}

fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_num(v: f64) -> String {
    if v.abs() >= 1e5 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}").trim_end_matches('0').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..Self::default()
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let xs = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.0))
            .chain(self.ribbons.iter().flat_map(|r| r.x.iter().copied()))
            .chain(self.vlines.iter().copied());
        let ys = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain(self.ribbons.iter().flat_map(|r| r.lo.iter().chain(&r.hi).copied()))
            .chain(self.hlines.iter().copied());
        let (mut x0, mut x1) = xs
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        let (mut y0, mut y1) = ys
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if !y0.is_finite() {
            (y0, y1) = (0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x1 = x0 + 1.0;
        }
        let pad = if y1 - y0 < 1e-12 { 1.0 } else { 0.05 * (y1 - y0) };
        (x0, x1, y0 - pad, y1 + pad)
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        for t in nice_ticks(y0, y1, 6) {
            let y = sy(t);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e5e5e5"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                y + 4.0,
                fmt_num(t)
            );
        }
        for t in nice_ticks(x0, x1, 7) {
            let x = sx(t);
            let label = match self.date_origin {
                Some(o) => (o + Duration::days(t.round() as i64)).to_string(),
                None => fmt_num(t),
            };
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#999"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{label}</text>"##,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 18.0
            );
        }
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for r in &self.ribbons {
            let mut pts: Vec<String> = r
                .x
                .iter()
                .zip(&r.hi)
                .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                .collect();
            pts.extend(r.x.iter().zip(&r.lo).rev().map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y))));
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.25" stroke="none"/>"#,
                pts.join(" "),
                r.color
            );
        }
        for &v in &self.hlines {
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#555" stroke-dasharray="4 3"/>"##,
                LEFT + pw,
                y = sy(v)
            );
        }
        for &v in &self.vlines {
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{:.2}" stroke="#555" stroke-dasharray="4 3"/>"##,
                TOP + ph,
                x = sx(v)
            );
        }
        for series in &self.series {
            match series.style {
                Style::Points => {
                    for (x, y) in &series.points {
                        let _ = writeln!(
                            s,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{}" fill-opacity="0.6"/>"#,
                            sx(*x),
                            sy(*y),
                            series.color
                        );
                    }
                }
                Style::Line | Style::Step => {
                    let mut pts = Vec::new();
                    for (i, (x, y)) in series.points.iter().enumerate() {
                        if series.style == Style::Step && i > 0 {
                            pts.push(format!("{:.2},{:.2}", sx(*x), sy(series.points[i - 1].1)));
                        }
                        pts.push(format!("{:.2},{:.2}", sx(*x), sy(*y)));
                    }
                    let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
                    let _ = writeln!(
                        s,
                        r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                        pts.join(" "),
                        series.color
                    );
                }
            }
        }
        let legend: Vec<(&str, &str)> = self
            .ribbons
            .iter()
            .map(|r| (r.label.as_str(), r.color))
            .chain(self.series.iter().map(|s| (s.label.as_str(), s.color)))
            .filter(|(l, _)| !l.is_empty())
            .collect();
        for (i, (label, color)) in legend.iter().enumerate() {
            let y = TOP + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="12" height="8" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                LEFT + 10.0,
                y - 8.0,
                LEFT + 28.0,
                y,
                escape(label)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text transform="translate(16,{:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_range() {
        let t = nice_ticks(0.0, 10.0, 5);
        assert_eq!(t, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        let t = nice_ticks(-3.2, 12.1, 6);
        assert!(t.first().unwrap() >= &-3.2 && t.last().unwrap() <= &12.1);
    }

    #[test]
    fn renders_elements() {
        let mut p = Plot::new("a < b", "x", "y");
        p.series.push(Series::new("fit", vec![(0.0, 1.0), (1.0, 2.0)], "blue"));
        p.series.push(Series::new("step", vec![(0.0, 1.0), (1.0, 3.0)], "red").style(Style::Step));
        p.ribbons.push(Ribbon {
            label: "band".into(),
            x: vec![0.0, 1.0],
            lo: vec![0.5, 1.5],
            hi: vec![1.5, 2.5],
            color: "gray",
        });
        p.vlines.push(0.5);
        let svg = p.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt; b"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<polygon").count(), 1);
    }

    #[test]
    fn empty_plot_renders() {
        assert!(Plot::new("", "", "").render().contains("</svg>"));
    }
}
