//! Minimal static line and scatter plots, stacked as panels.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 260.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Line,
    Dots,
}

/// One legend entry: polylines that are drawn unconnected to each other,
/// or scattered dots.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub kind: Kind,
    pub pieces: Vec<Vec<(f64, f64)>>,
}

impl Series {
    pub fn line(label: impl Into<String>, color: &'static str, pieces: Vec<Vec<(f64, f64)>>) -> Self {
        Series {
            label: label.into(),
            color,
            kind: Kind::Line,
            pieces,
        }
    }

    pub fn dots(label: impl Into<String>, color: &'static str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            color,
            kind: Kind::Dots,
            pieces: vec![points],
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Panel {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub series: Vec<Series>,
    /// Keep one unit of x equal to one unit of y.
    pub equal_aspect: bool,
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-3 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render_panel(out: &mut String, p: &Panel, y0: f64) {
    let all = || p.series.iter().flat_map(|s| s.pieces.iter().flatten());
    let (mut xlo, mut xhi) = bounds(all().map(|q| q.0));
    let (mut ylo, mut yhi) = bounds(all().map(|q| q.1));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = PANEL_HEIGHT - TOP - BOTTOM;
    if p.equal_aspect {
        let scale = ((xhi - xlo) / pw).max((yhi - ylo) / ph);
        let (cx, cy) = (0.5 * (xlo + xhi), 0.5 * (ylo + yhi));
        (xlo, xhi) = (cx - 0.5 * scale * pw, cx + 0.5 * scale * pw);
        (ylo, yhi) = (cy - 0.5 * scale * ph, cy + 0.5 * scale * ph);
    }
    let sx = |x: f64| LEFT + (x - xlo) / (xhi - xlo) * pw;
    let sy = |y: f64| y0 + TOP + (yhi - y) / (yhi - ylo) * ph;

    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444"/>"##,
        LEFT,
        y0 + TOP
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="14" text-anchor="middle">{}</text>"#,
        LEFT + 0.5 * pw,
        y0 + TOP - 10.0,
        escape(&p.title)
    );
    for t in ticks(xlo, xhi) {
        let x = sx(t);
        let yb = y0 + TOP + ph;
        let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{yb:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444"/>"##, yb + 4.0);
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            yb + 16.0,
            label(t)
        );
    }
    for t in ticks(ylo, yhi) {
        let y = sy(t);
        let _ = writeln!(out, r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="#444"/>"##, LEFT - 4.0);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            y + 4.0,
            label(t)
        );
    }
    if ylo < 0.0 && yhi > 0.0 {
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#bbb" stroke-dasharray="4 3"/>"##,
            LEFT + pw,
            y = sy(0.0)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
        LEFT + 0.5 * pw,
        y0 + PANEL_HEIGHT - 6.0,
        escape(&p.xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{yc:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {yc:.2})">{}</text>"#,
        escape(&p.ylabel),
        yc = y0 + TOP + 0.5 * ph
    );

    let _ = writeln!(
        out,
        r#"<clipPath id="clip{id}"><rect x="{LEFT:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}"/></clipPath>"#,
        y0 + TOP,
        id = y0 as usize
    );
    let _ = writeln!(out, r#"<g clip-path="url(#clip{})">"#, y0 as usize);
    for s in &p.series {
        for piece in &s.pieces {
            match s.kind {
                Kind::Line => {
                    let pts: Vec<String> = piece
                        .iter()
                        .filter(|q| q.0.is_finite() && q.1.is_finite())
                        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                        .collect();
                    let _ = writeln!(
                        out,
                        r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                        s.color,
                        pts.join(" ")
                    );
                }
                Kind::Dots => {
                    for &(x, y) in piece.iter().filter(|q| q.0.is_finite() && q.1.is_finite()) {
                        let _ = writeln!(
                            out,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
                            sx(x),
                            sy(y),
                            s.color
                        );
                    }
                }
            }
        }
    }
    let _ = writeln!(out, "</g>");

    for (i, s) in p.series.iter().enumerate() {
        let y = y0 + TOP + 14.0 + 14.0 * i as f64;
        let x = LEFT + pw - 200.0;
        match s.kind {
            Kind::Line => {
                let _ = writeln!(
                    out,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/>"#,
                    y - 4.0,
                    x + 18.0,
                    y - 4.0,
                    s.color
                );
            }
            Kind::Dots => {
                let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, x + 9.0, y - 4.0, s.color);
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{y:.2}" font-size="11">{}</text>"#,
            x + 24.0,
            escape(&s.label)
        );
    }
}

/// Panels stacked top to bottom in one SVG document.
pub fn render(panels: &[Panel]) -> String {
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, i as f64 * PANEL_HEIGHT);
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_inside() {
        let t = ticks(-0.13, 1.07);
        assert_eq!(t.first().copied(), Some(0.0));
        assert!(t.iter().all(|v| (-0.13..=1.07).contains(v)));
        assert!(t.len() >= 3 && t.len() <= 11);
    }

    #[test]
    fn render_is_well_formed() {
        let p = Panel {
            title: "a < b".into(),
            series: vec![
                Series::line("line", PALETTE[0], vec![vec![(0.0, 0.0), (1.0, 1.0)]]),
                Series::dots("dots", PALETTE[1], vec![(0.5, 0.5)]),
            ],
            ..Panel::default()
        };
        let s = render(&[p]);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("a &lt; b"));
        assert_eq!(s.matches("<polyline").count(), 1);
    }
}
