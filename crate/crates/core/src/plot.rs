//! Minimal deterministic SVG charts: survival step curves and drift curves.

use std::fmt::Write;

use crate::drift::DriftCurve;
use crate::survival::KmCurve;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Frame {
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        LEFT + v / self.x_max * (W - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        TOP + (self.y_max - v) / (self.y_max - self.y_min) * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn axes(out: &mut String, f: &Frame, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="black"/>"#
    );
    let step = nice_step(f.x_max);
    let mut t = 0.0;
    while t <= f.x_max + 1e-9 {
        let x = f.x(t);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{}" stroke="black"/>"#,
            y1 + 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            y1 + 18.0,
            fmt_tick(t)
        );
        t += step;
    }
    let ystep = nice_step(f.y_max - f.y_min);
    let mut v = (f.y_min / ystep).ceil() * ystep;
    while v <= f.y_max + 1e-9 {
        let y = f.y(v);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 8.0,
            y + 4.0,
            fmt_tick(v)
        );
        v += ystep;
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, l) in labels.iter().enumerate() {
        let y = TOP + 10.0 + 16.0 * i as f64;
        let x = W - RIGHT - 160.0;
        let c = COLORS[i % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{c}" stroke-width="2"/>"#,
            x + 20.0
        );
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, x + 26.0, y + 4.0, escape(l));
    }
}

/// Step plot of survival curves with dashed markers where each curve first
/// falls to `marker_level`.
pub fn km_svg(curves: &[(&str, &KmCurve)], title: &str, marker_level: f64) -> String {
    let x_max = curves
        .iter()
        .flat_map(|(_, c)| c.points.last().map(|p| p.time))
        .fold(1.0, f64::max);
    let f = Frame {
        x_max,
        y_min: 0.0,
        y_max: 1.0,
    };
    let mut out = String::new();
    axes(&mut out, &f, title, "days", "survival probability");
    let y = f.y(marker_level);
    let _ = writeln!(
        out,
        r#"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="grey" stroke-dasharray="4 4"/>"#,
        W - RIGHT
    );
    let mut labels = Vec::new();
    for (i, (label, c)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut d = format!("M{:.2},{:.2}", f.x(0.0), f.y(1.0));
        let mut s = 1.0;
        for p in &c.points {
            let _ = write!(
                d,
                " L{:.2},{:.2} L{:.2},{:.2}",
                f.x(p.time),
                f.y(s),
                f.x(p.time),
                f.y(p.survival)
            );
            s = p.survival;
        }
        let _ = write!(d, " L{:.2},{:.2}", f.x(x_max), f.y(s));
        let _ = writeln!(out, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="2"/>"#);
        let mut label = label.to_string();
        if let Some(t) = c.time_to_survival(marker_level) {
            let x = f.x(t);
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{y:.2}" x2="{x:.2}" y2="{}" stroke="{color}" stroke-dasharray="4 4"/>"#,
                H - BOTTOM
            );
            let _ = write!(label, " ({t:.1} d)");
        }
        labels.push(label);
    }
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// Mean similarity by day gap with a one-standard-error band.
pub fn drift_curve_svg(curve: &DriftCurve, title: &str) -> String {
    let x_max = curve.bins.last().map_or(1.0, |b| (b.day_gap as f64).max(1.0));
    let lo = curve.bins.iter().map(|b| b.mean_sim - b.std_err).fold(1.0, f64::min);
    let f = Frame {
        x_max,
        y_min: (lo * 10.0).floor() / 10.0,
        y_max: 1.0,
    };
    let mut out = String::new();
    axes(&mut out, &f, title, "days between posts", "mean cosine similarity");
    if !curve.bins.is_empty() {
        let upper: Vec<String> = curve
            .bins
            .iter()
            .map(|b| format!("{:.2},{:.2}", f.x(b.day_gap as f64), f.y(b.mean_sim + b.std_err)))
            .collect();
        let lower: Vec<String> = curve
            .bins
            .iter()
            .rev()
            .map(|b| format!("{:.2},{:.2}", f.x(b.day_gap as f64), f.y(b.mean_sim - b.std_err)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon points="{} {}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" "),
            COLORS[0]
        );
        let line: Vec<String> = curve
            .bins
            .iter()
            .map(|b| format!("{:.2},{:.2}", f.x(b.day_gap as f64), f.y(b.mean_sim)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            line.join(" "),
            COLORS[0]
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::DriftBin;
    use crate::survival::{km_estimate, SurvivalRecord};

    #[test]
    fn km_plot_has_markers_and_is_stable() {
        let recs: Vec<SurvivalRecord> = (1..=10).map(|i| SurvivalRecord::new(i, i as f64, true)).collect();
        let km = km_estimate(&recs);
        let a = km_svg(&[("all", &km)], "Survival", 0.8);
        assert_eq!(a, km_svg(&[("all", &km)], "Survival", 0.8));
        assert!(a.contains("stroke-dasharray"));
        assert!(a.contains("all (2.0 d)"));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
    }

    #[test]
    fn drift_plot_renders() {
        let curve = DriftCurve {
            bins: vec![
                DriftBin {
                    day_gap: 0,
                    mean_sim: 0.95,
                    std_err: 0.01,
                    pair_count: 10,
                },
                DriftBin {
                    day_gap: 3,
                    mean_sim: 0.9,
                    std_err: 0.02,
                    pair_count: 4,
                },
            ],
        };
        let s = drift_curve_svg(&curve, "Drift <test>");
        assert!(s.contains("polyline"));
        assert!(s.contains("Drift &lt;test&gt;"));
    }
}
