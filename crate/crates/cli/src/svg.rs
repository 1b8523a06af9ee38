//! Minimal stacked line plots written as raw SVG paths.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const PANEL_H: f64 = 180.0;
const MARGIN_L: f64 = 90.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const GAP: f64 = 40.0;
const MAX_POINTS: usize = 2000;

/// One panel per series, sharing the horizontal axis `t`.
pub fn stacked_plot(title: &str, t: &[f64], series: &[(&str, Vec<f64>)]) -> String {
    let height = MARGIN_T + series.len() as f64 * (PANEL_H + GAP);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (t0, t1) = range(t);
    let stride = (t.len() / MAX_POINTS).max(1);
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    for (k, (name, ys)) in series.iter().enumerate() {
        let top = MARGIN_T + k as f64 * (PANEL_H + GAP);
        let (y0, y1) = range(ys);
        let sx = |v: f64| MARGIN_L + (v - t0) / (t1 - t0) * plot_w;
        let sy = |v: f64| top + PANEL_H - (v - y0) / (y1 - y0) * PANEL_H;
        let _ = writeln!(
            out,
            r##"<rect x="{MARGIN_L}" y="{top}" width="{plot_w}" height="{PANEL_H}" fill="none" stroke="#999"/>"##
        );
        let mut d = String::new();
        let mut first = true;
        for (i, (&tv, &yv)) in t.iter().zip(ys).enumerate() {
            if (i % stride != 0 && i + 1 != t.len()) || !yv.is_finite() {
                continue;
            }
            let _ = write!(
                d,
                "{}{:.2},{:.2} ",
                if first { "M" } else { "L" },
                sx(tv),
                sy(yv)
            );
            first = false;
        }
        let _ = writeln!(
            out,
            r##"<path d="{}" fill="none" stroke="#1f5fa8" stroke-width="1.5"/>"##,
            d.trim_end()
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            MARGIN_L - 8.0,
            top + PANEL_H / 2.0,
            escape(name)
        );
        for (v, y) in [(y1, top + 10.0), (y0, top + PANEL_H)] {
            let _ = writeln!(
                out,
                r##"<text x="{}" y="{y}" text-anchor="end" fill="#555">{}</text>"##,
                MARGIN_L - 8.0,
                tick(v)
            );
        }
        let _ = writeln!(
            out,
            r##"<text x="{MARGIN_L}" y="{}" fill="#555">{}</text><text x="{}" y="{}" text-anchor="end" fill="#555">t = {}</text>"##,
            top + PANEL_H + 15.0,
            tick(t0),
            WIDTH - MARGIN_R,
            top + PANEL_H + 15.0,
            tick(t1)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Finite range, padded so constant series still get a visible band.
fn range(v: &[f64]) -> (f64, f64) {
    let (lo, hi) = v
        .iter()
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * lo.abs().max(1.0) {
        let pad = 0.5 * lo.abs().max(1.0);
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e4) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_path_per_series() {
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let svg = stacked_plot("a<b", &t, &[("x", t.clone()), ("y", vec![2.0; 10])]);
        assert_eq!(svg.matches("<path").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn non_finite_values_are_skipped() {
        let t = [0.0, 1.0, 2.0];
        let svg = stacked_plot("p", &t, &[("x", vec![1.0, f64::NAN, 3.0])]);
        assert!(!svg.contains("NaN"));
    }
}
