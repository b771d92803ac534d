//! Standalone SVG line plots of trace metrics.

use std::fmt::Write as _;
use std::path::Path;

use crate::engines::StepRecord;
use crate::error::{Error, Result};
use crate::harness::csv::{metric_values, METRICS};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A plottable column: `t` or one of the metric columns.
fn column(name: &str) -> Result<Option<usize>> {
    if name == "t" {
        return Ok(None);
    }
    METRICS
        .iter()
        .position(|m| *m == name)
        .map(Some)
        .ok_or_else(|| Error::invalid(format!("unknown metric `{name}`")))
}

fn value(r: &StepRecord, col: Option<usize>) -> f64 {
    col.map_or(r.t as f64, |c| metric_values(r)[c])
}

/// Residual and error columns are drawn on a log axis.
pub fn is_log_metric(name: &str) -> bool {
    name == "residual" || name.ends_with("_error")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{}", (v * 1000.0).round() / 1000.0)
    }
}

/// Renders one polyline per series of `y_metric` against `x_metric`.
pub fn render_svg(series: &[(String, &[StepRecord])], x_metric: &str, y_metric: &str) -> Result<String> {
    if series.is_empty() {
        return Err(Error::invalid("nothing to plot"));
    }
    let (xc, yc) = (column(x_metric)?, column(y_metric)?);
    let log = is_log_metric(y_metric);
    let points: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|(_, recs)| {
            recs.iter()
                .map(|r| (value(r, xc), value(r, yc)))
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!log || *y > 0.0))
                .map(|(x, y)| (x, if log { y.log10() } else { y }))
                .collect()
        })
        .collect();
    if points.iter().all(|p| p.is_empty()) {
        return Err(Error::invalid(format!("metric `{y_metric}` has no plottable values")));
    }
    let all = || points.iter().flatten();
    let (mut x0, mut x1) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (mut y0, mut y1) = all().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    if x1 <= x0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if log {
        y0 = y0.floor();
        y1 = y1.ceil();
    }
    if y1 <= y0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );

    let yticks: Vec<f64> = if log {
        (y0 as i64..=y1 as i64).map(|e| e as f64).collect()
    } else {
        (0..=4).map(|k| y0 + (y1 - y0) * k as f64 / 4.0).collect()
    };
    for v in yticks {
        let y = sy(v);
        let label = if log { format!("1e{}", v as i64) } else { fmt_tick(v) };
        let _ = writeln!(
            svg,
            r##"<line class="ytick" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for k in 0..=4 {
        let v = x0 + (x1 - x0) * k as f64 / 4.0;
        let x = sx(v);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            TOP + ph + 18.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0,
        esc(x_metric)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(16 {:.2}) rotate(-90)" text-anchor="middle">{}{}</text>"#,
        TOP + ph / 2.0,
        esc(y_metric),
        if log { " (log)" } else { "" }
    );

    for (k, ((label, _), pts)) in series.iter().zip(&points).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            esc(label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn export_svg(series: &[(String, &[StepRecord])], x_metric: &str, y_metric: &str, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(series, x_metric, y_metric)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(values: &[f64]) -> Vec<StepRecord> {
        values
            .iter()
            .enumerate()
            .map(|(t, &v)| StepRecord {
                t,
                residual: v,
                consensus_error: v,
                optimality_error: v,
                tracking_error: 0.0,
                comm_entries_cum: t as u64,
                grad_evals_cum: 0.0,
            })
            .collect()
    }

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                let pts = l.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
                pts.split(' ')
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn constant_series_is_horizontal() {
        let r = recs(&[0.5; 6]);
        let svg = render_svg(&[("flat".into(), &r)], "t", "residual").unwrap();
        let lines = polylines(&svg);
        assert_eq!(lines.len(), 1);
        assert!(lines[0].iter().all(|p| p.1 == lines[0][0].1));
    }

    #[test]
    fn one_legend_entry_per_trace() {
        let a = recs(&[1.0, 0.1]);
        let b = recs(&[1.0, 0.5]);
        let svg = render_svg(&[("a".into(), &a), ("b <q>".into(), &b)], "comm_entries_cum", "residual").unwrap();
        assert_eq!(svg.matches("class=\"legend\"").count(), 2);
        assert!(svg.contains("b &lt;q&gt;"));
        assert_eq!(polylines(&svg).len(), 2);
    }

    #[test]
    fn decade_ticks_on_log_axis() {
        let vals: Vec<f64> = (0..=12).map(|k| 10f64.powi(-k)).collect();
        let r = recs(&vals);
        let svg = render_svg(&[("r".into(), &r)], "t", "residual").unwrap();
        assert_eq!(svg.matches("class=\"ytick\"").count(), 13);
        for k in 0..=12 {
            assert!(svg.contains(&format!(">1e-{k}<")) || (k == 0 && svg.contains(">1e0<")));
        }
    }

    #[test]
    fn errors() {
        let r = recs(&[0.0, 0.0]);
        assert!(render_svg(&[], "t", "residual").is_err());
        assert!(render_svg(&[("r".into(), &r)], "t", "nope").is_err());
        // all values nonpositive on a log axis
        assert!(render_svg(&[("r".into(), &r)], "t", "tracking_error").is_err());
        assert!(render_svg(&[("r".into(), &r)], "t", "comm_entries_cum").is_ok());
    }
}
