//! Minimal SVG rendering of report tables: the first column on the x axis,
//! every other column as one series.

use std::fmt::Write;

use crate::output::{PlotKind, Report};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn render(report: &Report) -> Option<String> {
    if report.plot == PlotKind::None || report.columns.len() < 2 {
        return None;
    }
    let finite = |v: &f64| v.is_finite();
    let xs: Vec<f64> = report.rows.iter().map(|r| r[0]).filter(finite).collect();
    let ys: Vec<f64> = report.rows.iter().flat_map(|r| r[1..].iter().copied()).filter(finite).collect();
    if xs.is_empty() || ys.is_empty() {
        return None;
    }
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(s, r#"<path d="M{l} {t} L{l} {b} L{r} {b}" stroke="black" fill="none"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        report.columns[0]
    );
    let _ = writeln!(s, r#"<text x="{l}" y="{}" font-size="12">{}</text>"#, t - 20.0, report.subcommand);
    for (v, x) in [(x0, l), (x1, r)] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" font-size="10" text-anchor="middle">{v:.4}</text>"#, b + 14.0);
    }
    for (v, y) in [(y0, b), (y1, t)] {
        let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="10" text-anchor="end">{v:.4}</text>"#, l - 4.0);
    }
    for (c, name) in report.columns.iter().enumerate().skip(1) {
        let color = COLORS[(c - 1) % COLORS.len()];
        let pts: Vec<(f64, f64)> =
            report.rows.iter().filter(|r| r[0].is_finite() && r[c].is_finite()).map(|r| (px(r[0]), py(r[c]))).collect();
        match report.plot {
            PlotKind::Scatter => {
                for (x, y) in &pts {
                    let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="{color}"/>"#);
                }
            }
            PlotKind::Line | PlotKind::Step => {
                let mut d = String::new();
                for (i, (x, y)) in pts.iter().enumerate() {
                    if i == 0 {
                        let _ = write!(d, "M{x:.2} {y:.2}");
                    } else if report.plot == PlotKind::Step {
                        let _ = write!(d, " H{x:.2} V{y:.2}");
                    } else {
                        let _ = write!(d, " L{x:.2} {y:.2}");
                    }
                }
                let _ = writeln!(s, r#"<path d="{d}" stroke="{color}" fill="none"/>"#);
            }
            PlotKind::None => {}
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}" text-anchor="end">{name}</text>"#,
            r,
            t + 14.0 * c as f64
        );
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn range(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_and_skips_tables() {
        let mut r = Report::new("hill", &["k", "estimate"]).plot(PlotKind::Line);
        r.push(vec![1.0, 0.4]);
        r.push(vec![2.0, 0.6]);
        let svg = render(&r).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("<path d=\"M"));
        let table = Report::new("premium", &["level", "var"]);
        assert!(render(&table).is_none());
    }
}
