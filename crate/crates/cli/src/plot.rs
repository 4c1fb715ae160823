//! Minimal deterministic SVG line plots from metric CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ldp_gradtrack::{Error, Result};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// One curve: legend label and `(x, y)` points in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Reads the CSV and splits the requested columns into curves. The x axis is
/// `round` when present, else the row index; an `algorithm` column splits
/// every column into one curve per algorithm.
pub fn load_series(path: &Path, columns: &[String]) -> Result<Vec<Series>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows: Vec<csv::StringRecord> = reader.records().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    let idx = |name: &str| headers.iter().position(|h| h == name);
    let x_col = idx("round");
    let group_col = idx("algorithm");
    let wanted: Vec<String> = if columns.is_empty() {
        headers
            .iter()
            .filter(|h| Some(h.as_str()) != x_col.map(|i| headers[i].as_str()) && h.as_str() != "algorithm")
            .filter(|h| rows.iter().any(|r| r.get(idx(h).unwrap()).is_some_and(|v| v.parse::<f64>().is_ok())))
            .cloned()
            .collect()
    } else {
        let missing: Vec<&String> = columns.iter().filter(|c| idx(c).is_none()).collect();
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "{}: missing column(s) {}",
                path.display(),
                missing.iter().map(|s| format!("\"{s}\"")).collect::<Vec<_>>().join(", ")
            )));
        }
        columns.to_vec()
    };
    if wanted.is_empty() {
        return Err(Error::Data(format!("{}: no numeric columns to plot", path.display())));
    }
    let mut curves: BTreeMap<(usize, String), Series> = BTreeMap::new();
    let mut group_order: Vec<String> = Vec::new();
    for (r, row) in rows.iter().enumerate() {
        let x = match x_col {
            Some(c) => row
                .get(c)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::Data(format!("{}: row {} has no numeric round", path.display(), r + 1)))?,
            None => r as f64,
        };
        let group = group_col.and_then(|g| row.get(g)).unwrap_or("").to_string();
        if !group_order.contains(&group) {
            group_order.push(group.clone());
        }
        let gi = group_order.iter().position(|g| *g == group).unwrap();
        for (ci, col) in wanted.iter().enumerate() {
            let Some(y) = row.get(idx(col).unwrap()).and_then(|v| v.parse::<f64>().ok()) else { continue };
            let label = if group.is_empty() { col.clone() } else { format!("{col} ({group})") };
            curves
                .entry((ci * 1000 + gi, label.clone()))
                .or_insert_with(|| Series { label, points: Vec::new() })
                .points
                .push((x, y));
        }
    }
    Ok(curves.into_values().filter(|s| !s.points.is_empty()).collect())
}

fn nice_ticks(lo: f64, hi: f64, log: bool) -> Vec<f64> {
    if log {
        let (a, b) = (lo.floor() as i32, hi.ceil() as i32);
        return (a..=b).map(f64::from).filter(|t| *t >= lo - 1e-9 && *t <= hi + 1e-9).collect();
    }
    (0..=4).map(|k| lo + (hi - lo) * k as f64 / 4.0).collect()
}

fn fmt_tick(v: f64, log: bool) -> String {
    if log {
        return format!("1e{}", v.round() as i64);
    }
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e5) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders the curves; with `loglog`, nonpositive points are dropped.
pub fn render_svg(series: &[Series], loglog: bool, title: &str) -> Result<String> {
    let tf = |v: f64| if loglog { v.log10() } else { v };
    let curves: Vec<(String, Vec<(f64, f64)>)> = series
        .iter()
        .map(|s| {
            let pts = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite() && (!loglog || (*x > 0.0 && *y > 0.0)))
                .map(|&(x, y)| (tf(x), tf(y)))
                .collect();
            (s.label.clone(), pts)
        })
        .collect();
    let all: Vec<(f64, f64)> = curves.iter().flat_map(|c| c.1.iter().copied()).collect();
    if all.is_empty() {
        return Err(Error::Data("nothing to plot: no finite (positive, for log-log) points".into()));
    }
    let span = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = span(all.iter().map(|p| p.0).collect());
    let (y0, y1) = span(all.iter().map(|p| p.1).collect());
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let w = |s: &mut String, text: String| {
        s.push_str(&text);
        s.push('\n');
    };
    w(
        &mut s,
        format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        ),
    );
    w(&mut s, format!(r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#));
    w(
        &mut s,
        format!(
            r#"<text x="{:.1}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            escape(title)
        ),
    );
    w(&mut s, format!(r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#));
    for t in nice_ticks(x0, x1, loglog) {
        let x = px(t);
        w(
            &mut s,
            format!(
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
                TOP + ph,
                TOP + ph + 5.0
            ),
        );
        w(
            &mut s,
            format!(
                r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + ph + 18.0,
                fmt_tick(t, loglog)
            ),
        );
    }
    for t in nice_ticks(y0, y1, loglog) {
        let y = py(t);
        w(&mut s, format!(r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0));
        w(
            &mut s,
            format!(
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 8.0,
                y + 4.0,
                fmt_tick(t, loglog)
            ),
        );
    }
    let axis = if loglog { " (log)" } else { "" };
    w(
        &mut s,
        format!(r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">round{axis}</text>"#, LEFT + pw / 2.0, HEIGHT - 15.0),
    );
    w(
        &mut s,
        format!(
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">value{axis}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0
        ),
    );
    for (k, (label, pts)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut path = String::new();
        for (x, y) in pts {
            let _ = write!(path, "{:.2},{:.2} ", px(*x), py(*y));
        }
        w(
            &mut s,
            format!(r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.trim_end()),
        );
        let ly = TOP + 10.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 12.0;
        w(
            &mut s,
            format!(
                r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
                lx + 20.0
            ),
        );
        w(&mut s, format!(r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 26.0, ly + 4.0, escape(label)));
    }
    w(&mut s, "</svg>".to_string());
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_drops_nonpositive_points() {
        let s = vec![Series { label: "e".into(), points: vec![(0.0, 1.0), (1.0, 1.0), (10.0, 0.1)] }];
        let svg = render_svg(&s, true, "t").unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("1e-1"));
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = vec![Series { label: "a<b".into(), points: vec![(0.0, 2.0), (5.0, 1.0)] }];
        assert_eq!(render_svg(&s, false, "x").unwrap(), render_svg(&s, false, "x").unwrap());
        assert!(render_svg(&s, false, "x").unwrap().contains("a&lt;b"));
    }
}
