//! Self-contained SVG plots. Every plot comes with a CSV holding exactly the
//! numbers drawn.

use std::fmt::Write;

use crate::io::{csv_document, fmt_f64};
use crate::metrics::Histogram;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// A rendered plot and its data.
#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub svg: String,
    pub csv: String,
}

/// Rounds `v` up to a 1-2-5 step.
fn nice_ceiling(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for m in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if m * mag >= v * (1.0 - 1e-12) {
            return m * mag;
        }
    }
    10.0 * mag
}

struct Frame {
    x_max: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        LEFT + v / self.x_max * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - v / self.y_max * (HEIGHT - TOP - BOTTOM)
    }

    fn open(&self, title: &str, x_label: &str, y_label: &str) -> String {
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
            escape(title)
        );
        let (x0, x1, y0, y1) = (self.x(0.0), self.x(self.x_max), self.y(0.0), self.y(self.y_max));
        let _ = writeln!(
            s,
            r#"<path d="M{x0:.1} {y1:.1} L{x0:.1} {y0:.1} L{x1:.1} {y0:.1}" fill="none" stroke="black"/>"#
        );
        for i in 0..=5 {
            let xv = self.x_max * i as f64 / 5.0;
            let yv = self.y_max * i as f64 / 5.0;
            let (px, py) = (self.x(xv), self.y(yv));
            let _ = writeln!(
                s,
                r#"<line x1="{px:.1}" y1="{y0:.1}" x2="{px:.1}" y2="{:.1}" stroke="black"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                y0 + 5.0,
                y0 + 19.0,
                tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{py:.1}" x2="{x0:.1}" y2="{py:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                x0 - 5.0,
                x0 - 8.0,
                py + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            escape(x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
        s
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() { "0".into() } else { s.to_string() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn legend(s: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 8.0 + 16.0 * i as f64;
        let x = WIDTH - RIGHT - 130.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="14" height="4" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            y - 4.0,
            COLORS[i % COLORS.len()],
            x + 20.0,
            y + 1.0,
            escape(name)
        );
    }
}

/// Efficiency traces sampled at `rate` Hz, sample `i` at time `(i + 1)/rate`.
/// The CSV has a `time_s` column followed by one column per series.
pub fn trace(title: &str, rate: f64, series: &[(&str, &[f64])]) -> Plot {
    let len = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    let time = |i: usize| (i + 1) as f64 / rate;
    let y_top = series
        .iter()
        .flat_map(|(_, s)| s.iter().cloned())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let frame = Frame {
        x_max: nice_ceiling(time(len.max(1) - 1)),
        y_max: nice_ceiling(y_top),
    };
    let mut svg = frame.open(title, "time (s)", "coupling efficiency");
    for (k, (_, s)) in series.iter().enumerate() {
        let mut d = String::new();
        for (i, v) in s.iter().enumerate() {
            let _ = write!(
                d,
                "{}{:.2} {:.2}",
                if i == 0 { "M" } else { " L" },
                frame.x(time(i)),
                frame.y(*v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<path d="{d}" fill="none" stroke="{}" stroke-width="0.8" stroke-opacity="0.85"/>"#,
            COLORS[k % COLORS.len()]
        );
    }
    legend(&mut svg, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    svg.push_str("</svg>\n");

    let mut header = vec!["time_s".to_string()];
    header.extend(series.iter().map(|(n, _)| n.to_string()));
    let csv = csv_document(
        &header,
        (0..len).map(|i| {
            let mut row = vec![fmt_f64(time(i))];
            row.extend(series.iter().map(|(_, s)| s.get(i).map(|v| fmt_f64(*v)).unwrap_or_default()));
            row
        }),
    );
    Plot { svg, csv }
}

/// Overlaid histograms as probability per bin. The CSV lists
/// `series, bin_left, bin_right, count, probability` for every drawn bar.
pub fn histograms(title: &str, series: &[(&str, &Histogram)]) -> Plot {
    let prob = |h: &Histogram, c: usize| c as f64 / h.total().max(1) as f64;
    let x_top = series.iter().filter_map(|(_, h)| h.edges.last().cloned()).fold(0.0, f64::max);
    let y_top = series
        .iter()
        .flat_map(|(_, h)| h.counts.iter().map(move |&c| prob(h, c)))
        .fold(0.0, f64::max);
    let frame = Frame {
        x_max: nice_ceiling(x_top),
        y_max: nice_ceiling(y_top),
    };
    let mut svg = frame.open(title, "coupling efficiency", "probability");
    let mut rows = Vec::new();
    for (k, (name, h)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        for (i, &c) in h.counts.iter().enumerate() {
            let (l, r) = (h.edges[i], h.edges[i + 1]);
            let p = prob(h, c);
            let (x0, x1, y) = (frame.x(l), frame.x(r), frame.y(p));
            let _ = writeln!(
                svg,
                r#"<rect x="{x0:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.45" stroke="{color}"/>"#,
                x1 - x0,
                frame.y(0.0) - y
            );
            rows.push(vec![name.to_string(), fmt_f64(l), fmt_f64(r), c.to_string(), fmt_f64(p)]);
        }
    }
    legend(&mut svg, &series.iter().map(|(n, _)| *n).collect::<Vec<_>>());
    svg.push_str("</svg>\n");
    let header: Vec<String> = ["series", "bin_left", "bin_right", "count", "probability"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Plot {
        svg,
        csv: csv_document(&header, rows),
    }
}
