//! Minimal SVG line charts, one polyline per series.

use std::fmt::Write;

use super::table::ResultTable;

const W: f64 = 720.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Axis {
    log: bool,
    lo: f64,
    hi: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        Axis { log, lo, hi }
    }

    fn unit(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        (0..=4)
            .map(|i| {
                let u = i as f64 / 4.0;
                let raw = self.lo + u * (self.hi - self.lo);
                let v = if self.log { 10f64.powf(raw) } else { raw };
                (u, format!("{v:.3e}"))
            })
            .collect()
    }
}

/// Renders the table as a line chart. Columns ending in `_se` are treated as
/// error columns and not drawn as series.
pub fn render(table: &ResultTable) -> String {
    let meta = &table.metadata;
    let series: Vec<usize> = (1..table.columns.len())
        .filter(|&j| !table.columns[j].ends_with("_se"))
        .collect();
    let x = Axis::fit(table.rows.iter().map(|r| r[0]), meta.log_x);
    let y = Axis::fit(
        table.rows.iter().flat_map(|r| series.iter().map(move |&j| r[j])),
        meta.log_y,
    );
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |u: f64| LEFT + u * pw;
    let py = |u: f64| TOP + (1.0 - u) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(&meta.preset));
    let seeds: Vec<String> = meta.seeds.iter().map(u64::to_string).collect();
    let _ = writeln!(
        s,
        "<desc>config_hash={} seeds={}</desc>",
        escape(&meta.config_hash),
        seeds.join(" ")
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (u, label) in x.ticks() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            px(u),
            H - BOTTOM + 18.0,
            escape(&label)
        );
    }
    for (u, label) in y.ticks() {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py(u) + 4.0,
            escape(&label)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 16.0,
        escape(&table.columns[0])
    );
    for (n, &j) in series.iter().enumerate() {
        let color = COLORS[n % COLORS.len()];
        let pts: Vec<String> = table
            .rows
            .iter()
            .filter_map(|r| Some(format!("{:.2},{:.2}", px(x.unit(r[0])?), py(y.unit(r[j])?))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 16.0 + 18.0 * n as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{ly:.2}" font-size="12" fill="{color}">{}</text>"#,
            W - RIGHT + 12.0,
            escape(&table.columns[j])
        );
    }
    s.push_str("</svg>\n");
    s
}
