//! Static SVG of the descent curve: median variance per `d` on log-log axes,
//! the min-max band across trials, and dashed lines at the predicted peaks.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::rate::predicted_peaks_valleys;
use super::sweeps::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq)]
pub struct DescentRecord {
    pub line: u64,
    pub n: usize,
    pub d: usize,
    pub variance: Option<f64>,
    pub failed: bool,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column '{name}'"),
        })
}

/// Parses descent-sweep CSV. Every malformed row is reported with its line.
pub fn parse_descent_csv(bytes: &[u8]) -> Result<Vec<DescentRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let parse_err = |e: csv::Error| Error::Parse {
        line: e.position().map_or(1, |p| p.line()),
        message: e.to_string(),
    };
    let headers = rdr.headers().map_err(parse_err)?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Parse {
            line: 1,
            message: "empty header".into(),
        });
    }
    let (ci_n, ci_d, ci_v, ci_e) = (
        column(&headers, "n")?,
        column(&headers, "d")?,
        column(&headers, "variance_hat")?,
        column(&headers, "error")?,
    );
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(parse_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str, v: &str| Error::Parse {
            line,
            message: format!("invalid {what} '{v}'"),
        };
        let n: usize = field(ci_n).parse().map_err(|_| bad("n", field(ci_n)))?;
        let d: usize = field(ci_d).parse().map_err(|_| bad("d", field(ci_d)))?;
        let v = field(ci_v);
        let variance = if v.is_empty() {
            None
        } else {
            Some(v.parse::<f64>().map_err(|_| bad("variance_hat", v))?)
        };
        out.push(DescentRecord {
            line,
            n,
            d,
            variance,
            failed: !field(ci_e).is_empty(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimSummary {
    pub d: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub trials: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m == 0 {
        return f64::NAN;
    }
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Median, min and max of the positive finite variances per `d` for one `n`.
pub fn summarize(records: &[DescentRecord], n: usize) -> Vec<DimSummary> {
    let mut by_d: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.n == n && !r.failed) {
        if let Some(v) = r.variance.filter(|v| v.is_finite() && *v > 0.0) {
            by_d.entry(r.d).or_default().push(v);
        }
    }
    by_d.into_iter()
        .map(|(d, mut vs)| {
            let med = median(&mut vs);
            DimSummary {
                d,
                median: med,
                min: vs[0],
                max: vs[vs.len() - 1],
                trials: vs.len(),
            }
        })
        .collect()
}

const W: f64 = 800.0;
const H: f64 = 500.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;

struct LogAxis {
    lo: f64,
    hi: f64,
}

impl LogAxis {
    /// Decade-aligned range covering `values`.
    fn covering(values: impl Iterator<Item = f64>, fallback: (f64, f64)) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && *v > 0.0) {
            lo = lo.min(v.log10());
            hi = hi.max(v.log10());
        }
        if !lo.is_finite() {
            lo = fallback.0;
            hi = fallback.1;
        }
        let (mut lo, mut hi) = (lo.floor(), hi.ceil());
        if hi <= lo {
            lo -= 1.0;
            hi += 1.0;
        }
        LogAxis { lo, hi }
    }

    fn frac(&self, v: f64) -> f64 {
        (v.log10() - self.lo) / (self.hi - self.lo)
    }

    fn decades(&self) -> impl Iterator<Item = i32> {
        (self.lo as i32)..=(self.hi as i32)
    }
}

fn tick_label(e: i32) -> String {
    if (0..=6).contains(&e) {
        format!("{}", 10u64.pow(e as u32))
    } else {
        format!("1e{e}")
    }
}

/// Renders the figure. `n` selects the run; peaks and valleys are overlaid
/// for `iota = 1..=iota_max`.
pub fn render_svg(records: &[DescentRecord], n: usize, iota_max: u32) -> Result<String> {
    let summary = summarize(records, n);
    let (peaks, valleys) = predicted_peaks_valleys(n.max(2), iota_max)?;
    let xa = LogAxis::covering(
        summary.iter().map(|s| s.d as f64).chain(peaks.iter().copied()).chain(valleys.iter().copied()),
        (0.0, 1.0),
    );
    let ya = LogAxis::covering(summary.iter().flat_map(|s| [s.min, s.max]), (-1.0, 1.0));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |d: f64| LEFT + xa.frac(d) * pw;
    let py = |v: f64| TOP + (1.0 - ya.frac(v)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, "<!-- ridgeless descent plot, schema_version={SCHEMA_VERSION} -->");
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="28" font-family="sans-serif" font-size="16" text-anchor="middle">median variance vs d (n = {n})</text>"#,
        LEFT + pw / 2.0
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    for e in xa.decades() {
        let x = px(10f64.powi(e));
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
            TOP + ph,
            TOP + ph + 6.0,
            TOP + ph + 20.0,
            tick_label(e)
        );
    }
    for e in ya.decades() {
        let y = py(10f64.powi(e));
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            LEFT - 9.0,
            y + 4.0,
            tick_label(e)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle">d (log scale)</text>"#,
        LEFT + pw / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 20 {:.2})">variance (log scale)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, p) in peaks.iter().enumerate() {
        let x = px(*p);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}" stroke="#c0392b" stroke-dasharray="6,4"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="#c0392b">peak {}</text>"##,
            TOP + ph,
            x + 3.0,
            TOP + 12.0,
            i + 1
        );
    }
    for v in &valleys {
        let x = px(*v);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{TOP:.2}" x2="{x:.2}" y2="{:.2}" stroke="#2471a3" stroke-dasharray="2,3"/>"##,
            TOP + ph
        );
    }

    if !summary.is_empty() {
        let mut band = String::new();
        for p in &summary {
            let _ = write!(band, "{:.2},{:.2} ", px(p.d as f64), py(p.max));
        }
        for p in summary.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(p.d as f64), py(p.min));
        }
        let _ = writeln!(
            s,
            r##"<polygon points="{}" fill="#7f8c8d" fill-opacity="0.3" stroke="none"/>"##,
            band.trim_end()
        );
        let line: Vec<String> = summary
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.d as f64), py(p.median)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        for p in &summary {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="black"/>"#,
                px(p.d as f64),
                py(p.median)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Reads `csv_path` and writes the figure. Without `n`, the first data row's
/// `n` is used; an empty CSV then needs `n` explicitly.
pub fn emit_plot(csv_path: &Path, out_svg: &Path, n: Option<usize>, iota_max: u32) -> Result<()> {
    let bytes = std::fs::read(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let records = parse_descent_csv(&bytes)?;
    let n = n
        .or_else(|| records.first().map(|r| r.n))
        .ok_or_else(|| Error::usage("empty CSV: pass the sample size for the overlay"))?;
    let svg = render_svg(&records, n, iota_max)?;
    std::fs::write(out_svg, svg).map_err(|e| Error::io(out_svg, e))
}
