//! Study reports and their on-disk forms: errors.csv, report.json, rates.svg,
//! the probe ratio CSV, and per-checkpoint snapshot dumps.
//!
//! All floating-point output uses `{:.16e}` (17 significant digits), which
//! round-trips f64 bit-exactly through `str::parse`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use allencahn_core::probe::ProbeReport;

use crate::error::{Error, Result};

/// One (level, p, q) line of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub level: u32,
    pub h: f64,
    pub tau: f64,
    pub p: f64,
    pub q: f64,
    pub error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fitted slope for one (p, q) pair.
#[derive(Debug, Clone, Serialize)]
pub struct SlopeFit {
    pub p: f64,
    pub q: f64,
    pub slope: f64,
    pub intercept: f64,
    pub pairwise: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    /// "spatial" or "temporal".
    pub kind: String,
    /// "mesh", "exact-heat" or "exact-linear".
    pub reference: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub m_paths: usize,
    pub rows: Vec<StudyRow>,
    pub slopes: Vec<SlopeFit>,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    pub runtime_seconds: f64,
    pub runtime_per_path_seconds: f64,
    /// Effective configuration after CLI overrides.
    pub config: serde_json::Value,
}

impl StudyReport {
    /// Convergence resolution plotted and fitted for this study kind.
    pub fn resolution_of(&self, row: &StudyRow) -> f64 {
        if self.kind == "spatial" {
            row.h
        } else {
            row.tau
        }
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub const ERRORS_CSV_HEADER: &str = "level,h,tau,p,q,error,ci_low,ci_high";

pub fn errors_csv_string(report: &StudyReport) -> String {
    let mut out = String::from(ERRORS_CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.level,
            fmt(r.h),
            fmt(r.tau),
            fmt(r.p),
            fmt(r.q),
            fmt(r.error),
            fmt(r.ci_low),
            fmt(r.ci_high)
        ));
    }
    out
}

pub fn parse_errors_csv(text: &str) -> Result<Vec<StudyRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == ERRORS_CSV_HEADER => {}
        other => {
            return Err(Error::Invalid(format!(
                "bad errors.csv header: {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Invalid(format!("errors.csv line {}: bad field count", i + 2)));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Invalid(format!("errors.csv line {}: bad number {s:?}", i + 2)))
        };
        rows.push(StudyRow {
            level: fields[0]
                .parse()
                .map_err(|_| Error::Invalid(format!("errors.csv line {}: bad level", i + 2)))?,
            h: num(fields[1])?,
            tau: num(fields[2])?,
            p: num(fields[3])?,
            q: num(fields[4])?,
            error: num(fields[5])?,
            ci_low: num(fields[6])?,
            ci_high: num(fields[7])?,
        });
    }
    Ok(rows)
}

/// Writes errors.csv, report.json and rates.svg; returns the paths written.
pub fn emit_report(report: &StudyReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::Invalid("refusing to emit an empty report".into()));
    }
    for r in &report.rows {
        if !(r.error >= 0.0) {
            return Err(Error::Invalid(format!(
                "negative error {} at level {}",
                r.error, r.level
            )));
        }
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let csv_path = dir.join("errors.csv");
    fs::write(&csv_path, errors_csv_string(report))?;
    written.push(csv_path);

    let json_path = dir.join("report.json");
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    fs::write(&json_path, json)?;
    written.push(json_path);

    let svg_path = dir.join("rates.svg");
    fs::write(&svg_path, render_svg(report))?;
    written.push(svg_path);

    Ok(written)
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Log-log plot of error against resolution, one polyline per (p, q) pair,
/// with dashed guide lines of slope 2 and 1/2.
pub fn render_svg(report: &StudyReport) -> String {
    const W: f64 = 720.0;
    const H: f64 = 540.0;
    const ML: f64 = 80.0;
    const MR: f64 = 180.0;
    const MT: f64 = 40.0;
    const MB: f64 = 60.0;

    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for r in &report.rows {
        if !pairs.iter().any(|&(p, q)| p == r.p && q == r.q) {
            pairs.push((r.p, r.q));
        }
    }

    let points: Vec<(f64, f64)> = report
        .rows
        .iter()
        .filter(|r| r.error > 0.0)
        .map(|r| (report.resolution_of(r), r.error))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if points.is_empty() {
        (x0, x1, y0, y1) = (1e-2, 1.0, 1e-2, 1.0);
    }
    let pad = |lo: f64, hi: f64| {
        let (mut a, mut b) = (lo.log10(), hi.log10());
        if b - a < 0.5 {
            let c = 0.5 * (a + b);
            a = c - 0.5;
            b = c + 0.5;
        }
        (a - 0.15, b + 0.15)
    };
    let (lx0, lx1) = pad(x0, x1);
    let (ly0, ly1) = pad(y0, y1);
    let px = |x: f64| ML + (x.log10() - lx0) / (lx1 - lx0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y.log10() - ly0) / (ly1 - ly0) * (H - MT - MB);

    let x_label = if report.kind == "spatial" { "h" } else { "tau" };
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {W} {H}\" \
         font-family=\"monospace\" font-size=\"13\">\n"
    ));
    s.push_str(&format!(
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#333\"/>\n",
        W - ML - MR,
        H - MT - MB
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{} ({} study, {} paths)</text>\n",
        ML + (W - ML - MR) / 2.0,
        MT - 14.0,
        "pathwise uniform error",
        report.kind,
        report.m_paths
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        ML + (W - ML - MR) / 2.0,
        H - 18.0
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{}\" transform=\"rotate(-90 18 {})\" text-anchor=\"middle\">error</text>\n",
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0
    ));

    // Decade ticks.
    let mut d = lx0.ceil() as i64;
    while (d as f64) <= lx1 {
        let x = px(10f64.powi(d as i32));
        s.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{}\" x2=\"{x:.1}\" y2=\"{}\" stroke=\"#ccc\"/>\n",
            MT,
            H - MB
        ));
        s.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">1e{d}</text>\n",
            H - MB + 18.0
        ));
        d += 1;
    }
    d = ly0.ceil() as i64;
    while (d as f64) <= ly1 {
        let y = py(10f64.powi(d as i32));
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#ccc\"/>\n",
            ML,
            W - MR
        ));
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{y:.1}\" text-anchor=\"end\">1e{d}</text>\n",
            ML - 8.0
        ));
        d += 1;
    }

    // Reference-slope guides through the data's upper-right corner.
    if !points.is_empty() {
        for (slope, label) in [(2.0, "slope 2"), (0.5, "slope 1/2")] {
            let (xa, xb) = (10f64.powf(lx0 + 0.1), 10f64.powf(lx1 - 0.1));
            let ya = y1 * (xa / x1).powf(slope);
            let yb = y1 * (xb / x1).powf(slope);
            s.push_str(&format!(
                "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" \
                 stroke=\"#999\" stroke-dasharray=\"6 4\"/>\n",
                px(xa),
                py(ya),
                px(xb),
                py(yb)
            ));
            s.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"#999\">{label}</text>\n",
                px(xb) - 60.0,
                py(yb) - 6.0
            ));
        }
    }

    for (i, &(p, q)) in pairs.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts: Vec<(f64, f64)> = report
            .rows
            .iter()
            .filter(|r| r.p == p && r.q == q && r.error > 0.0)
            .map(|r| (report.resolution_of(r), r.error))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            coords.join(" ")
        ));
        for &(x, y) in &pts {
            s.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                px(x),
                py(y)
            ));
        }
        let slope_txt = report
            .slopes
            .iter()
            .find(|f| f.p == p && f.q == q)
            .map(|f| format!(" slope {:.3}", f.slope))
            .unwrap_or_default();
        s.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">p={p} q={q}{slope_txt}</text>\n",
            W - MR + 12.0,
            MT + 20.0 + 18.0 * i as f64
        ));
    }
    s.push_str("</svg>\n");
    s
}

pub const PROBE_CSV_HEADER: &str = "J,n,p,q,lhs_estimate,rhs_norm,ratio,M_paths,ci_low,ci_high";

pub fn probe_csv_string(report: &ProbeReport) -> String {
    let mut out = String::from(PROBE_CSV_HEADER);
    out.push('\n');
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.steps,
            report.n,
            fmt(report.p),
            fmt(report.q),
            fmt(r.lhs),
            fmt(r.rhs),
            fmt(r.ratio),
            report.m_paths,
            fmt(r.ci_low),
            fmt(r.ci_high)
        ));
    }
    out
}

/// Writes probe.csv and report.json for a probe run.
pub fn emit_probe(
    report: &ProbeReport,
    config: serde_json::Value,
    config_hash: &str,
    runtime_seconds: f64,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::Invalid("refusing to emit an empty probe report".into()));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let csv_path = dir.join("probe.csv");
    fs::write(&csv_path, probe_csv_string(report))?;
    written.push(csv_path);

    let json_path = dir.join("report.json");
    let body = serde_json::json!({
        "kind": "probe",
        "config_hash": config_hash,
        "n": report.n,
        "p": report.p,
        "q": report.q,
        "m_paths": report.m_paths,
        "rows": report.rows.iter().map(|r| serde_json::json!({
            "steps": r.steps,
            "lhs_estimate": r.lhs,
            "rhs_norm": r.rhs,
            "ratio": r.ratio,
            "ci_low": r.ci_low,
            "ci_high": r.ci_high,
            "degenerate": r.degenerate,
        })).collect::<Vec<_>>(),
        "ratio_spread": report.ratio_spread(),
        "runtime_seconds": runtime_seconds,
        "config": config,
    });
    let mut json = serde_json::to_string_pretty(&body)?;
    json.push('\n');
    fs::write(&json_path, json)?;
    written.push(json_path);

    Ok(written)
}

/// One checkpoint as CSV: a `#` header naming (n, J, T, seed, path_index, j)
/// followed by one dof coefficient per line.
pub fn write_snapshot_csv(
    path: &Path,
    n: u32,
    steps: usize,
    t_horizon: f64,
    seed: u64,
    path_index: u64,
    j: usize,
    coeffs: &[f64],
) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(
        f,
        "# n={n},J={steps},T={},seed={seed},path_index={path_index},j={j}",
        fmt(t_horizon)
    )?;
    for c in coeffs {
        writeln!(f, "{}", fmt(*c))?;
    }
    Ok(())
}
