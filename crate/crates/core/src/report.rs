//! CSV and SVG artifacts for benchmark reports. Output is a pure function of
//! the report, so identical reports give byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::bench::{aggregate, best_by_cell, convergence_gaps, AggregateRow, ErrorReport, Method};
use crate::error::{Error, Result};
use crate::io;
use crate::model::PriorKind;

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn results_csv(report: &ErrorReport) -> String {
    let mut s = String::from("method,prior_kind,n_t,alpha,alpha2,repetition,rel_error\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.method,
            r.prior_kind.as_str(),
            r.n_t,
            r.alpha,
            opt(r.alpha2),
            r.repetition,
            r.rel_error
        );
    }
    s
}

pub fn failures_csv(report: &ErrorReport) -> String {
    let mut s = String::from("method,prior_kind,n_t,alpha,alpha2,repetition,message\n");
    for f in &report.failures {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},\"{}\"",
            f.method,
            f.prior_kind.as_str(),
            f.n_t,
            f.alpha,
            opt(f.alpha2),
            f.repetition,
            f.message.replace('"', "'")
        );
    }
    s
}

pub fn aggregate_csv(aggregates: &[AggregateRow]) -> String {
    let mut s = String::from(
        "method,prior_kind,n_t,alpha,alpha2,mean_rel_error,std_rel_error,min_rel_error,max_rel_error,count\n",
    );
    for a in aggregates {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            a.method,
            a.prior_kind.as_str(),
            a.n_t,
            a.alpha,
            opt(a.alpha2),
            a.mean,
            a.std,
            a.min,
            a.max,
            a.count
        );
    }
    s
}

/// Mean error over (size, α); the naive map's α2 is minimised out.
pub fn surface_csv(aggregates: &[AggregateRow]) -> String {
    let mut cells: BTreeMap<(String, PriorKind, usize, u64), (f64, f64)> = BTreeMap::new();
    for a in aggregates {
        let key = (a.method.to_string(), a.prior_kind, a.n_t, a.alpha.to_bits());
        cells
            .entry(key)
            .and_modify(|(_, best)| *best = best.min(a.mean))
            .or_insert((a.alpha, a.mean));
    }
    let mut s = String::from("method,prior_kind,n_t,alpha,mean_rel_error\n");
    for ((method, prior, n_t, _), (alpha, mean)) in &cells {
        let _ = writeln!(s, "{method},{},{n_t},{alpha},{mean}", prior.as_str());
    }
    s
}

pub fn convergence_csv(aggregates: &[AggregateRow]) -> String {
    let mut s = String::from("method,prior_kind,n_t,best_error,tikhonov_error,gap\n");
    for c in convergence_gaps(aggregates) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            c.method,
            c.prior_kind.as_str(),
            c.n_t,
            c.best_error,
            c.tikhonov_error,
            c.gap
        );
    }
    s
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 260.0;
const MARGIN: f64 = 50.0;

fn color(m: Method) -> &'static str {
    match m {
        Method::Ndnn => "#d62728",
        Method::McdnnUnweighted => "#ff7f0e",
        Method::Mcdnn => "#1f77b4",
        Method::Tikhonov => "#2ca02c",
    }
}

/// One panel per prior kind: best mean relative error against training size.
pub fn report_svg(aggregates: &[AggregateRow]) -> String {
    let best = best_by_cell(aggregates);
    let priors: Vec<PriorKind> = {
        let mut p: Vec<PriorKind> = best.iter().map(|r| r.prior_kind).collect();
        p.sort_unstable();
        p.dedup();
        p
    };
    let sizes: Vec<usize> = {
        let mut s: Vec<usize> = best.iter().map(|r| r.n_t).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let (lo_n, hi_n) = (sizes[0] as f64, *sizes.last().expect("nonempty") as f64);
    let hi_e = best.iter().map(|r| r.mean).fold(0.0, f64::max).max(1e-12) * 1.05;

    let width = MARGIN + priors.len() as f64 * (PANEL_W + MARGIN);
    let height = PANEL_H + 2.0 * MARGIN + 20.0 * Method::ALL.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, prior) in priors.iter().enumerate() {
        let x0 = MARGIN + p as f64 * (PANEL_W + MARGIN);
        let y0 = MARGIN;
        let px = |n: f64| {
            if hi_n > lo_n {
                x0 + (n - lo_n) / (hi_n - lo_n) * PANEL_W
            } else {
                x0 + PANEL_W / 2.0
            }
        };
        let py = |e: f64| y0 + PANEL_H - e / hi_e * PANEL_H;
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.1}" y="{y0:.1}" width="{PANEL_W:.1}" height="{PANEL_H:.1}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{} prior</text>"#,
            x0 + PANEL_W / 2.0,
            y0 - 10.0,
            prior.as_str()
        );
        for &n in &sizes {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{n}</text>"#,
                px(n as f64),
                y0 + PANEL_H + 15.0
            );
        }
        for k in 0..=4 {
            let e = hi_e * k as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{e:.3}</text>"#,
                x0 - 4.0,
                py(e) + 4.0
            );
        }
        for method in Method::ALL {
            let pts: Vec<String> = best
                .iter()
                .filter(|r| r.prior_kind == *prior && r.method == method)
                .map(|r| format!("{:.2},{:.2}", px(r.n_t as f64), py(r.mean)))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
                pts.join(" "),
                color(method)
            );
        }
    }
    let legend_y = MARGIN + PANEL_H + 35.0;
    for (k, method) in Method::ALL.iter().enumerate() {
        let y = legend_y + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{MARGIN:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="2"/>"#,
            MARGIN + 20.0,
            color(*method)
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{method}</text>"#, MARGIN + 26.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}">training size vs. mean relative error at the swept-optimal hyperparameters</text>"#,
        MARGIN + 120.0,
        legend_y + 4.0
    );
    s.push_str("</svg>\n");
    s
}

pub const REPORT_FILES: [&str; 6] = [
    "results.csv",
    "aggregate.csv",
    "surface.csv",
    "convergence.csv",
    "failures.csv",
    "report.svg",
];

/// Writes every report artifact into `dir` and returns their paths.
pub fn emit_report(report: &ErrorReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.is_empty() {
        return Err(Error::invalid("cannot emit an empty report"));
    }
    io::ensure_dir(dir)?;
    let aggregates = aggregate(report);
    let contents = [
        results_csv(report),
        aggregate_csv(&aggregates),
        surface_csv(&aggregates),
        convergence_csv(&aggregates),
        failures_csv(report),
        report_svg(&aggregates),
    ];
    let mut paths = Vec::new();
    for (name, text) in REPORT_FILES.iter().zip(contents) {
        let path = dir.join(name);
        io::write_text(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::ResultRow;

    fn row(method: Method, n_t: usize, alpha: f64, rep: usize, err: f64) -> ResultRow {
        ResultRow {
            method,
            prior_kind: PriorKind::Dirichlet,
            n_t,
            alpha,
            alpha2: (method == Method::Ndnn).then_some(0.5),
            repetition: rep,
            rel_error: err,
        }
    }

    #[test]
    fn empty_report_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&ErrorReport::default(), dir.path()).is_err());
    }

    #[test]
    fn two_rows_give_header_plus_two() {
        let report = ErrorReport {
            rows: vec![row(Method::Mcdnn, 30, 1.0, 0, 0.25), row(Method::Ndnn, 30, 0.1, 0, 0.5)],
            failures: vec![],
        };
        let csv = results_csv(&report);
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().nth(2).unwrap(), "ndnn,dirichlet,30,0.1,0.5,0,0.5");
        assert_eq!(csv.lines().nth(1).unwrap(), "mcdnn,dirichlet,30,1,,0,0.25");
    }

    #[test]
    fn files_are_byte_stable() {
        let report = ErrorReport {
            rows: vec![
                row(Method::Mcdnn, 30, 1.0, 0, 0.25),
                row(Method::Mcdnn, 60, 1.0, 0, 0.2),
                row(Method::Tikhonov, 30, 1.0, 0, 0.3),
                row(Method::Tikhonov, 60, 1.0, 0, 0.3),
            ],
            failures: vec![],
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = emit_report(&report, a.path()).unwrap();
        let pb = emit_report(&report, b.path()).unwrap();
        assert_eq!(pa.len(), REPORT_FILES.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let conv = std::fs::read_to_string(a.path().join("convergence.csv")).unwrap();
        assert!(conv.contains("mcdnn,dirichlet,30,0.25,0.3,"));
    }

    #[test]
    fn surface_minimises_alpha2() {
        let mut a = row(Method::Ndnn, 30, 0.1, 0, 0.5);
        let mut b = a;
        a.alpha2 = Some(1.0);
        b.alpha2 = Some(2.0);
        b.rel_error = 0.4;
        let report = ErrorReport {
            rows: vec![a, b],
            failures: vec![],
        };
        let csv = surface_csv(&aggregate(&report));
        assert_eq!(csv.lines().nth(1).unwrap(), "ndnn,dirichlet,30,0.1,0.4");
        assert_eq!(csv.lines().count(), 2);
    }
}
