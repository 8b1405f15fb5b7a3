//! CSV, JSON and plot-script files for a finished sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;

use super::{ExperimentReport, ReportRow, TrialRow};

const REPORT_TAG: &str = "# psd-sense report v1";
const TRIALS_TAG: &str = "# psd-sense trials v1";
const REPORT_HEADER: &str =
    "m_bases,estimator,mean_infidelity,std_infidelity,mean_frobenius,mean_iterations,mean_runtime_seconds";
const TRIALS_HEADER: &str = "trial,m_bases,estimator,infidelity,frobenius,iterations,runtime_seconds,converged";

pub fn format_report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_TAG}\n{REPORT_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.m_bases,
            r.estimator,
            r.mean_infidelity,
            r.std_infidelity,
            r.mean_frobenius,
            r.mean_iterations,
            r.mean_runtime_seconds
        )
        .expect("writing to a String");
    }
    out
}

pub fn format_trials_csv(trials: &[TrialRow]) -> String {
    let mut out = format!("{TRIALS_TAG}\n{TRIALS_HEADER}\n");
    for t in trials {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t.trial, t.m_bases, t.estimator, t.infidelity, t.frobenius, t.iterations, t.runtime_seconds, t.converged
        )
        .expect("writing to a String");
    }
    out
}

/// Splits a versioned CSV into data lines, checking the tag and header.
fn data_lines<'a>(text: &'a str, tag: &str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == tag => {}
        _ => return Err(Error::Parse(format!("missing '{tag}' line"))),
    }
    match lines.next() {
        Some((_, l)) if l.trim() == header => {}
        _ => return Err(Error::Parse(format!("missing header '{header}'"))),
    }
    let width = header.split(',').count();
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split(',').map(str::trim).collect();
            if fields.len() != width {
                return Err(Error::Parse(format!("line {}: expected {width} fields, got {}", i + 1, fields.len())));
            }
            Ok((i + 1, fields))
        })
        .collect()
}

fn field<T: std::str::FromStr>(line: usize, name: &str, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("line {line}: bad {name} '{s}'")))
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    data_lines(text, REPORT_TAG, REPORT_HEADER)?
        .into_iter()
        .map(|(i, f)| {
            Ok(ReportRow {
                m_bases: field(i, "m_bases", f[0])?,
                estimator: f[1].parse::<EstimatorKind>()?,
                mean_infidelity: field(i, "mean_infidelity", f[2])?,
                std_infidelity: field(i, "std_infidelity", f[3])?,
                mean_frobenius: field(i, "mean_frobenius", f[4])?,
                mean_iterations: field(i, "mean_iterations", f[5])?,
                mean_runtime_seconds: field(i, "mean_runtime_seconds", f[6])?,
            })
        })
        .collect()
}

pub fn parse_trials_csv(text: &str) -> Result<Vec<TrialRow>> {
    data_lines(text, TRIALS_TAG, TRIALS_HEADER)?
        .into_iter()
        .map(|(i, f)| {
            Ok(TrialRow {
                trial: field(i, "trial", f[0])?,
                m_bases: field(i, "m_bases", f[1])?,
                estimator: f[2].parse::<EstimatorKind>()?,
                infidelity: field(i, "infidelity", f[3])?,
                frobenius: field(i, "frobenius", f[4])?,
                iterations: field(i, "iterations", f[5])?,
                runtime_seconds: field(i, "runtime_seconds", f[6])?,
                converged: field(i, "converged", f[7])?,
            })
        })
        .collect()
}

/// Gnuplot script drawing mean infidelity against `m`, one curve per estimator, log y-axis.
pub fn plot_script(rows: &[ReportRow]) -> String {
    let mut estimators: Vec<EstimatorKind> = rows.iter().map(|r| r.estimator).collect();
    estimators.sort();
    estimators.dedup();
    let mut out = String::new();
    out.push_str("# gnuplot script; run with: gnuplot -p plot.gp\n");
    out.push_str("set datafile separator ','\n");
    out.push_str("set logscale y\n");
    out.push_str("set format y '10^{%L}'\n");
    out.push_str("set xlabel 'number of bases m'\n");
    out.push_str("set ylabel 'mean infidelity'\n");
    out.push_str("set key outside right\n");
    let curves: Vec<String> = estimators
        .iter()
        .map(|e| {
            format!(
                "'report.csv' every ::1 using 1:(strcol(2) eq '{e}' && $3 > 0 ? $3 : 1/0) with linespoints title '{e}'"
            )
        })
        .collect();
    if curves.is_empty() {
        return out;
    }
    writeln!(out, "plot {}", curves.join(", \\\n     ")).expect("writing to a String");
    out
}

/// Writes `report.csv`, `trials.csv`, `config.json` and `plot.gp` into `dir`
/// and returns their paths.
pub fn emit_outputs(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.rows.is_empty() {
        return Err(Error::Domain("refusing to write an empty report".into()));
    }
    fs::create_dir_all(dir)?;
    let files = [
        ("report.csv", format_report_csv(&report.rows)),
        ("trials.csv", format_trials_csv(&report.trials)),
        ("config.json", report.config.to_json() + "\n"),
        ("plot.gp", plot_script(&report.rows)),
    ];
    let mut paths = Vec::new();
    for (name, contents) in files {
        let path = dir.join(name);
        fs::write(&path, contents)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{aggregate, ExperimentConfig};

    fn trials() -> Vec<TrialRow> {
        (0..3)
            .flat_map(|trial| {
                [4usize, 8].into_iter().map(move |m| TrialRow {
                    trial,
                    m_bases: m,
                    estimator: EstimatorKind::NnlsPsd,
                    infidelity: 0.1 / (trial + m) as f64,
                    frobenius: 0.3 / (trial + m) as f64,
                    iterations: 10 + trial,
                    runtime_seconds: 0.0,
                    converged: true,
                })
            })
            .collect()
    }

    #[test]
    fn csv_round_trips() {
        let t = trials();
        assert_eq!(parse_trials_csv(&format_trials_csv(&t)).unwrap(), t);
        let rows = aggregate(&t);
        assert_eq!(parse_report_csv(&format_report_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(parse_report_csv("m_bases\n").is_err());
        let bad = format!("{REPORT_TAG}\n{REPORT_HEADER}\n4,nnls_psd,0.1\n");
        assert!(parse_report_csv(&bad).is_err());
        let bad = format!("{REPORT_TAG}\n{REPORT_HEADER}\n4,foo,1,1,1,1,1\n");
        assert!(parse_report_csv(&bad).is_err());
    }

    #[test]
    fn empty_report_is_an_error() {
        let report = ExperimentReport {
            config: ExperimentConfig::default(),
            rows: vec![],
            trials: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_outputs(&report, dir.path()).is_err());
    }

    #[test]
    fn writes_all_files() {
        let t = trials();
        let report = ExperimentReport {
            config: ExperimentConfig::default(),
            rows: aggregate(&t),
            trials: t,
        };
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_outputs(&report, &dir.path().join("nested")).unwrap();
        assert_eq!(paths.len(), 4);
        let plot = std::fs::read_to_string(&paths[3]).unwrap();
        assert!(plot.contains("set logscale y"));
        assert!(plot.contains("nnls_psd"));
    }
}
