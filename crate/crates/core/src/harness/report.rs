//! Report serialization. Floats are rounded to 9 significant digits and JSON
//! keys are sorted, so a fixed report always produces the same bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::harness::experiment::ExperimentReport;

pub const SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    CsvBundle,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" | "csv-bundle" => Ok(ReportFormat::CsvBundle),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

/// `v` rounded to [`SIGNIFICANT_DIGITS`] significant digits.
pub fn round_significant(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, v).parse().expect("formatted float parses")
}

/// Shortest form of the rounded value; exponent notation outside `[1e-4, 1e15)`.
pub fn format_float(v: f64) -> String {
    let r = round_significant(v);
    let a = r.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{r:e}")
    } else {
        r.to_string()
    }
}

fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r = round_significant(n.as_f64().expect("f64 number"));
            *v = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

pub fn report_to_json(report: &ExperimentReport) -> Result<String> {
    let mut value = serde_json::to_value(report)?;
    round_value(&mut value);
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn report_from_json(text: &str) -> Result<ExperimentReport> {
    Ok(serde_json::from_str(text)?)
}

pub fn import_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    report_from_json(&text)
}

fn opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `report.json`, or for the CSV bundle `summary.csv`, `runs.csv`,
/// `traces.csv`, `omega.csv` (m x m, no header) and `config.toml`.
/// Returns the files written.
pub fn export_report(report: &ExperimentReport, dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            write_file(&path, report_to_json(report)?.as_bytes())?;
            Ok(vec![path])
        }
        ReportFormat::CsvBundle => {
            let mut written = Vec::new();

            let path = dir.join("summary.csv");
            let mut w = csv_writer(&path)?;
            w.write_record(["mode", "ratio", "eta", "completed", "failed", "metric", "metric_mean", "metric_std", "loss_mean", "loss_std"])?;
            for r in &report.summary {
                w.write_record([
                    r.mode.name().to_string(),
                    format_float(r.ratio),
                    format_float(r.eta),
                    r.completed.to_string(),
                    r.failed.to_string(),
                    report.metric.clone(),
                    opt(r.metric_mean),
                    opt(r.metric_std),
                    opt(r.loss_mean),
                    opt(r.loss_std),
                ])?;
            }
            finish(w, &path)?;
            written.push(path);

            let path = dir.join("runs.csv");
            let mut w = csv_writer(&path)?;
            w.write_record([
                "mode", "ratio", "eta", "rep", "seed", "targets", "sources", "target_test_metric", "target_train_loss", "final_gap",
                "rounds", "bytes_up", "bytes_down", "error",
            ])?;
            let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
            for r in &report.runs {
                w.write_record([
                    r.mode.name().to_string(),
                    format_float(r.ratio),
                    format_float(r.eta),
                    r.rep.to_string(),
                    r.seed.to_string(),
                    join(&r.targets),
                    join(&r.sources),
                    opt(r.target_test_metric),
                    opt(r.target_train_loss),
                    opt(r.final_gap),
                    r.rounds.to_string(),
                    r.bytes_up.to_string(),
                    r.bytes_down.to_string(),
                    r.error.clone().unwrap_or_default(),
                ])?;
            }
            finish(w, &path)?;
            written.push(path);

            let path = dir.join("traces.csv");
            let mut w = csv_writer(&path)?;
            w.write_record([
                "mode", "ratio", "eta", "rep", "iteration", "target_train_loss", "target_test_metric", "primal", "dual", "gap", "feature_step",
            ])?;
            for r in &report.runs {
                for t in &r.trace {
                    w.write_record([
                        r.mode.name().to_string(),
                        format_float(r.ratio),
                        format_float(r.eta),
                        r.rep.to_string(),
                        t.iteration.to_string(),
                        format_float(t.target_train_loss),
                        opt(t.target_test_metric),
                        format_float(t.primal),
                        format_float(t.dual),
                        format_float(t.gap),
                        format_float(t.feature_step),
                    ])?;
                }
            }
            finish(w, &path)?;
            written.push(path);

            let path = dir.join("omega.csv");
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .from_writer(fs::File::create(&path).map_err(|e| Error::io(&path, e))?);
            for row in &report.relationship {
                w.write_record(row.iter().map(|&v| format_float(v)))?;
            }
            finish(w, &path)?;
            written.push(path);

            let path = dir.join("config.toml");
            write_file(&path, report.config.to_toml()?.as_bytes())?;
            written.push(path);
            Ok(written)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::{AttackMode, TraceRecord};
    use crate::harness::config::ExperimentConfig;
    use crate::harness::experiment::{ExperimentKind, RunRecord, SummaryRow};
    use proptest::prelude::*;

    fn sample_report() -> ExperimentReport {
        let trace = vec![TraceRecord {
            iteration: 0,
            target_train_loss: 1.0 / 3.0,
            target_test_metric: None,
            primal: 2.0_f64.sqrt(),
            dual: -1.25,
            gap: 1e-7 / 3.0,
            feature_step: 0.0,
        }];
        ExperimentReport {
            experiment: ExperimentKind::Compare,
            metric: "error_percent".into(),
            config: ExperimentConfig::default(),
            summary: vec![SummaryRow {
                mode: AttackMode::Direct,
                ratio: 0.2,
                eta: 100.0,
                completed: 1,
                failed: 0,
                metric_mean: Some(100.0 / 7.0),
                metric_std: Some(0.0),
                loss_mean: None,
                loss_std: None,
            }],
            runs: vec![RunRecord {
                mode: AttackMode::Direct,
                ratio: 0.2,
                eta: 100.0,
                rep: 0,
                seed: 11,
                targets: vec![0, 2],
                sources: vec![0, 2],
                target_test_metric: Some(100.0 / 7.0),
                target_train_loss: Some(0.1),
                final_gap: Some(3e-9),
                rounds: 10,
                bytes_up: 640,
                bytes_down: 800,
                trace,
                error: None,
            }],
            relationship: vec![vec![0.6, 0.4 / 3.0], vec![0.4 / 3.0, 0.4]],
            bytes_up: 640,
            bytes_down: 800,
        }
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(format_float(1.0 / 3.0), "0.333333333");
        assert_eq!(format_float(100.0), "100");
        assert_eq!(format_float(-2.0f64.sqrt() * 1e-20), "-1.41421356e-20");
        assert_eq!(round_significant(0.0), 0.0);
    }

    proptest! {
        #[test]
        fn rounding_is_idempotent(v in -1e12f64..1e12) {
            let r = round_significant(v);
            prop_assert_eq!(round_significant(r), r);
            prop_assert!((r - v).abs() <= 1e-8 * v.abs());
        }
    }

    #[test]
    fn json_round_trip_is_stable() {
        let report = sample_report();
        let text = report_to_json(&report).unwrap();
        let back = report_from_json(&text).unwrap();
        assert_eq!(report_to_json(&back).unwrap(), text);
        assert_eq!(back.runs[0].targets, report.runs[0].targets);
        assert_eq!(back.summary[0].metric_mean, Some(14.2857143));
        assert_eq!(back.runs[0].trace[0].target_test_metric, None);
    }

    #[test]
    fn json_keys_are_sorted() {
        let text = report_to_json(&sample_report()).unwrap();
        let pos = |k: &str| text.find(&format!("\"{k}\"")).unwrap();
        assert!(pos("bytes_down") < pos("bytes_up"));
        assert!(pos("bytes_up") < pos("config"));
    }

    #[test]
    fn csv_bundle_layout() {
        let dir = tempfile::tempdir().unwrap();
        let files = export_report(&sample_report(), dir.path(), ReportFormat::CsvBundle).unwrap();
        assert_eq!(files.len(), 5);
        let omega = fs::read_to_string(dir.path().join("omega.csv")).unwrap();
        let rows: Vec<Vec<f64>> =
            omega.lines().map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.len() == 2));
        assert_eq!(rows[0][1], rows[1][0]);
        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(summary.lines().nth(1).unwrap(), "direct,0.2,100,1,0,error_percent,14.2857143,0,,");
        let config = ExperimentConfig::load(&dir.path().join("config.toml")).unwrap();
        assert_eq!(config, ExperimentConfig::default());
    }

    #[test]
    fn export_is_byte_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for fmt in [ReportFormat::Json, ReportFormat::CsvBundle] {
            let fa = export_report(&sample_report(), a.path(), fmt).unwrap();
            let fb = export_report(&sample_report(), b.path(), fmt).unwrap();
            for (x, y) in fa.iter().zip(&fb) {
                assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
            }
        }
    }

    #[test]
    fn io_errors_carry_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let err = export_report(&sample_report(), &blocker.join("sub"), ReportFormat::Json).unwrap_err();
        assert!(err.to_string().contains("file"));
    }
}
