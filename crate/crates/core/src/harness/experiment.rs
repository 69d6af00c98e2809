//! Repeated attack experiments: mode comparisons and parameter sweeps.
//!
//! Every repetition draws its own seed; all grid points of a repetition share
//! the federation, the target set and the learned `Omega`, so modes are
//! compared on paired data.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{at2fl_run, build_attack_spec, AttackMode, TraceRecord};
use crate::data::Federation;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::losses::LossKind;
use crate::model::{update_omega, InjectedSet, TrainingData};
use crate::solver::{solve_lower, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Train,
    Attack,
    Compare,
    SweepRatio,
    SweepEta,
}

/// One grid cell: a mode at a given injection ratio and step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub mode: AttackMode,
    pub ratio: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: AttackMode,
    pub ratio: f64,
    pub eta: f64,
    pub rep: usize,
    pub seed: u64,
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
    pub target_test_metric: Option<f64>,
    pub target_train_loss: Option<f64>,
    pub final_gap: Option<f64>,
    pub rounds: usize,
    pub bytes_up: u64,
    pub bytes_down: u64,
    /// Outer-iteration records followed by the record after the final solve.
    pub trace: Vec<TraceRecord>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: AttackMode,
    pub ratio: f64,
    pub eta: f64,
    pub completed: usize,
    pub failed: usize,
    pub metric_mean: Option<f64>,
    pub metric_std: Option<f64>,
    pub loss_mean: Option<f64>,
    pub loss_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    /// `error_percent` for classification, `rmse` for regression.
    pub metric: String,
    pub config: ExperimentConfig,
    pub summary: Vec<SummaryRow>,
    pub runs: Vec<RunRecord>,
    /// `S / tr(S)` of the clean model of the first completed repetition.
    pub relationship: Vec<Vec<f64>>,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

impl ExperimentReport {
    pub fn row(&self, mode: AttackMode) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.mode == mode)
    }

    pub fn runs_of(&self, point: GridPoint) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.mode == point.mode && r.ratio == point.ratio && r.eta == point.eta)
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

/// Clean training with `Omega` refreshes, used to fix `Omega` before attacking.
/// Returns the learned penalty matrix (or `I/m` when `relationship_rounds == 0`).
pub fn learn_omega(fed: &Federation, config: &ExperimentConfig, rep: usize) -> Result<DMatrix<f64>> {
    let m = fed.nodes();
    let start = DMatrix::identity(m, m) / m as f64;
    if config.relationship_rounds == 0 {
        return Ok(start);
    }
    let empty: Vec<InjectedSet> = (0..m).map(|l| InjectedSet::empty(l, fed.dim())).collect();
    let data = TrainingData::new(&fed.train, &empty, fed.loss)?;
    let solver = SolverConfig {
        rounds: config.relationship_rounds,
        omega_update_every: config.relationship_update_every,
        gap_tolerance: 0.0,
        ..config.solver_config(rep)
    };
    Ok(solve_lower(&data, &solver, start)?.state.omega)
}

struct RepContext {
    fed: Federation,
    omega: DMatrix<f64>,
}

fn prepare(config: &ExperimentConfig, rep: usize) -> Result<RepContext> {
    let fed = config.federation_source(rep).build()?;
    let omega = learn_omega(&fed, config, rep)?;
    Ok(RepContext { fed, omega })
}

fn failed_run(point: GridPoint, rep: usize, seed: u64, err: &Error) -> RunRecord {
    RunRecord {
        mode: point.mode,
        ratio: point.ratio,
        eta: point.eta,
        rep,
        seed,
        targets: Vec::new(),
        sources: Vec::new(),
        target_test_metric: None,
        target_train_loss: None,
        final_gap: None,
        rounds: 0,
        bytes_up: 0,
        bytes_down: 0,
        trace: Vec::new(),
        error: Some(err.to_string()),
    }
}

fn run_point(ctx: &RepContext, config: &ExperimentConfig, point: GridPoint, rep: usize) -> Result<(RunRecord, DMatrix<f64>)> {
    let spec = build_attack_spec(&config.attack_config(point.mode, point.ratio, point.eta, rep), &ctx.fed)?;
    let out = at2fl_run(&ctx.fed, &spec, &config.solver_config(rep), Some(ctx.omega.clone()))?;
    let mut trace = out.trace.records;
    trace.push(out.trace.final_record.clone());
    let record = RunRecord {
        mode: point.mode,
        ratio: point.ratio,
        eta: point.eta,
        rep,
        seed: config.rep_seed(rep),
        targets: spec.targets,
        sources: spec.sources,
        target_test_metric: out.trace.final_record.target_test_metric,
        target_train_loss: Some(out.trace.final_record.target_train_loss),
        final_gap: Some(out.trace.final_record.gap),
        rounds: out.trace.rounds,
        bytes_up: out.trace.bytes_up,
        bytes_down: out.trace.bytes_down,
        trace,
        error: None,
    };
    Ok((record, out.state.w))
}

fn metric_name(config: &ExperimentConfig) -> &'static str {
    match config.federation_source(0).loss() {
        LossKind::Hinge => "error_percent",
        LossKind::LeastSquares => "rmse",
    }
}

/// Runs every grid point for every repetition. A failed cell is recorded in
/// its [`RunRecord`]; the call fails only if every cell fails.
pub fn run_grid(config: &ExperimentConfig, kind: ExperimentKind, points: &[GridPoint]) -> Result<ExperimentReport> {
    config.validate()?;
    if points.is_empty() {
        return Err(Error::Config("experiment has no grid points".into()));
    }
    let contexts: Vec<Result<RepContext>> = (0..config.reps).into_par_iter().map(|rep| prepare(config, rep)).collect();

    let jobs: Vec<(usize, usize)> = (0..config.reps).flat_map(|rep| (0..points.len()).map(move |p| (rep, p))).collect();
    let results: Vec<(RunRecord, Option<DMatrix<f64>>)> = jobs
        .par_iter()
        .map(|&(rep, p)| {
            let point = points[p];
            let seed = config.rep_seed(rep);
            let outcome = contexts[rep]
                .as_ref()
                .map_err(|e| Error::Validation(format!("repetition setup failed: {e}")))
                .and_then(|ctx| run_point(ctx, config, point, rep));
            match outcome {
                Ok((record, w)) => {
                    log::info!("{} ratio={} eta={} rep={rep}: metric {:?}", point.mode, point.ratio, point.eta, record.target_test_metric);
                    (record, Some(w))
                }
                Err(e) => {
                    log::warn!("{} ratio={} eta={} rep={rep} failed: {e}", point.mode, point.ratio, point.eta);
                    (failed_run(point, rep, seed, &e), None)
                }
            }
        })
        .collect();

    if results.iter().all(|(r, _)| !r.succeeded()) {
        let first = results[0].0.error.clone().unwrap_or_default();
        return Err(Error::Validation(format!("every repetition failed; first error: {first}")));
    }

    let relationship = results
        .iter()
        .filter(|(r, _)| r.mode == AttackMode::None)
        .find_map(|(_, w)| w.as_ref())
        .or_else(|| results.iter().find_map(|(_, w)| w.as_ref()))
        .map(|w| {
            let s = update_omega(w, config.omega_epsilon);
            s.row_iter().map(|r| r.iter().copied().collect()).collect()
        })
        .unwrap_or_default();

    let runs: Vec<RunRecord> = results.into_iter().map(|(r, _)| r).collect();
    let summary = points
        .iter()
        .map(|&point| {
            let cell: Vec<&RunRecord> =
                runs.iter().filter(|r| r.mode == point.mode && r.ratio == point.ratio && r.eta == point.eta).collect();
            let metrics: Vec<f64> = cell.iter().filter_map(|r| r.target_test_metric).collect();
            let losses: Vec<f64> = cell.iter().filter_map(|r| r.target_train_loss).collect();
            let m = mean_std(&metrics);
            let l = mean_std(&losses);
            SummaryRow {
                mode: point.mode,
                ratio: point.ratio,
                eta: point.eta,
                completed: cell.iter().filter(|r| r.succeeded()).count(),
                failed: cell.iter().filter(|r| !r.succeeded()).count(),
                metric_mean: m.map(|v| v.0),
                metric_std: m.map(|v| v.1),
                loss_mean: l.map(|v| v.0),
                loss_std: l.map(|v| v.1),
            }
        })
        .collect();
    let bytes_up = runs.iter().map(|r| r.bytes_up).sum();
    let bytes_down = runs.iter().map(|r| r.bytes_down).sum();
    Ok(ExperimentReport {
        experiment: kind,
        metric: metric_name(config).to_string(),
        config: config.clone(),
        summary,
        runs,
        relationship,
        bytes_up,
        bytes_down,
    })
}

fn with_baseline(mut modes: Vec<AttackMode>) -> Vec<AttackMode> {
    if !modes.contains(&AttackMode::None) {
        modes.insert(0, AttackMode::None);
    }
    modes
}

/// Each mode in `modes` (plus the no-attack baseline) at the configured ratio and step size.
pub fn run_comparison(config: &ExperimentConfig, modes: &[AttackMode]) -> Result<ExperimentReport> {
    let kind = match modes {
        [AttackMode::None] => ExperimentKind::Train,
        _ => ExperimentKind::Compare,
    };
    let points: Vec<GridPoint> = with_baseline(modes.to_vec())
        .into_iter()
        .map(|mode| GridPoint { mode, ratio: config.injection_ratio, eta: config.step_eta1 })
        .collect();
    run_grid(config, kind, &points)
}

/// Every sweep mode at every ratio, plus the no-attack baseline.
pub fn sweep_ratio(config: &ExperimentConfig, ratios: &[f64]) -> Result<ExperimentReport> {
    let mut points = vec![GridPoint { mode: AttackMode::None, ratio: 0.0, eta: config.step_eta1 }];
    for &mode in config.sweep_modes.iter().filter(|&&m| m != AttackMode::None) {
        points.extend(ratios.iter().map(|&ratio| GridPoint { mode, ratio, eta: config.step_eta1 }));
    }
    run_grid(config, ExperimentKind::SweepRatio, &points)
}

/// Every sweep mode at every step size, plus the no-attack baseline.
pub fn sweep_step_size(config: &ExperimentConfig, etas: &[f64]) -> Result<ExperimentReport> {
    let mut points = vec![GridPoint { mode: AttackMode::None, ratio: config.injection_ratio, eta: config.step_eta1 }];
    for &mode in config.sweep_modes.iter().filter(|&&m| m != AttackMode::None) {
        points.extend(etas.iter().map(|&eta| GridPoint { mode, ratio: config.injection_ratio, eta }));
    }
    run_grid(config, ExperimentKind::SweepEta, &points)
}
