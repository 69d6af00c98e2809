//! Bilevel poisoning attacks on the federated model.
//!
//! The attacker owns a set of injected samples on each source node and
//! alternates between (a) federated dual rounds on clean plus injected data
//! and (b) projected gradient ascent of the target nodes' training loss with
//! respect to the injected features. Labels of injected samples are fixed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Federation;
use crate::error::{ensure, Error, Result};
use crate::harness::metrics::{pooled_loss, pooled_metric};
use crate::losses::{primal_loss_slope, LossKind};
use crate::model::{axpy, dot, norm, InjectedSet, ModelState, NodeDataset, TrainingData};
use crate::solver::{run_round, solve_from, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    None,
    Direct,
    Indirect,
    Hybrid,
    RandomDirect,
    RandomIndirect,
    RandomHybrid,
}

/// Where the injected samples go, independent of how they are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Nowhere,
    Targets,
    NonTargets,
    Anywhere,
}

impl AttackMode {
    /// Table order: no attack, the three random baselines, the three optimized attacks.
    pub const ALL: [AttackMode; 7] = [
        AttackMode::None,
        AttackMode::RandomDirect,
        AttackMode::RandomIndirect,
        AttackMode::RandomHybrid,
        AttackMode::Direct,
        AttackMode::Indirect,
        AttackMode::Hybrid,
    ];

    pub fn placement(self) -> Placement {
        match self {
            AttackMode::None => Placement::Nowhere,
            AttackMode::Direct | AttackMode::RandomDirect => Placement::Targets,
            AttackMode::Indirect | AttackMode::RandomIndirect => Placement::NonTargets,
            AttackMode::Hybrid | AttackMode::RandomHybrid => Placement::Anywhere,
        }
    }

    /// Whether injected features are optimized (as opposed to left at their random draw).
    pub fn optimized(self) -> bool {
        matches!(self, AttackMode::Direct | AttackMode::Indirect | AttackMode::Hybrid)
    }

    pub fn random_counterpart(self) -> Option<AttackMode> {
        match self {
            AttackMode::Direct => Some(AttackMode::RandomDirect),
            AttackMode::Indirect => Some(AttackMode::RandomIndirect),
            AttackMode::Hybrid => Some(AttackMode::RandomHybrid),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackMode::None => "none",
            AttackMode::Direct => "direct",
            AttackMode::Indirect => "indirect",
            AttackMode::Hybrid => "hybrid",
            AttackMode::RandomDirect => "random_direct",
            AttackMode::RandomIndirect => "random_indirect",
            AttackMode::RandomHybrid => "random_hybrid",
        }
    }
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttackMode::ALL
            .into_iter()
            .find(|m| m.name() == s || m.name().replace('_', "-") == s)
            .ok_or_else(|| Error::Config(format!("unknown attack mode `{s}`")))
    }
}

/// How `d w_t / d x̂` is approximated in the attack gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    /// `Δα̂ · Omega[t, s]`: the latest dual step of the injected sample.
    Printed,
    /// `A[t, s] · α̂ / (lambda1 (n_s + n̂_s))`: the derivative of the
    /// primal-from-dual map with the duals held fixed.
    Exact,
}

impl FromStr for Sensitivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed" => Ok(Sensitivity::Printed),
            "exact" => Ok(Sensitivity::Exact),
            other => Err(Error::Config(format!("unknown sensitivity `{other}`"))),
        }
    }
}

/// Attack knobs as configured by a user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub mode: AttackMode,
    /// Fixed target set; `None` draws half of the nodes with `seed`.
    pub targets: Option<Vec<usize>>,
    pub injection_ratio: f64,
    /// Projection radius; `None` uses 1.5x the largest clean row norm.
    pub radius: Option<f64>,
    pub step_eta1: f64,
    pub outer_iters: usize,
    /// Solver rounds between two feature updates.
    pub rounds_per_iter: usize,
    /// Solver rounds on the final poisoned data after the last feature update.
    pub final_rounds: usize,
    pub sensitivity: Sensitivity,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            mode: AttackMode::Direct,
            targets: None,
            injection_ratio: 0.2,
            radius: None,
            step_eta1: 100.0,
            outer_iters: 20,
            rounds_per_iter: 100,
            final_rounds: 300,
            sensitivity: Sensitivity::Exact,
            seed: 0,
        }
    }
}

/// Resolved attack: concrete node sets and per-node budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub mode: AttackMode,
    pub targets: Vec<usize>,
    pub sources: Vec<usize>,
    /// `n̂_l` for every node; zero outside the source set.
    pub budgets: Vec<usize>,
    pub injection_ratio: f64,
    pub radius_r: f64,
    pub step_eta1: f64,
    pub outer_iters: usize,
    pub rounds_per_iter: usize,
    pub final_rounds: usize,
    pub sensitivity: Sensitivity,
    pub seed: u64,
}

/// Seeded random half of `m` nodes (at least one), sorted.
pub fn random_targets(m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x007a_26e7);
    let mut nodes: Vec<usize> = (0..m).collect();
    nodes.shuffle(&mut rng);
    let mut t: Vec<usize> = nodes[..(m / 2).max(1)].to_vec();
    t.sort_unstable();
    t
}

/// Picks the source set for `mode` given the targets. Random and optimized
/// variants of a placement draw the same sources for the same seed.
pub fn choose_sources(mode: AttackMode, m: usize, targets: &[usize], seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5011_4ce5);
    let mut sources: Vec<usize> = match mode.placement() {
        Placement::Nowhere => Vec::new(),
        Placement::Targets => targets.to_vec(),
        Placement::NonTargets => {
            let tset: BTreeSet<usize> = targets.iter().copied().collect();
            let free: Vec<usize> = (0..m).filter(|l| !tset.contains(l)).collect();
            if free.is_empty() {
                return Err(Error::InfeasibleSpec(format!("{mode} attack needs a node outside the target set")));
            }
            free.choose_multiple(&mut rng, targets.len().min(free.len())).copied().collect()
        }
        Placement::Anywhere => {
            let all: Vec<usize> = (0..m).collect();
            all.choose_multiple(&mut rng, targets.len()).copied().collect()
        }
    };
    sources.sort_unstable();
    Ok(sources)
}

/// `n̂ = round(ratio * n)`.
pub fn injection_budget(ratio: f64, clean: usize) -> usize {
    (ratio * clean as f64).round() as usize
}

pub fn build_attack_spec(config: &AttackConfig, fed: &Federation) -> Result<AttackSpec> {
    let m = fed.nodes();
    ensure(config.injection_ratio >= 0.0, || "injection_ratio must be non-negative".into())?;
    ensure(config.step_eta1 > 0.0, || "step_eta1 must be positive".into())?;
    ensure(config.outer_iters >= 1, || "outer_iters must be at least 1".into())?;
    let targets = match &config.targets {
        Some(t) => {
            let set: BTreeSet<usize> = t.iter().copied().collect();
            ensure(!set.is_empty(), || "target set is empty".into())?;
            ensure(set.iter().all(|&l| l < m), || format!("target index out of range for {m} nodes"))?;
            set.into_iter().collect()
        }
        None => random_targets(m, config.seed),
    };
    if config.mode.placement() == Placement::NonTargets {
        ensure(m >= 2, || "indirect attacks need at least two nodes".into()).map_err(|e| Error::InfeasibleSpec(e.to_string()))?;
    }
    let sources = choose_sources(config.mode, m, &targets, config.seed)?;
    let mut budgets = vec![0; m];
    for &s in &sources {
        budgets[s] = injection_budget(config.injection_ratio, fed.train[s].len());
    }
    let radius_r = config.radius.unwrap_or_else(|| 1.5 * fed.max_row_norm());
    ensure(radius_r > 0.0, || format!("projection radius {radius_r} must be positive"))?;
    Ok(AttackSpec {
        mode: config.mode,
        targets,
        sources,
        budgets,
        injection_ratio: config.injection_ratio,
        radius_r,
        step_eta1: config.step_eta1,
        outer_iters: config.outer_iters,
        rounds_per_iter: config.rounds_per_iter,
        final_rounds: config.final_rounds,
        sensitivity: config.sensitivity,
        seed: config.seed,
    })
}

/// Projection onto the Euclidean ball of radius `r`.
pub fn project_ball(x: &[f64], r: f64) -> Vec<f64> {
    let mut v = x.to_vec();
    project_ball_in_place(&mut v, r);
    v
}

pub fn project_ball_in_place(x: &mut [f64], r: f64) {
    let n = norm(x);
    if n > r {
        let s = r / n;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

/// Random starting points: a clean row of the node plus Gaussian noise at a
/// tenth of the per-feature spread, projected into the ball. Labels are the
/// sampled row's label negated (classification) or reflected across the
/// node's label mean (regression).
pub fn init_injected(spec: &AttackSpec, train: &[NodeDataset], loss: LossKind) -> Result<Vec<InjectedSet>> {
    ensure(spec.budgets.len() == train.len(), || "budget vector does not match the federation".into())?;
    let d = train[0].dim();
    let mut sets = Vec::with_capacity(train.len());
    for (l, node) in train.iter().enumerate() {
        let budget = spec.budgets[l];
        if budget == 0 {
            sets.push(InjectedSet::empty(l, d));
            continue;
        }
        if node.is_empty() {
            return Err(Error::Validation(format!("source node {l} has no clean samples to seed injections")));
        }
        let n = node.len() as f64;
        let mut spread = vec![0.0; d];
        let mut mean = vec![0.0; d];
        for x in node.rows() {
            axpy(1.0 / n, x, &mut mean);
        }
        for x in node.rows() {
            for ((s, v), m) in spread.iter_mut().zip(x).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        spread.iter_mut().for_each(|v| *v = v.sqrt());
        let label_mean = node.labels().iter().sum::<f64>() / n;

        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x1_e7ec7);
        rng.set_stream(l as u64);
        let mut features = DMatrix::zeros(d, budget);
        let mut labels = Vec::with_capacity(budget);
        for k in 0..budget {
            let i = rng.random_range(0..node.len());
            let col: Vec<f64> = node
                .sample(i)
                .iter()
                .zip(&spread)
                .map(|(v, s)| v + 0.1 * s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            features.set_column(k, &nalgebra::DVector::from_vec(project_ball(&col, spec.radius_r)));
            labels.push(match loss {
                LossKind::Hinge => -node.label(i),
                LossKind::LeastSquares => 2.0 * label_mean - node.label(i),
            });
        }
        sets.push(InjectedSet::new(l, features, labels)?);
    }
    Ok(sets)
}

/// `(1/n_t) sum_j dL/dw (w_t^T x_j, y_j)` over a target node's clean
/// training samples: the gradient of the node's mean loss.
pub fn target_loss_gradient(loss: LossKind, w_t: &[f64], node: &NodeDataset) -> Vec<f64> {
    let mut g = vec![0.0; node.dim()];
    if node.is_empty() {
        return g;
    }
    let weight = 1.0 / node.len() as f64;
    for (i, x) in node.rows().enumerate() {
        let slope = primal_loss_slope(loss, dot(x, w_t), node.label(i));
        if slope != 0.0 {
            axpy(weight * slope, x, &mut g);
        }
    }
    g
}

/// Dual information about one injected sample, as needed by [`attack_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualSensitivity {
    /// Latest accepted dual step `Δα̂`.
    Printed { step: f64 },
    /// Current dual value `α̂` and the source's averaging weight `1/(n_s + n̂_s)`.
    Exact { dual: f64, source_weight: f64 },
}

/// Gradient of `sum_{t in targets} mean_j L_t` with respect to one injected
/// sample on node `source`.
pub fn attack_gradient(
    loss: LossKind,
    state: &ModelState,
    train: &[NodeDataset],
    targets: &[usize],
    source: usize,
    dual: DualSensitivity,
) -> Vec<f64> {
    let grads: Vec<(usize, Vec<f64>)> =
        targets.iter().map(|&t| (t, target_loss_gradient(loss, state.weights(t), &train[t]))).collect();
    combine_gradients(state, &grads, source, dual)
}

fn sensitivity_factor(state: &ModelState, t: usize, source: usize, dual: DualSensitivity) -> f64 {
    match dual {
        DualSensitivity::Printed { step } => step * state.omega[(t, source)],
        DualSensitivity::Exact { dual, source_weight } => dual * source_weight * state.coupling.get(t, source) / state.lambda1,
    }
}

fn combine_gradients(state: &ModelState, grads: &[(usize, Vec<f64>)], source: usize, dual: DualSensitivity) -> Vec<f64> {
    let d = state.w.nrows();
    let mut out = vec![0.0; d];
    for (t, g) in grads {
        let f = sensitivity_factor(state, *t, source, dual);
        if f != 0.0 {
            axpy(f, g, &mut out);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Mean clean training loss over target nodes (upper-level objective per sample).
    pub target_train_loss: f64,
    /// Target test Error (%) or RMSE; `None` when no target has test data.
    pub target_test_metric: Option<f64>,
    pub primal: f64,
    pub dual: f64,
    /// Primal sub-optimality bound `P + D` of the lower level.
    pub gap: f64,
    /// Mean Euclidean move of injected features applied after this record.
    pub feature_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackTrace {
    pub records: Vec<TraceRecord>,
    pub final_record: TraceRecord,
    pub rounds: usize,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub spec: AttackSpec,
    pub state: ModelState,
    pub injected: Vec<InjectedSet>,
    pub trace: AttackTrace,
}

impl AttackOutcome {
    pub fn target_test_metric(&self) -> Option<f64> {
        self.trace.final_record.target_test_metric
    }

    pub fn target_train_loss(&self) -> f64 {
        self.trace.final_record.target_train_loss
    }
}

fn record(
    iteration: usize,
    fed: &Federation,
    spec: &AttackSpec,
    state: &ModelState,
    data: &TrainingData<'_>,
    feature_step: f64,
) -> Result<TraceRecord> {
    let primal = state.primal(data)?;
    let dual = state.dual(data)?;
    let test_nodes: Vec<usize> = spec.targets.iter().copied().filter(|&t| !fed.test[t].is_empty()).collect();
    let target_test_metric = if test_nodes.is_empty() {
        None
    } else {
        Some(pooled_metric(fed.loss, &state.w, &fed.test, &test_nodes)?)
    };
    Ok(TraceRecord {
        iteration,
        target_train_loss: pooled_loss(fed.loss, &state.w, &fed.train, &spec.targets),
        target_test_metric,
        primal,
        dual,
        gap: primal + dual,
        feature_step,
    })
}

/// One projected ascent step on every injected sample of every source node.
/// `last_steps` holds the latest dual step per injected sample and is only
/// read under [`Sensitivity::Printed`]. Returns the mean feature displacement.
pub fn ascend_features(
    fed: &Federation,
    spec: &AttackSpec,
    state: &ModelState,
    injected: &mut [InjectedSet],
    last_steps: &[Vec<f64>],
) -> f64 {
    let grads: Vec<(usize, Vec<f64>)> = spec
        .targets
        .iter()
        .map(|&t| (t, target_loss_gradient(fed.loss, state.weights(t), &fed.train[t])))
        .collect();
    let moves: Vec<(f64, usize)> = injected
        .par_iter_mut()
        .enumerate()
        .filter(|(_, set)| !set.is_empty())
        .map(|(s, set)| {
            let weight = 1.0 / (fed.train[s].len() + set.len()) as f64;
            let mut moved = 0.0;
            for i in 0..set.len() {
                let dual = match spec.sensitivity {
                    Sensitivity::Printed => DualSensitivity::Printed { step: last_steps[s][i] },
                    Sensitivity::Exact => DualSensitivity::Exact { dual: state.alphas[s].injected[i], source_weight: weight },
                };
                let g = combine_gradients(state, &grads, s, dual);
                let x = set.sample_mut(i);
                let before = x.to_vec();
                axpy(spec.step_eta1, &g, x);
                project_ball_in_place(x, spec.radius_r);
                moved += before.iter().zip(x.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            }
            (moved, set.len())
        })
        .collect();
    let (total, count) = moves.into_iter().fold((0.0, 0), |(a, n), (m, k)| (a + m, n + k));
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Runs the alternating attack. `omega0` is the starting relationship matrix
/// (identity over `m` when `None`); with `solver.omega_update_every == 0` it
/// stays frozen.
pub fn at2fl_run(fed: &Federation, spec: &AttackSpec, solver: &SolverConfig, omega0: Option<DMatrix<f64>>) -> Result<AttackOutcome> {
    solver.validate()?;
    let m = fed.nodes();
    ensure(spec.budgets.len() == m, || "attack spec does not match the federation".into())?;
    let mut injected = init_injected(spec, &fed.train, fed.loss)?;
    let omega = omega0.unwrap_or_else(|| DMatrix::identity(m, m) / m as f64);

    let mut state = {
        let data = TrainingData::new(&fed.train, &injected, fed.loss)?;
        ModelState::init(&data, omega, solver.lambda1, solver.lambda2)?
    };
    let mut records = Vec::with_capacity(spec.outer_iters + 1);
    let mut round = 1;
    let (mut bytes_up, mut bytes_down) = (0u64, 0u64);
    {
        let data = TrainingData::new(&fed.train, &injected, fed.loss)?;
        records.push(record(0, fed, spec, &state, &data, 0.0)?);
    }

    for k in 1..=spec.outer_iters {
        let mut last_steps: Vec<Vec<f64>> = injected.iter().map(|s| vec![0.0; s.len()]).collect();
        {
            let data = TrainingData::new(&fed.train, &injected, fed.loss)?;
            for _ in 0..spec.rounds_per_iter {
                let out = run_round(&mut state, &data, solver, round)?;
                round += 1;
                bytes_up += out.stats.bytes_up;
                bytes_down += out.stats.bytes_down;
                for (acc, steps) in last_steps.iter_mut().zip(&out.last_injected_steps) {
                    for (a, &s) in acc.iter_mut().zip(steps) {
                        if s != 0.0 {
                            *a = s;
                        }
                    }
                }
            }
        }
        let mut rec = {
            let data = TrainingData::new(&fed.train, &injected, fed.loss)?;
            record(k, fed, spec, &state, &data, 0.0)?
        };
        if spec.mode.optimized() {
            rec.feature_step = ascend_features(fed, spec, &state, &mut injected, &last_steps);
            let data = TrainingData::new(&fed.train, &injected, fed.loss)?;
            state.refresh_weights(&data)?;
        }
        records.push(rec);
    }

    let data = TrainingData::new(&fed.train, &injected, fed.loss)?;
    if spec.final_rounds > 0 {
        let polish = SolverConfig { rounds: spec.final_rounds, gap_tolerance: 0.0, ..solver.clone() };
        let sol = solve_from(state, &data, &polish, round)?;
        for s in &sol.stats {
            bytes_up += s.bytes_up;
            bytes_down += s.bytes_down;
        }
        round += sol.stats.len();
        state = sol.state;
    }
    let final_record = record(spec.outer_iters, fed, spec, &state, &data, 0.0)?;
    let trace = AttackTrace { records, final_record, rounds: round - 1, bytes_up, bytes_down };
    Ok(AttackOutcome { spec: spec.clone(), state, injected, trace })
}
