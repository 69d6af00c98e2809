//! Federated dual coordinate ascent for the lower-level problem.
//!
//! Each round every node runs `local_passes` sweeps of randomized coordinate
//! steps on its own duals, reading the other nodes' contribution from the
//! round-start snapshot of `W`. A node's own contribution is tracked locally
//! and scaled by the coupling's safety factor, so the combined update never
//! increases the dual objective. After the barrier the coordinator rebuilds
//! `W` from the duals and optionally refreshes `Omega`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::losses::LossKind;
use crate::model::{axpy, column, dot, update_omega, update_omega_precision, ModelState, NodeDuals, TrainingData};

/// Duality gap below which the lower level counts as solved.
pub const GAP_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Round cap for a full solve.
    pub rounds: usize,
    pub local_passes: usize,
    /// Refresh `Omega` every this many rounds; `0` keeps it frozen.
    pub omega_update_every: usize,
    pub seed: u64,
    /// Multiplier on every closed-form step, in `(0, 1]`.
    pub damping: f64,
    pub gap_tolerance: f64,
    /// Ridge added to `W^T W` before the matrix square root.
    pub omega_epsilon: f64,
    pub omega_rule: OmegaRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda1: 0.001,
            lambda2: 0.001,
            rounds: 500,
            local_passes: 1,
            omega_update_every: 0,
            seed: 0,
            damping: 1.0,
            gap_tolerance: GAP_TOLERANCE,
            omega_epsilon: 1e-8,
            omega_rule: OmegaRule::Precision,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.lambda1 > 0.0 && self.lambda2 > 0.0, || "lambda1 and lambda2 must be positive".into())?;
        ensure(self.rounds >= 1, || "rounds must be at least 1".into())?;
        ensure(self.damping > 0.0 && self.damping <= 1.0, || format!("damping {} not in (0, 1]", self.damping))?;
        ensure(self.omega_epsilon > 0.0, || "omega_epsilon must be positive".into())?;
        Ok(())
    }
}

/// How a refreshed `Omega` is derived from `W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaRule {
    /// `Omega = S / tr(S)`, `S = (W^T W + eps I)^{1/2}`.
    Relationship,
    /// `Omega = (S / tr(S))^-1`: tasks with correlated weights are pulled together.
    Precision,
}

impl std::str::FromStr for OmegaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relationship" => Ok(OmegaRule::Relationship),
            "precision" => Ok(OmegaRule::Precision),
            other => Err(Error::Config(format!("unknown omega rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub bytes_up: u64,
    pub bytes_down: u64,
}

/// Least-squares coordinate step: exact minimiser over `a` of
/// `L*(-(alpha + a)) + a * margin + coupled_norm / 2 * a^2`.
pub fn delta_alpha_least_squares(alpha: f64, margin: f64, label: f64, coupled_norm: f64) -> f64 {
    (label - margin - 0.5 * alpha) / (0.5 + coupled_norm)
}

/// Hinge coordinate step; the result keeps `label * (alpha + step)` in `[0, 1]`.
pub fn delta_alpha_hinge(alpha: f64, margin: f64, label: f64, coupled_norm: f64) -> Result<f64> {
    let product = alpha * label;
    if !(0.0..=1.0).contains(&product) {
        return Err(Error::Validation(format!("hinge dual {alpha} infeasible for label {label}")));
    }
    let slack = 1.0 - margin * label;
    let target = if coupled_norm > 0.0 {
        (slack / coupled_norm + product).clamp(0.0, 1.0)
    } else if slack > 0.0 {
        1.0
    } else if slack < 0.0 {
        0.0
    } else {
        product
    };
    Ok(label * target - alpha)
}

fn coordinate_step(loss: LossKind, alpha: f64, margin: f64, label: f64, coupled_norm: f64) -> Result<f64> {
    match loss {
        LossKind::LeastSquares => Ok(delta_alpha_least_squares(alpha, margin, label, coupled_norm)),
        LossKind::Hinge => delta_alpha_hinge(alpha, margin, label, coupled_norm),
    }
}

/// Per-node generator for one round; independent of scheduling order.
pub(crate) fn node_rng(seed: u64, round: usize, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 20) ^ node as u64);
    rng
}

/// What one round changed, besides the state itself.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub stats: RoundStats,
    /// Last accepted step per injected coordinate (0 where untouched).
    pub last_injected_steps: Vec<Vec<f64>>,
}

struct LocalResult {
    duals: NodeDuals,
    last_injected: Vec<f64>,
}

fn local_solve(
    node: usize,
    data: &TrainingData<'_>,
    state: &ModelState,
    config: &SolverConfig,
    round: usize,
) -> Result<LocalResult> {
    let clean = &data.clean[node];
    let inj = &data.injected[node];
    let mut duals = state.alphas[node].clone();
    let mut last_injected = vec![0.0; inj.len()];
    let mut w_local = column(&state.w, node).to_vec();
    let scale = state.coupling.safety * data.weight(node) * state.coupling.get(node, node) / state.lambda1;
    let mut rng = node_rng(config.seed, round, node);

    let steps = config.local_passes * clean.len();
    for _ in 0..steps {
        let i = rng.random_range(0..clean.len());
        let x = clean.sample(i);
        let q = scale * dot(x, x);
        let delta = config.damping * coordinate_step(data.loss, duals.clean[i], dot(x, &w_local), clean.label(i), q)?;
        if delta != 0.0 {
            duals.clean[i] += delta;
            axpy(scale * delta, x, &mut w_local);
        }

        if !inj.is_empty() {
            let j = rng.random_range(0..inj.len());
            let x = inj.sample(j);
            let q = scale * dot(x, x);
            let delta = config.damping * coordinate_step(data.loss, duals.injected[j], dot(x, &w_local), inj.label(j), q)?;
            last_injected[j] = delta;
            if delta != 0.0 {
                duals.injected[j] += delta;
                axpy(scale * delta, x, &mut w_local);
            }
        }
    }
    Ok(LocalResult { duals, last_injected })
}

/// One synchronous round over all nodes. `round` numbers the round for seeding
/// and for the `Omega` refresh schedule.
pub fn run_round(state: &mut ModelState, data: &TrainingData<'_>, config: &SolverConfig, round: usize) -> Result<RoundOutcome> {
    let m = data.nodes();
    let d = data.dim();
    let snapshot: &ModelState = state;
    let results: Vec<LocalResult> = (0..m)
        .into_par_iter()
        .map(|l| local_solve(l, data, snapshot, config, round))
        .collect::<Result<_>>()?;

    let mut last_injected_steps = Vec::with_capacity(m);
    for (l, r) in results.into_iter().enumerate() {
        state.alphas[l] = r.duals;
        last_injected_steps.push(r.last_injected);
    }
    state.refresh_weights(data)?;

    let refresh = config.omega_update_every > 0 && round.is_multiple_of(config.omega_update_every);
    if refresh {
        let omega = match config.omega_rule {
            OmegaRule::Relationship => update_omega(&state.w, config.omega_epsilon),
            OmegaRule::Precision => update_omega_precision(&state.w, config.omega_epsilon),
        };
        state.set_omega(omega, data)?;
    }

    let primal = state.primal(data)?;
    let dual = state.dual(data)?;
    let floats = (m * d) as u64 + if refresh { (m * m) as u64 } else { 0 };
    let stats = RoundStats {
        round,
        primal,
        dual,
        gap: primal + dual,
        bytes_up: 8 * (m * d) as u64,
        bytes_down: 8 * floats,
    };
    Ok(RoundOutcome { stats, last_injected_steps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub state: ModelState,
    pub stats: Vec<RoundStats>,
    pub converged: bool,
}

impl Solution {
    pub fn final_gap(&self) -> Option<f64> {
        self.stats.last().map(|s| s.gap)
    }
}

/// Solves the lower level from zero duals with the given starting `Omega`.
pub fn solve_lower(data: &TrainingData<'_>, config: &SolverConfig, omega: DMatrix<f64>) -> Result<Solution> {
    config.validate()?;
    let state = ModelState::init(data, omega, config.lambda1, config.lambda2)?;
    solve_from(state, data, config, 1)
}

/// Continues from `state` (warm start). Rounds are numbered from `first_round`.
pub fn solve_from(mut state: ModelState, data: &TrainingData<'_>, config: &SolverConfig, first_round: usize) -> Result<Solution> {
    config.validate()?;
    state.sync_injected(data);
    state.refresh_weights(data)?;
    let mut stats = Vec::new();
    let mut converged = false;
    for round in first_round..first_round + config.rounds {
        let out = run_round(&mut state, data, config, round)?;
        let gap = out.stats.gap;
        stats.push(out.stats);
        if gap < config.gap_tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        log::debug!("lower level stopped after {} rounds with gap {:?}", stats.len(), stats.last().map(|s| s.gap));
    }
    Ok(Solution { state, stats, converged })
}
