//! Model state of the federated multi-task problem and the maps between its
//! primal and dual forms.
//!
//! The primal objective is
//!
//! ```text
//! P(W) = sum_l 1/N_l sum_i L(w_l^T x_i, y_i) + lambda1/2 tr(W Omega W^T) + lambda2/2 ||W||_F^2
//! ```
//!
//! with `N_l = n_l + n̂_l` clean plus injected samples on node `l`. Writing
//! `A = (Omega + lambda2/lambda1 I)^-1` and `u_l = 1/N_l (X_l alpha_l + X̂_l α̂_l)`,
//! the dual (minimisation form) is
//!
//! ```text
//! D(alpha) = sum_l 1/N_l sum_i L*(-alpha_i) + 1/(2 lambda1) sum_{l,l'} A[l,l'] <u_l, u_l'>
//! ```
//!
//! and `w_l = 1/lambda1 sum_l' A[l,l'] u_l'`, so that `P(W(alpha)) + D(alpha) >= 0`
//! with equality at the optimum.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::losses::{conjugate_loss, primal_loss_unchecked, LossKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One node's clean samples. Features are stored column-wise (`d x n`), one
/// sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeDataset {
    pub node_id: usize,
    features: DMatrix<f64>,
    labels: Vec<f64>,
    pub split: Split,
}

impl NodeDataset {
    /// Builds a dataset from row-major samples.
    pub fn from_rows(node_id: usize, rows: &[Vec<f64>], labels: Vec<f64>, split: Split) -> Result<Self> {
        ensure(rows.len() == labels.len(), || {
            format!("node {node_id}: {} rows but {} labels", rows.len(), labels.len())
        })?;
        let d = rows.first().map_or(0, Vec::len);
        for (i, r) in rows.iter().enumerate() {
            ensure(r.len() == d, || format!("node {node_id}: row {i} has {} features, expected {d}", r.len()))?;
        }
        let features = DMatrix::from_fn(d, rows.len(), |j, i| rows[i][j]);
        Self::new(node_id, features, labels, split)
    }

    /// `features` is `d x n`.
    pub fn new(node_id: usize, features: DMatrix<f64>, labels: Vec<f64>, split: Split) -> Result<Self> {
        ensure(features.ncols() == labels.len(), || {
            format!("node {node_id}: {} samples but {} labels", features.ncols(), labels.len())
        })?;
        ensure(features.iter().all(|v| v.is_finite()), || format!("node {node_id}: non-finite feature"))?;
        ensure(labels.iter().all(|v| v.is_finite()), || format!("node {node_id}: non-finite label"))?;
        if split == Split::Train {
            ensure(!labels.is_empty(), || format!("node {node_id}: empty training set"))?;
        }
        Ok(NodeDataset { node_id, features, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        column(&self.features, i)
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }

    /// Predictions `w^T x` for every sample.
    pub fn margins(&self, w: &[f64]) -> Vec<f64> {
        self.rows().map(|x| dot(x, w)).collect()
    }

    pub fn check_labels(&self, kind: LossKind) -> Result<()> {
        self.labels.iter().try_for_each(|&y| kind.check_label(y))
    }
}

/// Attacker-controlled samples placed on one node. Empty for nodes outside
/// the source set. Features are `d x n̂`; labels stay fixed for the whole
/// attack. The matching dual variables live in [`ModelState`].
#[derive(Debug, Clone, PartialEq)]
pub struct InjectedSet {
    pub node_id: usize,
    features: DMatrix<f64>,
    labels: Vec<f64>,
}

impl InjectedSet {
    pub fn empty(node_id: usize, d: usize) -> Self {
        InjectedSet { node_id, features: DMatrix::zeros(d, 0), labels: Vec::new() }
    }

    pub fn new(node_id: usize, features: DMatrix<f64>, labels: Vec<f64>) -> Result<Self> {
        ensure(features.ncols() == labels.len(), || {
            format!("injected node {node_id}: {} samples but {} labels", features.ncols(), labels.len())
        })?;
        Ok(InjectedSet { node_id, features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        column(&self.features, i)
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.features.nrows();
        &mut self.features.as_mut_slice()[i * d..(i + 1) * d]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn max_row_norm(&self) -> f64 {
        (0..self.len()).map(|i| norm(self.sample(i))).fold(0.0, f64::max)
    }
}

/// Clean plus injected training data for every node, indexed by node.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a> {
    pub clean: &'a [NodeDataset],
    pub injected: &'a [InjectedSet],
    pub loss: LossKind,
}

impl<'a> TrainingData<'a> {
    pub fn new(clean: &'a [NodeDataset], injected: &'a [InjectedSet], loss: LossKind) -> Result<Self> {
        ensure(!clean.is_empty(), || "federation has no nodes".into())?;
        ensure(injected.len() == clean.len(), || {
            format!("{} injected sets for {} nodes", injected.len(), clean.len())
        })?;
        let d = clean[0].dim();
        for (l, (c, inj)) in clean.iter().zip(injected).enumerate() {
            ensure(c.dim() == d, || format!("node {l} has dimension {}, expected {d}", c.dim()))?;
            ensure(inj.is_empty() || inj.dim() == d, || {
                format!("injected set of node {l} has dimension {}, expected {d}", inj.dim())
            })?;
            ensure(!c.is_empty(), || format!("node {l} has no training samples"))?;
            c.check_labels(loss)?;
            inj.labels.iter().try_for_each(|&y| loss.check_label(y))?;
        }
        Ok(TrainingData { clean, injected, loss })
    }

    pub fn nodes(&self) -> usize {
        self.clean.len()
    }

    pub fn dim(&self) -> usize {
        self.clean[0].dim()
    }

    /// Per-node averaging weight `1 / (n_l + n̂_l)`.
    pub fn weight(&self, node: usize) -> f64 {
        1.0 / (self.clean[node].len() + self.injected[node].len()) as f64
    }
}

/// Per-node dual variables, clean samples first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDuals {
    pub clean: Vec<f64>,
    pub injected: Vec<f64>,
}

impl NodeDuals {
    pub fn zeros(n: usize, n_injected: usize) -> Self {
        NodeDuals { clean: vec![0.0; n], injected: vec![0.0; n_injected] }
    }

    pub fn len(&self) -> usize {
        self.clean.len() + self.injected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `A = (Omega + lambda2/lambda1 I)^-1`. The block matrix `M` is
/// `A ⊗ I_d`, so only the `m x m` factor is ever formed.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    pub a: DMatrix<f64>,
    /// Smallest `s` with `A <= s diag(A)`. Scales the local subproblems so
    /// that simultaneous node updates cannot increase the dual.
    pub safety: f64,
}

impl CouplingMatrix {
    pub fn nodes(&self) -> usize {
        self.a.nrows()
    }

    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.a[(l, k)]
    }
}

pub fn build_coupling(omega: &DMatrix<f64>, lambda1: f64, lambda2: f64) -> Result<CouplingMatrix> {
    ensure(lambda1 > 0.0 && lambda2 > 0.0, || format!("lambdas must be positive, got {lambda1}, {lambda2}"))?;
    ensure(omega.is_square(), || format!("Omega is {}x{}", omega.nrows(), omega.ncols()))?;
    check_symmetric(omega, "Omega")?;
    let m = omega.nrows();
    let shifted = omega + DMatrix::identity(m, m) * (lambda2 / lambda1);
    let chol = shifted
        .cholesky()
        .ok_or_else(|| Error::Validation("Omega + (lambda2/lambda1) I is not positive definite".into()))?;
    let mut a = chol.inverse();
    symmetrize(&mut a);

    // largest eigenvalue of D^-1/2 A D^-1/2
    let scale = DVector::from_iterator(m, (0..m).map(|i| a[(i, i)].sqrt().recip()));
    let normalized = DMatrix::from_fn(m, m, |i, j| a[(i, j)] * scale[i] * scale[j]);
    let safety = normalized.symmetric_eigenvalues().max().max(1.0);
    Ok(CouplingMatrix { a, safety })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// `d x m`, column `l` is node `l`'s weight vector.
    pub w: DMatrix<f64>,
    pub alphas: Vec<NodeDuals>,
    pub omega: DMatrix<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub coupling: CouplingMatrix,
}

impl ModelState {
    /// Zero duals and zero weights for the given data.
    pub fn init(data: &TrainingData<'_>, omega: DMatrix<f64>, lambda1: f64, lambda2: f64) -> Result<Self> {
        let m = data.nodes();
        ensure(omega.nrows() == m, || format!("Omega is {}x{}, federation has {m} nodes", omega.nrows(), omega.ncols()))?;
        let coupling = build_coupling(&omega, lambda1, lambda2)?;
        let alphas = (0..m)
            .map(|l| NodeDuals::zeros(data.clean[l].len(), data.injected[l].len()))
            .collect();
        Ok(ModelState { w: DMatrix::zeros(data.dim(), m), alphas, omega, lambda1, lambda2, coupling })
    }

    pub fn nodes(&self) -> usize {
        self.omega.nrows()
    }

    pub fn weights(&self, node: usize) -> &[f64] {
        column(&self.w, node)
    }

    /// Recomputes `W` from the current duals.
    pub fn refresh_weights(&mut self, data: &TrainingData<'_>) -> Result<()> {
        self.w = w_from_alpha(&self.coupling, data, &self.alphas, self.lambda1)?;
        Ok(())
    }

    /// Replaces `Omega` and the derived coupling; `W` is refreshed.
    pub fn set_omega(&mut self, omega: DMatrix<f64>, data: &TrainingData<'_>) -> Result<()> {
        self.coupling = build_coupling(&omega, self.lambda1, self.lambda2)?;
        self.omega = omega;
        self.refresh_weights(data)
    }

    /// Resizes the injected dual vectors to match `data`, zeroing new entries.
    pub fn sync_injected(&mut self, data: &TrainingData<'_>) {
        for (duals, inj) in self.alphas.iter_mut().zip(data.injected) {
            duals.injected.resize(inj.len(), 0.0);
        }
    }

    pub fn primal(&self, data: &TrainingData<'_>) -> Result<f64> {
        primal_objective(&self.w, &self.omega, self.lambda1, self.lambda2, data)
    }

    pub fn dual(&self, data: &TrainingData<'_>) -> Result<f64> {
        dual_objective(&self.coupling, self.lambda1, data, &self.alphas)
    }

    /// `P(W(alpha)) + D(alpha)`; non-negative by weak duality.
    pub fn duality_gap(&self, data: &TrainingData<'_>) -> Result<f64> {
        Ok(self.primal(data)? + self.dual(data)?)
    }
}

fn check_duals(data: &TrainingData<'_>, alphas: &[NodeDuals]) -> Result<()> {
    ensure(alphas.len() == data.nodes(), || format!("{} dual blocks for {} nodes", alphas.len(), data.nodes()))?;
    for (l, a) in alphas.iter().enumerate() {
        ensure(a.clean.len() == data.clean[l].len() && a.injected.len() == data.injected[l].len(), || {
            format!(
                "node {l}: duals have length {}+{}, data has {}+{}",
                a.clean.len(),
                a.injected.len(),
                data.clean[l].len(),
                data.injected[l].len()
            )
        })?;
    }
    Ok(())
}

/// `u_l = 1/N_l (X_l alpha_l + X̂_l α̂_l)` for every node, as columns of a `d x m` matrix.
pub(crate) fn weighted_dual_sums(data: &TrainingData<'_>, alphas: &[NodeDuals]) -> DMatrix<f64> {
    let d = data.dim();
    let mut u = DMatrix::zeros(d, data.nodes());
    for (l, duals) in alphas.iter().enumerate() {
        let c = data.weight(l);
        let col = column_mut(&mut u, l);
        for (i, &a) in duals.clean.iter().enumerate() {
            axpy(c * a, data.clean[l].sample(i), col);
        }
        for (i, &a) in duals.injected.iter().enumerate() {
            axpy(c * a, data.injected[l].sample(i), col);
        }
    }
    u
}

/// `w_l = 1/lambda1 sum_l' A[l,l'] u_l'`.
pub fn w_from_alpha(
    coupling: &CouplingMatrix,
    data: &TrainingData<'_>,
    alphas: &[NodeDuals],
    lambda1: f64,
) -> Result<DMatrix<f64>> {
    check_duals(data, alphas)?;
    ensure(coupling.nodes() == data.nodes(), || {
        format!("coupling is {}x{}, federation has {} nodes", coupling.nodes(), coupling.nodes(), data.nodes())
    })?;
    let u = weighted_dual_sums(data, alphas);
    Ok(u * &coupling.a / lambda1)
}

pub fn primal_objective(
    w: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
    data: &TrainingData<'_>,
) -> Result<f64> {
    let m = data.nodes();
    ensure(w.ncols() == m && w.nrows() == data.dim(), || {
        format!("W is {}x{}, expected {}x{m}", w.nrows(), w.ncols(), data.dim())
    })?;
    ensure(omega.nrows() == m && omega.ncols() == m, || format!("Omega is {}x{}", omega.nrows(), omega.ncols()))?;

    let mut loss = 0.0;
    for l in 0..m {
        let wl = column(w, l);
        let clean = &data.clean[l];
        let inj = &data.injected[l];
        let node: f64 = (0..clean.len())
            .map(|i| primal_loss_unchecked(data.loss, dot(clean.sample(i), wl), clean.label(i)))
            .chain((0..inj.len()).map(|i| primal_loss_unchecked(data.loss, dot(inj.sample(i), wl), inj.label(i))))
            .sum();
        loss += node * data.weight(l);
    }
    let gram = w.transpose() * w;
    let coupling_term = gram.component_mul(omega).sum();
    Ok(loss + 0.5 * lambda1 * coupling_term + 0.5 * lambda2 * w.norm_squared())
}

pub fn dual_objective(
    coupling: &CouplingMatrix,
    lambda1: f64,
    data: &TrainingData<'_>,
    alphas: &[NodeDuals],
) -> Result<f64> {
    check_duals(data, alphas)?;
    let mut conj = 0.0;
    for (l, duals) in alphas.iter().enumerate() {
        let mut node = 0.0;
        for (i, &a) in duals.clean.iter().enumerate() {
            node += conjugate_loss(data.loss, a, data.clean[l].label(i))?;
        }
        for (i, &a) in duals.injected.iter().enumerate() {
            node += conjugate_loss(data.loss, a, data.injected[l].label(i))?;
        }
        conj += node * data.weight(l);
    }
    let u = weighted_dual_sums(data, alphas);
    let gram = u.transpose() * &u;
    Ok(conj + gram.component_mul(&coupling.a).sum() / (2.0 * lambda1))
}

/// `Omega = S / tr(S)` with `S = (W^T W + eps I)^{1/2}`.
pub fn update_omega(w: &DMatrix<f64>, epsilon: f64) -> DMatrix<f64> {
    let m = w.ncols();
    let mut gram = w.transpose() * w + DMatrix::identity(m, m) * epsilon;
    symmetrize(&mut gram);
    let eig = gram.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let mut s = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    symmetrize(&mut s);
    let tr = s.trace();
    s / tr
}

/// Inverse of [`update_omega`]'s output, i.e. the penalty matrix of
/// `tr(W Sigma^-1 W^T)` with `Sigma = S / tr(S)`.
pub fn update_omega_precision(w: &DMatrix<f64>, epsilon: f64) -> DMatrix<f64> {
    let sigma = update_omega(w, epsilon);
    let eig = sigma.symmetric_eigen();
    let floor = eig.eigenvalues.max() * f64::EPSILON;
    let inv = eig.eigenvalues.map(|v| v.max(floor).recip());
    let mut p = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    symmetrize(&mut p);
    p
}

fn check_symmetric(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    for i in 0..m.nrows() {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Validation(format!("{what} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

#[inline]
pub(crate) fn column(m: &DMatrix<f64>, j: usize) -> &[f64] {
    let r = m.nrows();
    &m.as_slice()[j * r..(j + 1) * r]
}

#[inline]
pub(crate) fn column_mut(m: &mut DMatrix<f64>, j: usize) -> &mut [f64] {
    let r = m.nrows();
    &mut m.as_mut_slice()[j * r..(j + 1) * r]
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}
