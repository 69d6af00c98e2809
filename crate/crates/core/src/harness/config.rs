//! Flat key-value experiment configuration (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, AttackMode, Sensitivity};
use crate::data::{FederationSource, SourceKind};
use crate::error::{ensure, Error, Result};
use crate::losses::LossKind;
use crate::solver::{OmegaRule, SolverConfig, GAP_TOLERANCE};

/// Every knob of a run. Unset keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: SourceKind,
    pub data_dir: Option<PathBuf>,
    pub loss: Option<LossKind>,
    pub d: usize,
    pub m: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub correlation: f64,
    pub noise_sigma: f64,
    pub test_fraction: f64,

    pub lambda1: f64,
    pub lambda2: f64,
    pub local_passes: usize,
    pub damping: f64,
    pub gap_tolerance: f64,
    pub omega_epsilon: f64,
    pub omega_rule: OmegaRule,
    /// Omega refresh period while attacking; 0 keeps the learned Omega frozen.
    pub omega_update_every: usize,
    /// Clean rounds used to learn Omega before any attack; 0 keeps `I/m`.
    pub relationship_rounds: usize,
    pub relationship_update_every: usize,

    pub mode: AttackMode,
    pub targets: Option<Vec<usize>>,
    pub injection_ratio: f64,
    pub radius: Option<f64>,
    pub step_eta1: f64,
    pub outer_iters: usize,
    pub rounds_per_iter: usize,
    pub final_rounds: usize,
    pub sensitivity: Sensitivity,

    pub seed: u64,
    pub reps: usize,
    /// Modes for `compare`.
    pub modes: Vec<AttackMode>,
    /// Modes for the ratio and step-size sweeps.
    pub sweep_modes: Vec<AttackMode>,
    pub ratios: Vec<f64>,
    pub etas: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let attack = AttackConfig::default();
        let solver = SolverConfig::default();
        let source = FederationSource::default();
        ExperimentConfig {
            source: source.kind,
            data_dir: None,
            loss: None,
            d: source.d,
            m: source.m,
            n_min: source.per_node_n.0,
            n_max: source.per_node_n.1,
            correlation: source.correlation,
            noise_sigma: source.noise_sigma,
            test_fraction: source.test_fraction,
            lambda1: solver.lambda1,
            lambda2: solver.lambda2,
            local_passes: solver.local_passes,
            damping: solver.damping,
            gap_tolerance: GAP_TOLERANCE,
            omega_epsilon: solver.omega_epsilon,
            omega_rule: solver.omega_rule,
            omega_update_every: 0,
            relationship_rounds: 300,
            relationship_update_every: 10,
            mode: attack.mode,
            targets: None,
            injection_ratio: attack.injection_ratio,
            radius: None,
            step_eta1: attack.step_eta1,
            outer_iters: attack.outer_iters,
            rounds_per_iter: attack.rounds_per_iter,
            final_rounds: attack.final_rounds,
            sensitivity: attack.sensitivity,
            seed: 0,
            reps: 10,
            modes: AttackMode::ALL.to_vec(),
            sweep_modes: vec![AttackMode::Direct, AttackMode::Indirect, AttackMode::Hybrid],
            ratios: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4],
            etas: vec![0.01, 0.1, 1.0, 10.0, 100.0, 1000.0],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.federation_source(0).validate()?;
        self.solver_config(0).validate()?;
        ensure(self.reps >= 1, || "reps must be at least 1".into())?;
        ensure(self.injection_ratio >= 0.0, || "injection_ratio must be non-negative".into())?;
        ensure(self.step_eta1 > 0.0, || "step_eta1 must be positive".into())?;
        ensure(self.outer_iters >= 1, || "outer_iters must be at least 1".into())?;
        ensure(self.radius.is_none_or(|r| r > 0.0), || "radius must be positive".into())?;
        ensure(self.ratios.iter().all(|&r| r >= 0.0), || "ratios must be non-negative".into())?;
        ensure(self.etas.iter().all(|&e| e > 0.0), || "etas must be positive".into())?;
        ensure(self.relationship_rounds == 0 || self.relationship_update_every >= 1, || {
            "relationship_update_every must be at least 1".into()
        })?;
        Ok(())
    }

    /// Seed of repetition `rep`.
    pub fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }

    /// Synthetic federations are redrawn for every repetition; CSV data is
    /// split with the base seed only.
    pub fn federation_source(&self, rep: usize) -> FederationSource {
        let seed = match self.source {
            SourceKind::CsvDirectory => self.seed,
            _ => self.rep_seed(rep),
        };
        FederationSource {
            kind: self.source.clone(),
            path: self.data_dir.clone(),
            loss: self.loss,
            d: self.d,
            m: self.m,
            per_node_n: (self.n_min, self.n_max),
            correlation: self.correlation,
            noise_sigma: self.noise_sigma,
            test_fraction: self.test_fraction,
            seed,
        }
    }

    pub fn solver_config(&self, rep: usize) -> SolverConfig {
        SolverConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            rounds: self.final_rounds.max(1),
            local_passes: self.local_passes,
            omega_update_every: self.omega_update_every,
            seed: self.rep_seed(rep),
            damping: self.damping,
            gap_tolerance: self.gap_tolerance,
            omega_epsilon: self.omega_epsilon,
            omega_rule: self.omega_rule,
        }
    }

    pub fn attack_config(&self, mode: AttackMode, ratio: f64, eta: f64, rep: usize) -> AttackConfig {
        AttackConfig {
            mode,
            targets: self.targets.clone(),
            injection_ratio: ratio,
            radius: self.radius,
            step_eta1: eta,
            outer_iters: self.outer_iters,
            rounds_per_iter: self.rounds_per_iter,
            final_rounds: self.final_rounds,
            sensitivity: self.sensitivity,
            seed: self.rep_seed(rep),
        }
    }
}
