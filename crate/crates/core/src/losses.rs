//! Primal losses and their conjugates.
//!
//! Conjugates are written in the form used by the dual solver, i.e. as a
//! function of the dual coordinate `alpha` evaluated at `-alpha`:
//!
//! * least squares: `L(u) = (u - y)^2`, `L*(-a) = -y a + a^2 / 4`
//! * hinge: `L(u) = max(0, 1 - u y)`, `L*(-a) = -y a` on `0 <= y a <= 1`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Regression with real-valued labels.
    LeastSquares,
    /// Classification with labels in `{-1, +1}`.
    Hinge,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::LeastSquares => "least_squares",
            LossKind::Hinge => "hinge",
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, LossKind::Hinge)
    }

    pub fn check_label(self, label: f64) -> Result<()> {
        let ok = match self {
            LossKind::LeastSquares => label.is_finite(),
            LossKind::Hinge => label == 1.0 || label == -1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::LabelDomain { loss: self.name(), label })
        }
    }

    /// Whether `alpha` is inside the conjugate's domain for `label`.
    pub fn dual_feasible(self, alpha: f64, label: f64) -> bool {
        match self {
            LossKind::LeastSquares => alpha.is_finite(),
            LossKind::Hinge => {
                let p = alpha * label;
                (0.0..=1.0).contains(&p)
            }
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least_squares" | "ls" | "regression" => Ok(LossKind::LeastSquares),
            "hinge" | "classification" => Ok(LossKind::Hinge),
            other => Err(Error::Config(format!("unknown loss kind `{other}`"))),
        }
    }
}

pub fn primal_loss(kind: LossKind, margin: f64, label: f64) -> Result<f64> {
    kind.check_label(label)?;
    Ok(primal_loss_unchecked(kind, margin, label))
}

#[inline]
pub(crate) fn primal_loss_unchecked(kind: LossKind, margin: f64, label: f64) -> f64 {
    match kind {
        LossKind::LeastSquares => {
            let r = margin - label;
            r * r
        }
        LossKind::Hinge => (1.0 - margin * label).max(0.0),
    }
}

/// `L*(-alpha)` for the given label.
pub fn conjugate_loss(kind: LossKind, alpha: f64, label: f64) -> Result<f64> {
    kind.check_label(label)?;
    match kind {
        LossKind::LeastSquares => Ok(-label * alpha + alpha * alpha / 4.0),
        LossKind::Hinge => {
            let product = label * alpha;
            if (0.0..=1.0).contains(&product) {
                Ok(-product)
            } else {
                Err(Error::InfeasibleDual { product })
            }
        }
    }
}

/// Derivative of the primal loss with respect to the margin. For hinge this is
/// the subgradient that is zero on the kink.
#[inline]
pub(crate) fn primal_loss_slope(kind: LossKind, margin: f64, label: f64) -> f64 {
    match kind {
        LossKind::LeastSquares => 2.0 * (margin - label),
        LossKind::Hinge => {
            if margin * label < 1.0 {
                -label
            } else {
                0.0
            }
        }
    }
}
