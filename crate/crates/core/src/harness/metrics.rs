use crate::error::{ensure, Result};
use crate::losses::{primal_loss_unchecked, LossKind};
use crate::model::{column, NodeDataset};
use nalgebra::DMatrix;

/// Percentage of sign predictions that disagree with `±1` labels.
pub fn classification_error(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    ensure(!labels.is_empty(), || "classification_error of an empty set".into())?;
    ensure(predictions.len() == labels.len(), || {
        format!("{} predictions for {} labels", predictions.len(), labels.len())
    })?;
    let wrong = predictions.iter().zip(labels).filter(|(p, y)| sign(**p) != **y).count();
    Ok(100.0 * wrong as f64 / labels.len() as f64)
}

pub fn rmse(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    ensure(!labels.is_empty(), || "rmse of an empty set".into())?;
    ensure(predictions.len() == labels.len(), || {
        format!("{} predictions for {} labels", predictions.len(), labels.len())
    })?;
    let sse: f64 = predictions.iter().zip(labels).map(|(p, y)| (p - y) * (p - y)).sum();
    Ok((sse / labels.len() as f64).sqrt())
}

/// `sign` with ties going to `+1`.
pub fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Error (%) for hinge or RMSE for least squares, pooled over the given
/// nodes. Pooling makes the error a sample-weighted mean of per-node errors.
pub fn pooled_metric(loss: LossKind, w: &DMatrix<f64>, sets: &[NodeDataset], nodes: &[usize]) -> Result<f64> {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for &l in nodes {
        preds.extend(sets[l].margins(column(w, l)));
        labels.extend_from_slice(sets[l].labels());
    }
    match loss {
        LossKind::Hinge => classification_error(&preds, &labels),
        LossKind::LeastSquares => rmse(&preds, &labels),
    }
}

/// Mean primal loss over all samples of the given nodes (the attacker's
/// upper-level objective divided by the total sample count).
pub fn pooled_loss(loss: LossKind, w: &DMatrix<f64>, sets: &[NodeDataset], nodes: &[usize]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for &l in nodes {
        let wl = column(w, l);
        for (m, &y) in sets[l].margins(wl).iter().zip(sets[l].labels()) {
            total += primal_loss_unchecked(loss, *m, y);
        }
        count += sets[l].len();
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
