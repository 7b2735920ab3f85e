//! Cox negative log partial likelihood and weighted binary cross-entropy.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::nn::sigmoid;

/// Right-censored survival observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalLabel {
    /// Follow-up time in months, strictly positive.
    pub time: f64,
    /// `true` when death was observed, `false` when censored.
    pub event: bool,
}

impl SurvivalLabel {
    pub fn new(time: f64, event: bool) -> Result<Self> {
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::invalid(format!("survival time must be positive, got {time}")));
        }
        Ok(Self { time, event })
    }
}

/// Resection margin status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MarginLabel {
    R0 = 0,
    R1 = 1,
}

impl MarginLabel {
    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            0 => Ok(MarginLabel::R0),
            1 => Ok(MarginLabel::R1),
            other => Err(Error::invalid(format!("margin label must be 0 or 1, got {other}"))),
        }
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }

    pub fn is_positive(self) -> bool {
        self == MarginLabel::R1
    }
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Indices sorted by ascending time, grouped into runs of identical times.
pub(crate) fn time_groups(labels: &[SurvivalLabel]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| labels[a].time.partial_cmp(&labels[b].time).unwrap_or(Ordering::Equal));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if labels[g[0]].time == labels[i].time => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Cox loss `Σ_i δ_i (−y_i + log Σ_{j: t_j ≥ t_i} exp y_j)` and its gradient.
///
/// Tied times share one risk set (`t_j ≥ t_i`). The log-sum-exp over each
/// risk set is accumulated incrementally so no intermediate overflows.
pub fn cox_loss(risks: &[f64], labels: &[SurvivalLabel]) -> Result<(f64, Vec<f64>)> {
    if risks.len() != labels.len() {
        return Err(Error::shape(format!(
            "cox_loss: {} risks vs {} labels",
            risks.len(),
            labels.len()
        )));
    }
    if risks.iter().any(|y| !y.is_finite()) {
        return Err(Error::invalid("cox_loss: non-finite risk score"));
    }
    if !labels.iter().any(|l| l.event) {
        return Err(Error::NoEvents);
    }
    let groups = time_groups(labels);

    // log Σ_{t_j ≥ t_g} exp y_j for every time group, built from the latest time down.
    let mut group_lse = vec![0.0; groups.len()];
    let mut lse = f64::NEG_INFINITY;
    for (gi, g) in groups.iter().enumerate().rev() {
        for &j in g {
            lse = log_add_exp(lse, risks[j]);
        }
        group_lse[gi] = lse;
    }

    let mut loss = 0.0;
    let mut grad = vec![0.0; risks.len()];
    // log Σ_{events i with t_i ≤ t_k} exp(−LSE_i)
    let mut log_weight = f64::NEG_INFINITY;
    for (gi, g) in groups.iter().enumerate() {
        for &i in g {
            if labels[i].event {
                loss += group_lse[gi] - risks[i];
                log_weight = log_add_exp(log_weight, -group_lse[gi]);
            }
        }
        for &k in g {
            let softmax_mass = (risks[k] + log_weight).exp();
            grad[k] = softmax_mass - if labels[k].event { 1.0 } else { 0.0 };
        }
    }
    Ok((loss, grad))
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean of `−[w·r·log σ(z) + (1−r)·log(1−σ(z))]` over the batch, with gradient in `z`.
pub fn weighted_bce(logits: &[f64], labels: &[MarginLabel], pos_weight: f64) -> Result<(f64, Vec<f64>)> {
    if logits.len() != labels.len() {
        return Err(Error::shape(format!(
            "weighted_bce: {} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::invalid("weighted_bce on an empty batch"));
    }
    if !(pos_weight > 0.0 && pos_weight.is_finite()) {
        return Err(Error::invalid(format!("pos_weight must be positive, got {pos_weight}")));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::invalid("weighted_bce: non-finite logit"));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &label) in logits.iter().zip(labels) {
        let p = sigmoid(z);
        if label.is_positive() {
            // −log σ(z) = softplus(−z)
            loss += pos_weight * softplus(-z);
            grad.push(pos_weight * (p - 1.0) / n);
        } else {
            // −log(1 − σ(z)) = softplus(z)
            loss += softplus(z);
            grad.push(p / n);
        }
    }
    Ok((loss / n, grad))
}

/// Positive-class weight `n_neg / n_pos` for imbalanced margin labels.
pub fn pos_weight_from_counts(n_neg: usize, n_pos: usize) -> Result<f64> {
    if n_pos == 0 {
        return Err(Error::invalid("pos_weight_from_counts: no positive examples"));
    }
    Ok(n_neg as f64 / n_pos as f64)
}
