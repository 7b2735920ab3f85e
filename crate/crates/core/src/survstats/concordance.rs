use crate::error::{Error, Result};
use crate::losses::SurvivalLabel;

/// Credit given to a comparable pair whose risks are equal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    /// Tied risks score 0.
    #[default]
    Strict,
    /// Tied risks score 1/2.
    HalfCredit,
}

/// Harrell's C with the strict tie rule.
///
/// A pair `(i, j)` is comparable when `δ_i = 1` and `t_j > t_i`; it is
/// concordant when `y_i > y_j`.
pub fn c_index(risks: &[f64], labels: &[SurvivalLabel]) -> Result<f64> {
    c_index_with(risks, labels, TieRule::Strict)
}

pub fn c_index_with(risks: &[f64], labels: &[SurvivalLabel], ties: TieRule) -> Result<f64> {
    if risks.len() != labels.len() {
        return Err(Error::shape(format!(
            "c_index: {} risks vs {} labels",
            risks.len(),
            labels.len()
        )));
    }
    if risks.iter().any(|y| y.is_nan()) {
        return Err(Error::invalid("c_index: NaN risk score"));
    }
    let tie_credit = match ties {
        TieRule::Strict => 0.0,
        TieRule::HalfCredit => 0.5,
    };
    let mut pairs = 0u64;
    let mut score = 0.0;
    for (i, li) in labels.iter().enumerate() {
        if !li.event {
            continue;
        }
        for (j, lj) in labels.iter().enumerate() {
            if lj.time > li.time {
                pairs += 1;
                if risks[i] > risks[j] {
                    score += 1.0;
                } else if risks[i] == risks[j] {
                    score += tie_credit;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok(score / pairs as f64)
}
