use crate::error::{Error, Result};
use crate::losses::{MarginLabel, SurvivalLabel};
use crate::phantom::CeCtSequence;
use crate::prognet::PrognosisNet;
use crate::survstats::{c_index_with, normalize_risk_scores, TieRule};

/// Test-set metrics; `None` marks a metric that is undefined on the data.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Metrics {
    pub c_index: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl Metrics {
    pub const NAMES: [&'static str; 4] = ["c_index", "balanced_accuracy", "sensitivity", "specificity"];

    pub fn values(&self) -> [Option<f64>; 4] {
        [self.c_index, self.balanced_accuracy, self.sensitivity, self.specificity]
    }
}

/// Sensitivity, specificity and their mean at logit threshold 0.
pub fn margin_metrics(logits: &[f64], labels: &[MarginLabel]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let (mut tp, mut pos, mut tn, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (z, l) in logits.iter().zip(labels) {
        if l.is_positive() {
            pos += 1;
            tp += usize::from(*z > 0.0);
        } else {
            neg += 1;
            tn += usize::from(*z <= 0.0);
        }
    }
    let sens = (pos > 0).then(|| tp as f64 / pos as f64);
    let spec = (neg > 0).then(|| tn as f64 / neg as f64);
    let bacc = sens.zip(spec).map(|(a, b)| 0.5 * (a + b));
    (sens, spec, bacc)
}

/// Metrics from raw outputs; the concordance is `None` without comparable pairs.
pub fn compute_metrics(
    risk: Option<&[f64]>,
    margin_logits: Option<&[f64]>,
    labels: &[SurvivalLabel],
    margins: &[MarginLabel],
    ties: TieRule,
) -> Result<Metrics> {
    let c_index = match risk {
        Some(r) => match c_index_with(r, labels, ties) {
            Ok(c) => Some(c),
            Err(Error::NoComparablePairs) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    let (sensitivity, specificity, balanced_accuracy) = match margin_logits {
        Some(z) => margin_metrics(z, margins),
        None => (None, None, None),
    };
    Ok(Metrics {
        c_index,
        balanced_accuracy,
        sensitivity,
        specificity,
    })
}

/// Eval-mode metrics on `test`. With a `reference` set, risk scores are
/// first normalized by the reference predictions' mean and standard deviation.
pub fn evaluate(
    net: &mut PrognosisNet,
    test: &[&CeCtSequence],
    reference: Option<&[&CeCtSequence]>,
    ties: TieRule,
) -> Result<Metrics> {
    let out = net.predict(test, 16)?;
    let risk = match (out.risk, reference) {
        (Some(r), Some(reference)) => {
            let train = net.predict(reference, 16)?.risk.expect("same network");
            Some(normalize_risk_scores(&train, &r)?)
        }
        (r, _) => r,
    };
    let labels: Vec<SurvivalLabel> = test.iter().map(|s| s.label).collect();
    let margins: Vec<MarginLabel> = test.iter().map(|s| s.margin).collect();
    compute_metrics(risk.as_deref(), out.margin_logit.as_deref(), &labels, &margins, ties)
}
