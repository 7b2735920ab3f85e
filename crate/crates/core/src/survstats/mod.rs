//! Survival statistics: concordance, Kaplan-Meier, log-rank, Cox
//! regression, Lasso-Cox selection and risk-score normalization.

mod concordance;
pub(crate) mod cox;
mod features;
mod km;
mod lasso;

pub use concordance::{c_index, c_index_with, TieRule};
pub use cox::{cox_fit, cox_loglik, two_sided_normal_p, CoxFit};
pub use features::{feature_count, feature_names, simple_feature_extract};
pub use km::{chi2_sf_1df, kaplan_meier, log_rank_test, KmCurve, LogRank};
pub use lasso::{
    column_stats, default_lambda_grid, lambda_max, lasso_cox_path, lasso_cox_select, standardize, LassoCv,
    LassoPath, LassoSelection, GRID_POINTS, GRID_RATIO,
};

use crate::error::{Error, Result};

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(test − mean(train)) / std(train)`.
pub fn normalize_risk_scores(train: &[f64], test: &[f64]) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::invalid("normalize_risk_scores: empty training scores"));
    }
    let (mean, std) = mean_std(train);
    if !(std > 0.0) {
        return Err(Error::ZeroVariance("training risk scores are constant".into()));
    }
    Ok(test.iter().map(|t| (t - mean) / std).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RiskGroup {
    Low,
    High,
}

impl RiskGroup {
    pub fn name(self) -> &'static str {
        match self {
            RiskGroup::Low => "low",
            RiskGroup::High => "high",
        }
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Scores above the median are high risk; ties with the median are low.
pub fn median_stratify(signature: &[f64]) -> Result<Vec<RiskGroup>> {
    if signature.len() < 2 {
        return Err(Error::invalid("median_stratify: need at least 2 scores"));
    }
    let m = median(signature);
    Ok(signature
        .iter()
        .map(|&s| if s > m { RiskGroup::High } else { RiskGroup::Low })
        .collect())
}

/// Shortest decimal that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), fmt_f64)
}

pub const KM_HEADER: &str = "time,survival,at_risk,events";
pub const COX_HEADER: &str = "factor,hr,ci_low,ci_high,p";

pub fn km_to_csv(curve: &KmCurve) -> String {
    let mut out = format!("{KM_HEADER}\n");
    for i in 0..curve.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(curve.event_times[i]),
            fmt_f64(curve.survival[i]),
            curve.at_risk[i],
            curve.n_events[i]
        ));
    }
    out
}

pub fn km_from_csv(text: &str) -> Result<KmCurve> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(KM_HEADER) {
        return Err(Error::invalid(format!("KM CSV must start with {KM_HEADER:?}")));
    }
    let mut c = KmCurve {
        event_times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        n_events: Vec::new(),
    };
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::invalid(format!("KM CSV row {}: {line:?}", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        c.event_times.push(f[0].parse().map_err(|_| bad())?);
        c.survival.push(f[1].parse().map_err(|_| bad())?);
        c.at_risk.push(f[2].parse().map_err(|_| bad())?);
        c.n_events.push(f[3].parse().map_err(|_| bad())?);
    }
    Ok(c)
}

/// One row per factor; all-`null` rows for factors in `failed`.
pub fn cox_rows_to_csv(rows: &[(String, Option<CoxRow>)]) -> String {
    let mut out = format!("{COX_HEADER}\n");
    for (name, row) in rows {
        match row {
            Some(r) => out.push_str(&format!(
                "{name},{},{},{},{}\n",
                fmt_f64(r.hr),
                fmt_f64(r.ci_low),
                fmt_f64(r.ci_high),
                fmt_f64(r.p)
            )),
            None => out.push_str(&format!("{name},null,null,null,null\n")),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoxRow {
    pub hr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p: f64,
}

impl CoxRow {
    pub fn from_fit(fit: &CoxFit, k: usize) -> Self {
        Self {
            hr: fit.hr[k],
            ci_low: fit.ci_low[k],
            ci_high: fit.ci_high[k],
            p: fit.p_wald[k],
        }
    }
}
