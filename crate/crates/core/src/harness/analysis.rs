//! Cox tables and median-stratified survival curves over pooled test-fold signatures.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::SurvivalLabel;
use crate::survstats::{
    c_index_with, cox_fit, cox_rows_to_csv, fmt_opt, kaplan_meier, km_to_csv, log_rank_test, median_stratify,
    mean_std, CoxFit, CoxRow, KmCurve, LogRank, RiskGroup, TieRule,
};

/// What the univariate concordance is computed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnivariateScore {
    /// The factor value itself.
    #[default]
    Factor,
    /// The fitted univariate linear predictor `β·x`; flips the sign for protective factors.
    LinearPredictor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subgroup {
    pub name: String,
    pub members: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmGroup {
    pub subgroup: String,
    pub low: Option<KmCurve>,
    pub high: Option<KmCurve>,
    pub n_low: usize,
    pub n_high: usize,
    /// `None` when a stratum is empty or the test is degenerate.
    pub log_rank: Option<LogRank>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub univariate: Vec<(String, CoxFit)>,
    pub univariate_c_index: Vec<(String, Option<f64>)>,
    /// `None` when the factors are collinear.
    pub multivariate: Option<CoxFit>,
    pub factor_names: Vec<String>,
    pub km: Vec<KmGroup>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnalysisOptions {
    pub ties: TieRule,
    pub univariate_score: UnivariateScore,
}

fn check_factor(f: &Factor, n: usize) -> Result<()> {
    if f.values.len() != n {
        return Err(Error::Shape(format!(
            "factor {}: {} values for {n} patients",
            f.name,
            f.values.len()
        )));
    }
    if f.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("factor {}: non-finite value", f.name)));
    }
    if !(mean_std(&f.values).1 > 0.0) {
        return Err(Error::ZeroVariance(format!("factor {} is constant", f.name)));
    }
    Ok(())
}

/// Cox regression per factor and jointly; only the Cox part, without curves.
pub fn cox_tables(
    factors: &[Factor],
    labels: &[SurvivalLabel],
    opts: &AnalysisOptions,
) -> Result<(Vec<(String, CoxFit)>, Vec<(String, Option<f64>)>, Option<CoxFit>)> {
    if factors.is_empty() {
        return Err(Error::invalid("analysis: no factors"));
    }
    for f in factors {
        check_factor(f, labels.len())?;
    }
    let mut univariate = Vec::new();
    let mut cindex = Vec::new();
    for f in factors {
        let x: Vec<Vec<f64>> = f.values.iter().map(|v| vec![*v]).collect();
        let fit = cox_fit(&x, labels)?;
        let score: Vec<f64> = match opts.univariate_score {
            UnivariateScore::Factor => f.values.clone(),
            UnivariateScore::LinearPredictor => f.values.iter().map(|v| v * fit.beta[0]).collect(),
        };
        let c = match c_index_with(&score, labels, opts.ties) {
            Ok(c) => Some(c),
            Err(Error::NoComparablePairs) => None,
            Err(e) => return Err(e),
        };
        univariate.push((f.name.clone(), fit));
        cindex.push((f.name.clone(), c));
    }
    let x: Vec<Vec<f64>> = (0..labels.len())
        .map(|i| factors.iter().map(|f| f.values[i]).collect())
        .collect();
    let multivariate = match cox_fit(&x, labels) {
        Ok(fit) => Some(fit),
        Err(Error::Singular { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok((univariate, cindex, multivariate))
}

/// Splits each subgroup at its own median signature and compares the strata.
pub fn km_by_median(signature: &[f64], labels: &[SurvivalLabel], subgroups: &[Subgroup]) -> Result<Vec<KmGroup>> {
    if signature.len() != labels.len() {
        return Err(Error::Shape(format!(
            "signature has {} values for {} patients",
            signature.len(),
            labels.len()
        )));
    }
    let mut out = Vec::new();
    for g in subgroups {
        if g.members.len() != labels.len() {
            return Err(Error::Shape(format!("subgroup {}: membership length mismatch", g.name)));
        }
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| g.members[i]).collect();
        if idx.len() < 2 {
            out.push(KmGroup {
                subgroup: g.name.clone(),
                low: None,
                high: None,
                n_low: 0,
                n_high: 0,
                log_rank: None,
            });
            continue;
        }
        let sig: Vec<f64> = idx.iter().map(|&i| signature[i]).collect();
        let groups = median_stratify(&sig)?;
        let stratum = |r: RiskGroup| -> Vec<SurvivalLabel> {
            idx.iter().zip(&groups).filter(|(_, g)| **g == r).map(|(&i, _)| labels[i]).collect()
        };
        let (low, high) = (stratum(RiskGroup::Low), stratum(RiskGroup::High));
        let curve = |l: &[SurvivalLabel]| if l.is_empty() { Ok(None) } else { kaplan_meier(l).map(Some) };
        let log_rank = if low.is_empty() || high.is_empty() {
            None
        } else {
            match log_rank_test(&low, &high) {
                Ok(t) => Some(t),
                Err(Error::Numerical(_)) => None,
                Err(e) => return Err(e),
            }
        };
        out.push(KmGroup {
            subgroup: g.name.clone(),
            low: curve(&low)?,
            high: curve(&high)?,
            n_low: low.len(),
            n_high: high.len(),
            log_rank,
        });
    }
    Ok(out)
}

pub fn run_analysis(
    factors: &[Factor],
    signature: &[f64],
    labels: &[SurvivalLabel],
    subgroups: &[Subgroup],
    opts: &AnalysisOptions,
) -> Result<AnalysisReport> {
    let (univariate, univariate_c_index, multivariate) = cox_tables(factors, labels, opts)?;
    let km = km_by_median(signature, labels, subgroups)?;
    Ok(AnalysisReport {
        univariate,
        univariate_c_index,
        multivariate,
        factor_names: factors.iter().map(|f| f.name.clone()).collect(),
        km,
    })
}

pub const C_INDEX_HEADER: &str = "factor,c_index";
pub const LOGRANK_HEADER: &str = "subgroup,n_low,n_high,chi2,p";

pub fn univariate_csv(report: &[(String, CoxFit)]) -> String {
    let rows: Vec<(String, Option<CoxRow>)> = report
        .iter()
        .map(|(n, fit)| (n.clone(), Some(CoxRow::from_fit(fit, 0))))
        .collect();
    cox_rows_to_csv(&rows)
}

pub fn multivariate_csv(names: &[String], fit: Option<&CoxFit>) -> String {
    let rows: Vec<(String, Option<CoxRow>)> = names
        .iter()
        .enumerate()
        .map(|(k, n)| (n.clone(), fit.map(|f| CoxRow::from_fit(f, k))))
        .collect();
    cox_rows_to_csv(&rows)
}

pub fn c_index_csv(rows: &[(String, Option<f64>)]) -> String {
    let mut out = format!("{C_INDEX_HEADER}\n");
    for (n, c) in rows {
        out.push_str(&format!("{n},{}\n", fmt_opt(*c)));
    }
    out
}

pub fn log_rank_csv(groups: &[KmGroup]) -> String {
    let mut out = format!("{LOGRANK_HEADER}\n");
    for g in groups {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            g.subgroup,
            g.n_low,
            g.n_high,
            fmt_opt(g.log_rank.map(|t| t.chi2)),
            fmt_opt(g.log_rank.map(|t| t.p))
        ));
    }
    out
}

/// `cox_univariate.csv`, `cox_multivariate.csv` and `univariate_c_index.csv`.
pub fn write_cox(dir: &Path, report: &AnalysisReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("cox_univariate.csv"), univariate_csv(&report.univariate))?;
    fs::write(
        dir.join("cox_multivariate.csv"),
        multivariate_csv(&report.factor_names, report.multivariate.as_ref()),
    )?;
    fs::write(dir.join("univariate_c_index.csv"), c_index_csv(&report.univariate_c_index))?;
    Ok(())
}

/// `km_<subgroup>_<low|high>.csv` per non-empty stratum, and `km_logrank.csv`.
pub fn write_km(dir: &Path, groups: &[KmGroup]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for g in groups {
        for (r, curve) in [(RiskGroup::Low, &g.low), (RiskGroup::High, &g.high)] {
            if let Some(c) = curve {
                fs::write(dir.join(format!("km_{}_{}.csv", g.subgroup, r.name())), km_to_csv(c))?;
            }
        }
    }
    fs::write(dir.join("km_logrank.csv"), log_rank_csv(groups))?;
    Ok(())
}
