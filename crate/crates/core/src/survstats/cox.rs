use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::losses::{time_groups, SurvivalLabel};

const MAX_ITER: usize = 100;
const STEP_TOL: f64 = 1e-9;
const MAX_HALVINGS: usize = 40;
/// Information matrices worse conditioned than this are treated as singular.
const MAX_CONDITION: f64 = 1e12;
const Z_95: f64 = 1.959963984540054;

#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub hr: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub p_wald: Vec<f64>,
    pub converged: bool,
    pub n_iter: usize,
    pub loglik: f64,
}

/// Row-major covariates with risk sets precomputed.
pub(crate) struct CoxData<'a> {
    pub rows: &'a [Vec<f64>],
    pub labels: &'a [SurvivalLabel],
    /// Time groups from latest to earliest.
    groups: Vec<Vec<usize>>,
    pub p: usize,
}

impl<'a> CoxData<'a> {
    pub fn new(rows: &'a [Vec<f64>], labels: &'a [SurvivalLabel]) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::shape(format!(
                "cox: {} covariate rows vs {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::shape("cox: ragged covariate rows"));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cox: non-finite covariate"));
        }
        if !labels.iter().any(|l| l.event) {
            return Err(Error::NoEvents);
        }
        let mut groups = time_groups(labels);
        groups.reverse();
        Ok(Self {
            rows,
            labels,
            groups,
            p,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(beta).map(|(x, b)| x * b).sum())
            .collect()
    }

    /// Log partial likelihood for a given linear predictor.
    pub fn loglik_eta(&self, eta: &[f64]) -> f64 {
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut ll = 0.0;
        for g in &self.groups {
            for &j in g {
                s0 += (eta[j] - shift).exp();
            }
            let log_s0 = s0.ln() + shift;
            for &i in g {
                if self.labels[i].event {
                    ll += eta[i] - log_s0;
                }
            }
        }
        ll
    }

    /// First and second derivative of the log partial likelihood along coordinate `k`.
    pub fn coordinate_derivatives(&self, eta: &[f64], k: usize) -> (f64, f64) {
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
        let (mut grad, mut info) = (0.0, 0.0);
        for g in &self.groups {
            for &j in g {
                let w = (eta[j] - shift).exp();
                let x = self.rows[j][k];
                s0 += w;
                s1 += w * x;
                s2 += w * x * x;
            }
            let mean = s1 / s0;
            let var = (s2 / s0 - mean * mean).max(0.0);
            for &i in g {
                if self.labels[i].event {
                    grad += self.rows[i][k] - mean;
                    info += var;
                }
            }
        }
        (grad, info)
    }

    /// Log-likelihood, score and observed information over the columns in `cols`.
    fn derivatives(&self, beta: &[f64], cols: &[usize]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let eta = self.linear_predictor(beta);
        let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let q = cols.len();
        let mut s0 = 0.0;
        let mut s1 = DVector::zeros(q);
        let mut s2 = DMatrix::zeros(q, q);
        let mut ll = 0.0;
        let mut score = DVector::zeros(q);
        let mut info = DMatrix::zeros(q, q);
        for g in &self.groups {
            for &j in g {
                let w = (eta[j] - shift).exp();
                s0 += w;
                let x = DVector::from_iterator(q, cols.iter().map(|&c| self.rows[j][c]));
                s1 += &x * w;
                s2.ger(w, &x, &x, 1.0);
            }
            let d = g.iter().filter(|&&i| self.labels[i].event).count();
            if d == 0 {
                continue;
            }
            let mean = &s1 / s0;
            let cov = &s2 / s0 - &mean * mean.transpose();
            for &i in g {
                if self.labels[i].event {
                    ll += eta[i] - (s0.ln() + shift);
                    for (a, &c) in cols.iter().enumerate() {
                        score[a] += self.rows[i][c] - mean[a];
                    }
                }
            }
            info += cov * d as f64;
        }
        (ll, score, info)
    }
}

/// Ratio of the extreme eigenvalues; infinite for indefinite or zero matrices.
fn condition(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 1.0;
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 || max <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Standard-normal two-sided tail.
pub fn two_sided_normal_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Maximizes the Breslow partial likelihood by Newton-Raphson with step halving.
///
/// Columns without variance carry no information; they are held at `β = 0`
/// and reported with HR 1, an unbounded interval and `p = 1`.
pub fn cox_fit(covariates: &[Vec<f64>], labels: &[SurvivalLabel]) -> Result<CoxFit> {
    let data = CoxData::new(covariates, labels)?;
    let p = data.p;
    if data.n() <= p {
        return Err(Error::invalid(format!("cox_fit: need n > p, got n = {}, p = {p}", data.n())));
    }
    let cols: Vec<usize> = (0..p)
        .filter(|&c| {
            let first = covariates[0][c];
            covariates.iter().any(|r| r[c] != first)
        })
        .collect();

    let mut beta = vec![0.0; p];
    let (mut ll, mut score, mut info) = data.derivatives(&beta, &cols);
    let cond = condition(&info);
    if cond > MAX_CONDITION {
        return Err(Error::Singular { condition: cond });
    }
    let mut converged = cols.is_empty();
    let mut n_iter = 0;
    while !converged && n_iter < MAX_ITER {
        n_iter += 1;
        let step = info
            .clone()
            .cholesky()
            .map(|c| c.solve(&score))
            .ok_or(Error::Singular {
                condition: condition(&info),
            })?;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let mut trial = beta.clone();
            for (a, &c) in cols.iter().enumerate() {
                trial[c] += scale * step[a];
            }
            let t_ll = data.loglik_eta(&data.linear_predictor(&trial));
            if t_ll.is_finite() && t_ll >= ll {
                accepted = Some(trial);
                break;
            }
            scale *= 0.5;
        }
        let Some(next) = accepted else {
            // No ascent along the Newton direction: at the optimum to rounding.
            converged = true;
            break;
        };
        let max_step = cols
            .iter()
            .map(|&c| (next[c] - beta[c]).abs())
            .fold(0.0, f64::max);
        beta = next;
        (ll, score, info) = data.derivatives(&beta, &cols);
        if max_step < STEP_TOL {
            converged = true;
        }
    }

    let cond = condition(&info);
    let cov = if cols.is_empty() {
        DMatrix::zeros(0, 0)
    } else {
        info.clone()
            .try_inverse()
            .filter(|_| cond <= MAX_CONDITION)
            .ok_or(Error::Singular { condition: cond })?
    };
    let mut se = vec![f64::INFINITY; p];
    for (a, &c) in cols.iter().enumerate() {
        se[c] = cov[(a, a)].max(0.0).sqrt();
    }
    let hr: Vec<f64> = beta.iter().map(|b| b.exp()).collect();
    let ci_low = beta.iter().zip(&se).map(|(b, s)| (b - Z_95 * s).exp()).collect();
    let ci_high = beta.iter().zip(&se).map(|(b, s)| (b + Z_95 * s).exp()).collect();
    let p_wald = beta
        .iter()
        .zip(&se)
        .map(|(b, s)| if s.is_finite() { two_sided_normal_p(b / s) } else { 1.0 })
        .collect();
    Ok(CoxFit {
        beta,
        se,
        hr,
        ci_low,
        ci_high,
        p_wald,
        converged,
        n_iter,
        loglik: ll,
    })
}

/// Log partial likelihood of `beta` (Breslow ties).
pub fn cox_loglik(covariates: &[Vec<f64>], labels: &[SurvivalLabel], beta: &[f64]) -> Result<f64> {
    let data = CoxData::new(covariates, labels)?;
    if beta.len() != data.p {
        return Err(Error::shape(format!("cox_loglik: {} coefficients for {} columns", beta.len(), data.p)));
    }
    Ok(data.loglik_eta(&data.linear_predictor(beta)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sim(n: usize, seed: u64, log_hr: f64) -> (Vec<Vec<f64>>, Vec<SurvivalLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut l = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            let t = -rng.random::<f64>().ln() / (log_hr * a + 0.3 * b).exp();
            x.push(vec![a, b]);
            l.push(SurvivalLabel::new(t.max(1e-9), rng.random_bool(0.8)).unwrap());
        }
        (x, l)
    }

    #[test]
    fn zero_covariate_has_no_effect() {
        let (mut x, l) = sim(50, 1, 0.7);
        for r in &mut x {
            r[1] = 0.0;
        }
        let f = cox_fit(&x, &l).unwrap();
        assert_eq!(f.beta[1], 0.0);
        assert_eq!(f.hr[1], 1.0);
        assert_eq!(f.p_wald[1], 1.0);
        assert!(f.converged);
    }

    #[test]
    fn score_vanishes_at_the_fit() {
        let (x, l) = sim(200, 2, 1.0);
        let f = cox_fit(&x, &l).unwrap();
        assert!(f.converged);
        let data = CoxData::new(&x, &l).unwrap();
        let eta = data.linear_predictor(&f.beta);
        for k in 0..2 {
            assert!(data.coordinate_derivatives(&eta, k).0.abs() < 1e-8);
        }
        for k in 0..2 {
            assert!(f.ci_low[k] <= f.hr[k] && f.hr[k] <= f.ci_high[k]);
        }
    }

    #[test]
    fn collinear_columns_are_singular() {
        let (x, l) = sim(40, 3, 1.0);
        let x: Vec<Vec<f64>> = x.iter().map(|r| vec![r[0], 2.0 * r[0]]).collect();
        assert!(matches!(cox_fit(&x, &l), Err(Error::Singular { .. })));
    }

    #[test]
    fn requires_more_rows_than_columns() {
        let x = vec![vec![1.0, 2.0], vec![0.0, 1.0]];
        let l = vec![SurvivalLabel::new(1.0, true).unwrap(); 2];
        assert!(cox_fit(&x, &l).is_err());
    }
}
