use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::SurvivalLabel;
use crate::survstats::cox::CoxData;

const MAX_SWEEPS: usize = 2000;
const SWEEP_TOL: f64 = 1e-10;
pub const GRID_POINTS: usize = 50;
pub const GRID_RATIO: f64 = 1e-3;

/// Coefficients along a descending penalty grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
}

impl LassoPath {
    pub fn support(&self, index: usize) -> Vec<usize> {
        self.betas[index]
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoSelection {
    /// Non-zero coefficients at the chosen penalty, fitted on all rows.
    pub selected: Vec<usize>,
    pub lambda: f64,
    pub lambda_index: usize,
    pub path: LassoPath,
    /// Cross-validated partial log-likelihood per grid point.
    pub cv_loglik: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoCv {
    pub folds: usize,
    pub seed: u64,
}

impl Default for LassoCv {
    fn default() -> Self {
        Self { folds: 5, seed: 0 }
    }
}

/// Smallest penalty at which every coefficient is zero, for the objective
/// `−ℓ(β)/n + λ‖β‖₁`.
pub fn lambda_max(features: &[Vec<f64>], labels: &[SurvivalLabel]) -> Result<f64> {
    let data = CoxData::new(features, labels)?;
    let eta = vec![0.0; data.n()];
    Ok((0..data.p)
        .map(|k| data.coordinate_derivatives(&eta, k).0.abs())
        .fold(0.0, f64::max)
        / data.n() as f64)
}

/// `GRID_POINTS` log-spaced values from `λ_max` down to `GRID_RATIO · λ_max`.
pub fn default_lambda_grid(features: &[Vec<f64>], labels: &[SurvivalLabel]) -> Result<Vec<f64>> {
    let top = lambda_max(features, labels)?;
    if top == 0.0 {
        return Ok(vec![0.0]);
    }
    let step = GRID_RATIO.ln() / (GRID_POINTS - 1) as f64;
    Ok((0..GRID_POINTS).map(|i| top * (step * i as f64).exp()).collect())
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("lasso: empty lambda grid"));
    }
    if grid.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::invalid("lasso: lambdas must be finite and non-negative"));
    }
    if grid.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("lasso: lambda grid must be descending"));
    }
    Ok(())
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Cyclic coordinate descent at one penalty, warm-started from `beta`.
fn descend(data: &CoxData, lambda: f64, beta: &mut [f64]) {
    let n = data.n() as f64;
    let mut eta = data.linear_predictor(beta);
    let objective = |eta: &[f64], beta: &[f64]| {
        -data.loglik_eta(eta) / n + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    };
    let mut current = objective(&eta, beta);
    for _ in 0..MAX_SWEEPS {
        let mut max_change: f64 = 0.0;
        for k in 0..data.p {
            let (grad, info) = data.coordinate_derivatives(&eta, k);
            let (g, h) = (-grad / n, info / n);
            if h <= 0.0 {
                continue;
            }
            let target = soft_threshold(beta[k] - g / h, lambda / h);
            let mut delta = target - beta[k];
            // Halve the move until the objective does not increase.
            for _ in 0..30 {
                if delta == 0.0 {
                    break;
                }
                let trial_eta: Vec<f64> = eta
                    .iter()
                    .zip(data.rows)
                    .map(|(e, r)| e + delta * r[k])
                    .collect();
                let old = beta[k];
                beta[k] = old + delta;
                let value = objective(&trial_eta, beta);
                if value <= current {
                    current = value;
                    eta = trial_eta;
                    break;
                }
                beta[k] = old;
                delta *= 0.5;
                if delta.abs() < 1e-15 {
                    delta = 0.0;
                }
            }
            max_change = max_change.max(delta.abs());
        }
        if max_change < SWEEP_TOL {
            break;
        }
    }
}

/// L1-penalized Cox coefficients for every penalty in the descending `grid`.
pub fn lasso_cox_path(features: &[Vec<f64>], labels: &[SurvivalLabel], grid: &[f64]) -> Result<LassoPath> {
    check_grid(grid)?;
    let data = CoxData::new(features, labels)?;
    let mut beta = vec![0.0; data.p];
    let mut betas = Vec::with_capacity(grid.len());
    for &lambda in grid {
        descend(&data, lambda, &mut beta);
        betas.push(beta.clone());
    }
    Ok(LassoPath {
        lambdas: grid.to_vec(),
        betas,
    })
}

/// Event-stratified fold index per row.
pub(crate) fn stratified_folds(labels: &[SurvivalLabel], k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    let mut next = 0;
    for event in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].event == event).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            fold[i] = next % k;
            next += 1;
        }
    }
    fold
}

/// Selects the support at the penalty maximizing the cross-validated partial
/// likelihood `Σ_k [ℓ(β₋ₖ) − ℓ₋ₖ(β₋ₖ)]`.
///
/// Features are expected to be standardized column-wise.
pub fn lasso_cox_select(
    features: &[Vec<f64>],
    labels: &[SurvivalLabel],
    grid: &[f64],
    cv: &LassoCv,
) -> Result<LassoSelection> {
    check_grid(grid)?;
    if cv.folds < 2 || labels.len() < 2 * cv.folds {
        return Err(Error::invalid(format!(
            "lasso: {} folds need at least {} rows, got {}",
            cv.folds,
            2 * cv.folds,
            labels.len()
        )));
    }
    let full = CoxData::new(features, labels)?;
    let fold = stratified_folds(labels, cv.folds, cv.seed);
    let mut cv_loglik = vec![0.0; grid.len()];
    for f in 0..cv.folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] != f).collect();
        let x: Vec<Vec<f64>> = train.iter().map(|&i| features[i].clone()).collect();
        let l: Vec<SurvivalLabel> = train.iter().map(|&i| labels[i]).collect();
        let path = lasso_cox_path(&x, &l, grid)?;
        let train_data = CoxData::new(&x, &l)?;
        for (g, beta) in path.betas.iter().enumerate() {
            cv_loglik[g] += full.loglik_eta(&full.linear_predictor(beta))
                - train_data.loglik_eta(&train_data.linear_predictor(beta));
        }
    }
    let lambda_index = cv_loglik
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > cv_loglik[best] { i } else { best });
    let path = lasso_cox_path(features, labels, grid)?;
    Ok(LassoSelection {
        selected: path.support(lambda_index),
        lambda: grid[lambda_index],
        lambda_index,
        path,
        cv_loglik,
    })
}

/// Column means and population standard deviations; zero-variance columns get std 1.
pub fn column_stats(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let p = rows.first().map_or(0, Vec::len);
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..p).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / n).collect();
    let std = (0..p)
        .map(|c| {
            let v = rows.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

pub fn standardize(rows: &[Vec<f64>], mean: &[f64], std: &[f64]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().zip(mean).zip(std).map(|((x, m), s)| (x - m) / s).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survstats::cox::cox_fit;
    use rand::Rng;

    fn sim(n: usize, p: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<SurvivalLabel>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut l = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> = (0..p).map(|_| rng.random_range(-1.7..1.7)).collect();
            let t = -rng.random::<f64>().ln() / (0.8 * row[0] - 0.6 * row[1]).exp();
            l.push(SurvivalLabel::new(t.max(1e-9), rng.random_bool(0.8)).unwrap());
            x.push(row);
        }
        (x, l)
    }

    #[test]
    fn above_lambda_max_is_zero() {
        let (x, l) = sim(80, 4, 1);
        let top = lambda_max(&x, &l).unwrap();
        let path = lasso_cox_path(&x, &l, &[top * 1.5, top]).unwrap();
        assert!(path.betas.iter().flatten().all(|b| *b == 0.0));
    }

    #[test]
    fn zero_penalty_matches_unpenalized_fit() {
        let (x, l) = sim(60, 3, 2);
        let path = lasso_cox_path(&x, &l, &[0.0]).unwrap();
        let fit = cox_fit(&x, &l).unwrap();
        for (a, b) in path.betas[0].iter().zip(&fit.beta) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn grid_is_validated() {
        let (x, l) = sim(20, 2, 3);
        assert!(lasso_cox_path(&x, &l, &[]).is_err());
        assert!(lasso_cox_path(&x, &l, &[0.1, 0.2]).is_err());
        assert!(lasso_cox_path(&x, &l, &[-1.0]).is_err());
    }

    #[test]
    fn default_grid_spans_three_decades() {
        let (x, l) = sim(50, 3, 4);
        let g = default_lambda_grid(&x, &l).unwrap();
        assert_eq!(g.len(), GRID_POINTS);
        assert!((g[GRID_POINTS - 1] / g[0] - GRID_RATIO).abs() < 1e-12);
    }

    #[test]
    fn folds_are_stratified() {
        let (_, l) = sim(53, 2, 5);
        let f = stratified_folds(&l, 5, 9);
        for k in 0..5 {
            let events = (0..l.len()).filter(|&i| f[i] == k && l[i].event).count();
            let total_events = l.iter().filter(|x| x.event).count();
            assert!(events.abs_diff(total_events / 5) <= 1);
        }
    }

    #[test]
    fn standardized_columns_have_unit_spread() {
        let (x, _) = sim(30, 3, 6);
        let (m, s) = column_stats(&x);
        let z = standardize(&x, &m, &s);
        let (m2, s2) = column_stats(&z);
        for c in 0..3 {
            assert!(m2[c].abs() < 1e-12 && (s2[c] - 1.0).abs() < 1e-12);
        }
    }
}
