//! The ten acceptance criteria, each returning a verdict with the measured numbers.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cect_core::convlstm::{cell_step, ConvLstmCell, ConvLstmState};
use cect_core::harness::{
    audit_cv_artifacts, run_analysis, run_cv, AnalysisOptions, CvOptions, CvRun, Factor, Subgroup, TrainConfig,
    UnivariateScore,
};
use cect_core::losses::{cox_loss, SurvivalLabel};
use cect_core::phantom::{generate_cohort, read_dataset, write_dataset, CeCtSequence, PhantomParams};
use cect_core::prognet::{checkpoint, ModelConfig, Readout, Variant};
use cect_core::survstats::{
    c_index_with, column_stats, cox_fit, cox_loglik, kaplan_meier, km_from_csv, km_to_csv, lambda_max,
    lasso_cox_path, lasso_cox_select, log_rank_test, standardize, default_lambda_grid, LassoCv, TieRule,
};
use cect_core::{Error, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;

#[derive(Debug, Clone)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

/// Audit outcomes of every cross-validation run made by the criteria.
pub type AuditLog = Vec<(String, Result<cect_core::harness::AuditReport, String>)>;

fn scratch(tag: &str) -> tempfile::TempDir {
    tempfile::Builder::new().prefix(&format!("cect-{tag}-")).tempdir().unwrap()
}

// ---- 1: gradients ----

pub fn gradients(seeds: u64) -> Verdict {
    let start = Instant::now();
    let worst = |f: fn(u64) -> f64| (0..seeds).map(f).fold(0.0, f64::max);
    let layers = [
        ("conv3d", worst(conv3d_grad_err)),
        ("batchnorm", worst(batchnorm_grad_err)),
        ("linear", worst(linear_grad_err)),
        ("pool", worst(pool_grad_err)),
        ("activation", worst(activation_grad_err)),
        ("cell", worst(cell_grad_err)),
        ("unroll", worst(unroll_grad_err)),
    ];
    let losses = [("cox", worst(cox_loss_grad_err)), ("bce", worst(bce_grad_err))];
    let mut net = KinkedCheck::default();
    let mut net_worst = 0.0f64;
    let mut skipped = 0;
    for v in Variant::ALL {
        for seed in 0..seeds {
            let c = network_grad_check(v, Readout::FinalState, seed, 3);
            net_worst = net_worst.max(c.worst);
            net.probed += c.probed;
            skipped += c.skipped;
        }
    }
    for seed in 0..seeds {
        let c = network_grad_check(Variant::MultiTaskCeConvLstm, Readout::MeanOverPhases, seed, 3);
        net_worst = net_worst.max(c.worst);
        net.probed += c.probed;
        skipped += c.skipped;
    }
    let elapsed = start.elapsed();
    let layer_max = layers.iter().map(|p| p.1).fold(net_worst, f64::max);
    let loss_max = losses.iter().map(|p| p.1).fold(0.0, f64::max);
    let pass = layer_max <= 1e-5 && loss_max <= 1e-6 && skipped * 20 <= net.probed && elapsed < Duration::from_secs(120);
    let parts: Vec<String> = layers
        .iter()
        .chain(&losses)
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .chain([format!("network {net_worst:.1e} ({skipped}/{} kink probes skipped)", net.probed)])
        .collect();
    Verdict::new(pass, format!("{seeds} seeds; {}; {:.1}s", parts.join(", "), elapsed.as_secs_f64()))
}

// ---- 2: scalar LSTM oracle and bounds ----

pub fn lstm_oracle() -> Verdict {
    let mut g = rng(2024);
    let (ic, hc) = (2, 3);
    let cell = ConvLstmCell::new(ic, hc, 3, &mut g).unwrap();
    let oracle = ScalarLstm::from_cell(&cell);
    let mut state = ConvLstmState::zeros(1, hc, [1, 1, 1]);
    let (mut h, mut c) = (vec![0.0; hc], vec![0.0; hc]);
    let mut max_dev = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..ic).map(|_| g.random_range(-2.0..2.0)).collect();
        let xt = Tensor::from_vec(&[1, ic, 1, 1, 1], x.clone()).unwrap();
        let (next, _) = cell_step(&xt, &state, &cell).unwrap();
        let step = oracle.step(&x, &h, &c);
        for k in 0..hc {
            max_dev = max_dev.max((next.hidden.data()[k] - step.h[k]).abs());
            max_dev = max_dev.max((next.cell.data()[k] - step.c[k]).abs());
        }
        (h, c) = (step.h, step.c);
        state = next;
    }

    // 100 sequences of 10 steps from the zero state, weights and inputs scaled up.
    let mut violations = 0usize;
    let mut evaluations = 0usize;
    for s in 0..100 {
        let mut cell = ConvLstmCell::new(2, 2, 3, &mut g).unwrap();
        let k = 1.0 + (s % 5) as f64;
        for gate in cell.gates_mut() {
            gate.input_kernel.value = gate.input_kernel.value.scale(k);
            gate.hidden_kernel.value = gate.hidden_kernel.value.scale(k);
        }
        let mut state = ConvLstmState::zeros(1, 2, [2, 2, 1]);
        for t in 1..=10 {
            let x = rand_tensor(&[1, 2, 2, 2, 1], &mut g).scale(3.0);
            let (next, cache) = cell_step(&x, &state, &cell).unwrap();
            evaluations += 1;
            let gates_ok = cache.gates().iter().all(|v| v.iter().all(|a| *a > 0.0 && *a < 1.0));
            let h_ok = next.hidden.data().iter().all(|v| v.abs() < 1.0);
            let c_ok = next
                .cell
                .data()
                .iter()
                .zip(state.cell.data())
                .all(|(c, p)| c.abs() <= p.abs() + 1.0 && c.abs() <= t as f64);
            violations += usize::from(!(gates_ok && h_ok && c_ok));
            state = next;
        }
    }
    Verdict::new(
        max_dev <= 1e-12 && violations == 0,
        format!("max |Δ| over 100 steps {max_dev:.1e}; {violations} bound violations in {evaluations} evaluations"),
    )
}

// ---- 3: concordance ----

pub fn concordance() -> Verdict {
    let mut g = rng(3);
    let (mut mismatches, mut antisym_checked, mut antisym_bad, mut mono_bad) = (0, 0, 0, 0);
    for inst in 0..500 {
        let n = g.random_range(2..=30);
        let labels = random_labels(n, &mut g, 0.2);
        let tie_free = inst % 2 == 0;
        let y: Vec<f64> = (0..n)
            .map(|_| if tie_free { g.random_range(-1.0..1.0) } else { g.random_range(0..6) as f64 })
            .collect();
        for (rule, credit) in [(TieRule::Strict, 0.0), (TieRule::HalfCredit, 0.5)] {
            let ours = c_index_with(&y, &labels, rule).ok();
            if ours != brute_c_index(&y, &labels, credit) {
                mismatches += 1;
            }
            let mono: Vec<f64> = y.iter().map(|v| (2.0 * v).exp() + v).collect();
            if c_index_with(&mono, &labels, rule).ok() != ours {
                mono_bad += 1;
            }
        }
        if tie_free {
            let neg: Vec<f64> = y.iter().map(|v| -v).collect();
            if let (Ok(a), Ok(b)) = (c_index_with(&y, &labels, TieRule::Strict), c_index_with(&neg, &labels, TieRule::Strict)) {
                antisym_checked += 1;
                if (a + b - 1.0).abs() > 1e-12 {
                    antisym_bad += 1;
                }
            }
        }
    }
    Verdict::new(
        mismatches == 0 && antisym_bad == 0 && mono_bad == 0,
        format!(
            "500 instances: {mismatches} brute-force mismatches, {antisym_bad}/{antisym_checked} antisymmetry failures, {mono_bad} monotone-transform failures"
        ),
    )
}

// ---- 4: Cox loss ----

pub fn cox_loss_properties() -> Verdict {
    let mut g = rng(4);
    let (mut negative, mut shift_dev) = (0, 0.0f64);
    for _ in 0..500 {
        let n = g.random_range(1..=20);
        let labels = random_labels(n, &mut g, 0.2);
        let y: Vec<f64> = (0..n).map(|_| g.random_range(-4.0..4.0)).collect();
        let (l, _) = cox_loss(&y, &labels).unwrap();
        negative += usize::from(l < 0.0);
        let c = g.random_range(-100.0..100.0);
        let moved: Vec<f64> = y.iter().map(|v| v + c).collect();
        shift_dev = shift_dev.max((cox_loss(&moved, &labels).unwrap().0 - l).abs());
    }
    let fixture = [SurvivalLabel::new(1.0, true).unwrap(), SurvivalLabel::new(2.0, false).unwrap()];
    let (l, grad) = cox_loss(&[0.0, 0.0], &fixture).unwrap();
    let fixture_dev = (l - std::f64::consts::LN_2).abs().max((grad[0] + 0.5).abs()).max((grad[1] - 0.5).abs());
    Verdict::new(
        negative == 0 && shift_dev <= 1e-12 && fixture_dev <= 1e-15,
        format!("{negative} negative losses; max shift deviation {shift_dev:.1e}; fixture deviation {fixture_dev:.1e}"),
    )
}

// ---- 5: Cox fit ----

fn exponential(g: &mut impl Rng, rate: f64) -> f64 {
    -(1.0 - g.random::<f64>()).ln() / rate
}

pub fn cox_recovery() -> Verdict {
    let start = Instant::now();
    let mut hits = 0;
    let mut betas = Vec::new();
    for seed in 0..20 {
        let mut g = rng(500 + seed);
        let x: Vec<Vec<f64>> = (0..2000).map(|_| vec![f64::from(u8::from(g.random_bool(0.5)))]).collect();
        let labels: Vec<SurvivalLabel> = x
            .iter()
            .map(|r| {
                let t = exponential(&mut g, 0.1 * r[0].exp());
                let c = g.random_range(0.0..40.0);
                SurvivalLabel::new(t.min(c), t <= c).unwrap()
            })
            .collect();
        let b = cox_fit(&x, &labels).unwrap().beta[0];
        hits += usize::from((b - 1.0).abs() <= 0.15);
        betas.push(b);
    }
    let (mut compared, mut worst) = (0, 0.0f64);
    let mut g = rng(55);
    while compared < 50 {
        let n = g.random_range(5..=15);
        let labels = random_labels(n, &mut g, 0.15);
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![g.random_range(-1.0..1.0)]).collect();
        let ll = |b: f64| cox_loglik(&x, &labels, &[b]).unwrap();
        let b_star = golden_max(ll, -20.0, 20.0, 1e-10);
        if b_star.abs() > 15.0 {
            continue; // monotone likelihood: no finite maximizer
        }
        compared += 1;
        match cox_fit(&x, &labels) {
            Ok(f) => worst = worst.max((f.beta[0] - b_star).abs()),
            Err(_) => worst = f64::INFINITY,
        }
    }
    let elapsed = start.elapsed();
    let spread = betas.iter().cloned().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b), hi.max(b)));
    Verdict::new(
        hits >= 18 && worst <= 1e-4 && elapsed < Duration::from_secs(60),
        format!(
            "{hits}/20 seeds within 0.15 (beta in [{:.3}, {:.3}]); golden-section max |Δβ| {worst:.1e} on {compared} instances; {:.1}s",
            spread.0,
            spread.1,
            elapsed.as_secs_f64()
        ),
    )
}

// ---- 6: Kaplan-Meier and log-rank ----

pub fn km_log_rank() -> Verdict {
    let lab = |t: &[f64], e: &[bool]| -> Vec<SurvivalLabel> {
        t.iter().zip(e).map(|(&t, &e)| SurvivalLabel::new(t, e).unwrap()).collect()
    };
    // (times, events, event times, survival, at risk, events)
    let fixtures: [(Vec<SurvivalLabel>, Vec<f64>, Vec<f64>, Vec<usize>, Vec<usize>); 3] = [
        (
            lab(&[1.0, 2.0, 2.0, 3.0, 4.0, 5.0], &[true, true, false, true, false, true]),
            vec![1.0, 2.0, 3.0, 5.0],
            vec![5.0 / 6.0, 4.0 / 6.0, 4.0 / 9.0, 0.0],
            vec![6, 5, 3, 1],
            vec![1, 1, 1, 1],
        ),
        (
            lab(&[3.0, 1.0, 3.0, 2.0], &[true, true, true, false]),
            vec![1.0, 3.0],
            vec![0.75, 0.0],
            vec![4, 2],
            vec![1, 2],
        ),
        (
            lab(&[2.0, 4.0, 4.0, 6.0, 8.0], &[false, true, true, false, false]),
            vec![4.0],
            vec![0.5],
            vec![4],
            vec![2],
        ),
    ];
    let mut km_bad = 0;
    for (labels, times, surv, at_risk, events) in &fixtures {
        let c = kaplan_meier(labels).unwrap();
        let close = c.survival.len() == surv.len() && c.survival.iter().zip(surv).all(|(a, b)| (a - b).abs() <= 1e-15);
        if c.event_times != *times || c.at_risk != *at_risk || c.n_events != *events || !close {
            km_bad += 1;
        }
    }
    let mut g = rng(6);
    let mut identical_max = 0.0f64;
    for _ in 0..20 {
        let l = random_labels(g.random_range(2..40), &mut g, 0.2);
        identical_max = identical_max.max(log_rank_test(&l, &l).unwrap().chi2.abs());
    }
    let mut perm_dev = 0.0f64;
    for seed in 0..5u64 {
        let mut g = rng(600 + seed);
        let draw = |g: &mut rand_chacha::ChaCha8Rng, rate: f64, n: usize| -> Vec<SurvivalLabel> {
            (0..n)
                .map(|_| {
                    let t = exponential(g, rate);
                    let c = g.random_range(0.0..3.0);
                    SurvivalLabel::new(t.min(c), t <= c).unwrap()
                })
                .collect()
        };
        let a = draw(&mut g, 1.0, 40);
        let b = draw(&mut g, 1.0 + 0.2 * seed as f64, 40);
        let p = log_rank_test(&a, &b).unwrap().p;
        let p_perm = permutation_log_rank_p(&a, &b, 20_000, seed);
        perm_dev = perm_dev.max((p - p_perm).abs());
    }
    Verdict::new(
        km_bad == 0 && identical_max == 0.0 && perm_dev <= 0.02,
        format!(
            "{km_bad}/3 KM fixtures differ; identical-group chi2 max {identical_max:e}; max |p − p_perm| {perm_dev:.4} on 5 instances"
        ),
    )
}

// ---- 7: Lasso-Cox ----

fn planted_design(n: usize, noise: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<SurvivalLabel>) {
    let mut g = rng(seed);
    let normal = rand_distr::StandardNormal;
    let x: Vec<Vec<f64>> = (0..n).map(|_| (0..2 + noise).map(|_| g.sample(normal)).collect()).collect();
    let labels = x
        .iter()
        .map(|r| {
            let t = exponential(&mut g, 0.1 * (0.8 * r[0] - 0.8 * r[1]).exp());
            let c = g.random_range(0.0..25.0);
            SurvivalLabel::new(t.min(c), t <= c).unwrap()
        })
        .collect();
    let (m, s) = column_stats(&x);
    (standardize(&x, &m, &s), labels)
}

pub fn lasso() -> Verdict {
    let (x, l) = planted_design(150, 4, 70);
    let top = lambda_max(&x, &l).unwrap();
    let path = lasso_cox_path(&x, &l, &[2.0 * top, top]).unwrap();
    let zero_ok = path.betas.iter().flatten().all(|b| *b == 0.0);
    let unpen = lasso_cox_path(&x, &l, &[0.0]).unwrap();
    let fit = cox_fit(&x, &l).unwrap();
    let unpen_dev = unpen.betas[0].iter().zip(&fit.beta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut recovered = 0;
    let mut sizes = Vec::new();
    for seed in 0..10 {
        let (x, l) = planted_design(500, 20, 700 + seed);
        let grid = default_lambda_grid(&x, &l).unwrap();
        let sel = lasso_cox_select(&x, &l, &grid, &LassoCv { folds: 5, seed }).unwrap();
        recovered += usize::from(sel.selected.contains(&0) && sel.selected.contains(&1));
        sizes.push(sel.selected.len());
    }
    Verdict::new(
        zero_ok && unpen_dev <= 1e-4 && recovered >= 9,
        format!(
            "zero above lambda_max: {zero_ok}; |β(0) − β_cox| {unpen_dev:.1e}; informative pair selected in {recovered}/10 seeds (support sizes {sizes:?})"
        ),
    )
}

// ---- 8: end-to-end signal recovery ----

pub struct SignalRun {
    pub rep: u64,
    pub multi_c: f64,
    pub multi_bacc: f64,
    pub early_c: f64,
    pub null_mean: f64,
    pub null_sd: f64,
}

/// Mean over folds of the test C-index, with test labels optionally permuted within each fold.
fn fold_mean_c(run: &CvRun, perm: Option<&mut rand_chacha::ChaCha8Rng>) -> f64 {
    let index: HashMap<&str, usize> = run.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut perm = perm;
    let mut cs = Vec::new();
    for f in &run.folds {
        let o = f.outcome.as_ref().unwrap();
        let raw = o.risk_raw.as_ref().unwrap();
        let idx: Vec<usize> = f.split.test.iter().map(|id| index[id.as_str()]).collect();
        let risk: Vec<f64> = idx.iter().map(|&i| raw[i]).collect();
        let mut labels: Vec<SurvivalLabel> = idx.iter().map(|&i| run.labels[i]).collect();
        if let Some(g) = perm.as_deref_mut() {
            labels.shuffle(g);
        }
        if let Ok(c) = c_index_with(&risk, &labels, run.options.ties) {
            cs.push(c);
        }
    }
    cs.iter().sum::<f64>() / cs.len() as f64
}

pub fn signal_cohort(rep: u64) -> Vec<CeCtSequence> {
    generate_cohort(&PhantomParams {
        n_patients: 200,
        extent: 16,
        attenuation_effect: 1.5,
        margin_effect: 2.0,
        seed: rep,
        ..PhantomParams::default()
    })
    .unwrap()
}

pub fn signal_train_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 20,
        ..TrainConfig::default()
    }
}

fn run_and_audit(
    cohort: &[CeCtSequence],
    model: &ModelConfig,
    cfg: &TrainConfig,
    opts: &CvOptions,
    tag: String,
    audits: &mut AuditLog,
) -> CvRun {
    let run = run_cv(cohort, model, cfg, opts).unwrap();
    let dir = scratch("cv");
    let audit = run.write_artifacts(dir.path()).map_err(|e| e.to_string());
    audits.push((tag, audit));
    run
}

pub fn signal_recovery(reps: u64, audits: &mut AuditLog) -> Verdict {
    let start = Instant::now();
    let mut runs = Vec::new();
    for rep in 0..reps {
        let cohort = signal_cohort(rep);
        let opts = CvOptions {
            folds: 3,
            seed: rep,
            radiomics: false,
            ties: TieRule::Strict,
        };
        let cfg = signal_train_config();
        let model = |v| ModelConfig::with_sizes(v, 8, 8, 16);
        let multi = run_and_audit(&cohort, &model(Variant::MultiTaskCeConvLstm), &cfg, &opts, format!("signal rep {rep} multi-task"), audits);
        let early = run_and_audit(&cohort, &model(Variant::EarlyFusionCnn), &cfg, &opts, format!("signal rep {rep} early fusion"), audits);
        if let Some(e) = multi.first_error().or(early.first_error()) {
            return Verdict::new(false, format!("rep {rep}: fold failed: {e}"));
        }
        let multi_c = fold_mean_c(&multi, None);
        let mut g = rng(8000 + rep);
        let null: Vec<f64> = (0..1000).map(|_| fold_mean_c(&multi, Some(&mut g))).collect();
        let (null_mean, null_sd) = cect_core::survstats::mean_std(&null);
        runs.push(SignalRun {
            rep,
            multi_c,
            multi_bacc: multi.mean_metric(|m| m.balanced_accuracy).unwrap_or(f64::NAN),
            early_c: fold_mean_c(&early, None),
            null_mean,
            null_sd,
        });
    }
    let elapsed = start.elapsed();
    let wins = runs.iter().filter(|r| r.multi_c > r.early_c).count();
    let c_ok = runs.iter().all(|r| r.multi_c >= 0.65);
    let z_ok = runs.iter().all(|r| (r.multi_c - r.null_mean) / r.null_sd >= 3.0);
    let bacc_ok = runs.iter().all(|r| r.multi_bacc >= 0.80);
    let need = (4 * reps).div_ceil(5) as usize;
    let rows: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "rep {}: C {:.3} vs early {:.3}, null {:.3}±{:.3} (z {:.1}), bacc {:.3}",
                r.rep,
                r.multi_c,
                r.early_c,
                r.null_mean,
                r.null_sd,
                (r.multi_c - r.null_mean) / r.null_sd,
                r.multi_bacc
            )
        })
        .collect();
    Verdict::new(
        c_ok && z_ok && bacc_ok && wins >= need && elapsed < Duration::from_secs(30 * 60),
        format!("{}; multi-task wins {wins}/{reps}; {:.0}s", rows.join("; "), elapsed.as_secs_f64()),
    )
}

// ---- 9: determinism and persistence ----

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn small_cv_cohort(seed: u64) -> Vec<CeCtSequence> {
    generate_cohort(&PhantomParams {
        n_patients: 40,
        extent: 8,
        seed,
        ..PhantomParams::default()
    })
    .unwrap()
}

pub fn small_cv(cohort: &[CeCtSequence], seed: u64, dir: &Path) -> (CvRun, cect_core::Result<cect_core::harness::AuditReport>) {
    let model = tiny_config(Variant::MultiTaskCeConvLstm);
    let cfg = TrainConfig {
        max_epochs: 2,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    };
    let opts = CvOptions {
        folds: 2,
        seed,
        radiomics: true,
        ties: TieRule::Strict,
    };
    let run = run_cv(cohort, &model, &cfg, &opts).unwrap();
    let audit = run.write_artifacts(dir);
    (run, audit)
}

fn analysis_outputs(run: &CvRun, dir: &Path) {
    let rows = run.signatures();
    let labels: Vec<SurvivalLabel> = rows.iter().map(|r| r.label).collect();
    let deep: Vec<f64> = rows.iter().map(|r| r.deep.unwrap()).collect();
    let factors = vec![
        Factor { name: "deep_signature".into(), values: deep.clone() },
        Factor { name: "r1_margin".into(), values: rows.iter().map(|r| r.margin.as_f64()).collect() },
    ];
    let subgroups = vec![Subgroup { name: "all".into(), members: vec![true; rows.len()] }];
    let opts = AnalysisOptions { ties: TieRule::Strict, univariate_score: UnivariateScore::Factor };
    let report = run_analysis(&factors, &deep, &labels, &subgroups, &opts).unwrap();
    cect_core::harness::analysis::write_cox(dir, &report).unwrap();
    cect_core::harness::analysis::write_km(dir, &report.km).unwrap();
}

pub fn determinism(audits: &mut AuditLog) -> Verdict {
    let mut problems = Vec::new();
    let cohort = small_cv_cohort(9);
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    let (run_a, audit_a) = small_cv(&cohort, 9, a.path());
    let (run_b, audit_b) = small_cv(&cohort, 9, b.path());
    audits.push(("determinism run a".into(), audit_a.map_err(|e| e.to_string())));
    audits.push(("determinism run b".into(), audit_b.map_err(|e| e.to_string())));
    analysis_outputs(&run_a, a.path());
    analysis_outputs(&run_b, b.path());
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    let csvs = ta.iter().filter(|(p, _)| p.extension().is_some_and(|e| e == "csv")).count();
    if ta != tb {
        problems.push("repeated runs differ".to_string());
    }

    // Dataset round trip.
    let data = scratch("data");
    write_dataset(&cohort, data.path()).unwrap();
    if read_dataset(data.path()).unwrap() != cohort {
        problems.push("dataset round trip differs".into());
    }
    // KM CSV replay.
    let curve = kaplan_meier(&run_a.labels).unwrap();
    if km_from_csv(&km_to_csv(&curve)).unwrap() != curve {
        problems.push("KM CSV replay differs".into());
    }
    // Checkpoint round trip through eval.
    let mut net = run_a.outcomes().next().unwrap().model.clone();
    let ckpt = data.path().join("model.cepn");
    checkpoint::save(&mut net, &ckpt).unwrap();
    let mut loaded = checkpoint::load(&ckpt).unwrap();
    let refs: Vec<&CeCtSequence> = cohort.iter().collect();
    let (p1, p2) = (net.predict(&refs, 16).unwrap(), loaded.predict(&refs, 16).unwrap());
    let bytes_again = checkpoint::to_bytes(&mut loaded);
    if p1.risk != p2.risk || p1.margin_logit != p2.margin_logit || bytes_again != fs::read(&ckpt).unwrap() {
        problems.push("checkpoint round trip differs".into());
    }

    // Truncations.
    let mut corrupt = 0;
    let bytes = fs::read(&ckpt).unwrap();
    for cut in [0, 3, 9, bytes.len() / 2, bytes.len() - 1] {
        fs::write(&ckpt, &bytes[..cut]).unwrap();
        corrupt += usize::from(matches!(checkpoint::load(&ckpt), Err(Error::Corrupt { .. })));
    }
    let vol = fs::read_dir(data.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "cect"))
        .unwrap();
    let vbytes = fs::read(&vol).unwrap();
    for cut in [2, 10, vbytes.len() - 8] {
        fs::write(&vol, &vbytes[..cut]).unwrap();
        corrupt += usize::from(matches!(read_dataset(data.path()), Err(Error::Corrupt { .. })));
    }
    fs::write(&vol, &vbytes).unwrap();
    let manifest = data.path().join("manifest.csv");
    let mtext = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, &mtext[..mtext.len() - 12]).unwrap();
    corrupt += usize::from(matches!(read_dataset(data.path()), Err(Error::Corrupt { .. })));
    if corrupt != 9 {
        problems.push(format!("{corrupt}/9 truncations reported as corrupt"));
    }
    Verdict::new(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} files ({csvs} CSV) identical across runs; dataset, checkpoint and KM round trips exact; 9/9 truncations corrupt", ta.len())
        } else {
            problems.join("; ")
        },
    )
}

// ---- 10: leakage audit ----

pub fn leakage(audits: &mut AuditLog) -> Verdict {
    // The audit must also reject tampered artifacts.
    let dir = scratch("tamper");
    let cohort = small_cv_cohort(10);
    let (_, audit) = small_cv(&cohort, 10, dir.path());
    audits.push(("tamper baseline".into(), audit.map_err(|e| e.to_string())));
    let meta = dir.path().join("fold_0/fold.txt");
    let original = fs::read_to_string(&meta).unwrap();
    let tampered: String = original
        .lines()
        .map(|l| match l.split_once('=') {
            Some((k, v)) if k.trim() == "deep_mean" => format!("deep_mean = {}\n", v.trim().parse::<f64>().unwrap() + 1e-9),
            _ => format!("{l}\n"),
        })
        .collect();
    fs::write(&meta, tampered).unwrap();
    let caught_stats = audit_cv_artifacts(dir.path()).is_err();
    fs::write(&meta, original).unwrap();
    let split = dir.path().join("fold_1/split.csv");
    let text = fs::read_to_string(&split).unwrap();
    fs::write(&split, text.replacen(",test", ",train", 1)).unwrap();
    let caught_split = audit_cv_artifacts(dir.path()).is_err();

    let failed: Vec<String> = audits
        .iter()
        .filter_map(|(tag, a)| a.as_ref().err().map(|e| format!("{tag}: {e}")))
        .collect();
    let rows: usize = audits.iter().filter_map(|(_, a)| a.as_ref().ok()).map(|r| r.risk_rows_checked).sum();
    let selections: usize = audits.iter().filter_map(|(_, a)| a.as_ref().ok()).map(|r| r.selections_checked).sum();
    Verdict::new(
        failed.is_empty() && caught_stats && caught_split,
        if failed.is_empty() {
            format!(
                "{} CV runs audited ({rows} risk rows, {selections} lasso selections replayed); tampered statistics caught: {caught_stats}; tampered split caught: {caught_split}",
                audits.len()
            )
        } else {
            failed.join("; ")
        },
    )
}
