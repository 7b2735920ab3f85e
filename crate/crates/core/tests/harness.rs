//! Cross-validation, ablation, analysis and persistence.

mod common;

use cect_core::harness::{
    ablation_csv, evaluate, run_ablation, run_analysis, AnalysisOptions, Cell, CvOptions, Factor, Subgroup,
    TrainConfig, UnivariateScore,
};
use cect_core::phantom::{generate_cohort, CeCtSequence, PhantomParams};
use cect_core::prognet::{checkpoint, Variant};
use cect_core::survstats::TieRule;
use cect_core::Error;
use common::criteria::{self, AuditLog};
use common::*;

fn quick_train(seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 2,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    }
}

fn opts(folds: usize, seed: u64) -> CvOptions {
    CvOptions {
        folds,
        seed,
        radiomics: false,
        ties: TieRule::Strict,
    }
}

#[test]
fn repeated_runs_are_byte_identical_and_round_trips_exact() {
    let v = criteria::determinism(&mut AuditLog::new());
    assert!(v.pass, "{}", v.detail);
}

#[test]
fn audit_passes_and_catches_tampering() {
    let v = criteria::leakage(&mut AuditLog::new());
    assert!(v.pass, "{}", v.detail);
}

#[test]
fn duplicated_ablation_variant_gives_identical_rows() {
    let cohort = criteria::small_cv_cohort(21);
    let base = tiny_config(Variant::EarlyFusionCnn);
    let rows = run_ablation(
        &cohort,
        &[Variant::EarlyFusionCnn, Variant::EarlyFusionCnn],
        &base,
        &quick_train(1),
        &opts(2, 1),
    )
    .unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0], rows[1]);
    assert!(matches!(rows[0].cell, Cell::Value { std: Some(_), .. }));
}

#[test]
fn single_variant_ablation_lists_every_margin_metric() {
    let cohort = criteria::small_cv_cohort(22);
    let rows = run_ablation(
        &cohort,
        &[Variant::MultiTaskCeConvLstm],
        &tiny_config(Variant::MultiTaskCeConvLstm),
        &quick_train(2),
        &opts(2, 2),
    )
    .unwrap();
    let csv = ablation_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "variant,metric,mean,std");
    let metrics: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(metrics, ["c_index", "balanced_accuracy", "sensitivity", "specificity"]);
}

#[test]
fn empty_ablation_is_a_config_error() {
    let cohort = criteria::small_cv_cohort(23);
    let r = run_ablation(&cohort, &[], &tiny_config(Variant::EarlyFusionCnn), &quick_train(3), &opts(2, 3));
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn checkpoint_then_eval_gives_identical_metrics() {
    let cohort = criteria::small_cv_cohort(24);
    let dir = tempfile::tempdir().unwrap();
    let (run, audit) = criteria::small_cv(&cohort, 24, dir.path());
    audit.unwrap();
    let mut net = run.outcomes().next().unwrap().model.clone();
    let refs: Vec<&CeCtSequence> = cohort.iter().collect();
    let before = evaluate(&mut net, &refs[..20], Some(&refs[20..]), TieRule::Strict).unwrap();
    let mut loaded = checkpoint::load(&dir.path().join("fold_0/checkpoint.cepn")).unwrap();
    let after = evaluate(&mut loaded, &refs[..20], Some(&refs[20..]), TieRule::Strict).unwrap();
    assert_eq!(format!("{before:?}"), format!("{after:?}"));
}

#[test]
fn planted_iso_factor_is_protective_in_cox_analysis() {
    let cohort = generate_cohort(&PhantomParams {
        n_patients: 500,
        extent: 8,
        seed: 25,
        ..PhantomParams::default()
    })
    .unwrap();
    let labels: Vec<_> = cohort.iter().map(|s| s.label).collect();
    let iso: Vec<f64> = cohort.iter().map(|s| s.truth.unwrap().iso).collect();
    let r1: Vec<f64> = cohort.iter().map(|s| s.margin.as_f64()).collect();
    let factors = vec![
        Factor { name: "iso".into(), values: iso.clone() },
        Factor { name: "r1_margin".into(), values: r1.clone() },
    ];
    let subgroups = vec![
        Subgroup { name: "all".into(), members: vec![true; 500] },
        Subgroup { name: "r0".into(), members: r1.iter().map(|v| *v == 0.0).collect() },
    ];
    let risk: Vec<f64> = iso.iter().map(|u| -u).collect();
    let opts = AnalysisOptions {
        ties: TieRule::Strict,
        univariate_score: UnivariateScore::Factor,
    };
    let report = run_analysis(&factors, &risk, &labels, &subgroups, &opts).unwrap();
    let (name, fit) = &report.univariate[0];
    assert_eq!(name, "iso");
    assert!(fit.hr[0] < 1.0 && fit.p_wald[0] < 0.01, "{fit:?}");
    let multi = report.multivariate.unwrap();
    assert!(multi.hr[0] < 1.0 && multi.hr[1] > 1.0, "{multi:?}");
    let all = &report.km[0];
    assert!(all.log_rank.unwrap().p < 0.01);
    assert_eq!(all.n_low + all.n_high, 500);
}
