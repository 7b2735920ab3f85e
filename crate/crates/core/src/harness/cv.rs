//! Outer cross-validation with persisted, auditable fold artifacts.
//!
//! Layout under the output directory:
//!
//! ```text
//! metrics.csv                     per-fold and pooled metrics
//! signatures.csv                  test-fold signatures, all folds concatenated
//! features.csv                    hand-crafted features of every patient
//! fold_<k>/split.csv              patient_id,role
//! fold_<k>/risk.csv               per-patient raw and normalized signatures
//! fold_<k>/fold.txt               normalization and selection state
//! fold_<k>/train_log.csv
//! fold_<k>/checkpoint.cepn
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::folds::{make_folds, FoldSplit};
use crate::harness::metrics::{compute_metrics, Metrics};
use crate::harness::train::{train, train_log_csv, EpochLog, TrainConfig};
use crate::kv::KeyValues;
use crate::losses::{MarginLabel, SurvivalLabel};
use crate::phantom::CeCtSequence;
use crate::prognet::{checkpoint, ModelConfig, PrognosisNet};
use crate::survstats::{
    column_stats, default_lambda_grid, feature_names, fmt_f64, fmt_opt, lasso_cox_select, mean_std,
    simple_feature_extract, standardize, LassoCv, TieRule,
};

/// Deterministic child seed for `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    // splitmix64 finalizer over a mixed input.
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const SEED_TRAIN: u64 = 1;
const SEED_LASSO: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub folds: usize,
    pub seed: u64,
    /// Also build the Lasso-Cox feature signature per fold.
    pub radiomics: bool,
    pub ties: TieRule,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            radiomics: true,
            ties: TieRule::Strict,
        }
    }
}

/// Standardization, Lasso selection and signature of one training fold.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiomicsFold {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub lambda: f64,
    pub selected: Vec<usize>,
    pub beta: Vec<f64>,
    /// Linear predictor of every patient, in cohort order.
    pub raw: Vec<f64>,
    pub norm_mean: f64,
    pub norm_std: f64,
}

/// Fits the feature signature on the rows in `training` only.
pub fn radiomics_fold(
    features: &[Vec<f64>],
    labels: &[SurvivalLabel],
    training: &[usize],
    lasso_seed: u64,
) -> Result<RadiomicsFold> {
    let train_x: Vec<Vec<f64>> = training.iter().map(|&i| features[i].clone()).collect();
    let train_l: Vec<SurvivalLabel> = training.iter().map(|&i| labels[i]).collect();
    let (feature_mean, feature_std) = column_stats(&train_x);
    let z = standardize(&train_x, &feature_mean, &feature_std);
    let grid = default_lambda_grid(&z, &train_l)?;
    let sel = lasso_cox_select(
        &z,
        &train_l,
        &grid,
        &LassoCv {
            folds: 5,
            seed: lasso_seed,
        },
    )?;
    let beta = sel.path.betas[sel.lambda_index].clone();
    let all_z = standardize(features, &feature_mean, &feature_std);
    let raw: Vec<f64> = all_z
        .iter()
        .map(|r| r.iter().zip(&beta).map(|(x, b)| x * b).sum())
        .collect();
    let train_raw: Vec<f64> = training.iter().map(|&i| raw[i]).collect();
    let (norm_mean, norm_std) = mean_std(&train_raw);
    Ok(RadiomicsFold {
        feature_mean,
        feature_std,
        lambda: sel.lambda,
        selected: sel.selected,
        beta,
        raw,
        norm_mean,
        norm_std,
    })
}

pub struct FoldResult {
    pub split: FoldSplit,
    pub outcome: std::result::Result<FoldOutcome, Error>,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub metrics: Metrics,
    pub model: PrognosisNet,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub diverged: bool,
    /// Raw risk of every patient in cohort order; `None` for margin-only models.
    pub risk_raw: Option<Vec<f64>>,
    /// Mean and population std of the training-fold risks.
    pub risk_norm: Option<(f64, f64)>,
    pub radiomics: Option<RadiomicsFold>,
    /// Concordance of the normalized feature signature on the test fold.
    pub radiomics_c_index: Option<f64>,
}

impl FoldOutcome {
    pub fn normalized_risk(&self, i: usize) -> Option<f64> {
        let (m, s) = self.risk_norm?;
        Some((self.risk_raw.as_ref()?[i] - m) / s)
    }

    pub fn normalized_radiomics(&self, i: usize) -> Option<f64> {
        let r = self.radiomics.as_ref()?;
        (r.norm_std > 0.0).then(|| (r.raw[i] - r.norm_mean) / r.norm_std)
    }
}

pub struct CvRun {
    pub options: CvOptions,
    pub folds: Vec<FoldResult>,
    /// Patient ids in cohort order.
    pub ids: Vec<String>,
    pub labels: Vec<SurvivalLabel>,
    pub margins: Vec<MarginLabel>,
    pub features: Option<Vec<Vec<f64>>>,
}

fn index_of(ids: &[String]) -> HashMap<&str, usize> {
    ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect()
}

fn run_fold(
    cohort: &[CeCtSequence],
    split: &FoldSplit,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    opts: &CvOptions,
    features: Option<&[Vec<f64>]>,
) -> Result<FoldOutcome> {
    let ids: Vec<String> = cohort.iter().map(|s| s.patient_id.clone()).collect();
    let index = index_of(&ids);
    let pick = |list: &[String]| -> Vec<usize> { list.iter().map(|id| index[id.as_str()]).collect() };
    let (tr, va, te) = (pick(&split.train), pick(&split.validation), pick(&split.test));
    // Cohort order, so the audit can replay every reduction bit for bit.
    let mut training: Vec<usize> = tr.iter().chain(&va).copied().collect();
    training.sort_unstable();
    let refs = |idx: &[usize]| -> Vec<&CeCtSequence> { idx.iter().map(|&i| &cohort[i]).collect() };

    let cfg = TrainConfig {
        seed: derive_seed(opts.seed, SEED_TRAIN, split.fold as u64),
        ..train_cfg.clone()
    };
    let outcome = train(model, &refs(&tr), &refs(&va), &cfg)?;
    let mut net = outcome.model;
    let all: Vec<&CeCtSequence> = cohort.iter().collect();
    let out = net.predict(&all, 16)?;
    let risk_norm = match &out.risk {
        Some(r) => {
            let train_r: Vec<f64> = training.iter().map(|&i| r[i]).collect();
            let (m, s) = mean_std(&train_r);
            if !(s > 0.0) {
                return Err(Error::ZeroVariance(format!("fold {}: training risks are constant", split.fold)));
            }
            Some((m, s))
        }
        None => None,
    };
    let test_labels: Vec<SurvivalLabel> = te.iter().map(|&i| cohort[i].label).collect();
    let test_margins: Vec<MarginLabel> = te.iter().map(|&i| cohort[i].margin).collect();
    let test_risk: Option<Vec<f64>> = out
        .risk
        .as_ref()
        .zip(risk_norm)
        .map(|(r, (m, s))| te.iter().map(|&i| (r[i] - m) / s).collect());
    let test_logits: Option<Vec<f64>> = out.margin_logit.as_ref().map(|z| te.iter().map(|&i| z[i]).collect());
    let metrics = compute_metrics(
        test_risk.as_deref(),
        test_logits.as_deref(),
        &test_labels,
        &test_margins,
        opts.ties,
    )?;

    let mut radiomics = None;
    let mut radiomics_c_index = None;
    if let Some(features) = features {
        let labels: Vec<SurvivalLabel> = cohort.iter().map(|s| s.label).collect();
        let r = radiomics_fold(
            features,
            &labels,
            &training,
            derive_seed(opts.seed, SEED_LASSO, split.fold as u64),
        )?;
        if r.norm_std > 0.0 {
            let sig: Vec<f64> = te.iter().map(|&i| (r.raw[i] - r.norm_mean) / r.norm_std).collect();
            radiomics_c_index = compute_metrics(Some(&sig), None, &test_labels, &test_margins, opts.ties)?.c_index;
        }
        radiomics = Some(r);
    }
    Ok(FoldOutcome {
        metrics,
        model: net,
        log: outcome.log,
        best_epoch: outcome.best_epoch,
        diverged: outcome.diverged,
        risk_raw: out.risk,
        risk_norm,
        radiomics,
        radiomics_c_index,
    })
}

/// Trains and evaluates one model per outer fold. A failing fold is
/// recorded in its [`FoldResult`] and the remaining folds still run.
pub fn run_cv(
    cohort: &[CeCtSequence],
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    opts: &CvOptions,
) -> Result<CvRun> {
    train_cfg.validate()?;
    model.validate()?;
    let splits = make_folds(cohort, opts.folds, opts.seed)?;
    let features = if opts.radiomics {
        Some(cohort.iter().map(simple_feature_extract).collect::<Result<Vec<_>>>()?)
    } else {
        None
    };
    let folds = splits
        .into_iter()
        .map(|split| {
            let outcome = run_fold(cohort, &split, model, train_cfg, opts, features.as_deref());
            FoldResult { split, outcome }
        })
        .collect();
    Ok(CvRun {
        options: opts.clone(),
        folds,
        ids: cohort.iter().map(|s| s.patient_id.clone()).collect(),
        labels: cohort.iter().map(|s| s.label).collect(),
        margins: cohort.iter().map(|s| s.margin).collect(),
        features,
    })
}

pub const METRICS_HEADER: &str = "fold,c_index,balanced_accuracy,sensitivity,specificity,radiomics_c_index";
pub const SIGNATURES_HEADER: &str = "patient_id,fold,time,event,margin,deep_signature,radiomics_signature";

impl CvRun {
    pub fn outcomes(&self) -> impl Iterator<Item = &FoldOutcome> {
        self.folds.iter().filter_map(|f| f.outcome.as_ref().ok())
    }

    pub fn first_error(&self) -> Option<&Error> {
        self.folds.iter().find_map(|f| f.outcome.as_ref().err())
    }

    /// Mean of a metric over the folds where it is defined.
    pub fn mean_metric(&self, pick: impl Fn(&Metrics) -> Option<f64>) -> Option<f64> {
        let v: Vec<f64> = self.outcomes().filter_map(|o| pick(&o.metrics)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for f in &self.folds {
            match &f.outcome {
                Ok(o) => {
                    let v = o.metrics.values();
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        f.split.fold,
                        fmt_opt(v[0]),
                        fmt_opt(v[1]),
                        fmt_opt(v[2]),
                        fmt_opt(v[3]),
                        fmt_opt(o.radiomics_c_index)
                    ));
                }
                Err(_) => out.push_str(&format!("{},failed,failed,failed,failed,failed\n", f.split.fold)),
            }
        }
        let mean_rad = {
            let v: Vec<f64> = self.outcomes().filter_map(|o| o.radiomics_c_index).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        out.push_str(&format!(
            "mean,{},{},{},{},{}\n",
            fmt_opt(self.mean_metric(|m| m.c_index)),
            fmt_opt(self.mean_metric(|m| m.balanced_accuracy)),
            fmt_opt(self.mean_metric(|m| m.sensitivity)),
            fmt_opt(self.mean_metric(|m| m.specificity)),
            fmt_opt(mean_rad)
        ));
        out
    }

    /// One row per patient from the fold in which it was tested.
    pub fn signatures(&self) -> Vec<SignatureRow> {
        let index = index_of(&self.ids);
        let mut rows = Vec::new();
        for f in &self.folds {
            let o = f.outcome.as_ref().ok();
            for id in &f.split.test {
                let i = index[id.as_str()];
                rows.push(SignatureRow {
                    patient_id: id.clone(),
                    fold: f.split.fold,
                    label: self.labels[i],
                    margin: self.margins[i],
                    deep: o.and_then(|o| o.normalized_risk(i)),
                    radiomics: o.and_then(|o| o.normalized_radiomics(i)),
                });
            }
        }
        rows
    }

    /// Writes every artifact, then audits them from disk.
    pub fn write_artifacts(&self, dir: &Path) -> Result<AuditReport> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        fs::write(dir.join("signatures.csv"), signatures_csv(&self.signatures()))?;
        if let Some(features) = &self.features {
            let mut text = format!("patient_id,{}\n", feature_names(3).join(","));
            for (id, row) in self.ids.iter().zip(features) {
                let vals: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
                text.push_str(&format!("{id},{}\n", vals.join(",")));
            }
            fs::write(dir.join("features.csv"), text)?;
        }
        for f in &self.folds {
            let fd = dir.join(format!("fold_{}", f.split.fold));
            fs::create_dir_all(&fd)?;
            let mut split = String::from("patient_id,role\n");
            for (role, list) in [("train", &f.split.train), ("validation", &f.split.validation), ("test", &f.split.test)] {
                for id in list {
                    split.push_str(&format!("{id},{role}\n"));
                }
            }
            fs::write(fd.join("split.csv"), split)?;
            let Ok(o) = &f.outcome else { continue };
            let mut risk = String::from("patient_id,time,event,deep_raw,deep_normalized,radiomics_raw,radiomics_normalized\n");
            for (i, id) in self.ids.iter().enumerate() {
                risk.push_str(&format!(
                    "{id},{},{},{},{},{},{}\n",
                    fmt_f64(self.labels[i].time),
                    u8::from(self.labels[i].event),
                    fmt_opt(o.risk_raw.as_ref().map(|r| r[i])),
                    fmt_opt(o.normalized_risk(i)),
                    fmt_opt(o.radiomics.as_ref().map(|r| r.raw[i])),
                    fmt_opt(o.normalized_radiomics(i)),
                ));
            }
            fs::write(fd.join("risk.csv"), risk)?;
            let mut meta = KeyValues::default();
            meta.insert("lasso_seed", derive_seed(self.options.seed, SEED_LASSO, f.split.fold as u64));
            meta.insert("best_epoch", o.best_epoch);
            meta.insert("diverged", o.diverged);
            if let Some((m, s)) = o.risk_norm {
                meta.insert("deep_mean", fmt_f64(m));
                meta.insert("deep_std", fmt_f64(s));
            }
            if let Some(r) = &o.radiomics {
                meta.insert("feature_mean", join(&r.feature_mean));
                meta.insert("feature_std", join(&r.feature_std));
                meta.insert("lambda", fmt_f64(r.lambda));
                meta.insert(
                    "selected",
                    r.selected.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "),
                );
                meta.insert("beta", join(&r.beta));
                meta.insert("radiomics_mean", fmt_f64(r.norm_mean));
                meta.insert("radiomics_std", fmt_f64(r.norm_std));
            }
            fs::write(fd.join("fold.txt"), meta.to_text())?;
            fs::write(fd.join("train_log.csv"), train_log_csv(&o.log))?;
            let mut model = o.model.clone();
            checkpoint::save(&mut model, &fd.join("checkpoint.cepn"))?;
        }
        audit_cv_artifacts(dir)
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignatureRow {
    pub patient_id: String,
    pub fold: usize,
    pub label: SurvivalLabel,
    pub margin: MarginLabel,
    pub deep: Option<f64>,
    pub radiomics: Option<f64>,
}

pub fn signatures_csv(rows: &[SignatureRow]) -> String {
    let mut out = format!("{SIGNATURES_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.patient_id,
            r.fold,
            fmt_f64(r.label.time),
            u8::from(r.label.event),
            r.margin.as_f64() as u8,
            fmt_opt(r.deep),
            fmt_opt(r.radiomics)
        ));
    }
    out
}

fn parse_opt(s: &str) -> std::result::Result<Option<f64>, ()> {
    if s == "null" {
        Ok(None)
    } else {
        s.parse().map(Some).map_err(|_| ())
    }
}

pub fn parse_signatures(text: &str) -> Result<Vec<SignatureRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SIGNATURES_HEADER) {
        return Err(Error::invalid(format!("signatures file must start with {SIGNATURES_HEADER:?}")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = || Error::invalid(format!("signatures row {}: {line:?}", n + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad());
            }
            let event: u8 = f[3].parse().map_err(|_| bad())?;
            if event > 1 {
                return Err(bad());
            }
            Ok(SignatureRow {
                patient_id: f[0].to_string(),
                fold: f[1].parse().map_err(|_| bad())?,
                label: SurvivalLabel::new(f[2].parse().map_err(|_| bad())?, event == 1)?,
                margin: MarginLabel::from_bit(f[4].parse().map_err(|_| bad())?)?,
                deep: parse_opt(f[5]).map_err(|_| bad())?,
                radiomics: parse_opt(f[6]).map_err(|_| bad())?,
            })
        })
        .collect()
}

/// What the leakage audit verified.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AuditReport {
    pub folds_checked: usize,
    pub risk_rows_checked: usize,
    pub selections_checked: usize,
}

fn audit_fail(dir: &Path, msg: impl Into<String>) -> Error {
    Error::Numerical(format!("leakage audit failed in {}: {}", dir.display(), msg.into()))
}

fn read_csv(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect())
}

fn floats(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|v| v.parse().map_err(|_| Error::invalid(format!("bad number {v:?}"))))
        .collect()
}

/// Recomputes every training-fold statistic from the persisted artifacts and
/// checks it reproduces the persisted values bit for bit, and that test
/// folds partition the cohort.
pub fn audit_cv_artifacts(dir: &Path) -> Result<AuditReport> {
    let mut report = AuditReport::default();
    let features_path = dir.join("features.csv");
    let features: Option<HashMap<String, Vec<f64>>> = if features_path.exists() {
        let mut map = HashMap::new();
        for row in read_csv(&features_path)? {
            let vals = row[1..]
                .iter()
                .map(|v| v.parse().map_err(|_| Error::invalid(format!("bad feature {v:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            map.insert(row[0].clone(), vals);
        }
        Some(map)
    } else {
        None
    };
    let mut tested: HashMap<String, usize> = HashMap::new();
    let mut cohort_size = None;
    for fold in 0.. {
        let fd = dir.join(format!("fold_{fold}"));
        if !fd.exists() {
            break;
        }
        report.folds_checked += 1;
        let split = read_csv(&fd.join("split.csv"))?;
        let role: HashMap<String, String> = split.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
        if role.len() != split.len() {
            return Err(audit_fail(&fd, "a patient appears in more than one role"));
        }
        if *cohort_size.get_or_insert(role.len()) != role.len() {
            return Err(audit_fail(&fd, "folds cover different cohorts"));
        }
        for (id, r) in &role {
            if r == "test" {
                if let Some(prev) = tested.insert(id.clone(), fold) {
                    return Err(audit_fail(&fd, format!("{id} tested in folds {prev} and {fold}")));
                }
            }
        }
        let risk_path = fd.join("risk.csv");
        if !risk_path.exists() {
            continue;
        }
        let rows = read_csv(&risk_path)?;
        let meta = KeyValues::parse(&fs::read_to_string(fd.join("fold.txt"))?)?;
        let training: Vec<usize> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| role.get(&r[0]).is_some_and(|x| x != "test"))
            .map(|(i, _)| i)
            .collect();
        if training.len() + rows.iter().filter(|r| role.get(&r[0]).map(String::as_str) == Some("test")).count()
            != rows.len()
        {
            return Err(audit_fail(&fd, "risk rows do not match the split"));
        }
        let col = |c: usize| -> Result<Vec<Option<f64>>> {
            rows.iter()
                .map(|r| parse_opt(&r[c]).map_err(|_| Error::invalid(format!("bad value {:?}", r[c]))))
                .collect()
        };
        for (raw_c, norm_c, mean_key, std_key) in [(3, 4, "deep_mean", "deep_std"), (5, 6, "radiomics_mean", "radiomics_std")] {
            let raw = col(raw_c)?;
            let norm = col(norm_c)?;
            if raw.iter().all(Option::is_none) {
                continue;
            }
            let train_raw: Vec<f64> = training.iter().filter_map(|&i| raw[i]).collect();
            let (m, s) = mean_std(&train_raw);
            let stored = (meta.get::<f64>(mean_key)?, meta.get::<f64>(std_key)?);
            if stored != (Some(m), Some(s)) {
                return Err(audit_fail(
                    &fd,
                    format!("{mean_key}/{std_key} {stored:?} differ from training-fold ({m}, {s})"),
                ));
            }
            for (i, (r, n)) in raw.iter().zip(&norm).enumerate() {
                let expect = r.filter(|_| s > 0.0).map(|r| (r - m) / s);
                if expect != *n {
                    return Err(audit_fail(&fd, format!("normalized value of row {i} is not training-fold normalized")));
                }
                report.risk_rows_checked += 1;
            }
        }
        if let (Some(features), Some(selected)) = (&features, meta.get_str("selected")) {
            let x: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| features.get(&r[0]).cloned().ok_or_else(|| audit_fail(&fd, format!("no features for {}", r[0]))))
                .collect::<Result<_>>()?;
            let labels: Vec<SurvivalLabel> = rows
                .iter()
                .map(|r| {
                    let t: f64 = r[1].parse().map_err(|_| audit_fail(&fd, "bad time"))?;
                    SurvivalLabel::new(t, r[2] == "1")
                })
                .collect::<Result<_>>()?;
            let seed = meta
                .get::<u64>("lasso_seed")?
                .ok_or_else(|| audit_fail(&fd, "missing lasso_seed"))?;
            let again = radiomics_fold(&x, &labels, &training, seed)?;
            let stored_sel: Vec<usize> = selected
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| audit_fail(&fd, "bad selection")))
                .collect::<Result<_>>()?;
            let stored_mean = floats(meta.get_str("feature_mean").unwrap_or(""))?;
            let stored_std = floats(meta.get_str("feature_std").unwrap_or(""))?;
            let stored_beta = floats(meta.get_str("beta").unwrap_or(""))?;
            if again.selected != stored_sel
                || again.feature_mean != stored_mean
                || again.feature_std != stored_std
                || again.beta != stored_beta
                || Some(again.lambda) != meta.get::<f64>("lambda")?
            {
                return Err(audit_fail(&fd, "feature selection is not reproducible from the training fold alone"));
            }
            let raw = col(5)?;
            if again.raw.iter().zip(&raw).any(|(a, b)| Some(*a) != *b) {
                return Err(audit_fail(&fd, "feature signature differs from the training-fold refit"));
            }
            report.selections_checked += 1;
        }
    }
    if report.folds_checked == 0 {
        return Err(Error::invalid(format!("no fold artifacts under {}", dir.display())));
    }
    if Some(tested.len()) != cohort_size {
        return Err(audit_fail(dir, "test folds do not cover the cohort"));
    }
    Ok(report)
}
