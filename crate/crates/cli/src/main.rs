//! `cect`: phantom generation, training, cross-validation and survival analysis.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use cect_core::harness::analysis::{
    cox_tables, km_by_median, write_cox, write_km, AnalysisReport, Factor, Subgroup,
};
use cect_core::harness::cv::parse_signatures;
use cect_core::harness::{
    ablation_csv, evaluate, make_folds, run_ablation, run_cv, train, train_log_csv, Metrics, Settings,
};
use cect_core::kv::KeyValues;
use cect_core::phantom::{generate_cohort, read_dataset, write_dataset, CeCtSequence};
use cect_core::prognet::checkpoint;
use cect_core::survstats::{fmt_opt, mean_std};
use cect_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cect", version, about = "Multi-phase CT survival and margin modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat `key = value` settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` (and the cohort seed unless `phantom_seed` is set).
    #[arg(long)]
    seed: Option<u64>,
    /// Full-size model defaults: 64³ crops, width 32, 128 hidden channels, 500 epochs.
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic cohorts.
    Phantom {
        #[command(subcommand)]
        action: PhantomCmd,
    },
    /// Train one model on a stratified split and score its held-out fold.
    Train(Common),
    /// Score a checkpoint on every patient of a dataset.
    Eval(Common),
    /// Cross-validation.
    Cv {
        #[command(subcommand)]
        action: CvCmd,
    },
    /// Cross-validate each listed variant on identical folds.
    Ablation(Common),
    /// Survival statistics over pooled test-fold signatures.
    Stats {
        #[command(subcommand)]
        action: StatsCmd,
    },
}

#[derive(Subcommand)]
enum PhantomCmd {
    Gen(Common),
}

#[derive(Subcommand)]
enum CvCmd {
    Run(Common),
}

#[derive(Subcommand)]
enum StatsCmd {
    /// Univariate and multivariate Cox tables.
    Cox(Common),
    /// Median-stratified Kaplan-Meier curves per margin subgroup.
    Km(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Numerical(_) | Error::Singular { .. } | Error::MissingCache => 4,
        _ => 3,
    }
}

fn load_settings(c: &Common) -> Result<Settings, Error> {
    let text = match &c.config {
        Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let kv = KeyValues::parse(&text)?;
    let s = Settings::from_kv(&kv, c.paper_scale.then_some(true))?;
    Ok(match c.seed {
        Some(seed) => s.with_seed(seed, &kv),
        None => s,
    })
}

fn load_cohort(s: &Settings) -> Result<Vec<CeCtSequence>, Error> {
    let cohort = read_dataset(&s.data_dir)?;
    if cohort.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: empty dataset", s.data_dir.display())));
    }
    Ok(cohort)
}

fn metrics_row(name: &str, m: &Metrics) -> String {
    let v = m.values();
    format!("{name},{},{},{},{}\n", fmt_opt(v[0]), fmt_opt(v[1]), fmt_opt(v[2]), fmt_opt(v[3]))
}

const METRICS_HEADER: &str = "split,c_index,balanced_accuracy,sensitivity,specificity\n";

fn checkpoint_path(s: &Settings) -> PathBuf {
    s.checkpoint.clone().unwrap_or_else(|| s.out_dir.join("checkpoint.cepn"))
}

fn phantom_gen(s: &Settings) -> Result<(), Error> {
    let cohort = generate_cohort(&s.phantom)?;
    write_dataset(&cohort, &s.data_dir)?;
    let events = cohort.iter().filter(|c| c.label.event).count();
    let r1 = cohort.iter().filter(|c| c.margin.is_positive()).count();
    println!(
        "wrote {} patients ({events} events, {r1} R1) to {}",
        cohort.len(),
        s.data_dir.display()
    );
    Ok(())
}

fn train_cmd(s: &Settings) -> Result<(), Error> {
    let cohort = load_cohort(s)?;
    let model = s.model_config(cohort[0].extent()[0])?;
    let split = make_folds(&cohort, s.folds, s.seed)?.swap_remove(0);
    let pick = |ids: &[String]| -> Vec<&CeCtSequence> {
        ids.iter()
            .map(|id| cohort.iter().find(|c| &c.patient_id == id).expect("split id in cohort"))
            .collect()
    };
    let (tr, va, te) = (pick(&split.train), pick(&split.validation), pick(&split.test));
    let outcome = train(&model, &tr, &va, &s.train)?;
    let mut net = outcome.model;
    let reference: Vec<&CeCtSequence> = tr.iter().chain(&va).copied().collect();
    let reference = model.variant.predicts_risk().then_some(reference.as_slice());
    let m = evaluate(&mut net, &te, reference, s.ties)?;
    fs::create_dir_all(&s.out_dir)?;
    fs::write(s.out_dir.join("train_log.csv"), train_log_csv(&outcome.log))?;
    fs::write(s.out_dir.join("metrics.csv"), format!("{METRICS_HEADER}{}", metrics_row("test", &m)))?;
    let ckpt = checkpoint_path(s);
    checkpoint::save(&mut net, &ckpt)?;
    println!(
        "best epoch {} of {}{}; test c_index {} balanced_accuracy {}; checkpoint {}",
        outcome.best_epoch,
        outcome.log.len(),
        if outcome.diverged { " (diverged, restored last finite state)" } else { "" },
        fmt_opt(m.c_index),
        fmt_opt(m.balanced_accuracy),
        ckpt.display()
    );
    Ok(())
}

fn eval_cmd(s: &Settings) -> Result<(), Error> {
    let cohort = load_cohort(s)?;
    let mut net = checkpoint::load(&checkpoint_path(s))?;
    let refs: Vec<&CeCtSequence> = cohort.iter().collect();
    let m = evaluate(&mut net, &refs, None, s.ties)?;
    let out = net.predict(&refs, 16)?;
    fs::create_dir_all(&s.out_dir)?;
    fs::write(s.out_dir.join("metrics.csv"), format!("{METRICS_HEADER}{}", metrics_row("all", &m)))?;
    let mut pred = String::from("patient_id,risk,margin_logit\n");
    for (i, c) in cohort.iter().enumerate() {
        pred.push_str(&format!(
            "{},{},{}\n",
            c.patient_id,
            fmt_opt(out.risk.as_ref().map(|r| r[i])),
            fmt_opt(out.margin_logit.as_ref().map(|z| z[i]))
        ));
    }
    fs::write(s.out_dir.join("predictions.csv"), pred)?;
    println!("c_index {} balanced_accuracy {}", fmt_opt(m.c_index), fmt_opt(m.balanced_accuracy));
    Ok(())
}

fn cv_cmd(s: &Settings) -> Result<(), Error> {
    let cohort = load_cohort(s)?;
    let model = s.model_config(cohort[0].extent()[0])?;
    let run = run_cv(&cohort, &model, &s.train, &s.cv_options())?;
    let audit = run.write_artifacts(&s.out_dir)?;
    println!(
        "{} folds, mean c_index {} balanced_accuracy {}; leakage audit passed ({} folds, {} rows, {} selections)",
        run.folds.len(),
        fmt_opt(run.mean_metric(|m| m.c_index)),
        fmt_opt(run.mean_metric(|m| m.balanced_accuracy)),
        audit.folds_checked,
        audit.risk_rows_checked,
        audit.selections_checked
    );
    for f in &run.folds {
        if let Err(e) = &f.outcome {
            eprintln!("fold {} failed: {e}", f.split.fold);
        }
    }
    match run.folds.into_iter().find_map(|f| f.outcome.err()) {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn ablation_cmd(s: &Settings) -> Result<(), Error> {
    let cohort = load_cohort(s)?;
    let base = s.model_config(cohort[0].extent()[0])?;
    let rows = run_ablation(&cohort, &s.variants, &base, &s.train, &s.cv_options())?;
    fs::create_dir_all(&s.out_dir)?;
    let csv = ablation_csv(&rows);
    fs::write(s.out_dir.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

struct Pooled {
    ids: Vec<String>,
    labels: Vec<cect_core::losses::SurvivalLabel>,
    r1: Vec<bool>,
    deep: Option<Vec<f64>>,
    radiomics: Option<Vec<f64>>,
}

fn load_signatures(s: &Settings) -> Result<Pooled, Error> {
    let path = s.signatures.clone().unwrap_or_else(|| s.out_dir.join("signatures.csv"));
    let text = fs::read_to_string(&path)?;
    let rows = parse_signatures(&text)?;
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(format!("{}: fewer than 2 patients", path.display())));
    }
    let all = |f: &dyn Fn(&cect_core::harness::cv::SignatureRow) -> Option<f64>| -> Option<Vec<f64>> {
        rows.iter().map(f).collect()
    };
    Ok(Pooled {
        ids: rows.iter().map(|r| r.patient_id.clone()).collect(),
        labels: rows.iter().map(|r| r.label).collect(),
        r1: rows.iter().map(|r| r.margin.is_positive()).collect(),
        deep: all(&|r| r.deep),
        radiomics: all(&|r| r.radiomics),
    })
}

fn stats_cox(s: &Settings) -> Result<(), Error> {
    let p = load_signatures(s)?;
    let mut factors = Vec::new();
    if let Some(v) = p.deep {
        factors.push(Factor { name: "deep_signature".into(), values: v });
    }
    if let Some(v) = p.radiomics {
        factors.push(Factor { name: "radiomics_signature".into(), values: v });
    }
    let margin: Vec<f64> = p.r1.iter().map(|&r| f64::from(u8::from(r))).collect();
    if mean_std(&margin).1 > 0.0 {
        factors.push(Factor { name: "r1_margin".into(), values: margin });
    }
    if factors.is_empty() {
        return Err(Error::InvalidArgument("no complete signature column to analyse".into()));
    }
    let (univariate, univariate_c_index, multivariate) = cox_tables(&factors, &p.labels, &s.analysis_options())?;
    let report = AnalysisReport {
        univariate,
        univariate_c_index,
        multivariate,
        factor_names: factors.iter().map(|f| f.name.clone()).collect(),
        km: Vec::new(),
    };
    write_cox(&s.out_dir, &report)?;
    for (name, fit) in &report.univariate {
        println!("{name}: hr {:.4} p {:.3e}", fit.hr[0], fit.p_wald[0]);
    }
    if report.multivariate.is_none() {
        eprintln!("multivariate fit singular; rows written as null");
    }
    println!("{} patients; tables in {}", p.ids.len(), s.out_dir.display());
    Ok(())
}

fn stats_km(s: &Settings) -> Result<(), Error> {
    let p = load_signatures(s)?;
    let sig = match s.signature.as_str() {
        "radiomics_signature" => p.radiomics,
        _ => p.deep,
    }
    .ok_or_else(|| Error::InvalidArgument(format!("{} has missing values", s.signature)))?;
    let n = p.labels.len();
    let groups = [
        Subgroup { name: "all".into(), members: vec![true; n] },
        Subgroup { name: "r0".into(), members: p.r1.iter().map(|r| !r).collect() },
        Subgroup { name: "r1".into(), members: p.r1.clone() },
    ];
    let km = km_by_median(&sig, &p.labels, &groups)?;
    write_km(&s.out_dir, &km)?;
    for g in &km {
        println!(
            "{}: low {} high {} log-rank p {}",
            g.subgroup,
            g.n_low,
            g.n_high,
            fmt_opt(g.log_rank.map(|t| t.p))
        );
    }
    Ok(())
}

fn dispatch(cmd: &Command) -> Result<(), Error> {
    let run = |c: &Common, f: fn(&Settings) -> Result<(), Error>| load_settings(c).and_then(|s| f(&s));
    match cmd {
        Command::Phantom { action: PhantomCmd::Gen(c) } => run(c, phantom_gen),
        Command::Train(c) => run(c, train_cmd),
        Command::Eval(c) => run(c, eval_cmd),
        Command::Cv { action: CvCmd::Run(c) } => run(c, cv_cmd),
        Command::Ablation(c) => run(c, ablation_cmd),
        Command::Stats { action: StatsCmd::Cox(c) } => run(c, stats_cox),
        Command::Stats { action: StatsCmd::Km(c) } => run(c, stats_km),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
