use crate::error::{Error, Result};
use crate::harness::cv::{run_cv, CvOptions, CvRun};
use crate::harness::metrics::Metrics;
use crate::harness::train::TrainConfig;
use crate::phantom::CeCtSequence;
use crate::prognet::{ModelConfig, Variant};
use crate::survstats::fmt_f64;

pub const ABLATION_HEADER: &str = "variant,metric,mean,std";

/// Mean and sample std of one metric across folds.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Value { mean: f64, std: Option<f64> },
    /// The metric is undefined on every fold.
    Missing,
    /// At least one fold failed.
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub metric: &'static str,
    pub cell: Cell,
}

/// Metrics a variant can produce.
pub fn applicable_metrics(v: Variant) -> Vec<&'static str> {
    let mut out = Vec::new();
    if v.predicts_risk() {
        out.push(Metrics::NAMES[0]);
    }
    if v.predicts_margin() {
        out.extend_from_slice(&Metrics::NAMES[1..]);
    }
    out
}

fn summarize(run: &CvRun, metric: usize) -> Cell {
    if run.first_error().is_some() {
        return Cell::Failed;
    }
    let v: Vec<f64> = run.outcomes().filter_map(|o| o.metrics.values()[metric]).collect();
    if v.is_empty() {
        return Cell::Missing;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    Cell::Value { mean, std }
}

/// Rows for one finished cross-validation run.
pub fn ablation_rows(variant: Variant, run: &CvRun) -> Vec<AblationRow> {
    applicable_metrics(variant)
        .into_iter()
        .map(|metric| {
            let k = Metrics::NAMES.iter().position(|m| *m == metric).expect("known metric");
            AblationRow {
                variant,
                metric,
                cell: summarize(run, k),
            }
        })
        .collect()
}

/// Runs the same folds and training settings for each variant in turn.
/// `base` supplies every model setting except the variant.
pub fn run_ablation(
    cohort: &[CeCtSequence],
    variants: &[Variant],
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    opts: &CvOptions,
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::Config("ablation needs at least one variant".into()));
    }
    let opts = CvOptions {
        radiomics: false,
        ..opts.clone()
    };
    let mut rows = Vec::new();
    for &v in variants {
        let mut cfg = ModelConfig::with_sizes(v, base.encoder_width, base.hidden_ch, base.input_extent);
        cfg.phases = base.phases;
        cfg.channels_per_phase = base.channels_per_phase;
        cfg.loss_weight_margin = base.loss_weight_margin;
        cfg.head_hidden = base.head_hidden;
        cfg.readout = base.readout;
        let run = run_cv(cohort, &cfg, train_cfg, &opts)?;
        rows.extend(ablation_rows(v, &run));
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        let (mean, std) = match &r.cell {
            Cell::Value { mean, std } => (fmt_f64(*mean), std.map_or_else(|| "null".into(), fmt_f64)),
            Cell::Missing => ("null".into(), "null".into()),
            Cell::Failed => ("failed".into(), "failed".into()),
        };
        out.push_str(&format!("{},{},{mean},{std}\n", r.variant.name(), r.metric));
    }
    out
}
