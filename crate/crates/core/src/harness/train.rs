use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::metrics::margin_metrics;
use crate::harness::optim::{Optimizer, OptimizerKind};
use crate::losses::{pos_weight_from_counts, MarginLabel, SurvivalLabel};
use crate::phantom::{augment, CeCtSequence};
use crate::prognet::{ModelConfig, PrognosisNet};
use crate::survstats::{c_index, fmt_opt};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            max_epochs: 50,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean objective over the batches that were used.
    pub loss: Option<f64>,
    pub survival_loss: Option<f64>,
    pub margin_loss: Option<f64>,
    pub val_metric: Option<f64>,
    pub batches: usize,
    pub skipped_batches: usize,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,loss,survival_loss,margin_loss,val_metric,batches,skipped_batches";

pub fn train_log_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{TRAIN_LOG_HEADER}\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch,
            fmt_opt(e.loss),
            fmt_opt(e.survival_loss),
            fmt_opt(e.margin_loss),
            fmt_opt(e.val_metric),
            e.batches,
            e.skipped_batches
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network from the epoch with the best validation metric.
    pub model: PrognosisNet,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub log: Vec<EpochLog>,
    /// Training stopped on a non-finite loss or parameter; `model` is still finite.
    pub diverged: bool,
}

/// Validation score: the C-index, the balanced accuracy, or their mean when
/// the variant has both heads. `None` when neither is defined.
pub fn validation_metric(net: &mut PrognosisNet, val: &[&CeCtSequence]) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let out = net.predict(val, 16)?;
    let c = match &out.risk {
        Some(risk) => {
            let labels: Vec<SurvivalLabel> = val.iter().map(|s| s.label).collect();
            match c_index(risk, &labels) {
                Ok(c) => Some(c),
                Err(Error::NoComparablePairs) => None,
                Err(e) => return Err(e),
            }
        }
        None => None,
    };
    let bacc = match &out.margin_logit {
        Some(logits) => {
            let margins: Vec<MarginLabel> = val.iter().map(|s| s.margin).collect();
            margin_metrics(logits, &margins).2
        }
        None => None,
    };
    Ok(match (c, bacc) {
        (Some(c), Some(b)) => Some(0.5 * (c + b)),
        (c, b) => c.or(b),
    })
}

/// Splits a shuffled order into batches; a trailing singleton joins the previous batch.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().map(|b| b.len()) == Some(1) {
        out.pop();
        let n = order.len();
        let last = out.pop().expect("at least one batch");
        out.push(&order[n - last.len() - 1..]);
    }
    out
}

/// Minibatch training with best-validation model selection.
///
/// Batches without events are skipped when the variant has only a survival
/// head. Ties in the validation metric keep the earlier epoch.
pub fn train(
    config: &ModelConfig,
    train_set: &[&CeCtSequence],
    val_set: &[&CeCtSequence],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    config.validate()?;
    if train_set.len() < 2 {
        return Err(Error::invalid("train: need at least 2 training patients"));
    }
    if config.variant.predicts_risk() && !train_set.iter().any(|s| s.label.event) {
        return Err(Error::NoEvents);
    }
    let n_pos = train_set.iter().filter(|s| s.margin.is_positive()).count();
    let pos_weight = if n_pos == 0 || n_pos == train_set.len() {
        1.0
    } else {
        pos_weight_from_counts(train_set.len() - n_pos, n_pos)?
    };

    let mut net = PrognosisNet::new(config.clone(), cfg.seed)?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(PrognosisNet, usize, Option<f64>)> = None;
    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut diverged = false;

    'epochs: for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let epoch_start = net.clone();
        let (mut sum, mut surv, mut marg) = (0.0, 0.0, 0.0);
        let (mut used, mut n_surv, mut n_marg, mut skipped) = (0usize, 0usize, 0usize, 0usize);
        let plan = batches(&order, cfg.batch_size);
        for batch in &plan {
            let owned: Vec<CeCtSequence> = if cfg.augment {
                batch.iter().map(|&i| augment(train_set[i], &mut rng)).collect()
            } else {
                batch.iter().map(|&i| train_set[i].clone()).collect()
            };
            let refs: Vec<&CeCtSequence> = owned.iter().collect();
            let before = net.clone();
            let loss = match net.forward_backward(&refs, pos_weight) {
                Ok(l) => l,
                Err(Error::NoEvents) => {
                    skipped += 1;
                    continue;
                }
                Err(Error::Numerical(_)) => {
                    net = before;
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            opt.step(net.params_mut());
            if net.params_mut().iter().any(|p| !p.value.all_finite()) {
                net = before;
                diverged = true;
                break 'epochs;
            }
            sum += loss.total;
            used += 1;
            if let Some(s) = loss.survival {
                surv += s;
                n_surv += 1;
            }
            if let Some(m) = loss.margin {
                marg += m;
                n_marg += 1;
            }
        }
        let val_metric = match validation_metric(&mut net, val_set) {
            Ok(v) => v,
            Err(Error::Numerical(_)) => {
                net = epoch_start;
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let mean = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        log.push(EpochLog {
            epoch,
            loss: mean(sum, used),
            survival_loss: mean(surv, n_surv),
            margin_loss: mean(marg, n_marg),
            val_metric,
            batches: plan.len(),
            skipped_batches: skipped,
        });
        let improves = match (&best, val_metric) {
            (None, _) => true,
            (Some((_, _, None)), Some(_)) => true,
            (Some((_, _, Some(b))), Some(v)) => v > *b,
            (Some(_), None) => val_set.is_empty(),
        };
        if improves {
            best = Some((net.clone(), epoch, val_metric));
        }
    }

    let (model, best_epoch, best_metric) = best.unwrap_or((net, 0, None));
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_metric,
        log,
        diverged,
    })
}
