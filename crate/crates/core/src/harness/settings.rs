//! Run settings read from a flat `key = value` file.
//!
//! Every key is optional. `paper_scale = true` switches the size defaults
//! to 64³ crops, width 32, 128 hidden channels and 500 epochs; explicit
//! keys still win.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::harness::analysis::{AnalysisOptions, UnivariateScore};
use crate::harness::cv::CvOptions;
use crate::harness::optim::OptimizerKind;
use crate::harness::train::TrainConfig;
use crate::kv::KeyValues;
use crate::phantom::PhantomParams;
use crate::prognet::{ModelConfig, Readout, Variant};
use crate::survstats::TieRule;

pub const KEYS: [&str; 33] = [
    "seed",
    "paper_scale",
    // phantom
    "phantom_seed",
    "n_patients",
    "extent",
    "attenuation_effect",
    "margin_effect",
    "censoring_rate",
    "base_hazard",
    "noise_sigma",
    "r1_prevalence",
    "infiltration_threshold",
    // paths
    "data_dir",
    "out_dir",
    "checkpoint",
    "signatures",
    // model
    "variant",
    "encoder_width",
    "hidden_ch",
    "loss_weight_margin",
    "head_hidden",
    "readout",
    // training
    "batch_size",
    "max_epochs",
    "learning_rate",
    "optimizer",
    "augment",
    // evaluation
    "folds",
    "variants",
    "radiomics",
    "tie_rule",
    "univariate_score",
    "signature",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub paper_scale: bool,
    pub phantom: PhantomParams,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub signatures: Option<PathBuf>,
    pub variant: Variant,
    pub encoder_width: usize,
    pub hidden_ch: usize,
    pub loss_weight_margin: f64,
    pub head_hidden: usize,
    pub readout: Readout,
    pub train: TrainConfig,
    pub folds: usize,
    pub variants: Vec<Variant>,
    pub radiomics: bool,
    pub ties: TieRule,
    pub univariate_score: UnivariateScore,
    /// Column of the signatures file used for KM stratification.
    pub signature: String,
}

fn parse_ties(s: &str) -> Result<TieRule> {
    match s {
        "strict" => Ok(TieRule::Strict),
        "half_credit" => Ok(TieRule::HalfCredit),
        _ => Err(Error::Config(format!("unknown tie_rule `{s}` (strict | half_credit)"))),
    }
}

fn parse_score(s: &str) -> Result<UnivariateScore> {
    match s {
        "factor" => Ok(UnivariateScore::Factor),
        "linear_predictor" => Ok(UnivariateScore::LinearPredictor),
        _ => Err(Error::Config(format!(
            "unknown univariate_score `{s}` (factor | linear_predictor)"
        ))),
    }
}

fn parse_variants(s: &str) -> Result<Vec<Variant>> {
    s.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| Error::Config(format!("unknown variant `{v}`"))))
        .collect()
}

impl Settings {
    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text)?, None)
    }

    /// `paper_scale` forces the paper-scale defaults when set; `None` defers to the file.
    pub fn from_kv(kv: &KeyValues, paper_scale: Option<bool>) -> Result<Self> {
        kv.reject_unknown(&KEYS)?;
        let paper_scale = match paper_scale {
            Some(true) => true,
            _ => kv.get("paper_scale")?.unwrap_or(false),
        };
        let (extent, width, hidden, epochs) = if paper_scale { (64, 32, 128, 500) } else { (16, 8, 8, 50) };
        let seed = kv.get("seed")?.unwrap_or(0);
        let d = PhantomParams::default();
        let phantom = PhantomParams {
            n_patients: kv.get("n_patients")?.unwrap_or(d.n_patients),
            extent: kv.get("extent")?.unwrap_or(extent),
            attenuation_effect: kv.get("attenuation_effect")?.unwrap_or(d.attenuation_effect),
            margin_effect: kv.get("margin_effect")?.unwrap_or(d.margin_effect),
            censoring_rate: kv.get("censoring_rate")?.unwrap_or(d.censoring_rate),
            base_hazard: kv.get("base_hazard")?.unwrap_or(d.base_hazard),
            noise_sigma: kv.get("noise_sigma")?.unwrap_or(d.noise_sigma),
            r1_prevalence: kv.get("r1_prevalence")?.unwrap_or(d.r1_prevalence),
            infiltration_threshold: kv.get("infiltration_threshold")?.unwrap_or(d.infiltration_threshold),
            seed: kv.get("phantom_seed")?.unwrap_or(seed),
        };
        phantom.validate().map_err(|e| Error::Config(e.to_string()))?;
        let td = TrainConfig::default();
        let train = TrainConfig {
            batch_size: kv.get("batch_size")?.unwrap_or(td.batch_size),
            max_epochs: kv.get("max_epochs")?.unwrap_or(epochs),
            learning_rate: kv.get("learning_rate")?.unwrap_or(td.learning_rate),
            optimizer: kv.get::<OptimizerKind>("optimizer")?.unwrap_or(td.optimizer),
            seed,
            augment: kv.get("augment")?.unwrap_or(td.augment),
        };
        train.validate()?;
        let variant = kv.get("variant")?.unwrap_or(Variant::MultiTaskCeConvLstm);
        let variants = match kv.get_str("variants") {
            Some(s) => parse_variants(s)?,
            None => vec![Variant::MultiTaskCeConvLstm, Variant::EarlyFusionCnn],
        };
        let s = Self {
            seed,
            paper_scale,
            phantom,
            data_dir: kv.get_str("data_dir").unwrap_or("data").into(),
            out_dir: kv.get_str("out_dir").unwrap_or("out").into(),
            checkpoint: kv.get_str("checkpoint").map(PathBuf::from),
            signatures: kv.get_str("signatures").map(PathBuf::from),
            variant,
            encoder_width: kv.get("encoder_width")?.unwrap_or(width),
            hidden_ch: kv.get("hidden_ch")?.unwrap_or(hidden),
            loss_weight_margin: kv.get("loss_weight_margin")?.unwrap_or(1.0),
            head_hidden: kv.get("head_hidden")?.unwrap_or(crate::prognet::DEFAULT_HEAD_HIDDEN),
            readout: kv.get("readout")?.unwrap_or(Readout::FinalState),
            train,
            folds: kv.get("folds")?.unwrap_or(5),
            variants,
            radiomics: kv.get("radiomics")?.unwrap_or(true),
            ties: kv.get_str("tie_rule").map_or(Ok(TieRule::Strict), parse_ties)?,
            univariate_score: kv
                .get_str("univariate_score")
                .map_or(Ok(UnivariateScore::Factor), parse_score)?,
            signature: kv.get_str("signature").unwrap_or("deep_signature").to_string(),
        };
        if s.folds < 2 {
            return Err(Error::Config(format!("folds must be at least 2, got {}", s.folds)));
        }
        if s.variants.is_empty() {
            return Err(Error::Config("variants must list at least one variant".into()));
        }
        if !["deep_signature", "radiomics_signature"].contains(&s.signature.as_str()) {
            return Err(Error::Config(format!(
                "signature must be deep_signature or radiomics_signature, got `{}`",
                s.signature
            )));
        }
        s.model_config(s.phantom.extent)?;
        Ok(s)
    }

    /// Overrides the run seed; the cohort seed follows unless set separately.
    pub fn with_seed(mut self, seed: u64, kv: &KeyValues) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        if kv.get_str("phantom_seed").is_none() {
            self.phantom.seed = seed;
        }
        self
    }

    pub fn model_config(&self, input_extent: usize) -> Result<ModelConfig> {
        self.model_config_for(self.variant, input_extent)
    }

    pub fn model_config_for(&self, variant: Variant, input_extent: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::with_sizes(variant, self.encoder_width, self.hidden_ch, input_extent);
        c.loss_weight_margin = self.loss_weight_margin;
        c.head_hidden = self.head_hidden;
        c.readout = self.readout;
        c.validate()?;
        Ok(c)
    }

    pub fn cv_options(&self) -> CvOptions {
        CvOptions {
            folds: self.folds,
            seed: self.seed,
            radiomics: self.radiomics,
            ties: self.ties,
        }
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            ties: self.ties,
            univariate_score: self.univariate_score,
        }
    }
}
