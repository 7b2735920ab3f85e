use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// Network variants: the proposed multi-task model and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Early-fusion margin CNN + residual encoder/ConvLSTM survival branch, two heads.
    MultiTaskCeConvLstm,
    /// Plain per-phase CNN encoder + ConvLSTM, survival head only.
    CeConvLstmOnly,
    /// Six-layer CNN on phase-concatenated channels, survival head only.
    EarlyFusionCnn,
    /// Residual encoder on phase-concatenated channels, survival head only.
    EarlyFusionResnet,
    /// Residual per-phase encoder + ConvLSTM, survival head only.
    ResnetCeConvLstm,
    /// Six-layer early-fusion CNN, margin head only.
    MarginOnlyCnn,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::MultiTaskCeConvLstm,
        Variant::CeConvLstmOnly,
        Variant::EarlyFusionCnn,
        Variant::EarlyFusionResnet,
        Variant::ResnetCeConvLstm,
        Variant::MarginOnlyCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MultiTaskCeConvLstm => "multi_task_ce_convlstm",
            Variant::CeConvLstmOnly => "ce_convlstm_only",
            Variant::EarlyFusionCnn => "early_fusion_cnn",
            Variant::EarlyFusionResnet => "early_fusion_resnet",
            Variant::ResnetCeConvLstm => "resnet_ce_convlstm",
            Variant::MarginOnlyCnn => "margin_only_cnn",
        }
    }

    pub fn predicts_risk(self) -> bool {
        self != Variant::MarginOnlyCnn
    }

    pub fn predicts_margin(self) -> bool {
        matches!(self, Variant::MultiTaskCeConvLstm | Variant::MarginOnlyCnn)
    }

    pub fn is_multi_task(self) -> bool {
        self.predicts_risk() && self.predicts_margin()
    }

    /// Branch over the phase-concatenated input.
    pub(crate) fn fused_branch(self) -> Option<EncoderKind> {
        match self {
            Variant::MultiTaskCeConvLstm | Variant::EarlyFusionCnn | Variant::MarginOnlyCnn => {
                Some(EncoderKind::MarginCnn)
            }
            Variant::EarlyFusionResnet => Some(EncoderKind::Residual),
            Variant::CeConvLstmOnly | Variant::ResnetCeConvLstm => None,
        }
    }

    /// Per-phase encoder feeding the ConvLSTM.
    pub(crate) fn phase_encoder(self) -> Option<EncoderKind> {
        match self {
            Variant::MultiTaskCeConvLstm | Variant::ResnetCeConvLstm => Some(EncoderKind::Residual),
            Variant::CeConvLstmOnly => Some(EncoderKind::PlainPhase),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum EncoderKind {
    /// Six conv layers, widths w·{1,1,2,2,4,4}, stride 2 at layers 1, 3, 5.
    MarginCnn,
    /// Four conv layers of width w, stride 2 at layers 1 and 3.
    PlainPhase,
    /// Stride-2 stem and three residual stages of width w; the first stage downsamples.
    Residual,
}

/// How the ConvLSTM states are reduced before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    /// Pool the last hidden state only.
    FinalState,
    /// Average the pooled hidden states of every phase.
    MeanOverPhases,
}

impl Readout {
    pub fn name(self) -> &'static str {
        match self {
            Readout::FinalState => "final_state",
            Readout::MeanOverPhases => "mean_over_phases",
        }
    }
}

impl FromStr for Readout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "final_state" => Ok(Readout::FinalState),
            "mean_over_phases" => Ok(Readout::MeanOverPhases),
            _ => Err(Error::Config(format!("unknown readout `{s}`"))),
        }
    }
}

pub const KERNEL: usize = 3;
pub const DEFAULT_HEAD_HIDDEN: usize = 64;
const MARGIN_WIDTHS: [usize; 6] = [1, 1, 2, 2, 4, 4];
const MARGIN_STRIDES: [usize; 6] = [2, 1, 2, 1, 2, 1];
const PLAIN_STRIDES: [usize; 4] = [2, 1, 2, 1];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder_width: usize,
    pub hidden_ch: usize,
    pub input_extent: usize,
    pub phases: usize,
    pub channels_per_phase: usize,
    /// Width of the pooled representation the heads read.
    pub fusion_ch: usize,
    pub loss_weight_margin: f64,
    pub head_hidden: usize,
    pub readout: Readout,
}

pub(crate) const CONFIG_KEYS: [&str; 10] = [
    "variant",
    "encoder_width",
    "hidden_ch",
    "input_extent",
    "phases",
    "channels_per_phase",
    "fusion_ch",
    "loss_weight_margin",
    "head_hidden",
    "readout",
];

impl ModelConfig {
    /// Desk-scale defaults: extent 16, width 8, hidden 8.
    pub fn desk(variant: Variant) -> Self {
        Self::with_sizes(variant, 8, 8, 16)
    }

    /// Full-size model: 64³ crops, 128 hidden channels, 256-wide fusion.
    pub fn paper_scale(variant: Variant) -> Self {
        Self::with_sizes(variant, 32, 128, 64)
    }

    /// Sets `fusion_ch` to the width the variant produces.
    pub fn with_sizes(variant: Variant, encoder_width: usize, hidden_ch: usize, input_extent: usize) -> Self {
        let mut c = Self {
            variant,
            encoder_width,
            hidden_ch,
            input_extent,
            phases: 3,
            channels_per_phase: 3,
            fusion_ch: 0,
            loss_weight_margin: 1.0,
            head_hidden: DEFAULT_HEAD_HIDDEN,
            readout: Readout::FinalState,
        };
        c.fusion_ch = c.branch_widths().iter().sum();
        c
    }

    /// Channels of the early-fusion input: every phase's CT plus the two masks.
    pub fn fused_channels(&self) -> usize {
        self.phases + 2
    }

    pub(crate) fn encoder_out(&self, kind: EncoderKind) -> usize {
        match kind {
            EncoderKind::MarginCnn => self.encoder_width * MARGIN_WIDTHS[5],
            EncoderKind::PlainPhase | EncoderKind::Residual => self.encoder_width,
        }
    }

    /// Pooled widths of (fused branch, recurrent branch), absent branches omitted.
    pub fn branch_widths(&self) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some(kind) = self.variant.fused_branch() {
            out.push(self.encoder_out(kind));
        }
        if self.variant.phase_encoder().is_some() {
            out.push(self.hidden_ch);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("encoder_width", self.encoder_width),
            ("hidden_ch", self.hidden_ch),
            ("input_extent", self.input_extent),
            ("phases", self.phases),
            ("head_hidden", self.head_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.channels_per_phase != 3 {
            return Err(Error::Config(format!(
                "channels_per_phase must be 3 (CT, tumor mask, pancreas mask), got {}",
                self.channels_per_phase
            )));
        }
        if self.input_extent < 4 {
            return Err(Error::Config(format!(
                "input_extent {} too small for the downsampling stages",
                self.input_extent
            )));
        }
        let widths = self.branch_widths();
        let sum: usize = widths.iter().sum();
        if sum != self.fusion_ch {
            return Err(Error::Config(format!(
                "fusion_ch {} does not equal the pooled branch widths {widths:?} (sum {sum})",
                self.fusion_ch
            )));
        }
        if !(self.loss_weight_margin >= 0.0 && self.loss_weight_margin.is_finite()) {
            return Err(Error::Config("loss_weight_margin must be non-negative".into()));
        }
        Ok(())
    }

    /// `(in, out, stride)` for each conv of a plain stack.
    pub(crate) fn plain_layers(&self, kind: EncoderKind, in_ch: usize) -> Vec<(usize, usize, usize)> {
        let w = self.encoder_width;
        let (widths, strides): (Vec<usize>, &[usize]) = match kind {
            EncoderKind::MarginCnn => (MARGIN_WIDTHS.iter().map(|m| m * w).collect(), &MARGIN_STRIDES),
            EncoderKind::PlainPhase => (vec![w; 4], &PLAIN_STRIDES),
            EncoderKind::Residual => unreachable!("residual encoder is not a plain stack"),
        };
        let mut prev = in_ch;
        widths
            .into_iter()
            .zip(strides)
            .map(|(out, &s)| {
                let layer = (prev, out, s);
                prev = out;
                layer
            })
            .collect()
    }

    /// Closed-form trainable parameter count.
    pub fn parameter_count(&self) -> usize {
        let k3 = KERNEL * KERNEL * KERNEL;
        let conv_bn = |i: usize, o: usize| o * i * k3 + 2 * o;
        let encoder = |kind: EncoderKind, in_ch: usize| -> usize {
            match kind {
                EncoderKind::Residual => {
                    let w = self.encoder_width;
                    let stem = conv_bn(in_ch, w);
                    let block = 2 * conv_bn(w, w);
                    let projection = w * w + 2 * w;
                    stem + 3 * block + projection
                }
                _ => self
                    .plain_layers(kind, in_ch)
                    .into_iter()
                    .map(|(i, o, _)| conv_bn(i, o))
                    .sum(),
            }
        };
        let head = |f: usize| f * self.head_hidden + self.head_hidden + self.head_hidden + 1;
        let mut total = 0;
        if let Some(kind) = self.variant.fused_branch() {
            total += encoder(kind, self.fused_channels());
        }
        if let Some(kind) = self.variant.phase_encoder() {
            let h = self.hidden_ch;
            let e = self.encoder_out(kind);
            total += encoder(kind, self.channels_per_phase);
            total += 4 * (h * e * k3 + h * h * k3 + h);
        }
        let heads = usize::from(self.variant.predicts_risk()) + usize::from(self.variant.predicts_margin());
        total + heads * head(self.fusion_ch)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("variant", self.variant);
        kv.insert("encoder_width", self.encoder_width);
        kv.insert("hidden_ch", self.hidden_ch);
        kv.insert("input_extent", self.input_extent);
        kv.insert("phases", self.phases);
        kv.insert("channels_per_phase", self.channels_per_phase);
        kv.insert("fusion_ch", self.fusion_ch);
        kv.insert("loss_weight_margin", self.loss_weight_margin);
        kv.insert("head_hidden", self.head_hidden);
        kv.insert("readout", self.readout.name());
        kv
    }

    /// Reads every key; missing keys fall back to the desk defaults of the variant.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let variant: Variant = kv.get("variant")?.unwrap_or(Variant::MultiTaskCeConvLstm);
        let width = kv.get("encoder_width")?.unwrap_or(8);
        let hidden = kv.get("hidden_ch")?.unwrap_or(8);
        let extent = kv.get("input_extent")?.unwrap_or(16);
        let mut c = Self::with_sizes(variant, width, hidden, extent);
        if let Some(v) = kv.get("phases")? {
            c.phases = v;
        }
        if let Some(v) = kv.get("channels_per_phase")? {
            c.channels_per_phase = v;
        }
        if let Some(v) = kv.get("fusion_ch")? {
            c.fusion_ch = v;
        }
        if let Some(v) = kv.get("loss_weight_margin")? {
            c.loss_weight_margin = v;
        }
        if let Some(v) = kv.get("head_hidden")? {
            c.head_hidden = v;
        }
        if let Some(v) = kv.get("readout")? {
            c.readout = v;
        }
        c.validate()?;
        Ok(c)
    }
}
