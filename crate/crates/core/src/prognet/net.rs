use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::convlstm::{unroll, unroll_backward, ConvLstmCell, ConvLstmState, Unrolled};
use crate::error::{Error, Result};
use crate::losses::{cox_loss, weighted_bce, MarginLabel, SurvivalLabel};
use crate::nn::{global_avg_pool, global_avg_pool_backward, Mode};
use crate::phantom::{CeCtSequence, CHANNELS, CT_CHANNEL, PANCREAS_CHANNEL, TUMOR_CHANNEL};
use crate::prognet::blocks::{Encoder, EncoderCache, Head, HeadCache, Module};
use crate::prognet::config::{ModelConfig, Readout, KERNEL};
use crate::tensor::{Param, Tensor};

/// Batched network input built from patient sequences.
#[derive(Debug, Clone)]
pub struct BatchInput {
    /// `[n, phases + 2, s, s, s]`: CT of every phase, then tumor and pancreas masks.
    pub fused: Tensor,
    /// One `[n, 3, s, s, s]` tensor per phase.
    pub phases: Vec<Tensor>,
}

impl BatchInput {
    pub fn from_sequences(seqs: &[&CeCtSequence], config: &ModelConfig) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let s = config.input_extent;
        let expected = [config.phases, CHANNELS, s, s, s];
        for seq in seqs {
            if seq.volumes.shape() != expected {
                return Err(Error::shape(format!(
                    "patient {}: volumes {:?}, model expects {expected:?} ({} phases)",
                    seq.patient_id,
                    seq.volumes.shape(),
                    config.phases
                )));
            }
        }
        let n = seqs.len();
        let v = first.voxels();
        let fused_ch = config.fused_channels();
        let mut fused = Vec::with_capacity(n * fused_ch * v);
        for seq in seqs {
            for p in 0..config.phases {
                fused.extend_from_slice(seq.channel(p, CT_CHANNEL));
            }
            fused.extend_from_slice(seq.channel(0, TUMOR_CHANNEL));
            fused.extend_from_slice(seq.channel(0, PANCREAS_CHANNEL));
        }
        let phases = (0..config.phases)
            .map(|p| {
                let mut data = Vec::with_capacity(n * CHANNELS * v);
                for seq in seqs {
                    for c in 0..CHANNELS {
                        data.extend_from_slice(seq.channel(p, c));
                    }
                }
                Tensor::from_vec(&[n, CHANNELS, s, s, s], data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            fused: Tensor::from_vec(&[n, fused_ch, s, s, s], fused)?,
            phases,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.fused.shape()[0]
    }
}

/// Per-patient network outputs; a head the variant lacks yields `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrognosisOutput {
    /// Higher means higher hazard.
    pub risk: Option<Vec<f64>>,
    pub margin_logit: Option<Vec<f64>>,
}

impl PrognosisOutput {
    pub fn scalars_per_patient(&self) -> usize {
        usize::from(self.risk.is_some()) + usize::from(self.margin_logit.is_some())
    }
}

#[derive(Debug, Clone)]
struct RecurrentCache {
    encoders: Vec<EncoderCache>,
    unrolled: Unrolled,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    fused: Option<(EncoderCache, Vec<usize>)>,
    recurrent: Option<RecurrentCache>,
    risk: Option<HeadCache>,
    margin: Option<HeadCache>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    /// `None` when the batch had no events and the survival term was skipped.
    pub survival: Option<f64>,
    pub margin: Option<f64>,
}

/// Two-branch survival/margin network and its single-task ablations.
#[derive(Debug, Clone, PartialEq)]
pub struct PrognosisNet {
    config: ModelConfig,
    fused: Option<Encoder>,
    phase_encoder: Option<Encoder>,
    cell: Option<ConvLstmCell>,
    risk_head: Option<Head>,
    margin_head: Option<Head>,
    mode: Mode,
}

impl PrognosisNet {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = config.variant;
        let fused = v
            .fused_branch()
            .map(|k| Encoder::new(k, config.fused_channels(), &config, &mut rng));
        let (phase_encoder, cell) = match v.phase_encoder() {
            Some(k) => {
                let enc = Encoder::new(k, config.channels_per_phase, &config, &mut rng);
                let cell = ConvLstmCell::new(config.encoder_out(k), config.hidden_ch, KERNEL, &mut rng)?;
                (Some(enc), Some(cell))
            }
            None => (None, None),
        };
        let risk_head = v
            .predicts_risk()
            .then(|| Head::new(config.fusion_ch, config.head_hidden, &mut rng));
        let margin_head = v
            .predicts_margin()
            .then(|| Head::new(config.fusion_ch, config.head_hidden, &mut rng));
        Ok(Self {
            config,
            fused,
            phase_encoder,
            cell,
            risk_head,
            margin_head,
            mode: Mode::Train,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
        for m in self.modules_mut() {
            m.set_mode(mode);
        }
    }

    pub fn cell(&self) -> Option<&ConvLstmCell> {
        self.cell.as_ref()
    }

    pub fn cell_mut(&mut self) -> Option<&mut ConvLstmCell> {
        self.cell.as_mut()
    }

    pub fn risk_head_mut(&mut self) -> Option<&mut Head> {
        self.risk_head.as_mut()
    }

    pub fn margin_head_mut(&mut self) -> Option<&mut Head> {
        self.margin_head.as_mut()
    }

    fn modules_mut(&mut self) -> Vec<&mut dyn Module> {
        let mut out: Vec<&mut dyn Module> = Vec::new();
        if let Some(e) = self.fused.as_mut() {
            out.push(e);
        }
        if let Some(e) = self.phase_encoder.as_mut() {
            out.push(e);
        }
        if let Some(h) = self.risk_head.as_mut() {
            out.push(h);
        }
        if let Some(h) = self.margin_head.as_mut() {
            out.push(h);
        }
        out
    }

    /// Trainable parameters in declaration order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        if let Some(e) = self.fused.as_mut() {
            out.extend(e.params_mut());
        }
        if let Some(e) = self.phase_encoder.as_mut() {
            out.extend(e.params_mut());
        }
        if let Some(c) = self.cell.as_mut() {
            out.extend(c.params_mut());
        }
        if let Some(h) = self.risk_head.as_mut() {
            out.extend(h.params_mut());
        }
        if let Some(h) = self.margin_head.as_mut() {
            out.extend(h.params_mut());
        }
        out
    }

    /// Every persisted tensor (parameters and normalization buffers) in declaration order.
    pub fn state_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        if let Some(e) = self.fused.as_mut() {
            out.extend(e.state_mut());
        }
        if let Some(e) = self.phase_encoder.as_mut() {
            out.extend(e.state_mut());
        }
        if let Some(c) = self.cell.as_mut() {
            out.extend(c.params_mut().into_iter().map(|p| &mut p.value));
        }
        if let Some(h) = self.risk_head.as_mut() {
            out.extend(h.state_mut());
        }
        if let Some(h) = self.margin_head.as_mut() {
            out.extend(h.state_mut());
        }
        out
    }

    pub fn parameter_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Early-fusion branch: `[n, phases + 2, s, s, s]` → feature map.
    pub fn margin_branch_forward(&mut self, x: &Tensor) -> Result<Tensor> {
        Ok(self.fused_forward(x)?.0)
    }

    fn fused_forward(&mut self, x: &Tensor) -> Result<(Tensor, EncoderCache)> {
        let expected = self.config.fused_channels();
        let enc = self
            .fused
            .as_mut()
            .ok_or_else(|| Error::invalid("variant has no early-fusion branch"))?;
        if x.ndim() != 5 || x.shape()[1] != expected {
            return Err(Error::shape(format!(
                "early-fusion branch expects {expected} channels ({} phases + 2 masks), got input {:?}",
                expected - 2,
                x.shape()
            )));
        }
        enc.forward(x)
    }

    /// Per-phase shared encoder followed by the ConvLSTM; returns the last state.
    pub fn survival_branch_forward(&mut self, phases: &[Tensor]) -> Result<ConvLstmState> {
        Ok(self.recurrent_forward(phases)?.unrolled.final_state().clone())
    }

    /// Shared encoder applied to one phase.
    pub fn phase_encoder_forward(&mut self, phase: &Tensor) -> Result<Tensor> {
        let enc = self
            .phase_encoder
            .as_mut()
            .ok_or_else(|| Error::invalid("variant has no recurrent branch"))?;
        Ok(enc.forward(phase)?.0)
    }

    fn recurrent_forward(&mut self, phases: &[Tensor]) -> Result<RecurrentCache> {
        if phases.len() != self.config.phases {
            return Err(Error::shape(format!(
                "recurrent branch expects {} phases, got {}",
                self.config.phases,
                phases.len()
            )));
        }
        let (Some(enc), Some(cell)) = (self.phase_encoder.as_mut(), self.cell.as_ref()) else {
            return Err(Error::invalid("variant has no recurrent branch"));
        };
        let mut encoded = Vec::with_capacity(phases.len());
        let mut encoders = Vec::with_capacity(phases.len());
        for x in phases {
            let (e, c) = enc.forward(x)?;
            encoded.push(e);
            encoders.push(c);
        }
        let refs: Vec<&Tensor> = encoded.iter().collect();
        let unrolled = unroll(&refs, cell, None)?;
        Ok(RecurrentCache { encoders, unrolled })
    }

    fn readout(&self, unrolled: &Unrolled) -> Result<Tensor> {
        match self.config.readout {
            Readout::FinalState => global_avg_pool(&unrolled.final_state().hidden),
            Readout::MeanOverPhases => {
                let mut acc = global_avg_pool(&unrolled.states[0].hidden)?;
                for s in &unrolled.states[1..] {
                    acc.add_assign(&global_avg_pool(&s.hidden)?)?;
                }
                Ok(acc.scale(1.0 / unrolled.len() as f64))
            }
        }
    }

    /// Pools each available branch, concatenates to `fusion_ch` features and applies the heads.
    pub fn fuse_and_predict(
        &self,
        fused_features: Option<&Tensor>,
        survival_state: Option<&ConvLstmState>,
    ) -> Result<PrognosisOutput> {
        let mut pooled = Vec::new();
        if let Some(f) = fused_features {
            pooled.push(global_avg_pool(f)?);
        }
        if let Some(s) = survival_state {
            pooled.push(global_avg_pool(&s.hidden)?);
        }
        let features = self.concat_features(&pooled)?;
        let risk = self.risk_head.as_ref().map(|h| h.forward(&features)).transpose()?;
        let margin = self.margin_head.as_ref().map(|h| h.forward(&features)).transpose()?;
        Ok(PrognosisOutput {
            risk: risk.map(|r| r.0),
            margin_logit: margin.map(|m| m.0),
        })
    }

    fn concat_features(&self, pooled: &[Tensor]) -> Result<Tensor> {
        let widths: Vec<usize> = pooled.iter().map(|p| p.shape()[1]).collect();
        if widths != self.config.branch_widths() || widths.iter().sum::<usize>() != self.config.fusion_ch {
            return Err(Error::shape(format!(
                "pooled branch widths {widths:?} do not form the {}-channel fused representation (expected {:?})",
                self.config.fusion_ch,
                self.config.branch_widths()
            )));
        }
        let refs: Vec<&Tensor> = pooled.iter().collect();
        Tensor::concat_channels(&refs)
    }

    pub fn forward(&mut self, input: &BatchInput) -> Result<(PrognosisOutput, ForwardCache)> {
        let mut pooled = Vec::new();
        let fused = match self.fused.is_some() {
            true => {
                let (map, cache) = self.fused_forward(&input.fused)?;
                pooled.push(global_avg_pool(&map)?);
                Some((cache, map.shape().to_vec()))
            }
            false => None,
        };
        let recurrent = match self.phase_encoder.is_some() {
            true => {
                let rc = self.recurrent_forward(&input.phases)?;
                pooled.push(self.readout(&rc.unrolled)?);
                Some(rc)
            }
            false => None,
        };
        let features = self.concat_features(&pooled)?;
        let risk = self.risk_head.as_ref().map(|h| h.forward(&features)).transpose()?;
        let margin = self.margin_head.as_ref().map(|h| h.forward(&features)).transpose()?;
        let (risk, risk_cache) = risk.map_or((None, None), |(r, c)| (Some(r), Some(c)));
        let (margin, margin_cache) = margin.map_or((None, None), |(m, c)| (Some(m), Some(c)));
        let out = PrognosisOutput {
            risk,
            margin_logit: margin,
        };
        if [&out.risk, &out.margin_logit]
            .into_iter()
            .flatten()
            .any(|v| v.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Numerical("non-finite network output".into()));
        }
        Ok((
            out,
            ForwardCache {
                fused,
                recurrent,
                risk: risk_cache,
                margin: margin_cache,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream gradients on the outputs.
    pub fn backward(&mut self, cache: &ForwardCache, d_risk: Option<&[f64]>, d_margin: Option<&[f64]>) -> Result<()> {
        let mut g_features: Option<Tensor> = None;
        let mut add = |g: Tensor| -> Result<()> {
            match g_features.as_mut() {
                Some(acc) => acc.add_assign(&g),
                None => {
                    g_features = Some(g);
                    Ok(())
                }
            }
        };
        if let (Some(h), Some(c), Some(g)) = (self.risk_head.as_mut(), cache.risk.as_ref(), d_risk) {
            add(h.backward(g, c)?)?;
        }
        if let (Some(h), Some(c), Some(g)) = (self.margin_head.as_mut(), cache.margin.as_ref(), d_margin) {
            add(h.backward(g, c)?)?;
        }
        let Some(g_features) = g_features else {
            return Ok(());
        };
        let mut parts = g_features.split_channels(&self.config.branch_widths())?.into_iter();
        if let Some((enc_cache, map_shape)) = cache.fused.as_ref() {
            let g = parts.next().ok_or(Error::MissingCache)?;
            let g_map = global_avg_pool_backward(&g, map_shape)?;
            let enc = self.fused.as_mut().ok_or(Error::MissingCache)?;
            enc.backward(&g_map, enc_cache)?;
        }
        if let Some(rc) = cache.recurrent.as_ref() {
            let g = parts.next().ok_or(Error::MissingCache)?;
            let steps = rc.unrolled.len();
            let hidden_shape = rc.unrolled.final_state().hidden.shape().to_vec();
            let grad_hidden: Vec<Option<Tensor>> = match self.config.readout {
                Readout::FinalState => {
                    let mut v = vec![None; steps];
                    v[steps - 1] = Some(global_avg_pool_backward(&g, &hidden_shape)?);
                    v
                }
                Readout::MeanOverPhases => {
                    let gs = global_avg_pool_backward(&g.scale(1.0 / steps as f64), &hidden_shape)?;
                    vec![Some(gs); steps]
                }
            };
            let cell = self.cell.as_mut().ok_or(Error::MissingCache)?;
            let ug = unroll_backward(&rc.unrolled, &grad_hidden, None, cell)?;
            cell.accumulate(&ug.params)?;
            let enc = self.phase_encoder.as_mut().ok_or(Error::MissingCache)?;
            for (gx, c) in ug.inputs.iter().zip(&rc.encoders) {
                enc.backward(gx, c)?;
            }
        }
        Ok(())
    }

    /// Zeroes gradients, evaluates the training objective on `batch` and
    /// backpropagates it.
    ///
    /// The objective is the Cox loss (summed over events) plus
    /// `loss_weight_margin` times the weighted BCE. Single-task margin models
    /// use the BCE alone. A batch with no events skips the survival term when
    /// a margin head exists and fails with [`Error::NoEvents`] otherwise.
    pub fn forward_backward(&mut self, batch: &[&CeCtSequence], pos_weight: f64) -> Result<LossBreakdown> {
        self.zero_grad();
        let input = BatchInput::from_sequences(batch, &self.config)?;
        let (out, cache) = self.forward(&input)?;
        let labels: Vec<SurvivalLabel> = batch.iter().map(|s| s.label).collect();
        let margins: Vec<MarginLabel> = batch.iter().map(|s| s.margin).collect();

        let (survival, d_risk) = match out.risk.as_ref() {
            Some(risk) => match cox_loss(risk, &labels) {
                Ok((l, g)) => (Some(l), Some(g)),
                Err(Error::NoEvents) if out.margin_logit.is_some() => (None, None),
                Err(e) => return Err(e),
            },
            None => (None, None),
        };
        let margin_weight = if self.config.variant.is_multi_task() {
            self.config.loss_weight_margin
        } else {
            1.0
        };
        let (margin, d_margin) = match out.margin_logit.as_ref() {
            Some(logits) => {
                let (l, g) = weighted_bce(logits, &margins, pos_weight)?;
                (Some(l), Some(g.into_iter().map(|v| v * margin_weight).collect::<Vec<_>>()))
            }
            None => (None, None),
        };
        let total = survival.unwrap_or(0.0) + margin.map_or(0.0, |m| margin_weight * m);
        if !total.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss {total}")));
        }
        self.backward(&cache, d_risk.as_deref(), d_margin.as_deref())?;
        Ok(LossBreakdown {
            total,
            survival,
            margin,
        })
    }

    /// Eval-mode predictions, evaluated in chunks of `chunk` patients.
    pub fn predict(&mut self, seqs: &[&CeCtSequence], chunk: usize) -> Result<PrognosisOutput> {
        let previous = self.mode;
        self.set_mode(Mode::Eval);
        let result = (|| {
            let mut risk = self.risk_head.as_ref().map(|_| Vec::with_capacity(seqs.len()));
            let mut margin = self.margin_head.as_ref().map(|_| Vec::with_capacity(seqs.len()));
            for part in seqs.chunks(chunk.max(1)) {
                let input = BatchInput::from_sequences(part, &self.config)?;
                let (out, _) = self.forward(&input)?;
                if let (Some(acc), Some(r)) = (risk.as_mut(), out.risk) {
                    acc.extend(r);
                }
                if let (Some(acc), Some(m)) = (margin.as_mut(), out.margin_logit) {
                    acc.extend(m);
                }
            }
            Ok(PrognosisOutput {
                risk,
                margin_logit: margin,
            })
        })();
        self.set_mode(previous);
        result
    }
}
