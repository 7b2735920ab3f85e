//! Encoder stacks and prediction heads assembled from `nn` layers.

use rand::Rng;

use crate::error::Result;
use crate::nn::{
    activation, activation_backward, batchnorm_backward, batchnorm_forward, conv3d_backward, conv3d_forward,
    Activation, BatchNorm, BatchNormCache, Conv3d, Linear, Mode,
};
use crate::prognet::config::{EncoderKind, ModelConfig, KERNEL};
use crate::tensor::{Param, Tensor};

/// Trainable parameters plus persisted buffers, visited in declaration order.
pub(crate) trait Module {
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn state_mut(&mut self) -> Vec<&mut Tensor>;
    fn set_mode(&mut self, mode: Mode);
}

fn bn_state(bn: &mut BatchNorm) -> Vec<&mut Tensor> {
    vec![
        &mut bn.gamma.value,
        &mut bn.beta.value,
        &mut bn.running_mean,
        &mut bn.running_var,
    ]
}

fn conv_state(conv: &mut Conv3d) -> Vec<&mut Tensor> {
    let mut out = vec![&mut conv.weight.value];
    if let Some(b) = conv.bias.as_mut() {
        out.push(&mut b.value);
    }
    out
}

/// conv → batch norm → ReLU. The conv has no bias; BN supplies the shift.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ConvBnRelu {
    pub conv: Conv3d,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone)]
pub(crate) struct ConvBnReluCache {
    input: Tensor,
    bn: BatchNormCache,
    output: Tensor,
}

impl ConvBnRelu {
    fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv3d::new(in_ch, out_ch, kernel, stride, kernel / 2, false, rng),
            bn: BatchNorm::new(out_ch),
        }
    }

    fn forward(&mut self, x: &Tensor) -> Result<(Tensor, ConvBnReluCache)> {
        let z = conv3d_forward(x, &self.conv)?;
        let (b, bn) = batchnorm_forward(&z, &mut self.bn)?;
        let y = activation(&b, Activation::Relu);
        Ok((
            y.clone(),
            ConvBnReluCache {
                input: x.clone(),
                bn,
                output: y,
            },
        ))
    }

    fn backward(&mut self, gy: &Tensor, cache: &ConvBnReluCache) -> Result<Tensor> {
        let gb = activation_backward(gy, &cache.output, Activation::Relu)?;
        let g = batchnorm_backward(&gb, &cache.bn, &self.bn)?;
        self.bn.accumulate(&g)?;
        let gc = conv3d_backward(&g.input, &cache.input, &self.conv)?;
        self.conv.accumulate(&gc)?;
        Ok(gc.input)
    }
}

impl Module for ConvBnRelu {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.conv.params_mut();
        out.extend(self.bn.params_mut());
        out
    }

    fn state_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = conv_state(&mut self.conv);
        out.extend(bn_state(&mut self.bn));
        out
    }

    fn set_mode(&mut self, mode: Mode) {
        self.bn.mode = mode;
    }
}

/// Two 3×3×3 conv/BN stages with an identity or 1×1×1 projection shortcut.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ResBlock {
    first: ConvBnRelu,
    conv: Conv3d,
    bn: BatchNorm,
    projection: Option<(Conv3d, BatchNorm)>,
}

#[derive(Debug, Clone)]
pub(crate) struct ResBlockCache {
    input: Tensor,
    first: ConvBnReluCache,
    bn: BatchNormCache,
    projection_bn: Option<BatchNormCache>,
    output: Tensor,
}

impl ResBlock {
    fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, stride: usize, rng: &mut R) -> Self {
        let first = ConvBnRelu::new(in_ch, out_ch, KERNEL, stride, rng);
        let conv = Conv3d::new(out_ch, out_ch, KERNEL, 1, KERNEL / 2, false, rng);
        let projection = (stride != 1 || in_ch != out_ch)
            .then(|| (Conv3d::new(in_ch, out_ch, 1, stride, 0, false, rng), BatchNorm::new(out_ch)));
        Self {
            first,
            conv,
            bn: BatchNorm::new(out_ch),
            projection,
        }
    }

    fn forward(&mut self, x: &Tensor) -> Result<(Tensor, ResBlockCache)> {
        let (a, first) = self.first.forward(x)?;
        let z = conv3d_forward(&a, &self.conv)?;
        let (mut sum, bn) = batchnorm_forward(&z, &mut self.bn)?;
        let projection_bn = match self.projection.as_mut() {
            Some((conv, pbn)) => {
                let p = conv3d_forward(x, conv)?;
                let (s, cache) = batchnorm_forward(&p, pbn)?;
                sum.add_assign(&s)?;
                Some(cache)
            }
            None => {
                sum.add_assign(x)?;
                None
            }
        };
        let y = activation(&sum, Activation::Relu);
        Ok((
            y.clone(),
            ResBlockCache {
                input: x.clone(),
                first,
                bn,
                projection_bn,
                output: y,
            },
        ))
    }

    fn backward(&mut self, gy: &Tensor, cache: &ResBlockCache) -> Result<Tensor> {
        let gs = activation_backward(gy, &cache.output, Activation::Relu)?;
        let g = batchnorm_backward(&gs, &cache.bn, &self.bn)?;
        self.bn.accumulate(&g)?;
        let gc = conv3d_backward(&g.input, &cache.first.output, &self.conv)?;
        self.conv.accumulate(&gc)?;
        let mut gx = self.first.backward(&gc.input, &cache.first)?;
        match (self.projection.as_mut(), cache.projection_bn.as_ref()) {
            (Some((conv, pbn)), Some(pcache)) => {
                let gp = batchnorm_backward(&gs, pcache, pbn)?;
                pbn.accumulate(&gp)?;
                let gpc = conv3d_backward(&gp.input, &cache.input, conv)?;
                conv.accumulate(&gpc)?;
                gx.add_assign(&gpc.input)?;
            }
            _ => gx.add_assign(&gs)?,
        }
        Ok(gx)
    }
}

impl Module for ResBlock {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.first.params_mut();
        out.extend(self.conv.params_mut());
        out.extend(self.bn.params_mut());
        if let Some((conv, bn)) = self.projection.as_mut() {
            out.extend(conv.params_mut());
            out.extend(bn.params_mut());
        }
        out
    }

    fn state_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.first.state_mut();
        out.extend(conv_state(&mut self.conv));
        out.extend(bn_state(&mut self.bn));
        if let Some((conv, bn)) = self.projection.as_mut() {
            out.extend(conv_state(conv));
            out.extend(bn_state(bn));
        }
        out
    }

    fn set_mode(&mut self, mode: Mode) {
        self.first.set_mode(mode);
        self.bn.mode = mode;
        if let Some((_, bn)) = self.projection.as_mut() {
            bn.mode = mode;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Encoder {
    Plain(Vec<ConvBnRelu>),
    Residual { stem: ConvBnRelu, blocks: Vec<ResBlock> },
}

#[derive(Debug, Clone)]
pub(crate) enum EncoderCache {
    Plain(Vec<ConvBnReluCache>),
    Residual {
        stem: ConvBnReluCache,
        blocks: Vec<ResBlockCache>,
    },
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(kind: EncoderKind, in_ch: usize, config: &ModelConfig, rng: &mut R) -> Self {
        match kind {
            EncoderKind::Residual => {
                let w = config.encoder_width;
                let stem = ConvBnRelu::new(in_ch, w, KERNEL, 2, rng);
                let blocks = [2, 1, 1].iter().map(|&s| ResBlock::new(w, w, s, rng)).collect();
                Encoder::Residual { stem, blocks }
            }
            _ => Encoder::Plain(
                config
                    .plain_layers(kind, in_ch)
                    .into_iter()
                    .map(|(i, o, s)| ConvBnRelu::new(i, o, KERNEL, s, rng))
                    .collect(),
            ),
        }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<(Tensor, EncoderCache)> {
        match self {
            Encoder::Plain(layers) => {
                let mut caches = Vec::with_capacity(layers.len());
                let mut h = x.clone();
                for layer in layers.iter_mut() {
                    let (y, c) = layer.forward(&h)?;
                    caches.push(c);
                    h = y;
                }
                Ok((h, EncoderCache::Plain(caches)))
            }
            Encoder::Residual { stem, blocks } => {
                let (mut h, stem_cache) = stem.forward(x)?;
                let mut caches = Vec::with_capacity(blocks.len());
                for b in blocks.iter_mut() {
                    let (y, c) = b.forward(&h)?;
                    caches.push(c);
                    h = y;
                }
                Ok((
                    h,
                    EncoderCache::Residual {
                        stem: stem_cache,
                        blocks: caches,
                    },
                ))
            }
        }
    }

    pub fn backward(&mut self, gy: &Tensor, cache: &EncoderCache) -> Result<Tensor> {
        match (self, cache) {
            (Encoder::Plain(layers), EncoderCache::Plain(caches)) => {
                let mut g = gy.clone();
                for (layer, c) in layers.iter_mut().zip(caches).rev() {
                    g = layer.backward(&g, c)?;
                }
                Ok(g)
            }
            (Encoder::Residual { stem, blocks }, EncoderCache::Residual { stem: sc, blocks: bc }) => {
                let mut g = gy.clone();
                for (b, c) in blocks.iter_mut().zip(bc).rev() {
                    g = b.backward(&g, c)?;
                }
                stem.backward(&g, sc)
            }
            _ => Err(crate::error::Error::MissingCache),
        }
    }
}

impl Module for Encoder {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Encoder::Plain(layers) => layers.iter_mut().flat_map(|l| l.params_mut()).collect(),
            Encoder::Residual { stem, blocks } => {
                let mut out = stem.params_mut();
                out.extend(blocks.iter_mut().flat_map(|b| b.params_mut()));
                out
            }
        }
    }

    fn state_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Encoder::Plain(layers) => layers.iter_mut().flat_map(|l| l.state_mut()).collect(),
            Encoder::Residual { stem, blocks } => {
                let mut out = stem.state_mut();
                out.extend(blocks.iter_mut().flat_map(|b| b.state_mut()));
                out
            }
        }
    }

    fn set_mode(&mut self, mode: Mode) {
        match self {
            Encoder::Plain(layers) => layers.iter_mut().for_each(|l| l.set_mode(mode)),
            Encoder::Residual { stem, blocks } => {
                stem.set_mode(mode);
                blocks.iter_mut().for_each(|b| b.set_mode(mode));
            }
        }
    }
}

/// Fully connected head: `in → hidden (ReLU) → 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub hidden: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub(crate) struct HeadCache {
    input: Tensor,
    hidden: Tensor,
}

impl Head {
    pub(crate) fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut output = Linear::new(hidden, 1, rng);
        // Small final layer so initial scores sit near zero.
        output.weight.value = output.weight.value.scale(0.1);
        Self {
            hidden: Linear::new(input, hidden, rng),
            output,
        }
    }

    pub(crate) fn forward(&self, x: &Tensor) -> Result<(Vec<f64>, HeadCache)> {
        let h = activation(&self.hidden.forward(x)?, Activation::Relu);
        let y = self.output.forward(&h)?;
        Ok((
            y.into_data(),
            HeadCache {
                input: x.clone(),
                hidden: h,
            },
        ))
    }

    pub(crate) fn backward(&mut self, gy: &[f64], cache: &HeadCache) -> Result<Tensor> {
        let g = Tensor::from_vec(&[gy.len(), 1], gy.to_vec())?;
        let gh = self.output.backward(&g, &cache.hidden)?;
        let gh = activation_backward(&gh, &cache.hidden, Activation::Relu)?;
        self.hidden.backward(&gh, &cache.input)
    }
}

impl Module for Head {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.hidden.params_mut();
        out.extend(self.output.params_mut());
        out
    }

    fn state_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.hidden.weight.value,
            &mut self.hidden.bias.value,
            &mut self.output.weight.value,
            &mut self.output.bias.value,
        ]
    }

    fn set_mode(&mut self, _mode: Mode) {}
}
