use crate::error::{Error, Result};
use crate::tensor::{Param, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalization over `[n, ch, ...]`.
///
/// Train mode normalizes by the biased batch statistics and folds them into
/// the running estimates; eval mode uses the running estimates only.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Tensor,
    pub running_var: Tensor,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], 1.0),
            momentum: DEFAULT_MOMENTUM,
            epsilon: DEFAULT_EPSILON,
            mode: Mode::Train,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn accumulate(&mut self, grads: &BatchNormGrads) -> Result<()> {
        self.gamma.accumulate(&grads.gamma)?;
        self.beta.accumulate(&grads.beta)
    }
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    x_hat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

fn layout(input: &Tensor, channels: usize) -> Result<(usize, usize)> {
    if input.ndim() < 2 || input.shape()[1] != channels {
        return Err(Error::shape(format!(
            "batchnorm over {channels} channels got input {:?}",
            input.shape()
        )));
    }
    let inner = input.shape()[2..].iter().product();
    Ok((input.shape()[0], inner))
}

pub fn batchnorm_forward(input: &Tensor, layer: &mut BatchNorm) -> Result<(Tensor, BatchNormCache)> {
    let ch = layer.channels();
    let (n, inner) = layout(input, ch)?;
    if layer.mode == Mode::Train && n < 2 {
        return Err(Error::invalid(
            "batchnorm in train mode needs a batch of at least 2",
        ));
    }
    let x = input.data();
    let count = (n * inner) as f64;
    let mut x_hat = Tensor::zeros(input.shape());
    let mut out = Tensor::zeros(input.shape());
    let mut inv_std = Vec::with_capacity(ch);
    for c in 0..ch {
        let (mean, var) = match layer.mode {
            Mode::Train => {
                let mut sum = 0.0;
                for b in 0..n {
                    let start = (b * ch + c) * inner;
                    sum += x[start..start + inner].iter().sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0;
                for b in 0..n {
                    let start = (b * ch + c) * inner;
                    sq += x[start..start + inner]
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>();
                }
                let var = sq / count;
                let m = layer.momentum;
                layer.running_mean.data_mut()[c] = (1.0 - m) * layer.running_mean.data()[c] + m * mean;
                layer.running_var.data_mut()[c] = (1.0 - m) * layer.running_var.data()[c] + m * var;
                (mean, var)
            }
            Mode::Eval => (layer.running_mean.data()[c], layer.running_var.data()[c]),
        };
        let is = 1.0 / (var + layer.epsilon).sqrt();
        inv_std.push(is);
        let gamma = layer.gamma.value.data()[c];
        let beta = layer.beta.value.data()[c];
        for b in 0..n {
            let start = (b * ch + c) * inner;
            for i in start..start + inner {
                let xh = (x[i] - mean) * is;
                x_hat.data_mut()[i] = xh;
                out.data_mut()[i] = gamma * xh + beta;
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            x_hat,
            inv_std,
            mode: layer.mode,
        },
    ))
}

pub fn batchnorm_backward(
    grad_out: &Tensor,
    cache: &BatchNormCache,
    layer: &BatchNorm,
) -> Result<BatchNormGrads> {
    grad_out.expect_same_shape(&cache.x_hat, "batchnorm backward")?;
    let ch = layer.channels();
    let (n, inner) = layout(grad_out, ch)?;
    let count = (n * inner) as f64;
    let dy = grad_out.data();
    let xh = cache.x_hat.data();
    let mut dx = Tensor::zeros(grad_out.shape());
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for c in 0..ch {
        let mut sum_dy = 0.0;
        let mut sum_dy_xh = 0.0;
        for b in 0..n {
            let start = (b * ch + c) * inner;
            for i in start..start + inner {
                sum_dy += dy[i];
                sum_dy_xh += dy[i] * xh[i];
            }
        }
        dgamma[c] = sum_dy_xh;
        dbeta[c] = sum_dy;
        let k = layer.gamma.value.data()[c] * cache.inv_std[c];
        for b in 0..n {
            let start = (b * ch + c) * inner;
            for i in start..start + inner {
                dx.data_mut()[i] = match cache.mode {
                    Mode::Train => k * (dy[i] - sum_dy / count - xh[i] * sum_dy_xh / count),
                    Mode::Eval => k * dy[i],
                };
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: Tensor::from_vec(&[ch], dgamma)?,
        beta: Tensor::from_vec(&[ch], dbeta)?,
    })
}
