use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::init::uniform;
use crate::tensor::{Param, Tensor};

/// Affine map `y = x Wᵀ + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / input as f64).sqrt();
        Self {
            weight: Param::new(uniform(&[output, input], bound, rng)),
            bias: Param::new(Tensor::zeros(&[output])),
        }
    }

    pub fn from_parts(weight: Tensor, bias: Tensor) -> Self {
        Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        linear_forward(input, &self.weight.value, &self.bias.value)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
        let g = linear_backward(grad_out, input, &self.weight.value)?;
        self.weight.accumulate(&g.weight)?;
        self.bias.accumulate(&g.bias)?;
        Ok(g.input)
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

fn check(input: &Tensor, weight: &Tensor) -> Result<(usize, usize, usize)> {
    input.expect_rank(2, "linear input")?;
    weight.expect_rank(2, "linear weight")?;
    let (n, f) = (input.shape()[0], input.shape()[1]);
    let (out, wf) = (weight.shape()[0], weight.shape()[1]);
    if f != wf {
        return Err(Error::shape(format!(
            "linear: input {:?} vs weight {:?}",
            input.shape(),
            weight.shape()
        )));
    }
    Ok((n, f, out))
}

pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (n, f, out) = check(input, weight)?;
    if bias.shape() != [out] {
        return Err(Error::shape(format!(
            "linear bias {:?} for {out} outputs",
            bias.shape()
        )));
    }
    let x = input.data();
    let w = weight.data();
    let mut y = Vec::with_capacity(n * out);
    for r in 0..n {
        let row = &x[r * f..(r + 1) * f];
        for o in 0..out {
            let wr = &w[o * f..(o + 1) * f];
            y.push(bias.data()[o] + row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    Tensor::from_vec(&[n, out], y)
}

pub fn linear_backward(grad_out: &Tensor, input: &Tensor, weight: &Tensor) -> Result<LinearGrads> {
    let (n, f, out) = check(input, weight)?;
    if grad_out.shape() != [n, out] {
        return Err(Error::shape(format!(
            "linear backward: grad_out {:?}, expected [{n}, {out}]",
            grad_out.shape()
        )));
    }
    let x = input.data();
    let w = weight.data();
    let g = grad_out.data();
    let mut gi = vec![0.0; n * f];
    let mut gw = vec![0.0; out * f];
    let mut gb = vec![0.0; out];
    for r in 0..n {
        for o in 0..out {
            let go = g[r * out + o];
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            for k in 0..f {
                gi[r * f + k] += go * w[o * f + k];
                gw[o * f + k] += go * x[r * f + k];
            }
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(&[n, f], gi)?,
        weight: Tensor::from_vec(&[out, f], gw)?,
        bias: Tensor::from_vec(&[out], gb)?,
    })
}
