//! 3D convolution with zero padding.
//!
//! The production path lowers each sample to a column matrix (`im2col`) and
//! runs a dense product over it. [`conv3d_reference`] is the direct loop
//! definition the fast path is checked against.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::init::uniform;
use crate::tensor::{Param, Tensor};

/// Convolution layer with weights `[out_ch, in_ch, kd, kh, kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv3d {
    /// Cubic kernel, He-uniform weights, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = uniform(&[out_ch, in_ch, kernel, kernel, kernel], bound, rng);
        Self {
            weight: Param::new(weight),
            bias: with_bias.then(|| Param::new(Tensor::zeros(&[out_ch]))),
            stride,
            padding,
        }
    }

    pub fn from_parts(weight: Tensor, bias: Option<Tensor>, stride: usize, padding: usize) -> Self {
        Self {
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            stride,
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 5]> {
        let g = Geometry::new(input, self.weight.value.shape(), self.stride, self.padding)?;
        Ok([g.n, g.oc, g.od, g.oh, g.ow])
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = vec![&mut self.weight];
        if let Some(b) = self.bias.as_mut() {
            out.push(b);
        }
        out
    }

    pub fn accumulate(&mut self, grads: &Conv3dGrads) -> Result<()> {
        self.weight.accumulate(&grads.weight)?;
        if let (Some(b), Some(gb)) = (self.bias.as_mut(), grads.bias.as_ref()) {
            b.accumulate(gb)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Conv3dGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Resolved extents of one convolution call.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    ic: usize,
    d: usize,
    h: usize,
    w: usize,
    oc: usize,
    kd: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    od: usize,
    oh: usize,
    ow: usize,
}

fn out_extent(extent: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = extent + 2 * pad;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

impl Geometry {
    fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 5 {
            return Err(Error::shape(format!(
                "conv3d input must be [n, c, d, h, w], got {input:?}"
            )));
        }
        if weight.len() != 5 {
            return Err(Error::shape(format!(
                "conv3d weight must be [out, in, kd, kh, kw], got {weight:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv3d stride must be positive"));
        }
        if input[1] != weight[1] {
            return Err(Error::shape(format!(
                "conv3d: input has {} channels, kernel expects {} (input {input:?}, weight {weight:?})",
                input[1], weight[1]
            )));
        }
        let dims = [(input[2], weight[2]), (input[3], weight[3]), (input[4], weight[4])];
        let mut outs = [0usize; 3];
        for (o, &(e, k)) in outs.iter_mut().zip(&dims) {
            *o = out_extent(e, k, stride, pad).ok_or_else(|| {
                Error::shape(format!(
                    "conv3d: kernel {:?} does not fit input {input:?} with padding {pad}",
                    &weight[2..]
                ))
            })?;
        }
        Ok(Self {
            n: input[0],
            ic: input[1],
            d: input[2],
            h: input[3],
            w: input[4],
            oc: weight[0],
            kd: weight[2],
            kh: weight[3],
            kw: weight[4],
            stride,
            pad,
            od: outs[0],
            oh: outs[1],
            ow: outs[2],
        })
    }

    fn k(&self) -> usize {
        self.ic * self.kd * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.od * self.oh * self.ow
    }

    fn in_volume(&self) -> usize {
        self.d * self.h * self.w
    }

    /// Input coordinate for output position `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        let p = self.p();
        let mut row = 0;
        for c in 0..self.ic {
            let xc = &x[c * self.in_volume()..(c + 1) * self.in_volume()];
            for kz in 0..self.kd {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let dst = &mut col[row * p..(row + 1) * p];
                        let mut idx = 0;
                        for oz in 0..self.od {
                            let iz = Self::src(oz, kz, self.stride, self.pad, self.d);
                            for oy in 0..self.oh {
                                let iy = Self::src(oy, ky, self.stride, self.pad, self.h);
                                match (iz, iy) {
                                    (Some(iz), Some(iy)) => {
                                        let base = (iz * self.h + iy) * self.w;
                                        for ox in 0..self.ow {
                                            dst[idx] = Self::src(ox, kx, self.stride, self.pad, self.w)
                                                .map_or(0.0, |ix| xc[base + ix]);
                                            idx += 1;
                                        }
                                    }
                                    _ => {
                                        dst[idx..idx + self.ow].fill(0.0);
                                        idx += self.ow;
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn col2im_add(&self, col: &[f64], x: &mut [f64]) {
        let p = self.p();
        let mut row = 0;
        for c in 0..self.ic {
            let vol = self.in_volume();
            let xc = &mut x[c * vol..(c + 1) * vol];
            for kz in 0..self.kd {
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        let src = &col[row * p..(row + 1) * p];
                        let mut idx = 0;
                        for oz in 0..self.od {
                            let iz = Self::src(oz, kz, self.stride, self.pad, self.d);
                            for oy in 0..self.oh {
                                let iy = Self::src(oy, ky, self.stride, self.pad, self.h);
                                if let (Some(iz), Some(iy)) = (iz, iy) {
                                    let base = (iz * self.h + iy) * self.w;
                                    for ox in 0..self.ow {
                                        if let Some(ix) =
                                            Self::src(ox, kx, self.stride, self.pad, self.w)
                                        {
                                            xc[base + ix] += src[idx + ox];
                                        }
                                    }
                                }
                                idx += self.ow;
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// Forward pass of a [`Conv3d`] layer.
pub fn conv3d_forward(input: &Tensor, layer: &Conv3d) -> Result<Tensor> {
    conv3d(
        input,
        &layer.weight.value,
        layer.bias.as_ref().map(|b| &b.value),
        layer.stride,
        layer.padding,
    )
}

/// Gradients of `sum(grad_out ⊙ conv3d_forward(input, layer))`.
pub fn conv3d_backward(grad_out: &Tensor, input: &Tensor, layer: &Conv3d) -> Result<Conv3dGrads> {
    let (gi, gw, gb) = conv3d_grads(
        grad_out,
        input,
        &layer.weight.value,
        layer.stride,
        layer.padding,
    )?;
    Ok(Conv3dGrads {
        input: gi,
        weight: gw,
        bias: layer.bias.as_ref().map(|_| gb),
    })
}

/// Functional convolution; `bias`, when present, has one entry per output channel.
pub fn conv3d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = Geometry::new(input.shape(), weight.shape(), stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [g.oc] {
            return Err(Error::shape(format!(
                "conv3d bias {:?} does not match {} output channels",
                b.shape(),
                g.oc
            )));
        }
    }
    let (k, p) = (g.k(), g.p());
    let in_sample = g.ic * g.in_volume();
    let out_sample = g.oc * p;
    let w = weight.data();
    let x = input.data();
    let mut out = vec![0.0; g.n * out_sample];
    let mut col = vec![0.0; k * p];
    for s in 0..g.n {
        g.im2col(&x[s * in_sample..(s + 1) * in_sample], &mut col);
        let y = &mut out[s * out_sample..(s + 1) * out_sample];
        for oc in 0..g.oc {
            let yrow = &mut y[oc * p..(oc + 1) * p];
            if let Some(b) = bias {
                yrow.fill(b.data()[oc]);
            }
            let wrow = &w[oc * k..(oc + 1) * k];
            for (kk, &wv) in wrow.iter().enumerate() {
                let crow = &col[kk * p..(kk + 1) * p];
                for (yv, cv) in yrow.iter_mut().zip(crow) {
                    *yv += wv * cv;
                }
            }
        }
    }
    Tensor::from_vec(&[g.n, g.oc, g.od, g.oh, g.ow], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)` for [`conv3d`].
pub fn conv3d_grads(
    grad_out: &Tensor,
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = Geometry::new(input.shape(), weight.shape(), stride, padding)?;
    let expected = [g.n, g.oc, g.od, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::shape(format!(
            "conv3d backward: grad_out {:?}, forward output {expected:?}",
            grad_out.shape()
        )));
    }
    let (k, p) = (g.k(), g.p());
    let in_sample = g.ic * g.in_volume();
    let out_sample = g.oc * p;
    let w = weight.data();
    let x = input.data();
    let go = grad_out.data();
    let mut gi = vec![0.0; input.len()];
    let mut gw = vec![0.0; weight.len()];
    let mut gb = vec![0.0; g.oc];
    let mut col = vec![0.0; k * p];
    let mut gcol = vec![0.0; k * p];
    for s in 0..g.n {
        g.im2col(&x[s * in_sample..(s + 1) * in_sample], &mut col);
        gcol.fill(0.0);
        let gy = &go[s * out_sample..(s + 1) * out_sample];
        for oc in 0..g.oc {
            let grow = &gy[oc * p..(oc + 1) * p];
            gb[oc] += grow.iter().sum::<f64>();
            let wrow = &w[oc * k..(oc + 1) * k];
            let gwrow = &mut gw[oc * k..(oc + 1) * k];
            for kk in 0..k {
                let crow = &col[kk * p..(kk + 1) * p];
                gwrow[kk] += grow.iter().zip(crow).map(|(a, b)| a * b).sum::<f64>();
                let wv = wrow[kk];
                let gcrow = &mut gcol[kk * p..(kk + 1) * p];
                for (gc, gv) in gcrow.iter_mut().zip(grow) {
                    *gc += wv * gv;
                }
            }
        }
        g.col2im_add(&gcol, &mut gi[s * in_sample..(s + 1) * in_sample]);
    }
    Ok((
        Tensor::from_vec(input.shape(), gi)?,
        Tensor::from_vec(weight.shape(), gw)?,
        Tensor::from_vec(&[g.oc], gb)?,
    ))
}

/// Direct nested-loop convolution. Slow; the definition the fast path must match.
pub fn conv3d_reference(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = Geometry::new(input.shape(), weight.shape(), stride, padding)?;
    let x = input.data();
    let w = weight.data();
    let mut out = Tensor::zeros(&[g.n, g.oc, g.od, g.oh, g.ow]);
    let y = out.data_mut();
    let mut idx = 0;
    for s in 0..g.n {
        for oc in 0..g.oc {
            for oz in 0..g.od {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = bias.map_or(0.0, |b| b.data()[oc]);
                        for c in 0..g.ic {
                            for kz in 0..g.kd {
                                let Some(iz) = Geometry::src(oz, kz, stride, padding, g.d) else {
                                    continue;
                                };
                                for ky in 0..g.kh {
                                    let Some(iy) = Geometry::src(oy, ky, stride, padding, g.h)
                                    else {
                                        continue;
                                    };
                                    for kx in 0..g.kw {
                                        let Some(ix) =
                                            Geometry::src(ox, kx, stride, padding, g.w)
                                        else {
                                            continue;
                                        };
                                        let xi = (((s * g.ic + c) * g.d + iz) * g.h + iy) * g.w + ix;
                                        let wi = (((oc * g.ic + c) * g.kd + kz) * g.kh + ky) * g.kw + kx;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        y[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}
