//! 3D convolutional LSTM over an ordered sequence of contrast phases.
//!
//! One step computes
//!
//! ```text
//! f = σ(W_f^X * X_t + W_f^H * H_{t-1} + b_f)
//! i = σ(W_i^X * X_t + W_i^H * H_{t-1} + b_i)
//! o = σ(W_o^X * X_t + W_o^H * H_{t-1} + b_o)
//! C_t = f ⊙ C_{t-1} + i ⊙ tanh(W_C^X * X_t + W_C^H * H_{t-1} + b_C)
//! H_t = o ⊙ tanh(C_t)
//! ```
//!
//! with `*` a 3D convolution (padding keeps the spatial extent) and `⊙` the
//! elementwise product. The four gates are evaluated with a single stacked
//! convolution per operand; parameters stay stored per gate.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::conv::{conv3d, conv3d_grads};
use crate::nn::init::uniform;
use crate::nn::sigmoid;
use crate::tensor::{Param, Tensor};

/// Gate order used for stacking: forget, input, output, candidate.
pub const GATES: [&str; 4] = ["forget", "input", "output", "candidate"];

#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `[hidden, in_ch, k, k, k]`
    pub input_kernel: Param,
    /// `[hidden, hidden, k, k, k]`
    pub hidden_kernel: Param,
    /// `[hidden]`
    pub bias: Param,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmCell {
    pub forget: GateParams,
    pub input: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
    in_ch: usize,
    hidden_ch: usize,
    kernel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLstmState {
    pub hidden: Tensor,
    pub cell: Tensor,
}

impl ConvLstmState {
    pub fn zeros(n: usize, hidden_ch: usize, spatial: [usize; 3]) -> Self {
        let shape = [n, hidden_ch, spatial[0], spatial[1], spatial[2]];
        Self {
            hidden: Tensor::zeros(&shape),
            cell: Tensor::zeros(&shape),
        }
    }
}

impl ConvLstmCell {
    /// Uniform fan-in kernels; forget bias +1, other biases 0.
    pub fn new<R: Rng + ?Sized>(in_ch: usize, hidden_ch: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::invalid(format!(
                "ConvLSTM kernel must be odd to preserve extent, got {kernel}"
            )));
        }
        if in_ch == 0 || hidden_ch == 0 {
            return Err(Error::invalid("ConvLSTM channel counts must be positive"));
        }
        let fan_in = ((in_ch + hidden_ch) * kernel * kernel * kernel) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let mut gate = |bias: f64| GateParams {
            input_kernel: Param::new(uniform(&[hidden_ch, in_ch, kernel, kernel, kernel], bound, rng)),
            hidden_kernel: Param::new(uniform(
                &[hidden_ch, hidden_ch, kernel, kernel, kernel],
                bound,
                rng,
            )),
            bias: Param::new(Tensor::full(&[hidden_ch], bias)),
        };
        let forget = gate(1.0);
        let input = gate(0.0);
        let output = gate(0.0);
        let candidate = gate(0.0);
        Ok(Self {
            forget,
            input,
            output,
            candidate,
            in_ch,
            hidden_ch,
            kernel,
        })
    }

    /// All kernels and biases zero.
    pub fn zeroed(in_ch: usize, hidden_ch: usize, kernel: usize) -> Self {
        let gate = || GateParams {
            input_kernel: Param::new(Tensor::zeros(&[hidden_ch, in_ch, kernel, kernel, kernel])),
            hidden_kernel: Param::new(Tensor::zeros(&[hidden_ch, hidden_ch, kernel, kernel, kernel])),
            bias: Param::new(Tensor::zeros(&[hidden_ch])),
        };
        Self {
            forget: gate(),
            input: gate(),
            output: gate(),
            candidate: gate(),
            in_ch,
            hidden_ch,
            kernel,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden_ch
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn gates(&self) -> [&GateParams; 4] {
        [&self.forget, &self.input, &self.output, &self.candidate]
    }

    pub fn gates_mut(&mut self) -> [&mut GateParams; 4] {
        [
            &mut self.forget,
            &mut self.input,
            &mut self.output,
            &mut self.candidate,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::with_capacity(12);
        for g in self.gates_mut() {
            out.push(&mut g.input_kernel);
            out.push(&mut g.hidden_kernel);
            out.push(&mut g.bias);
        }
        out
    }

    pub fn accumulate(&mut self, grads: &CellParamGrads) -> Result<()> {
        for (k, g) in self.gates_mut().into_iter().enumerate() {
            g.input_kernel.accumulate(&grads.input_kernels[k])?;
            g.hidden_kernel.accumulate(&grads.hidden_kernels[k])?;
            g.bias.accumulate(&grads.biases[k])?;
        }
        Ok(())
    }

    fn stacked(&self, pick: impl Fn(&GateParams) -> &Tensor) -> Tensor {
        let parts: Vec<&Tensor> = self.gates().into_iter().map(pick).collect();
        let mut shape = parts[0].shape().to_vec();
        shape[0] *= 4;
        let data = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
        Tensor::from_vec(&shape, data).expect("gate tensors share a shape")
    }

    fn padding(&self) -> usize {
        self.kernel / 2
    }
}

/// Gradients for every cell parameter, indexed in [`GATES`] order.
#[derive(Debug, Clone)]
pub struct CellParamGrads {
    pub input_kernels: [Tensor; 4],
    pub hidden_kernels: [Tensor; 4],
    pub biases: [Tensor; 4],
}

/// Forward values needed by [`cell_step_backward`].
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Tensor,
    h_prev: Tensor,
    c_prev: Tensor,
    f: Vec<f64>,
    i: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl StepCache {
    /// Forget, input and output gate activations, flattened like the state.
    pub fn gates(&self) -> [&[f64]; 3] {
        [&self.f, &self.i, &self.o]
    }

    pub fn candidate(&self) -> &[f64] {
        &self.g
    }
}

#[derive(Debug, Clone)]
pub struct StepGrads {
    pub x: Tensor,
    pub hidden_prev: Tensor,
    pub cell_prev: Tensor,
    pub params: CellParamGrads,
}

fn check_step(x: &Tensor, state: &ConvLstmState, cell: &ConvLstmCell) -> Result<()> {
    x.expect_rank(5, "ConvLSTM input")?;
    state.hidden.expect_same_shape(&state.cell, "ConvLSTM state")?;
    let hs = state.hidden.shape();
    let xs = x.shape();
    if xs[1] != cell.in_ch {
        return Err(Error::shape(format!(
            "ConvLSTM input has {} channels, cell expects {}",
            xs[1], cell.in_ch
        )));
    }
    if hs.len() != 5 || hs[0] != xs[0] || hs[1] != cell.hidden_ch || hs[2..] != xs[2..] {
        return Err(Error::shape(format!(
            "ConvLSTM input {xs:?} incompatible with state {hs:?} (hidden {})",
            cell.hidden_ch
        )));
    }
    Ok(())
}

/// One recurrence step.
pub fn cell_step(x: &Tensor, state: &ConvLstmState, cell: &ConvLstmCell) -> Result<(ConvLstmState, StepCache)> {
    check_step(x, state, cell)?;
    let pad = cell.padding();
    let wx = cell.stacked(|g| &g.input_kernel.value);
    let wh = cell.stacked(|g| &g.hidden_kernel.value);
    let b = cell.stacked(|g| &g.bias.value);
    let ax = conv3d(x, &wx, Some(&b), 1, pad)?;
    let ah = conv3d(&state.hidden, &wh, None, 1, pad)?;

    let shape = state.cell.shape().to_vec();
    let n = shape[0];
    let block = state.cell.len() / n;
    let len = state.cell.len();
    let mut f = vec![0.0; len];
    let mut i = vec![0.0; len];
    let mut o = vec![0.0; len];
    let mut g = vec![0.0; len];
    let mut c = vec![0.0; len];
    let mut h = vec![0.0; len];
    let mut tanh_c = vec![0.0; len];
    let cp = state.cell.data();
    for s in 0..n {
        let pre = |k: usize, j: usize| {
            let idx = s * 4 * block + k * block + j;
            ax.data()[idx] + ah.data()[idx]
        };
        for j in 0..block {
            let e = s * block + j;
            f[e] = sigmoid(pre(0, j));
            i[e] = sigmoid(pre(1, j));
            o[e] = sigmoid(pre(2, j));
            g[e] = pre(3, j).tanh();
            c[e] = f[e] * cp[e] + i[e] * g[e];
            tanh_c[e] = c[e].tanh();
            h[e] = o[e] * tanh_c[e];
        }
    }
    let next = ConvLstmState {
        hidden: Tensor::from_vec(&shape, h)?,
        cell: Tensor::from_vec(&shape, c)?,
    };
    let cache = StepCache {
        x: x.clone(),
        h_prev: state.hidden.clone(),
        c_prev: state.cell.clone(),
        f,
        i,
        o,
        g,
        tanh_c,
    };
    Ok((next, cache))
}

/// Backward through one step given upstream gradients on `H_t` and `C_t`.
pub fn cell_step_backward(
    grad_hidden: &Tensor,
    grad_cell: &Tensor,
    cache: &StepCache,
    cell: &ConvLstmCell,
) -> Result<StepGrads> {
    grad_hidden.expect_same_shape(&cache.c_prev, "ConvLSTM grad_hidden")?;
    grad_cell.expect_same_shape(&cache.c_prev, "ConvLSTM grad_cell")?;
    let shape = cache.c_prev.shape().to_vec();
    let n = shape[0];
    let block = cache.c_prev.len() / n;
    let hc = cell.hidden_ch;
    let mut stacked_shape = shape.clone();
    stacked_shape[1] = 4 * hc;
    let mut da = vec![0.0; 4 * cache.c_prev.len()];
    let mut dc_prev = vec![0.0; cache.c_prev.len()];
    let dh = grad_hidden.data();
    let dc = grad_cell.data();
    let cp = cache.c_prev.data();
    for s in 0..n {
        for j in 0..block {
            let e = s * block + j;
            let (f, i, o, g, tc) = (cache.f[e], cache.i[e], cache.o[e], cache.g[e], cache.tanh_c[e]);
            let dct = dc[e] + dh[e] * o * (1.0 - tc * tc);
            let base = s * 4 * block + j;
            da[base] = dct * cp[e] * f * (1.0 - f);
            da[base + block] = dct * g * i * (1.0 - i);
            da[base + 2 * block] = dh[e] * tc * o * (1.0 - o);
            da[base + 3 * block] = dct * i * (1.0 - g * g);
            dc_prev[e] = dct * f;
        }
    }
    let da = Tensor::from_vec(&stacked_shape, da)?;
    let pad = cell.padding();
    let wx = cell.stacked(|g| &g.input_kernel.value);
    let wh = cell.stacked(|g| &g.hidden_kernel.value);
    let (dx, dwx, db) = conv3d_grads(&da, &cache.x, &wx, 1, pad)?;
    let (dhp, dwh, _) = conv3d_grads(&da, &cache.h_prev, &wh, 1, pad)?;
    let split = |t: &Tensor| -> Result<[Tensor; 4]> {
        let mut shape = t.shape().to_vec();
        shape[0] /= 4;
        let q = t.len() / 4;
        let part = |k: usize| Tensor::from_vec(&shape, t.data()[k * q..(k + 1) * q].to_vec());
        Ok([part(0)?, part(1)?, part(2)?, part(3)?])
    };
    Ok(StepGrads {
        x: dx,
        hidden_prev: dhp,
        cell_prev: Tensor::from_vec(&shape, dc_prev)?,
        params: CellParamGrads {
            input_kernels: split(&dwx)?,
            hidden_kernels: split(&dwh)?,
            biases: split(&db)?,
        },
    })
}

/// Result of running the cell across a phase sequence.
#[derive(Debug, Clone)]
pub struct Unrolled {
    /// `states[t]` is the state after consuming phase `t`.
    pub states: Vec<ConvLstmState>,
    caches: Vec<StepCache>,
}

impl Unrolled {
    pub fn final_state(&self) -> &ConvLstmState {
        self.states.last().expect("unroll never yields an empty sequence")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Applies [`cell_step`] to each phase in order, starting from `init` or zeros.
pub fn unroll(sequence: &[&Tensor], cell: &ConvLstmCell, init: Option<ConvLstmState>) -> Result<Unrolled> {
    let first = sequence
        .first()
        .ok_or_else(|| Error::invalid("ConvLSTM unroll over an empty sequence"))?;
    first.expect_rank(5, "ConvLSTM phase")?;
    for x in sequence {
        x.expect_same_shape(first, "ConvLSTM phases")?;
    }
    let s = first.shape();
    let mut state = init.unwrap_or_else(|| ConvLstmState::zeros(s[0], cell.hidden_ch, [s[2], s[3], s[4]]));
    let mut states = Vec::with_capacity(sequence.len());
    let mut caches = Vec::with_capacity(sequence.len());
    for x in sequence {
        let (next, cache) = cell_step(x, &state, cell)?;
        caches.push(cache);
        states.push(next.clone());
        state = next;
    }
    Ok(Unrolled { states, caches })
}

#[derive(Debug, Clone)]
pub struct UnrollGrads {
    pub inputs: Vec<Tensor>,
    pub init: ConvLstmState,
    pub params: CellParamGrads,
}

/// Backpropagation through time.
///
/// `grad_hidden[t]` is the loss gradient on `H_t` (absent entries are zero);
/// `grad_final_cell` optionally adds a gradient on the last `C_t`.
pub fn unroll_backward(
    unrolled: &Unrolled,
    grad_hidden: &[Option<Tensor>],
    grad_final_cell: Option<&Tensor>,
    cell: &ConvLstmCell,
) -> Result<UnrollGrads> {
    let steps = unrolled.caches.len();
    if grad_hidden.len() > steps || steps == 0 {
        return Err(Error::MissingCache);
    }
    let shape = unrolled.states[0].hidden.shape().to_vec();
    let mut dh = Tensor::zeros(&shape);
    let mut dc = grad_final_cell.cloned().unwrap_or_else(|| Tensor::zeros(&shape));
    let mut inputs = vec![None; steps];
    let mut acc: Option<CellParamGrads> = None;
    for t in (0..steps).rev() {
        if let Some(Some(g)) = grad_hidden.get(t) {
            dh.add_assign(g)?;
        }
        let step = cell_step_backward(&dh, &dc, &unrolled.caches[t], cell)?;
        inputs[t] = Some(step.x);
        acc = Some(match acc {
            None => step.params,
            Some(mut a) => {
                for k in 0..4 {
                    a.input_kernels[k].add_assign(&step.params.input_kernels[k])?;
                    a.hidden_kernels[k].add_assign(&step.params.hidden_kernels[k])?;
                    a.biases[k].add_assign(&step.params.biases[k])?;
                }
                a
            }
        });
        dh = step.hidden_prev;
        dc = step.cell_prev;
    }
    Ok(UnrollGrads {
        inputs: inputs.into_iter().map(|t| t.expect("filled above")).collect(),
        init: ConvLstmState { hidden: dh, cell: dc },
        params: acc.expect("at least one step"),
    })
}
