//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

pub mod criteria;

use cect_core::convlstm::{cell_step, cell_step_backward, unroll, unroll_backward, ConvLstmCell, ConvLstmState};
use cect_core::losses::{cox_loss, weighted_bce, MarginLabel, SurvivalLabel};
use cect_core::nn::{
    activation, activation_backward, batchnorm_backward, batchnorm_forward, conv3d, conv3d_grads, global_avg_pool,
    global_avg_pool_backward, linear_backward, linear_forward, Activation, BatchNorm,
};
use cect_core::phantom::{generate_cohort, CeCtSequence, PhantomParams};
use cect_core::prognet::{BatchInput, ModelConfig, PrognosisNet, Readout, Variant};
use cect_core::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Five-point central difference of `f` at `x`.
pub fn central_diff(x: f64, h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Floor under relative-error denominators so near-zero gradients are compared absolutely.
pub const FLOOR: f64 = 1e-4;
pub const H_LAYER: f64 = 1e-5;
pub const H_LOSS: f64 = 1e-4;

/// Indices to probe: all of them for small tensors, `k` random ones otherwise.
pub fn picks(len: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    if len > k {
        all.shuffle(rng);
        all.truncate(k);
    }
    all
}

/// Worst relative error between `analytic` and the finite difference of
/// `eval(base with entry i replaced)` over the probed entries.
pub fn fd_max_err(
    base: &Tensor,
    analytic: &Tensor,
    probes: &[usize],
    h: f64,
    floor: f64,
    mut eval: impl FnMut(&Tensor) -> f64,
) -> f64 {
    assert_eq!(base.shape(), analytic.shape());
    let mut worst: f64 = 0.0;
    for &i in probes {
        let numeric = central_diff(base.data()[i], h, |v| {
            let mut t = base.clone();
            t.data_mut()[i] = v;
            eval(&t)
        });
        worst = worst.max(rel_err(analytic.data()[i], numeric, floor));
    }
    worst
}

fn weighted(y: &Tensor, r: &Tensor) -> f64 {
    y.dot(r).unwrap()
}

// ---- per-operation gradient checks; each returns the worst relative error ----

pub fn conv3d_grad_err(seed: u64) -> f64 {
    let mut g = rng(seed);
    let stride = 1 + (seed % 2) as usize;
    let padding = (seed / 2 % 2) as usize;
    let (ic, oc) = (g.random_range(1..3), g.random_range(1..3));
    let x = rand_tensor(&[2, ic, 4, 5, 4], &mut g);
    let w = rand_tensor(&[oc, ic, 3, 3, 3], &mut g);
    let b = rand_tensor(&[oc], &mut g);
    let y = conv3d(&x, &w, Some(&b), stride, padding).unwrap();
    let r = rand_tensor(y.shape(), &mut g);
    let (gx, gw, gb) = conv3d_grads(&r, &x, &w, stride, padding).unwrap();
    let px = picks(x.len(), 24, &mut g);
    let pw = picks(w.len(), 24, &mut g);
    let pb = picks(b.len(), 24, &mut g);
    let ex = fd_max_err(&x, &gx, &px, H_LAYER, FLOOR, |t| {
        weighted(&conv3d(t, &w, Some(&b), stride, padding).unwrap(), &r)
    });
    let ew = fd_max_err(&w, &gw, &pw, H_LAYER, FLOOR, |t| {
        weighted(&conv3d(&x, t, Some(&b), stride, padding).unwrap(), &r)
    });
    let eb = fd_max_err(&b, &gb, &pb, H_LAYER, FLOOR, |t| {
        weighted(&conv3d(&x, &w, Some(t), stride, padding).unwrap(), &r)
    });
    ex.max(ew).max(eb)
}

pub fn batchnorm_grad_err(seed: u64) -> f64 {
    let mut g = rng(seed);
    let ch = g.random_range(1..4);
    let x = rand_tensor(&[3, ch, 2, 3, 2], &mut g);
    let mut layer = BatchNorm::new(ch);
    layer.gamma.value = rand_tensor(&[ch], &mut g);
    layer.beta.value = rand_tensor(&[ch], &mut g);
    let fwd = |x: &Tensor, layer: &BatchNorm| {
        let mut l = layer.clone();
        batchnorm_forward(x, &mut l).unwrap()
    };
    let (y, cache) = fwd(&x, &layer);
    let r = rand_tensor(y.shape(), &mut g);
    let grads = batchnorm_backward(&r, &cache, &layer).unwrap();
    let px = picks(x.len(), 30, &mut g);
    let pc = picks(ch, 30, &mut g);
    let ex = fd_max_err(&x, &grads.input, &px, H_LAYER, FLOOR, |t| weighted(&fwd(t, &layer).0, &r));
    let eg = fd_max_err(&layer.gamma.value, &grads.gamma, &pc, H_LAYER, FLOOR, |t| {
        let mut l = layer.clone();
        l.gamma.value = t.clone();
        weighted(&fwd(&x, &l).0, &r)
    });
    let eb = fd_max_err(&layer.beta.value, &grads.beta, &pc, H_LAYER, FLOOR, |t| {
        let mut l = layer.clone();
        l.beta.value = t.clone();
        weighted(&fwd(&x, &l).0, &r)
    });
    ex.max(eg).max(eb)
}

pub fn linear_grad_err(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (n, f, o) = (g.random_range(1..4), g.random_range(1..6), g.random_range(1..4));
    let x = rand_tensor(&[n, f], &mut g);
    let w = rand_tensor(&[o, f], &mut g);
    let b = rand_tensor(&[o], &mut g);
    let r = rand_tensor(&[n, o], &mut g);
    let grads = linear_backward(&r, &x, &w).unwrap();
    let all = |len| (0..len).collect::<Vec<_>>();
    let ex = fd_max_err(&x, &grads.input, &all(x.len()), H_LAYER, FLOOR, |t| {
        weighted(&linear_forward(t, &w, &b).unwrap(), &r)
    });
    let ew = fd_max_err(&w, &grads.weight, &all(w.len()), H_LAYER, FLOOR, |t| {
        weighted(&linear_forward(&x, t, &b).unwrap(), &r)
    });
    let eb = fd_max_err(&b, &grads.bias, &all(b.len()), H_LAYER, FLOOR, |t| {
        weighted(&linear_forward(&x, &w, t).unwrap(), &r)
    });
    ex.max(ew).max(eb)
}

pub fn pool_grad_err(seed: u64) -> f64 {
    let mut g = rng(seed);
    let x = rand_tensor(&[2, 3, 2, 3, 2], &mut g);
    let r = rand_tensor(&[2, 3], &mut g);
    let gx = global_avg_pool_backward(&r, x.shape()).unwrap();
    let p = (0..x.len()).collect::<Vec<_>>();
    fd_max_err(&x, &gx, &p, H_LAYER, FLOOR, |t| weighted(&global_avg_pool(t).unwrap(), &r))
}

pub fn activation_grad_err(seed: u64) -> f64 {
    let mut g = rng(seed);
    let mut worst: f64 = 0.0;
    for kind in [Activation::Sigmoid, Activation::Tanh, Activation::Relu] {
        // Keep ReLU inputs away from the kink.
        let x = Tensor::from_fn(&[2, 7], |_| {
            let v: f64 = g.random_range(0.01..2.0);
            if g.random_bool(0.5) { v } else { -v }
        });
        let r = rand_tensor(x.shape(), &mut g);
        let y = activation(&x, kind);
        let gx = activation_backward(&r, &y, kind).unwrap();
        let p = (0..x.len()).collect::<Vec<_>>();
        worst = worst.max(fd_max_err(&x, &gx, &p, H_LAYER, FLOOR, |t| weighted(&activation(t, kind), &r)));
    }
    worst
}

fn cell_params(cell: &ConvLstmCell) -> Vec<Tensor> {
    cell.gates()
        .iter()
        .flat_map(|g| [g.input_kernel.value.clone(), g.hidden_kernel.value.clone(), g.bias.value.clone()])
        .collect()
}

fn with_param(cell: &ConvLstmCell, k: usize, t: &Tensor) -> ConvLstmCell {
    let mut c = cell.clone();
    let gate = &mut c.gates_mut()[k / 3];
    match k % 3 {
        0 => gate.input_kernel.value = t.clone(),
        1 => gate.hidden_kernel.value = t.clone(),
        _ => gate.bias.value = t.clone(),
    }
    c
}

/// One step: inputs, previous state and all twelve parameter tensors.
pub fn cell_grad_err(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (ic, hc) = (g.random_range(1..3), g.random_range(1..3));
    let cell = ConvLstmCell::new(ic, hc, 3, &mut g).unwrap();
    let sp = [2, 3, 2];
    let x = rand_tensor(&[2, ic, sp[0], sp[1], sp[2]], &mut g);
    let state = ConvLstmState {
        hidden: rand_tensor(&[2, hc, sp[0], sp[1], sp[2]], &mut g),
        cell: rand_tensor(&[2, hc, sp[0], sp[1], sp[2]], &mut g),
    };
    let rh = rand_tensor(state.hidden.shape(), &mut g);
    let rc = rand_tensor(state.cell.shape(), &mut g);
    let loss = |x: &Tensor, s: &ConvLstmState, c: &ConvLstmCell| {
        let (next, _) = cell_step(x, s, c).unwrap();
        weighted(&next.hidden, &rh) + weighted(&next.cell, &rc)
    };
    let (_, cache) = cell_step(&x, &state, &cell).unwrap();
    let grads = cell_step_backward(&rh, &rc, &cache, &cell).unwrap();
    let mut worst: f64 = 0.0;
    let p = picks(x.len(), 20, &mut g);
    worst = worst.max(fd_max_err(&x, &grads.x, &p, H_LAYER, FLOOR, |t| loss(t, &state, &cell)));
    let p = picks(state.hidden.len(), 20, &mut g);
    worst = worst.max(fd_max_err(&state.hidden, &grads.hidden_prev, &p, H_LAYER, FLOOR, |t| {
        loss(&x, &ConvLstmState { hidden: t.clone(), cell: state.cell.clone() }, &cell)
    }));
    worst = worst.max(fd_max_err(&state.cell, &grads.cell_prev, &p, H_LAYER, FLOOR, |t| {
        loss(&x, &ConvLstmState { hidden: state.hidden.clone(), cell: t.clone() }, &cell)
    }));
    let params = cell_params(&cell);
    for (k, base) in params.iter().enumerate() {
        let analytic = match k % 3 {
            0 => &grads.params.input_kernels[k / 3],
            1 => &grads.params.hidden_kernels[k / 3],
            _ => &grads.params.biases[k / 3],
        };
        let p = picks(base.len(), 8, &mut g);
        worst = worst.max(fd_max_err(base, analytic, &p, H_LAYER, FLOOR, |t| {
            loss(&x, &state, &with_param(&cell, k, t))
        }));
    }
    worst
}

/// Three-step unroll from zeros with gradients on every hidden state and the final cell.
pub fn unroll_grad_err(seed: u64) -> f64 {
    let mut g = rng(seed);
    let (ic, hc) = (g.random_range(1..3), g.random_range(1..3));
    let cell = ConvLstmCell::new(ic, hc, 3, &mut g).unwrap();
    let xs: Vec<Tensor> = (0..3).map(|_| rand_tensor(&[2, ic, 2, 2, 3], &mut g)).collect();
    let rh: Vec<Tensor> = (0..3).map(|_| rand_tensor(&[2, hc, 2, 2, 3], &mut g)).collect();
    let rc = rand_tensor(&[2, hc, 2, 2, 3], &mut g);
    let loss = |xs: &[Tensor], c: &ConvLstmCell| {
        let refs: Vec<&Tensor> = xs.iter().collect();
        let u = unroll(&refs, c, None).unwrap();
        let h: f64 = u.states.iter().zip(&rh).map(|(s, r)| weighted(&s.hidden, r)).sum();
        h + weighted(&u.final_state().cell, &rc)
    };
    let refs: Vec<&Tensor> = xs.iter().collect();
    let u = unroll(&refs, &cell, None).unwrap();
    let upstream: Vec<Option<Tensor>> = rh.iter().cloned().map(Some).collect();
    let grads = unroll_backward(&u, &upstream, Some(&rc), &cell).unwrap();
    let mut worst: f64 = 0.0;
    for t in 0..3 {
        let p = picks(xs[t].len(), 12, &mut g);
        worst = worst.max(fd_max_err(&xs[t], &grads.inputs[t], &p, H_LAYER, FLOOR, |v| {
            let mut xs2 = xs.clone();
            xs2[t] = v.clone();
            loss(&xs2, &cell)
        }));
    }
    for (k, base) in cell_params(&cell).iter().enumerate() {
        let analytic = match k % 3 {
            0 => &grads.params.input_kernels[k / 3],
            1 => &grads.params.hidden_kernels[k / 3],
            _ => &grads.params.biases[k / 3],
        };
        let p = picks(base.len(), 6, &mut g);
        worst = worst.max(fd_max_err(base, analytic, &p, H_LAYER, FLOOR, |t| loss(&xs, &with_param(&cell, k, t))));
    }
    worst
}

pub fn tiny_config(variant: Variant) -> ModelConfig {
    let mut c = ModelConfig::with_sizes(variant, 2, 2, 8);
    c.head_hidden = 4;
    c
}

pub fn small_cohort(n: usize, extent: usize, seed: u64) -> Vec<CeCtSequence> {
    generate_cohort(&PhantomParams {
        n_patients: n,
        extent,
        seed,
        ..PhantomParams::default()
    })
    .unwrap()
}

/// Full network at the tiny configuration: `Σ a·risk + Σ b·logit` against every parameter tensor.
/// Outcome of a gradient check on a piecewise-smooth function.
#[derive(Debug, Clone, Copy, Default)]
pub struct KinkedCheck {
    pub worst: f64,
    pub probed: usize,
    /// Probes where a ReLU kink lies inside every stencil tried.
    pub skipped: usize,
}

impl KinkedCheck {
    fn merge(&mut self, o: KinkedCheck) {
        self.worst = self.worst.max(o.worst);
        self.probed += o.probed;
        self.skipped += o.skipped;
    }
}

/// Agreement demanded between stencils of width `h` and `h/2` before a
/// finite difference is trusted as the derivative.
const SMOOTH_TOL: f64 = 1e-6;

/// Like [`fd_max_err`], but a probe whose `h` and `h/2` stencils disagree
/// straddles a kink; it is retried at `h/10` and skipped if that also fails.
pub fn fd_max_err_kinked(
    base: &Tensor,
    analytic: &Tensor,
    probes: &[usize],
    h: f64,
    floor: f64,
    mut eval: impl FnMut(&Tensor) -> f64,
) -> KinkedCheck {
    let mut out = KinkedCheck::default();
    for &i in probes {
        out.probed += 1;
        let mut diff = |step: f64| {
            central_diff(base.data()[i], step, |v| {
                let mut t = base.clone();
                t.data_mut()[i] = v;
                eval(&t)
            })
        };
        let mut numeric = None;
        for step in [h, h / 10.0] {
            let (wide, narrow) = (diff(step), diff(step / 2.0));
            if rel_err(wide, narrow, floor) <= SMOOTH_TOL {
                numeric = Some(narrow);
                break;
            }
        }
        match numeric {
            Some(n) => out.worst = out.worst.max(rel_err(analytic.data()[i], n, floor)),
            None => out.skipped += 1,
        }
    }
    out
}

/// End-to-end check of every parameter tensor of a tiny network against
/// a random linear functional of its outputs.
pub fn network_grad_check(variant: Variant, readout: Readout, seed: u64, per_tensor: usize) -> KinkedCheck {
    let mut config = tiny_config(variant);
    config.readout = readout;
    let mut net = PrognosisNet::new(config.clone(), seed).unwrap();
    let seqs = small_cohort(3, 8, seed);
    let refs: Vec<&CeCtSequence> = seqs.iter().collect();
    let input = BatchInput::from_sequences(&refs, &config).unwrap();
    let mut g = rng(seed ^ 0x5eed);
    let a: Vec<f64> = (0..3).map(|_| g.random_range(-1.0..1.0)).collect();
    let b: Vec<f64> = (0..3).map(|_| g.random_range(-1.0..1.0)).collect();
    let probe = |net: &mut PrognosisNet| {
        let (out, _) = net.forward(&input).unwrap();
        let r: f64 = out.risk.map_or(0.0, |r| r.iter().zip(&a).map(|(x, w)| x * w).sum());
        let m: f64 = out.margin_logit.map_or(0.0, |m| m.iter().zip(&b).map(|(x, w)| x * w).sum());
        r + m
    };
    net.zero_grad();
    let (_, cache) = net.forward(&input).unwrap();
    net.backward(&cache, Some(&a), Some(&b)).unwrap();
    let (values, grads): (Vec<Tensor>, Vec<Tensor>) =
        net.params_mut().iter().map(|p| (p.value.clone(), p.grad.clone())).unzip();
    let mut out = KinkedCheck::default();
    for (k, (value, grad)) in values.iter().zip(&grads).enumerate() {
        let p = picks(value.len(), per_tensor, &mut g);
        out.merge(fd_max_err_kinked(value, grad, &p, H_LAYER, FLOOR, |t| {
            let mut n2 = net.clone();
            n2.params_mut()[k].value = t.clone();
            probe(&mut n2)
        }));
    }
    out
}

pub fn random_labels(n: usize, g: &mut ChaCha8Rng, tie_prob: f64) -> Vec<SurvivalLabel> {
    let mut times: Vec<f64> = Vec::with_capacity(n);
    for _ in 0..n {
        let t = if !times.is_empty() && g.random_bool(tie_prob) {
            times[g.random_range(0..times.len())]
        } else {
            g.random_range(0.1..10.0)
        };
        times.push(t);
    }
    let mut labels: Vec<SurvivalLabel> = times
        .iter()
        .map(|&t| SurvivalLabel::new(t, g.random_bool(0.7)).unwrap())
        .collect();
    if !labels.iter().any(|l| l.event) {
        labels[0] = SurvivalLabel::new(labels[0].time, true).unwrap();
    }
    labels
}

pub fn cox_loss_grad_err(seed: u64) -> f64 {
    let mut g = rng(seed);
    let n = g.random_range(2..=8);
    let labels = random_labels(n, &mut g, 0.2);
    let y = Tensor::from_fn(&[n], |_| g.random_range(-2.0..2.0));
    let (_, grad) = cox_loss(y.data(), &labels).unwrap();
    let grad = Tensor::from_vec(&[n], grad).unwrap();
    let p: Vec<usize> = (0..n).collect();
    fd_max_err(&y, &grad, &p, H_LOSS, FLOOR, |t| cox_loss(t.data(), &labels).unwrap().0)
}

pub fn bce_grad_err(seed: u64) -> f64 {
    let mut g = rng(seed);
    let n = g.random_range(1..=8);
    let labels: Vec<MarginLabel> = (0..n)
        .map(|_| if g.random_bool(0.4) { MarginLabel::R1 } else { MarginLabel::R0 })
        .collect();
    let w = g.random_range(0.5..4.0);
    let z = Tensor::from_fn(&[n], |_| g.random_range(-3.0..3.0));
    let (_, grad) = weighted_bce(z.data(), &labels, w).unwrap();
    let grad = Tensor::from_vec(&[n], grad).unwrap();
    let p: Vec<usize> = (0..n).collect();
    fd_max_err(&z, &grad, &p, H_LOSS, FLOOR, |t| weighted_bce(t.data(), &labels, w).unwrap().0)
}

// ---- statistics oracles ----

/// Pair enumeration straight from the definition: `(i, j)` comparable when
/// `δ_i = 1` and `t_j > t_i`; credit 1 for `y_i > y_j`, `tie` for `y_i = y_j`.
pub fn brute_c_index(risks: &[f64], labels: &[SurvivalLabel], tie: f64) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..labels.len() {
        for j in 0..labels.len() {
            if labels[i].event && labels[j].time > labels[i].time {
                den += 1.0;
                if risks[i] > risks[j] {
                    num += 1.0;
                } else if risks[i] == risks[j] {
                    num += tie;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Maximizer of a unimodal `f` on `[lo, hi]` by golden-section search.
pub fn golden_max(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

/// Log-rank chi-square recomputed from the definition.
pub fn log_rank_chi2(a: &[SurvivalLabel], b: &[SurvivalLabel]) -> f64 {
    let mut times: Vec<f64> = a.iter().chain(b).filter(|l| l.event).map(|l| l.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let (mut o_minus_e, mut var) = (0.0, 0.0);
    for &t in &times {
        let na = a.iter().filter(|l| l.time >= t).count() as f64;
        let nb = b.iter().filter(|l| l.time >= t).count() as f64;
        let da = a.iter().filter(|l| l.event && l.time == t).count() as f64;
        let db = b.iter().filter(|l| l.event && l.time == t).count() as f64;
        let (n, d) = (na + nb, da + db);
        o_minus_e += da - d * na / n;
        if n > 1.0 {
            var += d * (na / n) * (nb / n) * (n - d) / (n - 1.0);
        }
    }
    o_minus_e * o_minus_e / var
}

/// Permutation p-value of the log-rank statistic under random group relabeling.
pub fn permutation_log_rank_p(a: &[SurvivalLabel], b: &[SurvivalLabel], perms: usize, seed: u64) -> f64 {
    let observed = log_rank_chi2(a, b);
    let mut pooled: Vec<SurvivalLabel> = a.iter().chain(b).copied().collect();
    let mut g = rng(seed);
    let mut hits = 0usize;
    for _ in 0..perms {
        pooled.shuffle(&mut g);
        let (x, y) = pooled.split_at(a.len());
        if log_rank_chi2(x, y) >= observed - 1e-12 {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (perms + 1) as f64
}

/// One standard LSTM step on plain vectors; gate order f, i, o, candidate.
pub struct ScalarLstm {
    /// `wx[g][h][i]`, `wh[g][h][k]`, `b[g][h]`.
    pub wx: Vec<Vec<Vec<f64>>>,
    pub wh: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
}

pub struct LstmStep {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    pub gates: [Vec<f64>; 3],
}

impl ScalarLstm {
    pub fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> LstmStep {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let hc = h.len();
        let pre = |g: usize, k: usize| -> f64 {
            self.b[g][k]
                + self.wx[g][k].iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
                + self.wh[g][k].iter().zip(h).map(|(w, v)| w * v).sum::<f64>()
        };
        let f: Vec<f64> = (0..hc).map(|k| sig(pre(0, k))).collect();
        let i: Vec<f64> = (0..hc).map(|k| sig(pre(1, k))).collect();
        let o: Vec<f64> = (0..hc).map(|k| sig(pre(2, k))).collect();
        let g: Vec<f64> = (0..hc).map(|k| pre(3, k).tanh()).collect();
        let c_new: Vec<f64> = (0..hc).map(|k| f[k] * c[k] + i[k] * g[k]).collect();
        let h_new: Vec<f64> = (0..hc).map(|k| o[k] * c_new[k].tanh()).collect();
        LstmStep {
            h: h_new,
            c: c_new,
            gates: [f, i, o],
        }
    }

    /// Reads the center taps of a cell's 3×3×3 kernels, which are the only
    /// taps that touch a 1×1×1 input under padding 1.
    pub fn from_cell(cell: &ConvLstmCell) -> Self {
        let k = cell.kernel();
        let center = (k / 2) * k * k + (k / 2) * k + k / 2;
        let taps = |t: &Tensor| -> Vec<Vec<f64>> {
            let s = t.shape();
            let vol = k * k * k;
            (0..s[0])
                .map(|o| (0..s[1]).map(|i| t.data()[(o * s[1] + i) * vol + center]).collect())
                .collect()
        };
        let gates = cell.gates();
        Self {
            wx: gates.iter().map(|g| taps(&g.input_kernel.value)).collect(),
            wh: gates.iter().map(|g| taps(&g.hidden_kernel.value)).collect(),
            b: gates.iter().map(|g| g.bias.value.data().to_vec()).collect(),
        }
    }
}
