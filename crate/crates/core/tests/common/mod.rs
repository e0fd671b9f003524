//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code, clippy::needless_range_loop)]

use eegdiff_core::diffusion::{q_sample, q_step, NoiseSchedule};
use eegdiff_core::{Result, SeededRng, Tape, Tensor, Var};

/// Central finite differences against the tape's gradient for every input.
/// Returns the worst normwise relative error over the inputs.
pub fn grad_check<F>(inputs: &[Tensor], h: f64, f: F) -> f64
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = f(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();

    let eval = |ts: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ts.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars).unwrap();
        tape.scalar(out)
    };

    let mut worst: f64 = 0.0;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        let mut numeric = vec![0.0; inputs[k].numel()];
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= h;
            numeric[i] = (eval(&plus) - eval(&minus)) / (2.0 * h);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-8)
}

pub fn random(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    Tensor::randn(shape, rng)
}

/// Direct sliding-window cross-correlation.
pub fn naive_conv2d(
    x: &Tensor,
    k: &Tensor,
    stride: (usize, usize),
    pad: (usize, usize),
) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let [ko, kc, kh, kw] = k.shape().try_into().unwrap();
    assert_eq!(c, kc);
    let ho = (h + 2 * pad.0 - kh) / stride.0 + 1;
    let wo = (w + 2 * pad.1 - kw) / stride.1 + 1;
    let mut out = vec![0.0; n * ko * ho * wo];
    for b in 0..n {
        for o in 0..ko {
            for y in 0..ho {
                for xo in 0..wo {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride.0 + i) as i64 - pad.0 as i64;
                                let ix = (xo * stride.1 + j) as i64 - pad.1 as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                s += x.data()[((b * c + ci) * h + iy as usize) * w + ix as usize]
                                    * k.data()[((o * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out[((b * ko + o) * ho + y) * wo + xo] = s;
                }
            }
        }
    }
    (vec![n, ko, ho, wo], out)
}

pub fn naive_maxpool(x: &Tensor, kernel: (usize, usize), stride: (usize, usize)) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let ho = (h - kernel.0) / stride.0 + 1;
    let wo = (w - kernel.1) / stride.1 + 1;
    let mut out = Vec::new();
    for p in 0..n * c {
        for y in 0..ho {
            for xo in 0..wo {
                let mut m = f64::NEG_INFINITY;
                for i in 0..kernel.0 {
                    for j in 0..kernel.1 {
                        m = m.max(x.data()[p * h * w + (y * stride.0 + i) * w + xo * stride.1 + j]);
                    }
                }
                out.push(m);
            }
        }
    }
    (vec![n, c, ho, wo], out)
}

pub fn naive_linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let [n, f] = x.shape().try_into().unwrap();
    let o = w.shape()[0];
    let mut out = vec![0.0; n * o];
    for i in 0..n {
        for j in 0..o {
            let mut s = b.data()[j];
            for p in 0..f {
                s += x.data()[i * f + p] * w.data()[j * f + p];
            }
            out[i * o + j] = s;
        }
    }
    out
}

/// Softmax then negative log-likelihood, without any stabilization.
pub fn naive_cross_entropy(logits: &[f64], k: usize, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = &logits[i * k..(i + 1) * k];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[y].exp() / z).ln();
    }
    total / labels.len() as f64
}

/// O(n²) one-sided DFT of a real sequence.
pub fn direct_dft(x: &[f64]) -> Vec<(f64, f64)> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let mut re = 0.0;
            let mut im = 0.0;
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re, im)
        })
        .collect()
}

/// Scalar-loop map builder: cut, max-normalize, pad, flip, quantize.
/// `frame` is bins × channels.
pub fn oracle_efdm(frame: &[f64], bins: usize, channels: usize, res: f64, cut_hz: f64, size: usize) -> Vec<u8> {
    let mut keep = 0;
    for b in 0..bins {
        if b as f64 * res <= cut_hz + 1e-9 {
            keep = b + 1;
        }
    }
    // cut
    let mut cut: Vec<Vec<f64>> = (0..keep).map(|b| (0..channels).map(|c| frame[b * channels + c]).collect()).collect();
    // normalize
    let mut max = 0.0f64;
    for row in &cut {
        for &v in row {
            if v > max {
                max = v;
            }
        }
    }
    if max > 0.0 {
        for row in cut.iter_mut() {
            for v in row.iter_mut() {
                *v /= max;
            }
        }
    }
    // pad to size x size, bin index increasing downward
    let mut padded = vec![vec![0.0; size]; size];
    for (b, row) in cut.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            padded[b][c] = v;
        }
    }
    // flip: bin 0 ends up on the bottom row
    padded.reverse();
    let mut out = Vec::with_capacity(size * size);
    for row in padded {
        for v in row {
            let q = (v * 255.0 + 0.5).floor();
            out.push(q as u8);
        }
    }
    out
}

/// Pooled z-scores of Monte Carlo draws against `N(sqrt(ab)·x0, (1-ab)·I)`:
/// the mean residual over all pixels and the pooled sample variance.
pub struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    n: usize,
}

impl Moments {
    pub fn new(pixels: usize) -> Self {
        Self { sum: vec![0.0; pixels], sum_sq: vec![0.0; pixels], n: 0 }
    }

    pub fn push(&mut self, x: &[f64]) {
        for (i, v) in x.iter().enumerate() {
            self.sum[i] += v;
            self.sum_sq[i] += v * v;
        }
        self.n += 1;
    }

    /// `(mean_z, variance_z)`.
    pub fn z_scores(&self, x0: &[f64], alpha_bar: f64) -> (f64, f64) {
        let n = self.n as f64;
        let p = x0.len() as f64;
        let var = 1.0 - alpha_bar;
        let mut resid = 0.0;
        let mut pooled = 0.0;
        for i in 0..x0.len() {
            let m = self.sum[i] / n;
            resid += m - alpha_bar.sqrt() * x0[i];
            pooled += (self.sum_sq[i] - n * m * m) / (n - 1.0);
        }
        let mean_z = (resid / p) / (var / (n * p)).sqrt();
        let var_z = (pooled / p - var) / (var * (2.0 / (p * (n - 1.0))).sqrt());
        (mean_z, var_z)
    }
}

/// Draws from the library's `q_sample` and chained `q_step` at each `t` in
/// `ts`, scored against `ᾱ` recomputed here from the schedule's betas.
/// Returns `(t, closed_mean_z, closed_var_z, chained_mean_z, chained_var_z)`.
pub fn forward_process_moments(
    x0: &Tensor,
    sched: &NoiseSchedule,
    ts: &[usize],
    draws: usize,
    seed: u64,
) -> Vec<(usize, f64, f64, f64, f64)> {
    let mut rng = SeededRng::new(seed);
    let p = x0.numel();
    let mut ab = Vec::new();
    let mut acc = 1.0;
    for b in sched.betas() {
        acc *= 1.0 - b;
        ab.push(acc);
    }
    let last = *ts.iter().max().unwrap();
    let mut closed: Vec<Moments> = ts.iter().map(|_| Moments::new(p)).collect();
    let mut chained: Vec<Moments> = ts.iter().map(|_| Moments::new(p)).collect();
    for _ in 0..draws {
        for (k, &t) in ts.iter().enumerate() {
            let eps = Tensor::randn(x0.shape(), &mut rng);
            closed[k].push(q_sample(x0, t, &eps, sched).unwrap().data());
        }
        let mut x = x0.clone();
        for t in 0..=last {
            let eps = Tensor::randn(x0.shape(), &mut rng);
            x = q_step(&x, t, &eps, sched).unwrap();
            if let Some(k) = ts.iter().position(|&u| u == t) {
                chained[k].push(x.data());
            }
        }
    }
    ts.iter()
        .enumerate()
        .map(|(k, &t)| {
            let (cm, cv) = closed[k].z_scores(x0.data(), ab[t]);
            let (hm, hv) = chained[k].z_scores(x0.data(), ab[t]);
            (t, cm, cv, hm, hv)
        })
        .collect()
}
