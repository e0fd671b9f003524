//! Convolutional ε-prediction network.
//!
//! ```text
//! t ─ sinusoidal(64) ─ linear ─ GELU ─ linear ─ GELU ─┐ (per block: linear → channel bias)
//! x ─ conv3x3 ─ + position bias ─ [res block] × R ─ GN ─ GELU ─ conv3x3 ─ ε̂
//! res block: h + (GN ─ GELU ─ conv ─ + emb ─ GN ─ GELU ─ conv), scaled by 1/√2
//! ```
//!
//! Group norm uses 8 groups. The output convolution starts at zero so an
//! untrained model predicts ε̂ = 0.
//!
//! The model works on centred maps: it carries the mean training map, which
//! is subtracted before noising and added back after sampling. A fresh model
//! has an all-zero mean.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, GroupNorm, Linear};
use crate::rng::SeededRng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub const EMBED_DIM: usize = 64;
pub const NORM_GROUPS: usize = 8;

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenoiserShape {
    pub image_size: usize,
    pub planes: usize,
    pub channels: usize,
    pub res_blocks: usize,
}

impl DenoiserShape {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || !self.image_size.is_power_of_two() {
            return Err(Error::Validation(format!("image size {} must be a power of two", self.image_size)));
        }
        if self.planes == 0 {
            return Err(Error::Validation("at least one image plane is required".into()));
        }
        if self.channels == 0 || !self.channels.is_multiple_of(NORM_GROUPS) {
            return Err(Error::Validation(format!(
                "channel count {} must be a positive multiple of {NORM_GROUPS}",
                self.channels
            )));
        }
        Ok(())
    }
}

struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    emb: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
}

pub struct Denoiser {
    shape: DenoiserShape,
    params: ParamStore,
    embed1: Linear,
    embed2: Linear,
    conv_in: Conv2d,
    position: ParamId,
    blocks: Vec<ResBlock>,
    norm_out: GroupNorm,
    conv_out: Conv2d,
    data_mean: Tensor,
}

/// `[cos(t·f_i) | sin(t·f_i)]` with `f_i = exp(-ln(10000)·i/(dim/2))`.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> Tensor {
    let half = dim / 2;
    let mut data = vec![0.0; ts.len() * dim];
    for (row, &t) in data.chunks_mut(dim).zip(ts) {
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            let arg = t as f64 * freq;
            row[i] = arg.cos();
            row[half + i] = arg.sin();
        }
    }
    Tensor::new(vec![ts.len(), dim], data).expect("embedding shape")
}

impl Denoiser {
    pub fn new(shape: DenoiserShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = SeededRng::new(seed);
        let mut p = ParamStore::new();
        let c = shape.channels;
        let s = shape.image_size;
        let embed1 = Linear::new(&mut p, "time.fc1", EMBED_DIM, c, &mut rng);
        let embed2 = Linear::new(&mut p, "time.fc2", c, c, &mut rng);
        let conv_in = Conv2d::new(&mut p, "conv_in", shape.planes, c, (3, 3), (1, 1), (1, 1), &mut rng);
        let position = p.add("position", Tensor::zeros(&[c, s, s]));
        let blocks = (0..shape.res_blocks)
            .map(|i| {
                let n = format!("block{i}");
                ResBlock {
                    norm1: GroupNorm::new(&mut p, &format!("{n}.norm1"), c, NORM_GROUPS),
                    conv1: Conv2d::new(&mut p, &format!("{n}.conv1"), c, c, (3, 3), (1, 1), (1, 1), &mut rng),
                    emb: Linear::new(&mut p, &format!("{n}.emb"), c, c, &mut rng),
                    norm2: GroupNorm::new(&mut p, &format!("{n}.norm2"), c, NORM_GROUPS),
                    conv2: Conv2d::new(&mut p, &format!("{n}.conv2"), c, c, (3, 3), (1, 1), (1, 1), &mut rng),
                }
            })
            .collect();
        let norm_out = GroupNorm::new(&mut p, "norm_out", c, NORM_GROUPS);
        let conv_out = Conv2d::zeroed(&mut p, "conv_out", c, shape.planes, (3, 3), (1, 1));
        log::debug!("denoiser built with {} parameters", p.num_elements());
        Ok(Self { shape, params: p, embed1, embed2, conv_in, position, blocks, norm_out, conv_out, data_mean: Tensor::zeros(&[s, s]) })
    }

    /// Mean training map, `[S, S]`, in the model's `[-1, 1]` units.
    pub fn data_mean(&self) -> &Tensor {
        &self.data_mean
    }

    pub fn set_data_mean(&mut self, mean: Tensor) -> Result<()> {
        let s = self.shape.image_size;
        if mean.shape() != [s, s] {
            return Err(Error::Dimension(format!("data mean must be [{s}, {s}], got {:?}", mean.shape())));
        }
        mean.check_finite("data mean")?;
        self.data_mean = mean;
        Ok(())
    }

    /// `x - mean` on every plane of a `[N, planes, S, S]` tensor.
    pub fn centre(&self, x: &Tensor) -> Result<Tensor> {
        self.shift(x, -1.0)
    }

    /// `x + mean` on every plane; the inverse of [`Denoiser::centre`].
    pub fn uncentre(&self, x: &Tensor) -> Result<Tensor> {
        self.shift(x, 1.0)
    }

    fn shift(&self, x: &Tensor, sign: f64) -> Result<Tensor> {
        let plane = self.data_mean.numel();
        if !x.numel().is_multiple_of(plane) {
            return Err(Error::Dimension(format!("cannot centre {:?} by a {plane}-pixel mean", x.shape())));
        }
        let m = self.data_mean.data();
        let data = x.data().iter().enumerate().map(|(i, v)| v + sign * m[i % plane]).collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn shape(&self) -> DenoiserShape {
        self.shape
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Records the network on `tape`; `x` is `[N, planes, S, S]`.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var, ts: &[usize]) -> Result<Var> {
        let s = self.shape.image_size;
        let expect = [ts.len(), self.shape.planes, s, s];
        if tape.shape(x) != expect {
            return Err(Error::Dimension(format!(
                "denoiser expects {expect:?}, got {:?}",
                tape.shape(x)
            )));
        }
        let p = &self.params;
        let t0 = tape.constant(timestep_embedding(ts, EMBED_DIM));
        let e = self.embed1.forward(tape, p, t0)?;
        let e = tape.gelu(e)?;
        let e = self.embed2.forward(tape, p, e)?;
        let e = tape.gelu(e)?;

        let h = self.conv_in.forward(tape, p, x)?;
        let pos = tape.param(p, self.position);
        let mut h = tape.add_broadcast(h, pos)?;
        for b in &self.blocks {
            let r = b.norm1.forward(tape, p, h)?;
            let r = tape.gelu(r)?;
            let r = b.conv1.forward(tape, p, r)?;
            let bias = b.emb.forward(tape, p, e)?;
            let r = tape.add_sample_channel_bias(r, bias)?;
            let r = b.norm2.forward(tape, p, r)?;
            let r = tape.gelu(r)?;
            let r = b.conv2.forward(tape, p, r)?;
            let sum = tape.add(h, r)?;
            h = tape.scale(sum, FRAC_1_SQRT_2)?;
        }
        let h = self.norm_out.forward(tape, p, h)?;
        let h = tape.gelu(h)?;
        self.conv_out.forward(tape, p, h)
    }

    /// Inference without gradient tracking.
    pub fn predict(&self, x: &Tensor, ts: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv, ts)?;
        Ok(tape.tensor(out))
    }
}
