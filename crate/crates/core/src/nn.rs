//! Parameterized layers over [`Tape`] ops.
//!
//! Weights are drawn uniform in `±1/sqrt(fan_in)`, biases likewise.

use crate::error::Result;
use crate::rng::SeededRng;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        rng: &mut SeededRng,
    ) -> Self {
        let bound = 1.0 / ((in_ch * kernel.0 * kernel.1) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), Tensor::uniform(&[out_ch, in_ch, kernel.0, kernel.1], bound, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::uniform(&[out_ch], bound, rng));
        Self { weight, bias, stride, padding }
    }

    /// Same as [`Conv2d::new`] but with all-zero weight and bias.
    pub fn zeroed(store: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, kernel: (usize, usize), padding: (usize, usize)) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(&[out_ch, in_ch, kernel.0, kernel.1]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[out_ch]));
        Self { weight, bias, stride: (1, 1), padding }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.conv2d(x, w, self.stride, self.padding)?;
        tape.add_channel_bias(y, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_f: usize, out_f: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (in_f as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), Tensor::uniform(&[out_f, in_f], bound, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::uniform(&[out_f], bound, rng));
        Self { weight, bias }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(&[channels]));
        Self { gamma, beta, groups }
    }

    pub fn forward<'a>(&self, tape: &mut Tape<'a>, store: &'a ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.group_norm(x, g, b, self.groups)
    }
}
