//! DDPM over EFDM tensors: linear noise schedule, closed-form forward
//! process, ε-prediction training and the ancestral sampler.
//!
//! Timesteps are zero-based: `t = 0` applies `β_1`, `t = T-1` applies `β_T`.
//! Images enter the model as three identical planes scaled to `[-1, 1]`.

mod denoiser;

use std::path::Path;

pub use denoiser::{timestep_embedding, Denoiser, DenoiserShape, EMBED_DIM, NORM_GROUPS};

use crate::checkpoint::Checkpoint;
use crate::efdm::{batch_tensor, quantize_float, to_float_tensor, Efdm, EfdmDataset};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::{Adam, Tape, Tensor};

pub const PLANES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Any `β` sequence with every value in `(0, 1)`; `T = 1` is allowed.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Validation("a schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Validation(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::Validation(format!("timestep {t} outside 0..{}", self.len())));
        }
        Ok(())
    }
}

/// `β` evenly spaced from `1e-4·1000/T` to `0.02·1000/T`, capped at 0.999.
pub fn linear_schedule(steps: usize) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Validation(format!("linear schedule needs T >= 2, got {steps}")));
    }
    let scale = 1000.0 / steps as f64;
    let (start, end) = (1e-4 * scale, 0.02 * scale);
    let betas = (0..steps)
        .map(|i| (start + (end - start) * i as f64 / (steps - 1) as f64).min(0.999))
        .collect();
    NoiseSchedule::from_betas(betas)
}

/// `sqrt(ᾱ)·x0 + sqrt(1-ᾱ)·ε` for an explicit `ᾱ` in `[0, 1]`.
pub fn q_sample_with(x0: &Tensor, eps: &Tensor, alpha_bar: f64) -> Result<Tensor> {
    if x0.shape() != eps.shape() {
        return Err(Error::Dimension(format!("x0 {:?} vs eps {:?}", x0.shape(), eps.shape())));
    }
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::Validation(format!("alpha_bar {alpha_bar} outside [0, 1]")));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let data = x0.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
    Tensor::new(x0.shape().to_vec(), data)
}

pub fn q_sample(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    q_sample_with(x0, eps, sched.alpha_bars[t])
}

/// One forward transition `sqrt(α_t)·x + sqrt(β_t)·ε`.
pub fn q_step(x: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    if x.shape() != eps.shape() {
        return Err(Error::Dimension(format!("x {:?} vs eps {:?}", x.shape(), eps.shape())));
    }
    let (a, b) = (sched.alphas[t].sqrt(), sched.betas[t].sqrt());
    let data = x.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Applies `q_sample` to each item of `[N, ...]` at its own timestep.
pub fn noisy_batch(x0: &Tensor, ts: &[usize], eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    let n = x0.shape().first().copied().unwrap_or(0);
    if ts.len() != n || x0.shape() != eps.shape() {
        return Err(Error::Dimension(format!(
            "{} timesteps for x0 {:?} and eps {:?}",
            ts.len(),
            x0.shape(),
            eps.shape()
        )));
    }
    let per = x0.numel() / n.max(1);
    let mut out = vec![0.0; x0.numel()];
    for (i, &t) in ts.iter().enumerate() {
        sched.check_t(t)?;
        let ab = sched.alpha_bars[t];
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let range = i * per..(i + 1) * per;
        for ((o, x), e) in out[range.clone()].iter_mut().zip(&x0.data()[range.clone()]).zip(&eps.data()[range]) {
            *o = a * x + b * e;
        }
    }
    Tensor::new(x0.shape().to_vec(), out)
}

/// `mse(model(x_t, t), ε)` for fixed timesteps and noise.
pub fn denoising_loss(model: &Denoiser, x0: &Tensor, ts: &[usize], eps: &Tensor, sched: &NoiseSchedule) -> Result<f64> {
    let noisy = noisy_batch(&model.centre(x0)?, ts, eps, sched)?;
    let mut tape = Tape::new();
    let x = tape.constant(noisy);
    let target = tape.constant(eps.clone());
    let pred = model.forward(&mut tape, x, ts)?;
    let loss = tape.mse(pred, target)?;
    Ok(tape.scalar(loss))
}

/// Model and training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionConfig {
    pub image_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub channels: usize,
    pub res_blocks: usize,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { image_size: 32, steps: 200, lr: 1e-3, batch_size: 8, channels: 32, res_blocks: 2, seed: 0 }
    }
}

impl DiffusionConfig {
    /// 128×128 images, 1000 steps, 128 channels, 3 blocks, lr 1e-4.
    pub fn full_scale() -> Self {
        Self { image_size: 128, steps: 1000, lr: 1e-4, batch_size: 32, channels: 128, res_blocks: 3, seed: 0 }
    }

    pub fn shape(&self) -> DenoiserShape {
        DenoiserShape { image_size: self.image_size, planes: PLANES, channels: self.channels, res_blocks: self.res_blocks }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape().validate()?;
        if self.steps < 2 {
            return Err(Error::Validation(format!("diffusion steps must be >= 2, got {}", self.steps)));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Validation(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.steps)
    }

    pub fn build(&self) -> Result<Denoiser> {
        self.validate()?;
        Denoiser::new(self.shape(), SeededRng::derive(self.seed, 0).next_u64())
    }
}

/// Model, optimizer and RNG for one training run.
pub struct DiffusionTrainer {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    opt: Adam,
    rng: SeededRng,
    last_loss: Option<f64>,
    steps_taken: usize,
}

impl DiffusionTrainer {
    pub fn new(cfg: &DiffusionConfig) -> Result<Self> {
        let model = cfg.build()?;
        log::info!("denoiser: {} parameters, {:?}", model.num_parameters(), cfg);
        Ok(Self::with_model(model, cfg.schedule()?, cfg.lr, SeededRng::derive(cfg.seed, 1)))
    }

    pub fn with_model(model: Denoiser, schedule: NoiseSchedule, lr: f64, rng: SeededRng) -> Self {
        Self { model, schedule, opt: Adam::new(lr), rng, last_loss: None, steps_taken: 0 }
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    pub fn lr(&self) -> f64 {
        self.opt.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt.lr = lr;
    }

    pub fn rng_mut(&mut self) -> &mut SeededRng {
        &mut self.rng
    }

    /// Draws `t` and `ε` per item, regresses `ε`, and takes one Adam step.
    pub fn train_step(&mut self, batch: &Tensor) -> Result<f64> {
        let shape = batch.shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::Dimension(format!("batch must be [N,C,H,W], got {shape:?}")));
        }
        if batch.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Validation("batch values must lie in [-1, 1]".into()));
        }
        let n = shape[0];
        let ts: Vec<usize> = (0..n).map(|_| self.rng.below(self.schedule.len())).collect();
        let eps = Tensor::randn(&shape, &mut self.rng);
        let noisy = noisy_batch(&self.model.centre(batch)?, &ts, &eps, &self.schedule)?;

        let diverged = |e: Error, last: Option<f64>| match e {
            Error::NonFinite(what) => Error::TrainingDivergence {
                context: format!("diffusion step {}: {what}", self.steps_taken + 1),
                last_loss: last.unwrap_or(f64::NAN),
            },
            other => other,
        };
        let (loss, grads) = {
            let mut tape = Tape::new();
            let x = tape.constant(noisy);
            let target = tape.constant(eps);
            let pred = self.model.forward(&mut tape, x, &ts).map_err(|e| diverged(e, self.last_loss))?;
            let loss = tape.mse(pred, target).map_err(|e| diverged(e, self.last_loss))?;
            let value = tape.scalar(loss);
            let grads = tape.backward(loss).map_err(|e| diverged(e, self.last_loss))?;
            (value, grads)
        };
        let params = self.model.params_mut();
        params.accumulate(&grads)?;
        self.opt.step(params)?;
        for (_, t) in self.model.params().iter() {
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingDivergence {
                    context: format!("diffusion step {}: non-finite parameters", self.steps_taken + 1),
                    last_loss: loss,
                });
            }
        }
        self.last_loss = Some(loss);
        self.steps_taken += 1;
        Ok(loss)
    }

    /// One shuffled pass over `data` in mini-batches; returns the mean loss.
    pub fn train_epoch(&mut self, data: &EfdmDataset, batch_size: usize) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Validation("diffusion training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        self.rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size.max(1)) {
            let items: Vec<&Efdm> = chunk.iter().map(|&i| data.get(i)).collect();
            let batch = batch_tensor(&items, PLANES)?;
            total += self.train_step(&batch)?;
            batches += 1;
        }
        Ok(total / batches as f64)
    }
}

/// Per-pixel mean of the maps in `[-1, 1]` units, `[H, W]`.
pub fn mean_map(data: &EfdmDataset) -> Result<Tensor> {
    if data.is_empty() {
        return Err(Error::Validation("cannot average an empty dataset".into()));
    }
    let mut sum = vec![0.0; data.height() * data.width()];
    for i in 0..data.len() {
        for (s, v) in sum.iter_mut().zip(to_float_tensor(data.get(i)).data()) {
            *s += v;
        }
    }
    let n = data.len() as f64;
    Tensor::new(vec![data.height(), data.width()], sum.into_iter().map(|s| s / n).collect())
}

/// Trains on a single-class set, calling `on_epoch(epoch, model, mean_loss)`
/// after every epoch (1-based). Returns the trained model and epoch losses.
pub fn train_diffusion(
    cfg: &DiffusionConfig,
    data: &EfdmDataset,
    epochs: usize,
    mut on_epoch: impl FnMut(usize, &Denoiser, f64) -> Result<()>,
) -> Result<(Denoiser, Vec<f64>)> {
    if data.height() != cfg.image_size || data.width() != cfg.image_size {
        return Err(Error::Dimension(format!(
            "dataset images are {}x{}, model expects {}",
            data.height(),
            data.width(),
            cfg.image_size
        )));
    }
    let mut trainer = DiffusionTrainer::new(cfg)?;
    trainer.model.set_data_mean(mean_map(data)?)?;
    let mut losses = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let loss = trainer.train_epoch(data, cfg.batch_size)?;
        log::info!("diffusion epoch {epoch}/{epochs}: loss {loss:.5}");
        losses.push(loss);
        on_epoch(epoch, &trainer.model, loss)?;
    }
    Ok((trainer.model, losses))
}

/// Ancestral sampling from `x_T ~ N(0, I)` down to `x_0`, clamped to
/// `[-1, 1]`. Model evaluations are split across up to `threads` workers;
/// the result does not depend on the thread count.
pub fn p_sample_loop_threaded(
    model: &Denoiser,
    n: usize,
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
    threads: usize,
) -> Result<Tensor> {
    let s = model.shape();
    let shape = [n, s.planes, s.image_size, s.image_size];
    let x = ancestral_loop(|x, t| predict_chunked(model, x, t, threads), shape, sched, rng)?;
    Ok(clamp_unit(model.uncentre(&x)?))
}

/// The same update driven by any `ε̂(x_t, t)`, for example an analytic denoiser.
pub fn p_sample_loop_with(
    predict: impl Fn(&Tensor, usize) -> Result<Tensor>,
    shape: [usize; 4],
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    Ok(clamp_unit(ancestral_loop(predict, shape, sched, rng)?))
}

fn clamp_unit(mut x: Tensor) -> Tensor {
    for v in x.data_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    x
}

fn ancestral_loop(
    predict: impl Fn(&Tensor, usize) -> Result<Tensor>,
    shape: [usize; 4],
    sched: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    let mut x = Tensor::randn(&shape, rng);
    if shape[0] == 0 {
        return Ok(x);
    }
    for t in (0..sched.len()).rev() {
        let eps = predict(&x, t)?;
        if eps.shape() != x.shape() {
            return Err(Error::Dimension(format!("predicted noise {:?} for x_t {:?}", eps.shape(), x.shape())));
        }
        let (alpha, beta, ab) = (sched.alphas[t], sched.betas[t], sched.alpha_bars[t]);
        let coef = beta / (1.0 - ab).sqrt();
        let inv = 1.0 / alpha.sqrt();
        let sigma = beta.sqrt();
        let data = x.data_mut();
        for (v, e) in data.iter_mut().zip(eps.data()) {
            *v = inv * (*v - coef * e);
        }
        if t > 0 {
            for v in data.iter_mut() {
                *v += sigma * rng.normal();
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::SamplingDivergence { t });
        }
    }
    Ok(x)
}

pub fn p_sample_loop(model: &Denoiser, n: usize, sched: &NoiseSchedule, rng: &mut SeededRng) -> Result<Tensor> {
    p_sample_loop_threaded(model, n, sched, rng, 1)
}

const PREDICT_CHUNK: usize = 16;

fn predict_chunked(model: &Denoiser, x: &Tensor, t: usize, threads: usize) -> Result<Tensor> {
    let n = x.shape()[0];
    let per = x.numel() / n;
    let starts: Vec<usize> = (0..n).step_by(PREDICT_CHUNK).collect();
    let run = |start: usize| -> Result<Vec<f64>> {
        let m = PREDICT_CHUNK.min(n - start);
        let mut shape = x.shape().to_vec();
        shape[0] = m;
        let chunk = Tensor::new(shape, x.data()[start * per..(start + m) * per].to_vec())?;
        model.predict(&chunk, &vec![t; m]).map(Tensor::into_data).map_err(|e| match e {
            Error::NonFinite(_) => Error::SamplingDivergence { t },
            other => other,
        })
    };
    let parts: Vec<Result<Vec<f64>>> = if threads <= 1 || starts.len() == 1 {
        starts.iter().map(|&s| run(s)).collect()
    } else {
        let mut out = Vec::with_capacity(starts.len());
        for group in starts.chunks(threads) {
            std::thread::scope(|scope| {
                let handles: Vec<_> = group.iter().map(|&s| scope.spawn(move || run(s))).collect();
                for h in handles {
                    out.push(h.join().expect("sampling worker panicked"));
                }
            });
        }
        out
    };
    let mut data = Vec::with_capacity(x.numel());
    for p in parts {
        data.extend(p?);
    }
    Tensor::new(x.shape().to_vec(), data)
}

/// Averages the planes of one `[planes, H, W]` sample and quantizes it.
pub fn sample_to_efdm(x: &Tensor, label: &str) -> Result<Efdm> {
    let (planes, h, w) = match *x.shape() {
        [p, h, w] => (p, h, w),
        [h, w] => (1, h, w),
        ref s => return Err(Error::Dimension(format!("sample must be [planes,H,W], got {s:?}"))),
    };
    let plane = h * w;
    let pixels = (0..plane)
        .map(|i| {
            let mean = (0..planes).map(|p| x.data()[p * plane + i]).sum::<f64>() / planes as f64;
            quantize_float(mean)
        })
        .collect();
    let mut e = Efdm::new(pixels, h, w, label)?;
    e.meta.synthetic = true;
    Ok(e)
}

/// Samples `n` maps labelled `label`.
pub fn sample_efdms(
    model: &Denoiser,
    n: usize,
    sched: &NoiseSchedule,
    seed: u64,
    label: &str,
    threads: usize,
) -> Result<Vec<Efdm>> {
    let mut rng = SeededRng::new(seed);
    let x = p_sample_loop_threaded(model, n, sched, &mut rng, threads)?;
    let per = x.numel() / n.max(1);
    let s = model.shape();
    (0..n)
        .map(|i| {
            let one = Tensor::new(vec![s.planes, s.image_size, s.image_size], x.data()[i * per..(i + 1) * per].to_vec())?;
            let mut e = sample_to_efdm(&one, label)?;
            e.meta.frame = i;
            Ok(e)
        })
        .collect()
}

const DATA_MEAN: &str = "data_mean";

/// Serializes a denoiser with its config, class label and epoch.
pub fn to_checkpoint(model: &Denoiser, cfg: &DiffusionConfig, class: &str, epoch: usize) -> Result<Checkpoint> {
    let mut ck = Checkpoint::from_params(model.params());
    ck.push_tensor(DATA_MEAN, model.data_mean());
    ck.set("kind", "denoiser")?;
    ck.set("class", class)?;
    ck.set("epoch", epoch)?;
    ck.set("image_size", cfg.image_size)?;
    ck.set("diffusion_steps", cfg.steps)?;
    ck.set("num_channels", cfg.channels)?;
    ck.set("num_res_blocks", cfg.res_blocks)?;
    ck.set("lr", cfg.lr)?;
    ck.set("batch_size", cfg.batch_size)?;
    ck.set("seed", cfg.seed)?;
    ck.set("noise_schedule", "linear")?;
    Ok(ck)
}

/// A denoiser restored from a checkpoint.
pub struct LoadedDenoiser {
    pub model: Denoiser,
    pub config: DiffusionConfig,
    pub class: String,
    pub epoch: usize,
}

pub fn from_checkpoint(ck: &Checkpoint) -> Result<LoadedDenoiser> {
    if ck.get("kind") != Some("denoiser") {
        return Err(Error::Validation("checkpoint does not hold a denoiser".into()));
    }
    let config = DiffusionConfig {
        image_size: ck.parse("image_size")?,
        steps: ck.parse("diffusion_steps")?,
        lr: ck.parse("lr")?,
        batch_size: ck.parse("batch_size")?,
        channels: ck.parse("num_channels")?,
        res_blocks: ck.parse("num_res_blocks")?,
        seed: ck.parse("seed")?,
    };
    let mut model = config.build()?;
    let mut ck = ck.clone();
    let mean = ck.take_tensor(DATA_MEAN).ok_or_else(|| Error::Validation(format!("checkpoint lacks '{DATA_MEAN}'")))?;
    ck.load_into(model.params_mut())?;
    model.set_data_mean(mean)?;
    Ok(LoadedDenoiser { model, config, class: ck.parse("class")?, epoch: ck.parse("epoch")? })
}

pub fn load_denoiser(path: &Path) -> Result<LoadedDenoiser> {
    from_checkpoint(&Checkpoint::load(path)?)
}
