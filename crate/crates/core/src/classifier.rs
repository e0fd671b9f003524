//! Emotion classifier over EFDM images.
//!
//! Each stage is conv → GELU → max-pool (pool window equals its stride).
//! The stack is flattened into a head of GELU linear layers ending in `K`
//! logits. The first head layer has no input width until the first forward
//! pass; it then binds permanently to the flattened width it saw.

use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::efdm::{batch_tensor, Efdm, EfdmDataset};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Linear};
use crate::rng::SeededRng;
use crate::tensor::{conv2d_output_extent, pool_output_extent, Adam, ParamStore, Tape, Tensor, Var};

pub const PLANES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvStage {
    pub filters: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub pool: (usize, usize),
}

impl ConvStage {
    pub const fn new(filters: usize, kernel: (usize, usize), padding: (usize, usize), pool: (usize, usize)) -> Self {
        Self { filters, kernel, stride: (1, 1), padding, pool }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub height: usize,
    pub width: usize,
    pub stages: Vec<ConvStage>,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl ClassifierConfig {
    /// 16/64/128 filters with (12,1)/(8,1)/(4,1) kernels and a
    /// 5000 → 2500 → 1000 head; lr 1e-4, batch 128.
    pub fn full_scale(size: usize, num_classes: usize) -> Self {
        Self {
            height: size,
            width: size,
            stages: vec![
                ConvStage::new(16, (12, 1), (2, 0), (4, 1)),
                ConvStage::new(64, (8, 1), (1, 0), (2, 1)),
                ConvStage::new(128, (4, 1), (1, 0), (2, 1)),
            ],
            hidden: vec![5000, 2500, 1000],
            num_classes,
            lr: 1e-4,
            batch_size: 128,
            seed: 0,
        }
    }

    /// A narrower stack that chains on 32×32 maps.
    pub fn desk(size: usize, num_classes: usize) -> Self {
        Self {
            height: size,
            width: size,
            stages: vec![
                ConvStage::new(8, (5, 1), (2, 0), (2, 1)),
                ConvStage::new(16, (3, 1), (1, 0), (2, 1)),
                ConvStage::new(32, (3, 1), (1, 0), (2, 1)),
            ],
            hidden: vec![128, 64, 32],
            num_classes,
            lr: 1e-3,
            batch_size: 128,
            seed: 0,
        }
    }

    /// Output `[C, H, W]` of every stage, or an error naming the first
    /// layer whose window does not fit.
    pub fn stage_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = [PLANES, self.height, self.width];
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            let n = i + 1;
            let h = conv2d_output_extent(shape[1], s.kernel.0, s.stride.0, s.padding.0);
            let w = conv2d_output_extent(shape[2], s.kernel.1, s.stride.1, s.padding.1);
            let (Some(h), Some(w)) = (h, w) else {
                return Err(Error::Validation(format!(
                    "conv{n}: kernel {:?} with padding {:?} does not fit a {}x{} input",
                    s.kernel, s.padding, shape[1], shape[2]
                )));
            };
            let ph = pool_output_extent(h, s.pool.0, s.pool.0);
            let pw = pool_output_extent(w, s.pool.1, s.pool.1);
            let (Some(ph), Some(pw)) = (ph, pw) else {
                return Err(Error::Validation(format!(
                    "pool{n}: window {:?} does not fit the {h}x{w} output of conv{n}",
                    s.pool
                )));
            };
            shape = [s.filters, ph, pw];
            out.push(shape);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Validation(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.height == 0 || self.width == 0 || self.batch_size == 0 {
            return Err(Error::Validation("image extents and batch size must be positive".into()));
        }
        if self.stages.iter().any(|s| s.filters == 0 || s.stride.0 == 0 || s.stride.1 == 0)
            || self.hidden.contains(&0)
        {
            return Err(Error::Validation("layer widths and strides must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Validation(format!("learning rate {} must be finite and non-negative", self.lr)));
        }
        self.stage_shapes().map(|_| ())
    }
}

pub struct Classifier {
    cfg: ClassifierConfig,
    params: ParamStore,
    convs: Vec<Conv2d>,
    deferred: Option<(usize, Linear)>,
    head: Vec<Linear>,
}

/// Anything that maps a batch of maps to `[B, K]` logits.
pub trait Predictor {
    fn num_classes(&self) -> usize;
    fn logits(&self, items: &[&Efdm]) -> Result<Tensor>;
}

pub fn build_classifier(cfg: &ClassifierConfig) -> Result<Classifier> {
    cfg.validate()?;
    let mut rng = SeededRng::derive(cfg.seed, 10);
    let mut params = ParamStore::new();
    let mut in_ch = PLANES;
    let mut convs = Vec::with_capacity(cfg.stages.len());
    for (i, s) in cfg.stages.iter().enumerate() {
        convs.push(Conv2d::new(&mut params, &format!("conv{}", i + 1), in_ch, s.filters, s.kernel, s.stride, s.padding, &mut rng));
        in_ch = s.filters;
    }
    let mut widths = cfg.hidden.clone();
    widths.push(cfg.num_classes);
    let head = widths
        .windows(2)
        .enumerate()
        .map(|(i, w)| Linear::new(&mut params, &format!("head{}", i + 1), w[0], w[1], &mut rng))
        .collect();
    Ok(Classifier { cfg: cfg.clone(), params, convs, deferred: None, head })
}

impl Classifier {
    pub fn config(&self) -> &ClassifierConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Flattened width the first head layer is bound to, if any.
    pub fn bound_features(&self) -> Option<usize> {
        self.deferred.map(|(f, _)| f)
    }

    fn first_width(&self) -> usize {
        self.cfg.hidden.first().copied().unwrap_or(self.cfg.num_classes)
    }

    /// Binds the deferred layer to `features` inputs, or checks an
    /// existing binding.
    pub fn bind(&mut self, features: usize) -> Result<()> {
        match self.deferred {
            Some((f, _)) if f == features => Ok(()),
            Some((f, _)) => Err(Error::State(format!("deferred linear is bound to {f} inputs, got {features}"))),
            None => {
                let mut rng = SeededRng::derive(self.cfg.seed, 11);
                let out = self.first_width();
                let layer = Linear::new(&mut self.params, "head0", features, out, &mut rng);
                log::debug!("deferred linear bound to {features} inputs ({} parameters total)", self.params.num_elements());
                self.deferred = Some((features, layer));
                Ok(())
            }
        }
    }

    fn features<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        let mut h = x;
        for (conv, s) in self.convs.iter().zip(&self.cfg.stages) {
            h = conv.forward(tape, &self.params, h)?;
            h = tape.gelu(h)?;
            h = tape.maxpool2d(h, s.pool, s.pool)?;
        }
        tape.flatten(h)
    }

    /// Records the network on `tape`. The deferred layer must be bound.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        let h = self.features(tape, x)?;
        let width = tape.shape(h)[1];
        let (bound, first) = self
            .deferred
            .ok_or_else(|| Error::State("deferred linear is unbound; call forward_bind first".into()))?;
        if bound != width {
            return Err(Error::State(format!("deferred linear is bound to {bound} inputs, got {width}")));
        }
        let mut h = first.forward(tape, &self.params, h)?;
        for layer in &self.head {
            h = tape.gelu(h)?;
            h = layer.forward(tape, &self.params, h)?;
        }
        Ok(h)
    }

    /// Binds the deferred layer from the flattened width of `x` on first use.
    pub fn forward_bind(&mut self, x: &Tensor) -> Result<()> {
        if self.deferred.is_some() {
            return Ok(());
        }
        let width = {
            let mut tape = Tape::new();
            let probe_shape: Vec<usize> = std::iter::once(1).chain(x.shape()[1..].iter().copied()).collect();
            let per = x.numel() / x.shape()[0].max(1);
            let probe = Tensor::new(probe_shape, x.data()[..per].to_vec())?;
            let v = tape.constant(probe);
            let h = self.features(&mut tape, v)?;
            tape.shape(h)[1]
        };
        self.bind(width)
    }
}

impl Predictor for Classifier {
    fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    fn logits(&self, items: &[&Efdm]) -> Result<Tensor> {
        let x = batch_tensor(items, PLANES)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let out = self.forward(&mut tape, xv)?;
        Ok(tape.tensor(out))
    }
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    /// Recall per class; NaN for classes absent from the data.
    pub per_class: Vec<f64>,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    /// Mean recall over classes present in the data.
    pub fn macro_recall(&self) -> f64 {
        let present: Vec<f64> = self.per_class.iter().copied().filter(|v| !v.is_nan()).collect();
        present.iter().sum::<f64>() / present.len().max(1) as f64
    }
}

const EVAL_BATCH: usize = 256;

pub fn evaluate<P: Predictor + Sync>(model: &P, data: &EfdmDataset) -> Result<Evaluation> {
    evaluate_threaded(model, data, 1)
}

/// As [`evaluate`], sharding batches over up to `threads` workers.
pub fn evaluate_threaded<P: Predictor + Sync>(model: &P, data: &EfdmDataset, threads: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty dataset".into()));
    }
    let k = model.num_classes();
    if data.num_classes() != k {
        return Err(Error::Validation(format!("dataset has {} classes, model has {k}", data.num_classes())));
    }
    let starts: Vec<usize> = (0..data.len()).step_by(EVAL_BATCH).collect();
    let run = |start: usize| -> Result<Tensor> {
        let items: Vec<&Efdm> = data.items()[start..(start + EVAL_BATCH).min(data.len())].iter().collect();
        model.logits(&items)
    };
    let mut blocks = Vec::with_capacity(starts.len());
    if threads <= 1 {
        for &s in &starts {
            blocks.push(run(s)?);
        }
    } else {
        for group in starts.chunks(threads) {
            let results: Vec<Result<Tensor>> = std::thread::scope(|scope| {
                let handles: Vec<_> = group.iter().map(|&s| scope.spawn(move || run(s))).collect();
                handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
            });
            for r in results {
                blocks.push(r?);
            }
        }
    }
    let labels = data.labels();
    let mut predictions = Vec::with_capacity(data.len());
    let mut loss = 0.0;
    for block in &blocks {
        for row in block.data().chunks(k) {
            let i = predictions.len();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[labels[i]];
            predictions.push(argmax(row));
        }
    }
    let mut hits = vec![0usize; k];
    let mut support = vec![0usize; k];
    for (&p, &y) in predictions.iter().zip(&labels) {
        support[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    let per_class = hits
        .iter()
        .zip(&support)
        .map(|(&h, &s)| if s == 0 { f64::NAN } else { h as f64 / s as f64 })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        loss: loss / data.len() as f64,
        per_class,
        predictions,
    })
}

/// Per-epoch metrics of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRunRecord {
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub epochs: usize,
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

impl TrainRunRecord {
    /// `epoch,split,loss,accuracy` rows, epochs numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,loss,accuracy\n");
        for e in 0..self.epochs {
            out.push_str(&format!("{},train,{},{}\n", e + 1, self.train_loss[e], self.train_accuracy[e]));
            out.push_str(&format!("{},val,{},{}\n", e + 1, self.val_loss[e], self.val_accuracy[e]));
        }
        out
    }
}

/// SHA-256 over every item's pixels and label, as 16 hex characters.
pub fn dataset_fingerprint(data: &EfdmDataset) -> String {
    let mut h = Sha256::new();
    for (i, e) in data.items().iter().enumerate() {
        h.update(e.pixels());
        h.update([data.label_index(i) as u8]);
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Shuffled mini-batch cross-entropy training with Adam, validating after
/// every epoch. The model keeps its final-epoch weights.
pub fn train_classifier(
    model: &mut Classifier,
    train: &EfdmDataset,
    val: &EfdmDataset,
    epochs: usize,
    seed: u64,
) -> Result<TrainRunRecord> {
    let k = model.cfg.num_classes;
    if train.class_names() != val.class_names() || train.num_classes() != k {
        return Err(Error::Validation(format!(
            "label vocabularies differ: train {:?}, val {:?}, model expects {k} classes",
            train.class_names(),
            val.class_names()
        )));
    }
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    let mut rng = SeededRng::derive(seed, 2);
    let mut opt = Adam::new(model.cfg.lr);
    let labels = train.labels();
    let mut record = TrainRunRecord {
        seed,
        dataset_fingerprint: dataset_fingerprint(train),
        epochs,
        train_loss: Vec::with_capacity(epochs),
        train_accuracy: Vec::with_capacity(epochs),
        val_loss: Vec::with_capacity(epochs),
        val_accuracy: Vec::with_capacity(epochs),
    };
    let mut last_loss = f64::NAN;
    for epoch in 1..=epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        rng.shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (step, chunk) in order.chunks(model.cfg.batch_size).enumerate() {
            let items: Vec<&Efdm> = chunk.iter().map(|&i| train.get(i)).collect();
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let x = batch_tensor(&items, PLANES)?;
            model.forward_bind(&x)?;
            let diverged = |e: Error| match e {
                Error::NonFinite(what) => Error::TrainingDivergence {
                    context: format!("classifier epoch {epoch} step {}: {what}", step + 1),
                    last_loss,
                },
                other => other,
            };
            let (loss, grads, hits) = {
                let mut tape = Tape::new();
                let xv = tape.constant(x);
                let logits = model.forward(&mut tape, xv).map_err(diverged)?;
                let hits = tape.value(logits).chunks(k).zip(&y).filter(|(row, &t)| argmax(row) == t).count();
                let loss = tape.cross_entropy(logits, &y).map_err(diverged)?;
                let value = tape.scalar(loss);
                (value, tape.backward(loss).map_err(diverged)?, hits)
            };
            model.params.accumulate(&grads)?;
            opt.step(&mut model.params)?;
            last_loss = loss;
            loss_sum += loss * chunk.len() as f64;
            correct += hits;
        }
        let v = evaluate(model, val)?;
        record.train_loss.push(loss_sum / train.len() as f64);
        record.train_accuracy.push(correct as f64 / train.len() as f64);
        record.val_loss.push(v.loss);
        record.val_accuracy.push(v.accuracy);
        log::info!(
            "classifier epoch {epoch}/{epochs}: train loss {:.4} acc {:.4}, val loss {:.4} acc {:.4}",
            record.train_loss[epoch - 1],
            record.train_accuracy[epoch - 1],
            v.loss,
            v.accuracy
        );
    }
    Ok(record)
}

fn stages_to_string(stages: &[ConvStage]) -> String {
    stages
        .iter()
        .map(|s| {
            format!(
                "{}:{}x{}:{}x{}:{}x{}:{}x{}",
                s.filters, s.kernel.0, s.kernel.1, s.stride.0, s.stride.1, s.padding.0, s.padding.1, s.pool.0, s.pool.1
            )
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn stages_from_string(s: &str) -> Result<Vec<ConvStage>> {
    let bad = || Error::Validation(format!("malformed stage list '{s}'"));
    let pair = |p: &str| -> Result<(usize, usize)> {
        let (a, b) = p.split_once('x').ok_or_else(bad)?;
        Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?))
    };
    s.split(';')
        .filter(|p| !p.is_empty())
        .map(|part| {
            let f: Vec<&str> = part.split(':').collect();
            if f.len() != 5 {
                return Err(bad());
            }
            Ok(ConvStage {
                filters: f[0].parse().map_err(|_| bad())?,
                kernel: pair(f[1])?,
                stride: pair(f[2])?,
                padding: pair(f[3])?,
                pool: pair(f[4])?,
            })
        })
        .collect()
}

fn list_from_string(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| Error::Validation(format!("malformed width list '{s}'"))))
        .collect()
}

/// Serializes a bound classifier with its class vocabulary.
pub fn to_checkpoint(model: &Classifier, class_names: &[String]) -> Result<Checkpoint> {
    let bound = model.bound_features().ok_or_else(|| Error::State("cannot save an unbound classifier".into()))?;
    if class_names.len() != model.cfg.num_classes || class_names.iter().any(|c| c.contains(',')) {
        return Err(Error::Validation(format!("class names {class_names:?} do not fit the model")));
    }
    let c = &model.cfg;
    let mut ck = Checkpoint::from_params(&model.params);
    ck.set("kind", "classifier")?;
    ck.set("classes", class_names.join(","))?;
    ck.set("height", c.height)?;
    ck.set("width", c.width)?;
    ck.set("stages", stages_to_string(&c.stages))?;
    ck.set("hidden", c.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(","))?;
    ck.set("lr", c.lr)?;
    ck.set("batch_size", c.batch_size)?;
    ck.set("seed", c.seed)?;
    ck.set("bound_features", bound)?;
    Ok(ck)
}

/// Rebuilds a classifier and its class names from a checkpoint.
pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Classifier, Vec<String>)> {
    if ck.get("kind") != Some("classifier") {
        return Err(Error::Validation("checkpoint does not hold a classifier".into()));
    }
    let classes: Vec<String> = ck.parse::<String>("classes")?.split(',').map(String::from).collect();
    let cfg = ClassifierConfig {
        height: ck.parse("height")?,
        width: ck.parse("width")?,
        stages: stages_from_string(&ck.parse::<String>("stages")?)?,
        hidden: list_from_string(&ck.parse::<String>("hidden")?)?,
        num_classes: classes.len(),
        lr: ck.parse("lr")?,
        batch_size: ck.parse("batch_size")?,
        seed: ck.parse("seed")?,
    };
    let mut model = build_classifier(&cfg)?;
    model.bind(ck.parse("bound_features")?)?;
    ck.load_into(&mut model.params)?;
    Ok((model, classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_string_round_trip() {
        let cfg = ClassifierConfig::full_scale(128, 2);
        assert_eq!(stages_from_string(&stages_to_string(&cfg.stages)).unwrap(), cfg.stages);
        assert!(stages_from_string("1:2x3").is_err());
    }

    #[test]
    fn argmax_prefers_first_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0]), 0);
    }
}
