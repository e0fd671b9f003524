//! Repeated-run classifier experiments and their reports.
//!
//! An arm is a named training set. Every arm trains `n_runs` classifiers
//! with seeds `base_seed + i` and validates each epoch on the same held-out
//! set, so run `i` of every arm shares initialization and shuffling seeds.

mod plan;
mod report;
mod stats;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

pub use plan::ExperimentPlan;
pub use report::{emit_report, emit_synthetic, render_svg, summary_rows, SvgSeries};
pub use stats::{band, confidence_interval, Band};

use crate::checkpoint::Checkpoint;
use crate::classifier::{self, build_classifier, evaluate_threaded, train_classifier, ClassifierConfig, TrainRunRecord};
use crate::diffusion::{self, sample_efdms};
use crate::efdm::{EfdmDataset, Fingerprint};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Published maximum average accuracies, kept as reference rows in reports.
pub const PUBLISHED_REFERENCE: [(&str, f64); 3] =
    [("original", 91.434), ("augmented_40", 92.634), ("augmented_60", 92.984)];

pub const METRICS: [(&str, &str); 4] =
    [("train", "loss"), ("train", "accuracy"), ("val", "loss"), ("val", "accuracy")];

#[derive(Clone, Debug, PartialEq)]
pub struct ArmReport {
    pub name: String,
    pub train_size: usize,
    pub runs: Vec<TrainRunRecord>,
}

impl ArmReport {
    pub fn series(&self, split: &str, metric: &str) -> Vec<Vec<f64>> {
        self.runs
            .iter()
            .map(|r| match (split, metric) {
                ("train", "loss") => r.train_loss.clone(),
                ("train", "accuracy") => r.train_accuracy.clone(),
                ("val", "loss") => r.val_loss.clone(),
                _ => r.val_accuracy.clone(),
            })
            .collect()
    }

    /// Per-epoch band across runs.
    pub fn curve(&self, split: &str, metric: &str) -> Result<Vec<Band>> {
        let series = self.series(split, metric);
        let epochs = series.first().map_or(0, Vec::len);
        (0..epochs).map(|e| band(&series.iter().map(|s| s[e]).collect::<Vec<_>>())).collect()
    }

    /// Largest across-run mean validation accuracy and its 1-based epoch.
    pub fn max_average_accuracy(&self) -> Result<(f64, usize)> {
        let curve = self.curve("val", "accuracy")?;
        let mut best = (f64::NEG_INFINITY, 0);
        for (e, b) in curve.iter().enumerate() {
            if b.mean > best.0 {
                best = (b.mean, e + 1);
            }
        }
        Ok(best)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub config: BTreeMap<String, String>,
    pub arms: Vec<ArmReport>,
    pub test_size: usize,
}

impl ExperimentReport {
    pub fn arm(&self, name: &str) -> Option<&ArmReport> {
        self.arms.iter().find(|a| a.name == name)
    }
}

fn check_disjoint(train: &EfdmDataset, test: &EfdmDataset, arm: &str) -> Result<()> {
    let train_fp: HashSet<Fingerprint> = train.fingerprints().into_iter().collect();
    let mut hits: Vec<Fingerprint> = test.fingerprints().into_iter().filter(|f| train_fp.contains(f)).collect();
    if hits.is_empty() {
        return Ok(());
    }
    hits.sort();
    hits.dedup();
    let shown: Vec<String> = hits.iter().take(8).map(ToString::to_string).collect();
    Err(Error::Validation(format!(
        "{} test maps also appear in the '{arm}' training set: {}{}",
        hits.len(),
        shown.join(", "),
        if hits.len() > shown.len() { ", ..." } else { "" }
    )))
}

/// One training run per seed `base_seed + i`.
fn run_arm(plan: &ExperimentPlan, template: &ClassifierConfig, train: &EfdmDataset, test: &EfdmDataset) -> Result<Vec<TrainRunRecord>> {
    let one = |i: usize| -> Result<TrainRunRecord> {
        let seed = plan.base_seed.wrapping_add(i as u64);
        let mut model = build_classifier(&ClassifierConfig { seed, ..template.clone() })?;
        train_classifier(&mut model, train, test, plan.epochs, seed)
    };
    let mut runs = Vec::with_capacity(plan.n_runs);
    let indices: Vec<usize> = (0..plan.n_runs).collect();
    for group in indices.chunks(plan.threads.max(1)) {
        if group.len() == 1 {
            runs.push(one(group[0])?);
            continue;
        }
        let results: Vec<Result<TrainRunRecord>> = std::thread::scope(|scope| {
            let handles: Vec<_> = group.iter().map(|&i| scope.spawn(move || one(i))).collect();
            handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
        });
        for r in results {
            runs.push(r?);
        }
    }
    Ok(runs)
}

/// Trains every arm and validates on `test`. Fails before training if any
/// test map also appears in an arm's training set.
pub fn run_arms(
    plan: &ExperimentPlan,
    template: &ClassifierConfig,
    arms: &[(&str, &EfdmDataset)],
    test: &EfdmDataset,
) -> Result<ExperimentReport> {
    plan.validate()?;
    if arms.is_empty() {
        return Err(Error::Validation("an experiment needs at least one arm".into()));
    }
    for (name, train) in arms {
        check_disjoint(train, test, name)?;
    }
    let mut config = plan.to_map();
    config.insert("classifier_lr".into(), template.lr.to_string());
    config.insert("classifier_batch_size".into(), template.batch_size.to_string());
    config.insert("test_size".into(), test.len().to_string());
    let mut report = ExperimentReport { config, arms: Vec::new(), test_size: test.len() };
    for (name, train) in arms {
        log::info!("arm '{name}': {} training maps, {} runs", train.len(), plan.n_runs);
        report.config.insert(format!("arm.{name}.train_size"), train.len().to_string());
        let runs = run_arm(plan, template, train, test)?;
        report.arms.push(ArmReport { name: name.to_string(), train_size: train.len(), runs });
    }
    Ok(report)
}

/// Real-only arm "original" against real ∪ synthetic arm "augmented".
pub fn run_two_arm(
    plan: &ExperimentPlan,
    template: &ClassifierConfig,
    real_train: &EfdmDataset,
    real_test: &EfdmDataset,
    synth: &EfdmDataset,
) -> Result<ExperimentReport> {
    let mut augmented = real_train.clone();
    augmented.extend(synth)?;
    run_arms(plan, template, &[("original", real_train), ("augmented", &augmented)], real_test)
}

/// Accuracy of a real-data classifier on maps sampled at one diffusion epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPoint {
    pub epoch: usize,
    pub accuracy: f64,
    pub per_class: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SyntheticEval {
    pub points: Vec<SyntheticPoint>,
    /// The labelled samples behind each point, in the same order.
    pub samples: Vec<EfdmDataset>,
}

/// Loads every diffusion checkpoint, groups them by training epoch, samples
/// `n_samples` maps per class at each epoch and scores them with the
/// classifier. Every epoch must provide one checkpoint per class.
pub fn eval_on_synthetic(
    classifier_ckpt: &std::path::Path,
    diffusion_ckpts: &[PathBuf],
    n_samples: usize,
    seed: u64,
    threads: usize,
) -> Result<SyntheticEval> {
    let (model, classes) = classifier::from_checkpoint(&Checkpoint::load(classifier_ckpt)?)?;
    if n_samples == 0 {
        return Err(Error::Validation("n_samples must be >= 1".into()));
    }
    let mut by_epoch: BTreeMap<usize, BTreeMap<usize, diffusion::LoadedDenoiser>> = BTreeMap::new();
    for path in diffusion_ckpts {
        let loaded = diffusion::load_denoiser(path)?;
        let k = classes.iter().position(|c| *c == loaded.class).ok_or_else(|| {
            Error::Validation(format!("{}: class '{}' is unknown to the classifier", path.display(), loaded.class))
        })?;
        let (h, w) = (model.config().height, model.config().width);
        if loaded.config.image_size != h || loaded.config.image_size != w {
            return Err(Error::Validation(format!(
                "{}: {}px samples do not fit a {h}x{w} classifier",
                path.display(),
                loaded.config.image_size
            )));
        }
        if by_epoch.entry(loaded.epoch).or_default().insert(k, loaded).is_some() {
            return Err(Error::Validation(format!("{}: duplicate checkpoint for its class and epoch", path.display())));
        }
    }
    let mut out = SyntheticEval { points: Vec::new(), samples: Vec::new() };
    for (epoch, models) in &by_epoch {
        if models.len() != classes.len() {
            return Err(Error::Validation(format!(
                "epoch {epoch} has checkpoints for {} of {} classes",
                models.len(),
                classes.len()
            )));
        }
        let (h, w) = (model.config().height, model.config().width);
        let mut ds = EfdmDataset::new(classes.clone(), h, w)?;
        for (&k, m) in models {
            let sched = m.config.schedule()?;
            let s = SeededRng::derive(seed, ((*epoch as u64) << 16) | k as u64).next_u64();
            for e in sample_efdms(&m.model, n_samples, &sched, s, &classes[k], threads)? {
                ds.push(e)?;
            }
        }
        let ev = evaluate_threaded(&model, &ds, threads)?;
        log::info!("synthetic maps from diffusion epoch {epoch}: accuracy {:.4}", ev.accuracy);
        out.points.push(SyntheticPoint { epoch: *epoch, accuracy: ev.accuracy, per_class: ev.per_class });
        out.samples.push(ds);
    }
    Ok(out)
}
