use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Sizes, repetitions and seeds of an augmentation experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub n_runs: usize,
    pub epochs: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub synth_per_class: usize,
    /// Diffusion epochs whose samples form the augmented arms.
    pub checkpoints: Vec<usize>,
    pub base_seed: u64,
    /// Upper bound on concurrent training runs.
    pub threads: usize,
}

impl Default for ExperimentPlan {
    /// 5 runs of 10 epochs on 2000 / 500 / 1200 maps per class.
    fn default() -> Self {
        Self {
            n_runs: 5,
            epochs: 10,
            train_per_class: 2000,
            test_per_class: 500,
            synth_per_class: 1200,
            checkpoints: vec![8, 15],
            base_seed: 0,
            threads: 1,
        }
    }
}

const KEYS: [&str; 8] = [
    "n_runs",
    "epochs",
    "train_per_class",
    "test_per_class",
    "synth_per_class",
    "checkpoints",
    "base_seed",
    "threads",
];

impl ExperimentPlan {
    /// 20 runs of 20 epochs on 24000 / 6000 / 15000 maps per class,
    /// comparing diffusion epochs 40 and 60.
    pub fn full_scale() -> Self {
        Self {
            n_runs: 20,
            epochs: 20,
            train_per_class: 24000,
            test_per_class: 6000,
            synth_per_class: 15000,
            checkpoints: vec![40, 60],
            base_seed: 0,
            threads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs < 2 {
            return Err(Error::Validation(format!("n_runs must be >= 2 for confidence intervals, got {}", self.n_runs)));
        }
        let counts = [
            ("epochs", self.epochs),
            ("train_per_class", self.train_per_class),
            ("test_per_class", self.test_per_class),
            ("synth_per_class", self.synth_per_class),
            ("threads", self.threads),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Validation(format!("{name} must be >= 1")));
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let checkpoints = self.checkpoints.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        [
            ("n_runs", self.n_runs.to_string()),
            ("epochs", self.epochs.to_string()),
            ("train_per_class", self.train_per_class.to_string()),
            ("test_per_class", self.test_per_class.to_string()),
            ("synth_per_class", self.synth_per_class.to_string()),
            ("checkpoints", checkpoints),
            ("base_seed", self.base_seed.to_string()),
            ("threads", self.threads.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// `key = value` lines; blank lines and `#` comments are ignored, and
    /// omitted keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut plan = Self::default();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Validation(format!("plan line {}: expected key = value", no + 1)))?;
            plan.set(key.trim(), value.trim())
                .map_err(|e| Error::Validation(format!("plan line {}: {e}", no + 1)))?;
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Validation(format!("'{key}' expects a non-negative integer, got '{v}'")))
        };
        match key {
            "n_runs" => self.n_runs = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "train_per_class" => self.train_per_class = num(value)?,
            "test_per_class" => self.test_per_class = num(value)?,
            "synth_per_class" => self.synth_per_class = num(value)?,
            "threads" => self.threads = num(value)?,
            "base_seed" => {
                self.base_seed = value
                    .parse()
                    .map_err(|_| Error::Validation(format!("'base_seed' expects an integer, got '{value}'")))?
            }
            "checkpoints" => {
                self.checkpoints =
                    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(num).collect::<Result<_>>()?
            }
            _ => {
                return Err(Error::Validation(format!("unknown plan key '{key}' (expected one of {})", KEYS.join(", "))))
            }
        }
        Ok(())
    }
}
