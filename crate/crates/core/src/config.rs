//! Experiment configuration: one flat key=value file with sections.
//!
//! The canonical form written by [`ExperimentConfig::to_text`] lists every
//! section and key in a fixed order; parsing starts from the defaults and
//! applies overrides, so a file may name only the keys it changes. Unknown
//! sections or keys are errors — a typo never silently falls back to a
//! default. Floats are printed with Rust's shortest round-trip formatting,
//! making parse ∘ serialize the identity.

use std::path::{Path, PathBuf};

use crate::cfproto::CFProtoConfig;
use crate::error::{CoreError, Result};
use crate::eval::MetricsConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Root seed; every stage derives its own stream from it by label.
    pub seed: u64,
    /// Directory holding the four MNIST idx files.
    pub mnist_dir: PathBuf,
    /// Directory receiving checkpoints, logs, and reports.
    pub out_dir: PathBuf,
    /// Number of training images used (prefix of the train set).
    pub train_count: usize,
    /// Number of test instances explained and evaluated (prefix of the test set).
    pub eval_count: usize,
    pub disc_epochs: usize,
    pub disc_batch: usize,
    pub ae_epochs: usize,
    pub ae_batch: usize,
    /// When true, the generator's manifold autoencoder is trained as its own
    /// checkpoint instead of reusing the all-class evaluation autoencoder.
    pub separate_daae: bool,
    pub gen_epochs: usize,
    pub gen_batch: usize,
    /// Proximity weight of the generator objective.
    pub alpha: f32,
    /// Class-loss weight of the generator objective.
    pub beta: f32,
    /// Manifold weight of the generator objective (0 disables the term and
    /// the dependency on the all-class autoencoder).
    pub gamma: f32,
    pub cfproto: CFProtoConfig,
    pub metrics: MetricsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            mnist_dir: crate::data::default_mnist_dir(),
            out_dir: PathBuf::from("runs/full"),
            train_count: 60_000,
            eval_count: 10_000,
            disc_epochs: 10,
            disc_batch: 32,
            ae_epochs: 20,
            ae_batch: 128,
            separate_daae: false,
            gen_epochs: 15,
            gen_batch: 32,
            alpha: 10.0,
            beta: 1.0,
            gamma: 10.0,
            cfproto: CFProtoConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Shrink the run so the whole pipeline finishes within an hour on a
    /// single desk-machine core: 10k training images, 500 evaluated
    /// instances, reduced epoch budgets. Classifier and autoencoder epochs
    /// are half the full run's; generator epochs are cut further because
    /// each generator epoch costs ~9x a classifier epoch (every image is
    /// expanded to all nine counterfactual targets) and two generators must
    /// fit in the hour alongside the per-instance search.
    pub fn desk_scale(&mut self) {
        self.train_count = 10_000;
        self.eval_count = 500;
        self.disc_epochs = 5;
        self.ae_epochs = 10;
        self.gen_epochs = 3;
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("train_count", self.train_count),
            ("eval_count", self.eval_count),
            ("discriminator.epochs", self.disc_epochs),
            ("discriminator.batch_size", self.disc_batch),
            ("autoencoder.epochs", self.ae_epochs),
            ("autoencoder.batch_size", self.ae_batch),
            ("generator.epochs", self.gen_epochs),
            ("generator.batch_size", self.gen_batch),
        ] {
            if v == 0 {
                return Err(CoreError::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CoreError::Config(format!(
                    "generator.{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(CoreError::Config(format!(
                "generator.gamma must be non-negative, got {}",
                self.gamma
            )));
        }
        self.cfproto.validate()?;
        self.metrics.validate()
    }

    /// Canonical serialized form: every section, every key, fixed order.
    pub fn to_text(&self) -> String {
        let c = &self.cfproto;
        format!(
            "[experiment]\n\
             seed = {}\n\
             mnist_dir = {}\n\
             out_dir = {}\n\
             train_count = {}\n\
             eval_count = {}\n\
             \n\
             [discriminator]\n\
             epochs = {}\n\
             batch_size = {}\n\
             \n\
             [autoencoder]\n\
             epochs = {}\n\
             batch_size = {}\n\
             separate_daae = {}\n\
             \n\
             [generator]\n\
             epochs = {}\n\
             batch_size = {}\n\
             alpha = {}\n\
             beta = {}\n\
             gamma = {}\n\
             \n\
             [cfproto]\n\
             beta = {}\n\
             gamma = {}\n\
             theta = {}\n\
             c_init = {}\n\
             kappa = {}\n\
             k = {}\n\
             c_steps = {}\n\
             inner_steps = {}\n\
             step_size = {}\n\
             c_multiplier = {}\n\
             \n\
             [metrics]\n\
             epsilon = {}\n",
            self.seed,
            self.mnist_dir.display(),
            self.out_dir.display(),
            self.train_count,
            self.eval_count,
            self.disc_epochs,
            self.disc_batch,
            self.ae_epochs,
            self.ae_batch,
            self.separate_daae,
            self.gen_epochs,
            self.gen_batch,
            self.alpha,
            self.beta,
            self.gamma,
            c.beta,
            c.gamma,
            c.theta,
            c.c_init,
            c.kappa,
            c.k,
            c.c_steps,
            c.inner_steps,
            c.step_size,
            c.c_multiplier,
            self.metrics.epsilon,
        )
    }

    /// Parse overrides on top of the defaults. Repeated keys keep the last
    /// assignment; unknown sections or keys are rejected with their line.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = idx + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    CoreError::Config(format!("line {lineno}: unterminated section {line:?}"))
                })?;
                section = name.trim().to_string();
                if !matches!(
                    section.as_str(),
                    "experiment" | "discriminator" | "autoencoder" | "generator" | "cfproto"
                        | "metrics"
                ) {
                    return Err(CoreError::Config(format!(
                        "line {lineno}: unknown section [{section}]"
                    )));
                }
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CoreError::Config(format!("line {lineno}: expected key = value, got {line:?}"))
            })?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(&section, key, value).map_err(|e| {
                CoreError::Config(format!("line {lineno}: {e}"))
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        Self::parse(&text).map_err(|e| {
            CoreError::Config(format!("{}: {e}", path.display()))
        })
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse::<T>().map_err(|_| {
                CoreError::Config(format!("invalid value {value:?} for {key}"))
            })
        }
        let c = &mut self.cfproto;
        match (section, key) {
            ("experiment", "seed") => self.seed = num(key, value)?,
            ("experiment", "mnist_dir") => self.mnist_dir = PathBuf::from(value),
            ("experiment", "out_dir") => self.out_dir = PathBuf::from(value),
            ("experiment", "train_count") => self.train_count = num(key, value)?,
            ("experiment", "eval_count") => self.eval_count = num(key, value)?,
            ("discriminator", "epochs") => self.disc_epochs = num(key, value)?,
            ("discriminator", "batch_size") => self.disc_batch = num(key, value)?,
            ("autoencoder", "epochs") => self.ae_epochs = num(key, value)?,
            ("autoencoder", "batch_size") => self.ae_batch = num(key, value)?,
            ("autoencoder", "separate_daae") => self.separate_daae = num(key, value)?,
            ("generator", "epochs") => self.gen_epochs = num(key, value)?,
            ("generator", "batch_size") => self.gen_batch = num(key, value)?,
            ("generator", "alpha") => self.alpha = num(key, value)?,
            ("generator", "beta") => self.beta = num(key, value)?,
            ("generator", "gamma") => self.gamma = num(key, value)?,
            ("cfproto", "beta") => c.beta = num(key, value)?,
            ("cfproto", "gamma") => c.gamma = num(key, value)?,
            ("cfproto", "theta") => c.theta = num(key, value)?,
            ("cfproto", "c_init") => c.c_init = num(key, value)?,
            ("cfproto", "kappa") => c.kappa = num(key, value)?,
            ("cfproto", "k") => c.k = num(key, value)?,
            ("cfproto", "c_steps") => c.c_steps = num(key, value)?,
            ("cfproto", "inner_steps") => c.inner_steps = num(key, value)?,
            ("cfproto", "step_size") => c.step_size = num(key, value)?,
            ("cfproto", "c_multiplier") => c.c_multiplier = num(key, value)?,
            ("metrics", "epsilon") => self.metrics.epsilon = num(key, value)?,
            ("", _) => {
                return Err(CoreError::Config(format!(
                    "key {key} appears before any section"
                )))
            }
            _ => {
                return Err(CoreError::Config(format!(
                    "unknown key {key} in section [{section}]"
                )))
            }
        }
        Ok(())
    }
}
