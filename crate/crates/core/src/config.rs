//! Flat `key = value` run configuration (TOML syntax).
//!
//! Every key is optional; missing keys take the library defaults.
//!
//! ```text
//! # network
//! depth = 6
//! filters = 60
//! kernel_size = 5
//! downsample_factor = 2
//! k = 5
//! mode = "full"            # full | diffusion_only
//! # optimizer
//! lr = 0.001
//! beta1 = 0.9
//! beta2 = 0.99
//! eps = 1e-8
//! # training
//! iterations = 5000
//! batch_size = 8
//! crop_len = 512           # 0 trains on whole clips
//! loss = "l2"              # l2 | l1 | l2+nll | simple
//! lambda_nll = 0.1
//! trace_every = 250
//! seed = 0                 # overridden by DIFFGMM_SEED
//! # inference
//! steps = 5
//! freeze = false
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::DEFAULT_K;
use crate::grad::AdamConfig;
use crate::model::{AblationMode, LossKind, TrainOptions, UNetConfig};

pub const SEED_ENV: &str = "DIFFGMM_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub depth: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub downsample_factor: usize,
    pub k: usize,
    pub mode: AblationMode,

    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,

    pub iterations: usize,
    pub batch_size: usize,
    pub crop_len: usize,
    pub loss: LossKind,
    pub lambda_nll: f64,
    pub trace_every: usize,
    pub seed: u64,

    pub steps: usize,
    pub freeze: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = UNetConfig::default();
        let adam = AdamConfig::default();
        let train = TrainOptions::default();
        Self {
            depth: net.depth,
            filters: net.filters,
            kernel_size: net.kernel_size,
            downsample_factor: net.downsample_factor,
            k: DEFAULT_K,
            mode: AblationMode::Full,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            iterations: train.iterations,
            batch_size: train.batch_size,
            crop_len: train.crop_len.unwrap_or(0),
            loss: train.loss,
            lambda_nll: train.lambda_nll,
            trace_every: train.trace_every,
            seed: train.seed,
            steps: 5,
            freeze: false,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `DIFFGMM_SEED` from the process environment.
    pub fn with_env(self) -> Result<Self> {
        self.with_seed_override(std::env::var(SEED_ENV).ok().as_deref())
    }

    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self> {
        if let Some(v) = value {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(self)
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig {
            depth: self.depth,
            filters: self.filters,
            kernel_size: self.kernel_size,
            downsample_factor: self.downsample_factor,
            k: self.k,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            iterations: self.iterations,
            batch_size: self.batch_size,
            crop_len: (self.crop_len > 0).then_some(self.crop_len),
            loss: self.loss,
            lambda_nll: self.lambda_nll,
            trace_every: self.trace_every,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.unet().validate()?;
        if self.mode == AblationMode::GmmOnly {
            return Err(Error::Config("gmm_only has no trainable network".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid optimizer settings".into()));
        }
        if !(self.eps > 0.0) || !(self.lambda_nll >= 0.0) {
            return Err(Error::Config("eps must be > 0 and lambda_nll >= 0".into()));
        }
        if self.batch_size == 0 || self.trace_every == 0 || self.steps == 0 {
            return Err(Error::Config("batch_size, trace_every and steps must be >= 1".into()));
        }
        Ok(())
    }
}
