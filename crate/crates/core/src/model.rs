//! 1-D U-Net with Gaussian-mixture heads.
//!
//! The encoder halves the time axis `depth` times; the decoder mirrors it
//! with linear upsampling and skip connections. Two heads read the
//! network:
//!
//! * a global head maps the time-averaged bottleneck features to raw
//!   mixture parameters (logits, means, log-variances) for K components;
//! * a per-sample head produces K logits whose softmax gives component
//!   responsibilities at every position.
//!
//! The noise estimate is the responsibility-weighted component mean,
//! `n[t] = sum_k r_k[t] mu_k`. In `DiffusionOnly` mode a 1-channel head
//! regresses the noise directly and the mixture heads are unused.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::NoisyPair;
use crate::error::{Error, Result};
use crate::gmm::{GmmParams, GmmRaw, DEFAULT_K, VARIANCE_FLOOR};
use crate::grad::{adam_step, checkpoint, AdamConfig, AdamState, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub depth: usize,
    pub filters: usize,
    pub kernel_size: usize,
    pub downsample_factor: usize,
    pub k: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            depth: 6,
            filters: 60,
            kernel_size: 5,
            downsample_factor: 2,
            k: DEFAULT_K,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.filters == 0 || self.k == 0 {
            return Err(Error::Config("depth, filters and K must be >= 1".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.downsample_factor < 2 {
            return Err(Error::Config("downsample_factor must be >= 2".into()));
        }
        Ok(())
    }

    /// Input lengths must be a multiple of this.
    pub fn length_multiple(&self) -> usize {
        self.downsample_factor.pow(self.depth as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Full,
    DiffusionOnly,
    GmmOnly,
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationMode::Full => "full",
            AblationMode::DiffusionOnly => "diffusion_only",
            AblationMode::GmmOnly => "gmm_only",
        })
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(AblationMode::Full),
            "diffusion_only" | "diffusion-only" => Ok(AblationMode::DiffusionOnly),
            "gmm_only" | "gmm-only" => Ok(AblationMode::GmmOnly),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "l2")]
    L2,
    #[serde(rename = "l1")]
    L1,
    #[serde(rename = "l2+nll")]
    L2PlusNll,
    #[serde(rename = "simple")]
    Simple,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(LossKind::L2),
            "l1" => Ok(LossKind::L1),
            "l2+nll" | "l2_plus_nll" => Ok(LossKind::L2PlusNll),
            "simple" => Ok(LossKind::Simple),
            other => Err(Error::Config(format!("unknown loss {other:?}"))),
        }
    }
}

/// `l2 = 1/2 sum (est - true)^2`, `l1 = sum |est - true|`.
pub fn loss_regression(estimate: &[f64], truth: &[f64], kind: LossKind) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Shape(format!(
            "estimate has {} samples, target {}",
            estimate.len(),
            truth.len()
        )));
    }
    let diffs = estimate.iter().zip(truth).map(|(e, t)| e - t);
    match kind {
        LossKind::L2 => Ok(0.5 * diffs.map(|d| d * d).sum::<f64>()),
        LossKind::L1 => Ok(diffs.map(f64::abs).sum()),
        other => Err(Error::Contract(format!(
            "{other:?} is not a plain regression loss"
        ))),
    }
}

/// Negative mean log-likelihood of `noise` under `gmm`.
pub fn loss_gmm_nll(gmm: &GmmParams, noise: &[f64]) -> Result<f64> {
    Ok(-crate::gmm::log_likelihood(gmm, noise)? / noise.len() as f64)
}

/// Mean squared error between the target noise and the network's noise
/// prediction.
pub fn loss_simple(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() || target.is_empty() {
        return Err(Error::Shape(format!(
            "prediction has {} samples, target {}",
            prediction.len(),
            target.len()
        )));
    }
    Ok(prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (t - p).powi(2))
        .sum::<f64>()
        / target.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub iterations: usize,
    pub batch_size: usize,
    /// Random crop length per batch item; `None` trains on whole clips.
    pub crop_len: Option<usize>,
    pub loss: LossKind,
    pub lambda_nll: f64,
    /// A trace point is recorded every `trace_every` iterations.
    pub trace_every: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 8,
            crop_len: Some(512),
            loss: LossKind::L2,
            lambda_nll: 0.1,
            trace_every: 250,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: u64,
    /// Batch loss divided by the batch size.
    pub loss: f64,
}

/// Everything the network emits for one input.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub noise_estimate: Vec<f64>,
    pub gmm: Option<GmmParams>,
    /// `[K, L]` softmax responsibilities (full mode only).
    pub responsibilities: Option<Tensor>,
}

/// Handles of the heads' outputs on a tape.
struct Heads {
    noise: Var,
    logits: Option<Var>,
    means: Option<Var>,
    log_vars: Option<Var>,
    resp: Option<Var>,
}

/// Network weights, optimizer state and training bookkeeping.
#[derive(Debug, Clone)]
pub struct ModelState {
    config: UNetConfig,
    mode: AblationMode,
    names: Vec<String>,
    params: Vec<Tensor>,
    adam: AdamState,
    pub adam_config: AdamConfig,
    iteration: u64,
    loss_trace: Vec<TracePoint>,
}

/// JSON sidecar written next to the tensor checkpoint.
#[derive(Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub config: UNetConfig,
    pub ablation_mode: AblationMode,
    pub iteration: u64,
    pub loss_trace: Vec<TracePoint>,
    pub adam: AdamConfig,
    pub adam_timestep: u64,
}

impl ModelState {
    pub fn new(config: UNetConfig, mode: AblationMode, seed: u64) -> Result<Self> {
        config.validate()?;
        if mode == AblationMode::GmmOnly {
            return Err(Error::Contract(
                "gmm_only mode has no network; use the denoiser's EM path".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (f, k, kk, d) = (
            config.filters,
            config.kernel_size,
            config.k,
            config.downsample_factor,
        );
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut add = |name: String, rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng| {
            let bound = (1.0 / fan_in as f64).sqrt();
            names.push(name);
            params.push(Tensor::uniform(rows, cols, bound, rng));
        };
        for level in 0..config.depth {
            let c_in = if level == 0 { 1 } else { f };
            add(format!("enc.{level}.w"), f, c_in * k, c_in * k, &mut rng);
            add(format!("enc.{level}.b"), f, 1, c_in * k, &mut rng);
            add(format!("down.{level}.w"), f, f * d, f * d, &mut rng);
            add(format!("down.{level}.b"), f, 1, f * d, &mut rng);
        }
        for level in 0..config.depth {
            // the concatenated [upsampled, skip] input has 2F channels
            add(format!("dec.{level}.up_w"), f, f * k, 2 * f * k, &mut rng);
            add(format!("dec.{level}.skip_w"), f, f * k, 2 * f * k, &mut rng);
            add(format!("dec.{level}.b"), f, 1, 2 * f * k, &mut rng);
        }
        add("head_resp.w".into(), kk, f, f, &mut rng);
        add("head_resp.b".into(), kk, 1, f, &mut rng);
        for part in ["logits", "means", "log_vars"] {
            add(format!("head_global.{part}.w"), kk, f, f, &mut rng);
            add(format!("head_global.{part}.b"), kk, 1, f, &mut rng);
        }
        add("head_direct.w".into(), 1, f, f, &mut rng);
        add("head_direct.b".into(), 1, 1, f, &mut rng);

        let adam = AdamState::zeros_like(&params);
        Ok(Self {
            config,
            mode,
            names,
            params,
            adam,
            adam_config: AdamConfig::default(),
            iteration: 0,
            loss_trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn mode(&self) -> AblationMode {
        self.mode
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn is_trained(&self) -> bool {
        self.iteration > 0
    }

    /// Marks the state as usable for inference without training it.
    pub fn mark_trained(&mut self) {
        self.iteration = self.iteration.max(1);
    }

    pub fn loss_trace(&self) -> &[TracePoint] {
        &self.loss_trace
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.param_index(name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.param_index(name).map(move |i| &mut self.params[i])
    }

    fn check_length(&self, len: usize) -> Result<()> {
        let m = self.config.length_multiple();
        if len == 0 || !len.is_multiple_of(m) {
            return Err(Error::Contract(format!(
                "input length {len} must be a positive multiple of {m}; pad it first"
            )));
        }
        Ok(())
    }

    fn build(&self, tape: &mut Tape, pv: &[Var], input: &[f64]) -> Result<Heads> {
        let cfg = &self.config;
        let (k, pad, fac) = (cfg.kernel_size, cfg.kernel_size / 2, cfg.downsample_factor);
        let p = |name: &str| pv[self.param_index(name).expect("parameter exists")];

        let mut cur = tape.leaf(Tensor::row(input.to_vec()));
        let mut skips = Vec::with_capacity(cfg.depth);
        for level in 0..cfg.depth {
            let h = tape.conv1d(
                cur,
                p(&format!("enc.{level}.w")),
                Some(p(&format!("enc.{level}.b"))),
                k,
                1,
                pad,
            )?;
            let h = tape.relu(h);
            skips.push(h);
            let dn = tape.conv1d(
                h,
                p(&format!("down.{level}.w")),
                Some(p(&format!("down.{level}.b"))),
                fac,
                fac,
                0,
            )?;
            cur = tape.relu(dn);
        }
        let bottleneck = cur;
        for level in (0..cfg.depth).rev() {
            let up = tape.upsample_linear(cur, fac)?;
            let a = tape.conv1d(
                up,
                p(&format!("dec.{level}.up_w")),
                Some(p(&format!("dec.{level}.b"))),
                k,
                1,
                pad,
            )?;
            let b = tape.conv1d(skips[level], p(&format!("dec.{level}.skip_w")), None, k, 1, pad)?;
            let s = tape.add(a, b)?;
            cur = tape.relu(s);
        }
        let features = cur;

        if self.mode == AblationMode::DiffusionOnly {
            let noise = tape.conv1d(features, p("head_direct.w"), Some(p("head_direct.b")), 1, 1, 0)?;
            return Ok(Heads {
                noise,
                logits: None,
                means: None,
                log_vars: None,
                resp: None,
            });
        }

        let pooled = tape.mean_length(bottleneck);
        let logits = tape.linear(pooled, p("head_global.logits.w"), p("head_global.logits.b"))?;
        let means = tape.linear(pooled, p("head_global.means.w"), p("head_global.means.b"))?;
        let log_vars = tape.linear(pooled, p("head_global.log_vars.w"), p("head_global.log_vars.b"))?;
        let resp_logits = tape.conv1d(features, p("head_resp.w"), Some(p("head_resp.b")), 1, 1, 0)?;
        let resp = tape.softmax(resp_logits);
        let weighted = tape.mul(resp, means)?;
        let noise = tape.sum_channels(weighted);
        Ok(Heads {
            noise,
            logits: Some(logits),
            means: Some(means),
            log_vars: Some(log_vars),
            resp: Some(resp),
        })
    }

    fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    fn gmm_from(&self, tape: &Tape, heads: &Heads) -> Result<Option<GmmParams>> {
        match (heads.logits, heads.means, heads.log_vars) {
            (Some(l), Some(m), Some(v)) => Ok(Some(
                GmmRaw {
                    weight_logits: tape.value(l).data().to_vec(),
                    means: tape.value(m).data().to_vec(),
                    log_variances: tape.value(v).data().to_vec(),
                }
                .constrain()?,
            )),
            _ => Ok(None),
        }
    }

    /// Runs the network on `input`, whose length must be a multiple of
    /// [`UNetConfig::length_multiple`].
    pub fn forward(&self, input: &[f64]) -> Result<ForwardOutput> {
        self.check_length(input.len())?;
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let heads = self.build(&mut tape, &pv, input)?;
        let noise = tape.value(heads.noise);
        noise.check_finite("noise_estimate")?;
        Ok(ForwardOutput {
            noise_estimate: noise.data().to_vec(),
            gmm: self.gmm_from(&tape, &heads)?,
            responsibilities: heads.resp.map(|r| tape.value(r).clone()),
        })
    }

    fn nll_on_tape(&self, tape: &mut Tape, heads: &Heads, noise: Var) -> Result<Var> {
        let (Some(logits), Some(means), Some(log_vars)) = (heads.logits, heads.means, heads.log_vars)
        else {
            return Err(Error::Contract("the NLL term needs the mixture heads".into()));
        };
        let floor = tape.leaf(Tensor::scalar(VARIANCE_FLOOR));
        let ev = tape.exp(log_vars);
        let var = tape.add(ev, floor)?;
        let lse = tape.logsumexp(logits);
        let log_w = tape.sub(logits, lse)?;
        let ln_var = tape.ln(var);
        let half_ln_var = tape.scale(ln_var, -0.5);
        let norm = tape.leaf(Tensor::scalar(-0.5 * (2.0 * PI).ln()));
        let comp = tape.add(log_w, half_ln_var)?;
        let comp = tape.add(comp, norm)?;
        let diff = tape.sub(noise, means)?;
        let sq = tape.square(diff);
        let quad = tape.div(sq, var)?;
        let quad = tape.scale(quad, -0.5);
        let log_joint = tape.add(quad, comp)?;
        let per_sample = tape.logsumexp(log_joint);
        let mean_ll = tape.mean(per_sample);
        Ok(tape.scale(mean_ll, -1.0))
    }

    fn item_loss(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        input: &[f64],
        target: &[f64],
        kind: LossKind,
        lambda_nll: f64,
    ) -> Result<Var> {
        let heads = self.build(tape, pv, input)?;
        let truth = tape.leaf(Tensor::row(target.to_vec()));
        let diff = tape.sub(heads.noise, truth)?;
        Ok(match kind {
            LossKind::L2 => {
                let sq = tape.square(diff);
                let s = tape.sum(sq);
                tape.scale(s, 0.5)
            }
            LossKind::L1 => {
                let a = tape.abs(diff);
                tape.sum(a)
            }
            LossKind::Simple => {
                let sq = tape.square(diff);
                tape.mean(sq)
            }
            LossKind::L2PlusNll => {
                let sq = tape.square(diff);
                let s = tape.sum(sq);
                let l2 = tape.scale(s, 0.5);
                let nll = self.nll_on_tape(tape, &heads, truth)?;
                let weighted = tape.scale(nll, lambda_nll);
                tape.add(l2, weighted)?
            }
        })
    }

    /// Summed loss over `(input, true_noise)` items and its gradient for
    /// every parameter, in [`Self::param_names`] order.
    pub fn loss_and_grads(
        &self,
        batch: &[(Vec<f64>, Vec<f64>)],
        kind: LossKind,
        lambda_nll: f64,
    ) -> Result<(f64, Vec<Tensor>)> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let mut total: Option<Var> = None;
        for (input, target) in batch {
            self.check_length(input.len())?;
            if target.len() != input.len() {
                return Err(Error::Shape("target noise length differs from input".into()));
            }
            let l = self.item_loss(&mut tape, &pv, input, target, kind, lambda_nll)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let total = total.expect("non-empty batch");
        let value = tape.value(total).item();
        let grads = tape.backward(total)?;
        Ok((value, pv.iter().map(|&v| grads.wrt(v)).collect()))
    }

    /// Loss only; used by finite-difference checks.
    pub fn loss(&self, batch: &[(Vec<f64>, Vec<f64>)], kind: LossKind, lambda_nll: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let pv = self.register(&mut tape);
        let mut total = 0.0;
        for (input, target) in batch {
            self.check_length(input.len())?;
            let l = self.item_loss(&mut tape, &pv, input, target, kind, lambda_nll)?;
            total += tape.value(l).item();
        }
        Ok(total)
    }

    /// Runs `opts.iterations` Adam steps on random crops of `pairs`,
    /// regressing the network output onto the true noise `x - y`.
    pub fn train_epoch(&mut self, pairs: &[NoisyPair], opts: &TrainOptions) -> Result<Vec<TracePoint>> {
        if pairs.is_empty() {
            return Err(Error::Contract("no training pairs".into()));
        }
        if opts.batch_size == 0 || opts.trace_every == 0 {
            return Err(Error::Config("batch_size and trace_every must be >= 1".into()));
        }
        if opts.loss == LossKind::L2PlusNll && self.mode != AblationMode::Full {
            return Err(Error::Config("the l2+nll loss needs full mode".into()));
        }
        let m = self.config.length_multiple();
        if let Some(c) = opts.crop_len {
            if c == 0 || c % m != 0 {
                return Err(Error::Config(format!("crop_len {c} must be a positive multiple of {m}")));
            }
        }
        // (input, true noise) per pair, padded so every crop is valid
        let mut prepared = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let mut x = pair.noisy.samples().to_vec();
            let mut e = pair.true_noise();
            let min_len = opts.crop_len.unwrap_or(m).max(x.len().div_ceil(m) * m);
            x.resize(min_len, 0.0);
            e.resize(min_len, 0.0);
            prepared.push((x, e));
        }

        let mut trace = Vec::new();
        for _ in 0..opts.iterations {
            let mut rng = ChaCha8Rng::seed_from_u64(
                opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ self.iteration,
            );
            let batch: Vec<(Vec<f64>, Vec<f64>)> = (0..opts.batch_size)
                .map(|_| {
                    let (x, e) = &prepared[rng.gen_range(0..prepared.len())];
                    match opts.crop_len {
                        Some(c) => {
                            let start = rng.gen_range(0..=x.len() - c);
                            (x[start..start + c].to_vec(), e[start..start + c].to_vec())
                        }
                        None => (x.clone(), e.clone()),
                    }
                })
                .collect();
            let (loss, grads) = self.loss_and_grads(&batch, opts.loss, opts.lambda_nll)?;
            for (g, name) in grads.iter().zip(&self.names) {
                g.check_finite(name)?;
            }
            adam_step(&mut self.params, &grads, &mut self.adam, &self.adam_config)?;
            self.iteration += 1;
            if self.iteration.is_multiple_of(opts.trace_every as u64) {
                let point = TracePoint {
                    iteration: self.iteration,
                    loss: loss / opts.batch_size as f64,
                };
                trace.push(point);
                self.loss_trace.push(point);
            }
        }
        Ok(trace)
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar {
            config: self.config,
            ablation_mode: self.mode,
            iteration: self.iteration,
            loss_trace: self.loss_trace.clone(),
            adam: self.adam_config,
            adam_timestep: self.adam.timestep,
        }
    }

    /// Sidecar location for a checkpoint path: `<path>.json`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the tensor checkpoint (weights and Adam moments) and its
    /// JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut entries: Vec<(String, Tensor)> = self
            .names
            .iter()
            .cloned()
            .zip(self.params.iter().cloned())
            .collect();
        for (i, name) in self.names.iter().enumerate() {
            entries.push((format!("adam.m.{name}"), self.adam.m[i].clone()));
            entries.push((format!("adam.v.{name}"), self.adam.v[i].clone()));
        }
        checkpoint::save(path, &entries)?;
        let sidecar = Self::sidecar_path(path);
        std::fs::write(&sidecar, serde_json::to_string_pretty(&self.sidecar())?)
            .map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar_path = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let mut state = Self::new(side.config, side.ablation_mode, 0)?;
        let entries = checkpoint::load(path)?;
        let mut found = vec![false; state.names.len()];
        for (name, t) in entries {
            let (slot, idx) = if let Some(rest) = name.strip_prefix("adam.m.") {
                (1, state.param_index(rest))
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                (2, state.param_index(rest))
            } else {
                (0, state.param_index(&name))
            };
            let idx = idx.ok_or_else(|| Error::Checkpoint(format!("unknown tensor {name}")))?;
            if t.shape() != state.params[idx].shape() {
                return Err(Error::Checkpoint(format!(
                    "{name}: stored shape {:?}, expected {:?}",
                    t.shape(),
                    state.params[idx].shape()
                )));
            }
            match slot {
                0 => {
                    state.params[idx] = t;
                    found[idx] = true;
                }
                1 => state.adam.m[idx] = t,
                _ => state.adam.v[idx] = t,
            }
        }
        if let Some(i) = found.iter().position(|f| !f) {
            return Err(Error::Checkpoint(format!("missing tensor {}", state.names[i])));
        }
        state.adam.timestep = side.adam_timestep;
        state.adam_config = side.adam;
        state.iteration = side.iteration;
        state.loss_trace = side.loss_trace;
        Ok(state)
    }
}
