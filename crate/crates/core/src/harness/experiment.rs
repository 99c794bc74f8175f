//! Experiment drivers: held-out evaluation, the K sweep and the ablation
//! table. Training is sequential; all outputs are deterministic for a
//! fixed configuration apart from the optional timing fields.

use std::fmt::Write as _;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::audio::NoisyPair;
use crate::config::RunConfig;
use crate::denoiser::{denoise, DenoiseOptions, EmNoiseEstimator, NoiseEstimator, ReverseSchedule};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricResult};
use crate::model::{AblationMode, ModelState};

use super::synth::SuiteSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub sdr_db: f64,
    pub si_snr_db: f64,
    pub seg_snr_db: f64,
}

impl MeanMetrics {
    pub fn of<'a>(results: impl ExactSizeIterator<Item = &'a MetricResult>) -> Self {
        let n = results.len().max(1) as f64;
        let mut m = MeanMetrics {
            sdr_db: 0.0,
            si_snr_db: 0.0,
            seg_snr_db: 0.0,
        };
        for r in results {
            m.sdr_db += r.sdr_db;
            m.si_snr_db += r.si_snr_db;
            m.seg_snr_db += r.seg_snr_db;
        }
        m.sdr_db /= n;
        m.si_snr_db /= n;
        m.seg_snr_db /= n;
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipResult {
    pub name: String,
    pub before: MetricResult,
    pub after: MetricResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub label: String,
    pub config: serde_json::Value,
    pub clips: Vec<ClipResult>,
    pub mean_before: MeanMetrics,
    pub mean_after: MeanMetrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix_s: Option<u64>,
}

impl ExperimentRecord {
    pub fn new(label: &str, config: serde_json::Value, clips: Vec<ClipResult>, started: Instant) -> Self {
        let mean_before = MeanMetrics::of(clips.iter().map(|c| &c.before));
        let mean_after = MeanMetrics::of(clips.iter().map(|c| &c.after));
        Self {
            label: label.to_owned(),
            config,
            clips,
            mean_before,
            mean_after,
            wall_clock_s: Some(started.elapsed().as_secs_f64()),
            created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs()),
        }
    }

    /// Drops the timing fields so reruns serialize identically.
    pub fn without_timestamps(mut self) -> Self {
        self.wall_clock_s = None;
        self.created_unix_s = None;
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per clip with before/after metrics.
    pub fn clips_csv(&self) -> String {
        let mut out = String::from(
            "path,sdr_db,si_snr_db,seg_snr_db,input_sdr_db,input_si_snr_db,input_seg_snr_db\n",
        );
        for c in &self.clips {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                c.name,
                c.after.sdr_db,
                c.after.si_snr_db,
                c.after.seg_snr_db,
                c.before.sdr_db,
                c.before.si_snr_db,
                c.before.seg_snr_db
            );
        }
        out
    }
}

/// Denoises every pair against its clean reference.
pub fn evaluate_pairs<E: NoiseEstimator + ?Sized>(
    estimator: &E,
    pairs: &[(String, NoisyPair)],
    schedule: &ReverseSchedule,
    freeze: bool,
) -> Result<Vec<ClipResult>> {
    pairs
        .iter()
        .map(|(name, pair)| {
            let opts = DenoiseOptions {
                schedule: schedule.clone(),
                freeze,
                reference: Some(&pair.clean),
            };
            let (y_hat, _) = denoise(estimator, &pair.noisy, &opts)?;
            Ok(ClipResult {
                name: name.clone(),
                before: metrics::evaluate(pair.clean.samples(), pair.noisy.samples())?,
                after: metrics::evaluate(pair.clean.samples(), y_hat.samples())?,
            })
        })
        .collect()
}

pub fn named_heldout(pairs: &[NoisyPair]) -> Vec<(String, NoisyPair)> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| (format!("heldout_{i:02}"), p.clone()))
        .collect()
}

/// Fresh model trained with `cfg` on `train`.
pub fn train_model(cfg: &RunConfig, train: &[NoisyPair]) -> Result<ModelState> {
    cfg.validate()?;
    let mut state = ModelState::new(cfg.unet(), cfg.mode, cfg.seed)?;
    state.adam_config = cfg.adam();
    state.train_epoch(train, &cfg.train_options())?;
    state.mark_trained();
    Ok(state)
}

fn schedule(cfg: &RunConfig) -> Result<ReverseSchedule> {
    ReverseSchedule::uniform(cfg.steps)
}

/// Trains on the suite's training pairs and evaluates on its held-out set.
pub fn train_and_evaluate(suite: &SuiteSpec, cfg: &RunConfig) -> Result<(ModelState, ExperimentRecord)> {
    let started = Instant::now();
    let (train, heldout) = suite.build()?;
    let state = train_model(cfg, &train)?;
    let clips = evaluate_pairs(&state, &named_heldout(&heldout), &schedule(cfg)?, cfg.freeze)?;
    let snapshot = serde_json::json!({ "run": cfg, "suite": suite });
    let record = ExperimentRecord::new(&cfg.mode.to_string(), snapshot, clips, started);
    Ok((state, record))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub mean_sdr_db: f64,
    pub mean_si_snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweep {
    pub rows: Vec<SweepRow>,
    /// K with the highest mean SDR (first one on ties).
    pub best_k: usize,
}

impl KSweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,mean_sdr_db,mean_si_snr_db\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6},{:.6}", r.k, r.mean_sdr_db, r.mean_si_snr_db);
        }
        out
    }
}

/// One fresh full-mode model per K, all with the same seed and budget.
pub fn sweep_k(ks: &[usize], suite: &SuiteSpec, cfg: &RunConfig) -> Result<KSweep> {
    if ks.is_empty() {
        return Err(Error::Config("sweep needs at least one K".into()));
    }
    let (train, heldout) = suite.build()?;
    let heldout = named_heldout(&heldout);
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let run = RunConfig {
            k,
            mode: AblationMode::Full,
            ..cfg.clone()
        };
        let state = train_model(&run, &train)?;
        let clips = evaluate_pairs(&state, &heldout, &schedule(&run)?, run.freeze)?;
        let m = MeanMetrics::of(clips.iter().map(|c| &c.after));
        rows.push(SweepRow {
            k,
            mean_sdr_db: m.sdr_db,
            mean_si_snr_db: m.si_snr_db,
        });
    }
    let best_k = rows
        .iter()
        .fold(None::<&SweepRow>, |best, r| match best {
            Some(b) if b.mean_sdr_db >= r.mean_sdr_db => Some(b),
            _ => Some(r),
        })
        .map(|r| r.k)
        .expect("non-empty");
    Ok(KSweep { rows, best_k })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub mean_sdr_db: f64,
    pub mean_si_snr_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    /// `gmm_only`, `diffusion_only`, `full`, in that order.
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, mode: AblationMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,mean_sdr_db,mean_si_snr_db\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6},{:.6}", r.mode, r.mean_sdr_db, r.mean_si_snr_db);
        }
        out
    }
}

/// Evaluates the three modes on the suite's held-out set with a shared
/// seed and training budget. `gmm_only` fits `cfg.k` components per clip.
pub fn run_ablation(suite: &SuiteSpec, cfg: &RunConfig) -> Result<AblationTable> {
    let (train, heldout) = suite.build()?;
    let heldout = named_heldout(&heldout);
    let sched = schedule(cfg)?;
    let mut rows = Vec::with_capacity(3);
    for mode in [AblationMode::GmmOnly, AblationMode::DiffusionOnly, AblationMode::Full] {
        let clips = match mode {
            AblationMode::GmmOnly => {
                let em = EmNoiseEstimator {
                    k: cfg.k,
                    seed: cfg.seed,
                };
                evaluate_pairs(&em, &heldout, &ReverseSchedule::uniform(1)?, false)?
            }
            _ => {
                let run = RunConfig { mode, ..cfg.clone() };
                let state = train_model(&run, &train)?;
                evaluate_pairs(&state, &heldout, &sched, run.freeze)?
            }
        };
        let m = MeanMetrics::of(clips.iter().map(|c| &c.after));
        rows.push(AblationRow {
            mode,
            mean_sdr_db: m.sdr_db,
            mean_si_snr_db: m.si_snr_db,
        });
    }
    Ok(AblationTable { rows })
}
