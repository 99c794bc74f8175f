//! Inference: repeated subtraction of estimated noise from the noisy
//! signal, the EM-only baseline, and per-component decomposition dumps.

use serde::{Deserialize, Serialize};

use crate::audio::{pad_to_multiple, AudioClip};
use crate::error::{Error, Result};
use crate::gmm::{em_fit, normal_pdf, responsibilities, EmOptions, GmmParams};
use crate::metrics::{self, MetricResult};
use crate::model::{AblationMode, ModelState};

/// Output of one noise estimation.
#[derive(Debug, Clone)]
pub struct NoiseEstimate {
    pub noise: Vec<f64>,
    pub gmm: Option<GmmParams>,
}

/// Anything that maps a (padded) signal to a same-length noise estimate.
pub trait NoiseEstimator {
    fn estimate(&self, signal: &[f64]) -> Result<NoiseEstimate>;

    /// Inputs are zero-padded to a multiple of this before estimation.
    fn length_multiple(&self) -> usize {
        1
    }

    fn mode(&self) -> AblationMode;
}

impl NoiseEstimator for ModelState {
    fn estimate(&self, signal: &[f64]) -> Result<NoiseEstimate> {
        if !self.is_trained() {
            return Err(Error::Contract(format!(
                "{} model has not been trained",
                self.mode()
            )));
        }
        let out = self.forward(signal)?;
        Ok(NoiseEstimate {
            noise: out.noise_estimate,
            gmm: out.gmm,
        })
    }

    fn length_multiple(&self) -> usize {
        self.config().length_multiple()
    }

    fn mode(&self) -> AblationMode {
        ModelState::mode(self)
    }
}

/// EM fit on the signal itself; the heaviest component is taken as the
/// noise floor and its posterior-weighted mean is the estimate.
#[derive(Debug, Clone, Copy)]
pub struct EmNoiseEstimator {
    pub k: usize,
    pub seed: u64,
}

impl NoiseEstimator for EmNoiseEstimator {
    fn estimate(&self, signal: &[f64]) -> Result<NoiseEstimate> {
        let fit = em_fit(
            signal,
            &EmOptions {
                k: self.k,
                seed: self.seed,
                ..EmOptions::default()
            },
        )?;
        let gmm = fit.params;
        let floor = gmm
            .weights()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("K >= 1");
        let mu = gmm.means()[floor];
        let noise = responsibilities(&gmm, signal)
            .iter()
            .map(|row| row[floor] * mu)
            .collect();
        Ok(NoiseEstimate {
            noise,
            gmm: Some(gmm),
        })
    }

    fn mode(&self) -> AblationMode {
        AblationMode::GmmOnly
    }
}

/// Fractions of the estimated noise removed at each reverse step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseSchedule {
    step_sizes: Vec<f64>,
}

impl ReverseSchedule {
    pub const DEFAULT_STEPS: usize = 5;

    pub fn new(step_sizes: Vec<f64>) -> Result<Self> {
        if step_sizes.is_empty() {
            return Err(Error::Contract("schedule needs at least one step".into()));
        }
        if step_sizes.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Contract("step sizes must be positive".into()));
        }
        let total: f64 = step_sizes.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Contract(format!("step sizes sum to {total}, not 1")));
        }
        Ok(Self { step_sizes })
    }

    pub fn uniform(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Contract("schedule needs at least one step".into()));
        }
        Self::new(vec![1.0 / steps as f64; steps])
    }

    pub fn steps(&self) -> usize {
        self.step_sizes.len()
    }

    pub fn step_sizes(&self) -> &[f64] {
        &self.step_sizes
    }
}

impl Default for ReverseSchedule {
    fn default() -> Self {
        Self::uniform(Self::DEFAULT_STEPS).expect("non-empty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualSource {
    /// `|c_t - y|^2` against a supplied clean reference.
    Reference,
    /// `|n_t|^2`, the energy of the noise estimated at step `t`.
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiseReport {
    pub mode: AblationMode,
    pub step_sizes: Vec<f64>,
    pub residual_energy: Vec<f64>,
    pub residual_source: ResidualSource,
    pub gmm_per_step: Vec<Option<GmmParams>>,
    pub frozen: bool,
    /// Against the clean reference, when one was supplied.
    pub input_metrics: Option<MetricResult>,
    pub metrics: Option<MetricResult>,
    pub sample_rate_hz: u32,
    pub length: usize,
}

impl DenoiseReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DenoiseOptions<'a> {
    pub schedule: ReverseSchedule,
    /// Estimate once and reuse the estimate at every step.
    pub freeze: bool,
    pub reference: Option<&'a AudioClip>,
}

fn energy(x: impl Iterator<Item = f64>) -> f64 {
    x.map(|v| v * v).sum()
}

/// `c_0 = x`, `c_t = c_{t-1} - s_t * n_t` with `n_t` the estimate on
/// `c_{t-1}`; returns `c_T` cut back to the input length.
pub fn denoise<E: NoiseEstimator + ?Sized>(
    estimator: &E,
    x: &AudioClip,
    opts: &DenoiseOptions<'_>,
) -> Result<(AudioClip, DenoiseReport)> {
    if let Some(r) = opts.reference {
        if r.len() != x.len() {
            return Err(Error::Contract("reference length differs from input".into()));
        }
    }
    let (padded, original_len) = pad_to_multiple(x, estimator.length_multiple())?;
    let mut current = padded.into_samples();
    let mut residual_energy = Vec::with_capacity(opts.schedule.steps());
    let mut gmm_per_step = Vec::with_capacity(opts.schedule.steps());
    let mut frozen: Option<NoiseEstimate> = None;

    for &step in opts.schedule.step_sizes() {
        let est = match (&frozen, opts.freeze) {
            (Some(e), true) => e.clone(),
            _ => {
                let e = estimator.estimate(&current)?;
                if e.noise.len() != current.len() {
                    return Err(Error::Shape(format!(
                        "estimator returned {} samples for {}",
                        e.noise.len(),
                        current.len()
                    )));
                }
                if opts.freeze {
                    frozen = Some(e.clone());
                }
                e
            }
        };
        for (c, n) in current.iter_mut().zip(&est.noise) {
            *c -= step * n;
        }
        residual_energy.push(match opts.reference {
            Some(r) => energy(current.iter().zip(r.samples()).map(|(c, y)| c - y)),
            None => energy(est.noise[..original_len].iter().copied()),
        });
        gmm_per_step.push(est.gmm);
    }

    current.truncate(original_len);
    let y_hat = x.with_samples(current)?;
    let (input_metrics, metrics) = match opts.reference {
        Some(r) if r.energy() > 0.0 && !r.is_empty() => (
            Some(metrics::evaluate(r.samples(), x.samples())?),
            Some(metrics::evaluate(r.samples(), y_hat.samples())?),
        ),
        _ => (None, None),
    };
    let report = DenoiseReport {
        mode: estimator.mode(),
        step_sizes: opts.schedule.step_sizes().to_vec(),
        residual_energy,
        residual_source: if opts.reference.is_some() {
            ResidualSource::Reference
        } else {
            ResidualSource::Estimate
        },
        gmm_per_step,
        frozen: opts.freeze,
        input_metrics,
        metrics,
        sample_rate_hz: x.sample_rate_hz(),
        length: original_len,
    };
    Ok((y_hat, report))
}

/// EM-only baseline: one subtraction of the EM noise-floor estimate.
pub fn denoise_gmm_only(
    x: &AudioClip,
    k: usize,
    seed: u64,
    reference: Option<&AudioClip>,
) -> Result<(AudioClip, DenoiseReport)> {
    let opts = DenoiseOptions {
        schedule: ReverseSchedule::uniform(1)?,
        freeze: false,
        reference,
    };
    denoise(&EmNoiseEstimator { k, seed }, x, &opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCurve {
    pub index: usize,
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
    /// `pi_k N(a | mu_k, sigma2_k)` on the shared amplitude grid.
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseOverlay {
    pub estimated: Vec<f64>,
    pub truth: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub gmm: GmmParams,
    pub grid: Vec<f64>,
    pub components: Vec<ComponentCurve>,
    pub overlay: Option<NoiseOverlay>,
}

/// Grid spacing in units of the narrowest component's standard deviation.
const GRID_STEP_SIGMAS: f64 = 0.1;
const GRID_MIN_POINTS: usize = 2001;
const GRID_MAX_POINTS: usize = 2_000_000;

/// Weighted component densities on a uniform amplitude grid spanning
/// `mu_k +- 6 sigma_k` for every component.
pub fn decompose_report(gmm: &GmmParams, overlay: Option<NoiseOverlay>) -> DecompositionReport {
    let sigmas: Vec<f64> = gmm.variances().iter().map(|v| v.sqrt()).collect();
    let lo = (0..gmm.k())
        .map(|k| gmm.means()[k] - 6.0 * sigmas[k])
        .fold(f64::INFINITY, f64::min);
    let hi = (0..gmm.k())
        .map(|k| gmm.means()[k] + 6.0 * sigmas[k])
        .fold(f64::NEG_INFINITY, f64::max);
    let min_sigma = sigmas.iter().cloned().fold(f64::INFINITY, f64::min);
    let n = (((hi - lo) / (GRID_STEP_SIGMAS * min_sigma)).ceil() as usize + 1)
        .clamp(GRID_MIN_POINTS, GRID_MAX_POINTS);
    let h = (hi - lo) / (n - 1) as f64;
    let grid: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    let components = (0..gmm.k())
        .map(|k| ComponentCurve {
            index: k,
            weight: gmm.weights()[k],
            mean: gmm.means()[k],
            variance: gmm.variances()[k],
            density: grid
                .iter()
                .map(|&a| gmm.weights()[k] * normal_pdf(a, gmm.means()[k], gmm.variances()[k]))
                .collect(),
        })
        .collect();
    DecompositionReport {
        gmm: gmm.clone(),
        grid,
        components,
        overlay,
    }
}

impl DecompositionReport {
    /// `amplitude,density_1,...,density_K` rows.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("amplitude");
        for c in &self.components {
            out.push_str(&format!(",density_{}", c.index + 1));
        }
        out.push('\n');
        for (i, a) in self.grid.iter().enumerate() {
            out.push_str(&a.to_string());
            for c in &self.components {
                out.push(',');
                out.push_str(&c.density[i].to_string());
            }
            out.push('\n');
        }
        out
    }

    /// `sample,estimated[,true]` rows of the noise overlay.
    pub fn overlay_csv(&self) -> Option<String> {
        let ov = self.overlay.as_ref()?;
        let mut out = String::from(if ov.truth.is_some() {
            "sample,estimated,true\n"
        } else {
            "sample,estimated\n"
        });
        for (i, e) in ov.estimated.iter().enumerate() {
            match &ov.truth {
                Some(t) => out.push_str(&format!("{i},{e},{}\n", t[i])),
                None => out.push_str(&format!("{i},{e}\n")),
            }
        }
        Some(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    struct Fixed(Vec<f64>);

    impl NoiseEstimator for Fixed {
        fn estimate(&self, signal: &[f64]) -> Result<NoiseEstimate> {
            let mut n = self.0.clone();
            n.resize(signal.len(), 0.0);
            Ok(NoiseEstimate { noise: n, gmm: None })
        }

        fn mode(&self) -> AblationMode {
            AblationMode::Full
        }
    }

    fn clip(v: Vec<f64>) -> AudioClip {
        AudioClip::new(v, 16000).unwrap()
    }

    #[test]
    fn schedule_validation() {
        assert!(ReverseSchedule::new(vec![0.5, 0.5]).is_ok());
        assert!(ReverseSchedule::new(vec![0.5, 0.4]).is_err());
        assert!(ReverseSchedule::new(vec![1.5, -0.5]).is_err());
        assert!(ReverseSchedule::uniform(0).is_err());
        let s = ReverseSchedule::default();
        assert_eq!(s.steps(), 5);
        assert!((s.step_sizes().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_estimate_is_identity() {
        let x = clip((0..50).map(|i| (i as f64 * 0.3).sin()).collect());
        let (y, report) = denoise(&Fixed(vec![]), &x, &DenoiseOptions::default()).unwrap();
        assert_eq!(y, x);
        assert_eq!(report.residual_energy.len(), 5);
    }

    #[test]
    fn oracle_single_step_recovers_clean() {
        let clean: Vec<f64> = (0..40).map(|i| (i as f64 * 0.2).cos() * 0.4).collect();
        let noise: Vec<f64> = (0..40).map(|i| ((i * 7919) % 13) as f64 / 40.0 - 0.15).collect();
        let x = clip(clean.iter().zip(&noise).map(|(a, b)| a + b).collect());
        let truth: Vec<f64> = x.samples().iter().zip(&clean).map(|(a, b)| a - b).collect();
        let opts = DenoiseOptions {
            schedule: ReverseSchedule::uniform(1).unwrap(),
            ..DenoiseOptions::default()
        };
        let (y, _) = denoise(&Fixed(truth), &x, &opts).unwrap();
        for (a, b) in y.samples().iter().zip(&clean) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_estimates_are_schedule_invariant() {
        let x = clip((0..64).map(|i| (i as f64 * 0.1).sin()).collect());
        let est = Fixed((0..64).map(|i| 0.01 * i as f64).collect());
        let base = denoise(
            &est,
            &x,
            &DenoiseOptions {
                schedule: ReverseSchedule::uniform(1).unwrap(),
                ..DenoiseOptions::default()
            },
        )
        .unwrap()
        .0;
        for sizes in [vec![0.2; 5], vec![0.7, 0.1, 0.2], vec![0.01, 0.99]] {
            let opts = DenoiseOptions {
                schedule: ReverseSchedule::new(sizes).unwrap(),
                ..DenoiseOptions::default()
            };
            let y = denoise(&est, &x, &opts).unwrap().0;
            for (a, b) in y.samples().iter().zip(base.samples()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn untrained_model_is_rejected() {
        let cfg = crate::model::UNetConfig {
            depth: 1,
            filters: 2,
            kernel_size: 3,
            downsample_factor: 2,
            k: 2,
        };
        let state = ModelState::new(cfg, AblationMode::Full, 0).unwrap();
        let x = clip(vec![0.1; 8]);
        assert!(matches!(
            denoise(&state, &x, &DenoiseOptions::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gmm_only_removes_constant_offset() {
        let clean: Vec<f64> = (0..4000)
            .map(|i| 0.2 * (2.0 * PI * 300.0 * i as f64 / 16000.0).sin())
            .collect();
        let x = clip(clean.iter().map(|v| v + 0.6).collect());
        let reference = clip(clean.clone());
        let (y, report) = denoise_gmm_only(&x, 1, 3, Some(&reference)).unwrap();
        let before = metrics::sdr(&clean, x.samples()).unwrap();
        let after = metrics::sdr(&clean, y.samples()).unwrap();
        assert!(after > before + 10.0, "{before} -> {after}");
        assert_eq!(report.mode, AblationMode::GmmOnly);
        assert_eq!(report.residual_energy.len(), 1);

        let again = denoise_gmm_only(&x, 1, 3, Some(&reference)).unwrap().0;
        assert_eq!(again, y);
    }

    #[test]
    fn gmm_only_rejects_silence() {
        let x = clip(vec![0.0; 100]);
        assert!(matches!(
            denoise_gmm_only(&x, 2, 0, None),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn decomposition_masses_and_coverage() {
        let gmm = GmmParams::new(
            vec![0.1, 0.2, 0.3, 0.25, 0.15],
            vec![-1.0, -0.4, 0.0, 0.5, 1.2],
            vec![0.01, 0.05, 0.002, 0.1, 0.03],
        )
        .unwrap();
        let rep = decompose_report(&gmm, None);
        assert_eq!(rep.components.len(), 5);
        let h = rep.grid[1] - rep.grid[0];
        for c in &rep.components {
            let d = &c.density;
            let mass = h * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[d.len() - 1]));
            assert!((mass - c.weight).abs() < 1e-4, "{mass} vs {}", c.weight);
            let s = c.variance.sqrt();
            assert!(rep.grid[0] <= c.mean - 6.0 * s + 1e-12);
            assert!(*rep.grid.last().unwrap() >= c.mean + 6.0 * s - 1e-12);
        }
        let csv = rep.curves_csv();
        assert!(csv.starts_with("amplitude,density_1,density_2,density_3,density_4,density_5\n"));
        assert!(rep.overlay_csv().is_none());
    }
}
