//! Synthetic clean/noise mixtures with known ground truth.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, NoisyPair};
use crate::error::{Error, Result};
use crate::gmm::{self, GmmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanKind {
    Sine,
    Chirp,
    Multitone,
    SpeechLikeAr,
}

impl CleanKind {
    pub const ALL: [CleanKind; 4] = [
        CleanKind::Sine,
        CleanKind::Chirp,
        CleanKind::Multitone,
        CleanKind::SpeechLikeAr,
    ];
}

fn default_rate() -> u32 {
    16_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub clean_kind: CleanKind,
    pub duration_s: f64,
    pub noise_gmm: GmmParams,
    pub target_input_snr_db: f64,
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub sample_rate_hz: u32,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(Error::Contract(format!("duration {} s", self.duration_s)));
        }
        if self.sample_rate_hz == 0 || !self.target_input_snr_db.is_finite() {
            return Err(Error::Contract("invalid sample rate or target SNR".into()));
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz as f64).round() as usize
    }
}

/// Ground-truth noise mixture of the default suite: three components at
/// `-1, 0, +1` with narrow spread, rescaled per clip to the target SNR.
pub fn default_noise_gmm() -> GmmParams {
    GmmParams::new(vec![0.25, 0.5, 0.25], vec![-1.0, 0.0, 1.0], vec![0.01, 0.01, 0.01])
        .expect("valid constant mixture")
}

/// Stable all-pole filter used for the speech-like generator: four
/// resonances (radius, normalized frequency) multiplied out into
/// order-8 recursion coefficients `a_1..a_8` of
/// `y[n] = w[n] + sum_i a_i y[n - i]`.
pub fn ar_coefficients() -> [f64; 8] {
    const POLES: [(f64, f64); 4] = [(0.985, 0.02), (0.97, 0.045), (0.95, 0.08), (0.93, 0.13)];
    // polynomial 1 - a_1 z^-1 - ... built as product of (1 - 2 r cos w z^-1 + r^2 z^-2)
    let mut poly = vec![1.0];
    for (r, f) in POLES {
        let w = 2.0 * PI * f;
        let sec = [1.0, -2.0 * r * w.cos(), r * r];
        let mut next = vec![0.0; poly.len() + 2];
        for (i, p) in poly.iter().enumerate() {
            for (j, s) in sec.iter().enumerate() {
                next[i + j] += p * s;
            }
        }
        poly = next;
    }
    let mut a = [0.0; 8];
    for i in 0..8 {
        a[i] = -poly[i + 1];
    }
    a
}

fn scale_to_peak(mut x: Vec<f64>, peak: f64) -> Vec<f64> {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
    x
}

pub fn clean_signal(kind: CleanKind, n: usize, rate: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let fs = rate as f64;
    let t = |i: usize| i as f64 / fs;
    let x: Vec<f64> = match kind {
        CleanKind::Sine => {
            let f = rng.gen_range(200.0..800.0);
            let ph = rng.gen_range(0.0..2.0 * PI);
            (0..n).map(|i| (2.0 * PI * f * t(i) + ph).sin()).collect()
        }
        CleanKind::Chirp => {
            let f0 = rng.gen_range(100.0..300.0);
            let f1 = rng.gen_range(1000.0..2000.0);
            let dur = n as f64 / fs;
            let rate = (f1 - f0) / dur.max(1e-9);
            (0..n)
                .map(|i| (2.0 * PI * (f0 * t(i) + 0.5 * rate * t(i) * t(i))).sin())
                .collect()
        }
        CleanKind::Multitone => {
            let tones: Vec<(f64, f64, f64)> = (0..3)
                .map(|_| {
                    (
                        rng.gen_range(150.0..1500.0),
                        rng.gen_range(0.3..1.0),
                        rng.gen_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            (0..n)
                .map(|i| {
                    tones
                        .iter()
                        .map(|(f, a, p)| a * (2.0 * PI * f * t(i) + p).sin())
                        .sum()
                })
                .collect()
        }
        CleanKind::SpeechLikeAr => {
            let a = ar_coefficients();
            let warmup = 2000;
            let mut hist = [0.0; 8];
            let syllable = rng.gen_range(3.0..6.0);
            let mut out = Vec::with_capacity(n);
            for i in 0..n + warmup {
                let w: f64 = rng.sample(StandardNormal);
                let y = w + a.iter().zip(&hist).map(|(c, h)| c * h).sum::<f64>();
                hist.rotate_right(1);
                hist[0] = y;
                if i >= warmup {
                    let tt = t(i - warmup);
                    out.push(y * (0.6 + 0.4 * (2.0 * PI * syllable * tt).sin()));
                }
            }
            out
        }
    };
    scale_to_peak(x, 0.5)
}

/// Clean signal plus i.i.d. mixture noise scaled to the target input SNR.
pub fn synth_pair(spec: &SynthSpec) -> Result<NoisyPair> {
    spec.validate()?;
    let n = spec.num_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let clean = clean_signal(spec.clean_kind, n, spec.sample_rate_hz, &mut rng);
    let e_clean: f64 = clean.iter().map(|v| v * v).sum();
    if e_clean == 0.0 {
        return Err(Error::Contract("clean signal has zero energy".into()));
    }
    let raw = gmm::sample_with(&spec.noise_gmm, n, &mut rng);
    let e_raw: f64 = raw.iter().map(|v| v * v).sum();
    if e_raw == 0.0 {
        return Err(Error::Contract("sampled noise has zero energy".into()));
    }
    let gain = (e_clean / (e_raw * 10f64.powf(spec.target_input_snr_db / 10.0))).sqrt();
    let noise: Vec<f64> = raw.iter().map(|v| v * gain).collect();
    let noisy: Vec<f64> = clean.iter().zip(&noise).map(|(c, e)| c + e).collect();
    let rate = spec.sample_rate_hz;
    // noise is re-derived as noisy - clean so the identity holds bit-exactly
    NoisyPair::new(AudioClip::new(noisy, rate)?, AudioClip::new(clean, rate)?)
}

/// Train/held-out synthetic suite description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub train_count: usize,
    pub heldout_count: usize,
    pub duration_s: f64,
    pub sample_rate_hz: u32,
    pub target_input_snr_db: f64,
    pub noise_gmm: GmmParams,
    pub seed: u64,
}

impl Default for SuiteSpec {
    fn default() -> Self {
        Self {
            train_count: 32,
            heldout_count: 8,
            duration_s: 2.0,
            sample_rate_hz: 16_000,
            target_input_snr_db: 0.0,
            noise_gmm: default_noise_gmm(),
            seed: 2024,
        }
    }
}

impl SuiteSpec {
    /// Spec of pair `index`; clean kinds cycle through [`CleanKind::ALL`].
    pub fn pair_spec(&self, index: usize) -> SynthSpec {
        SynthSpec {
            clean_kind: CleanKind::ALL[index % CleanKind::ALL.len()],
            duration_s: self.duration_s,
            noise_gmm: self.noise_gmm.clone(),
            target_input_snr_db: self.target_input_snr_db,
            seed: self.seed.wrapping_add(index as u64),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    /// `(train, heldout)`; held-out pairs use indices after the training ones.
    pub fn build(&self) -> Result<(Vec<NoisyPair>, Vec<NoisyPair>)> {
        let train = (0..self.train_count)
            .map(|i| synth_pair(&self.pair_spec(i)))
            .collect::<Result<_>>()?;
        let heldout = (self.train_count..self.train_count + self.heldout_count)
            .map(|i| synth_pair(&self.pair_spec(i)))
            .collect::<Result<_>>()?;
        Ok((train, heldout))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::sdr;

    fn spec(kind: CleanKind, snr: f64) -> SynthSpec {
        SynthSpec {
            clean_kind: kind,
            duration_s: 0.25,
            noise_gmm: default_noise_gmm(),
            target_input_snr_db: snr,
            seed: 17,
            sample_rate_hz: 16_000,
        }
    }

    #[test]
    fn target_snr_is_hit() {
        for kind in CleanKind::ALL {
            for snr in [0.0, 5.0, -3.0] {
                let p = synth_pair(&spec(kind, snr)).unwrap();
                let e_y = p.clean.energy();
                let e_n = p.noise.as_ref().unwrap().energy();
                assert!((10.0 * (e_y / e_n).log10() - snr).abs() < 0.01);
                let s = sdr(p.clean.samples(), p.noisy.samples()).unwrap();
                assert!((s - snr).abs() < 0.01);
            }
        }
    }

    #[test]
    fn noise_is_exact_difference() {
        let p = synth_pair(&spec(CleanKind::Chirp, 0.0)).unwrap();
        let n = p.noise.as_ref().unwrap().samples();
        for ((&n, &x), &y) in n.iter().zip(p.noisy.samples()).zip(p.clean.samples()) {
            assert_eq!(n, x - y);
        }
    }

    #[test]
    fn deterministic() {
        let s = spec(CleanKind::SpeechLikeAr, 0.0);
        assert_eq!(synth_pair(&s).unwrap(), synth_pair(&s).unwrap());
    }

    #[test]
    fn ar_filter_is_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = clean_signal(CleanKind::SpeechLikeAr, 20_000, 16_000, &mut rng);
        assert!(x.iter().all(|v| v.is_finite() && v.abs() <= 0.5 + 1e-12));
        assert!(x.iter().map(|v| v * v).sum::<f64>() > 1.0);
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut s = spec(CleanKind::Sine, 0.0);
        s.duration_s = 0.0;
        assert!(synth_pair(&s).is_err());
    }
}
