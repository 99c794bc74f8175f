//! Mono waveform container, WAV I/O, resampling and padding.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Peak level applied when an ingested clip exceeds full scale.
pub const NORMALIZE_PEAK: f64 = 0.99;

/// A mono waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::Contract("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i} is {}", samples[i])));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Rescales to a peak of [`NORMALIZE_PEAK`] when the clip clips.
    pub fn normalized(mut self) -> Self {
        let peak = self.peak();
        if peak > 1.0 {
            let g = NORMALIZE_PEAK / peak;
            self.samples.iter_mut().for_each(|s| *s *= g);
        }
        self
    }

    /// First `len` samples (or the whole clip when shorter).
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate_hz)
    }
}

/// Observation `noisy = clean + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyPair {
    pub noisy: AudioClip,
    pub clean: AudioClip,
    pub noise: Option<AudioClip>,
}

impl NoisyPair {
    /// Builds a pair and derives `noise = noisy - clean`.
    pub fn new(noisy: AudioClip, clean: AudioClip) -> Result<Self> {
        if noisy.len() != clean.len() || noisy.sample_rate_hz() != clean.sample_rate_hz() {
            return Err(Error::Contract(format!(
                "noisy ({} @ {} Hz) and clean ({} @ {} Hz) do not align",
                noisy.len(),
                noisy.sample_rate_hz(),
                clean.len(),
                clean.sample_rate_hz()
            )));
        }
        let noise = noisy
            .samples()
            .iter()
            .zip(clean.samples())
            .map(|(x, y)| x - y)
            .collect();
        let noise = Some(noisy.with_samples(noise)?);
        Ok(Self {
            noisy,
            clean,
            noise,
        })
    }

    /// `x - y`, recomputed when the cached copy is absent.
    pub fn true_noise(&self) -> Vec<f64> {
        match &self.noise {
            Some(n) => n.samples().to_vec(),
            None => self
                .noisy
                .samples()
                .iter()
                .zip(self.clean.samples())
                .map(|(x, y)| x - y)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

fn map_hound(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::FormatError(m) => Error::Format(format!("{}: {m}", path.display())),
        hound::Error::Unsupported => {
            Error::Unsupported(format!("{}: unsupported WAV feature", path.display()))
        }
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads PCM16 or float32 WAV (mono or stereo) into a mono clip.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if !(1..=2).contains(&channels) {
        return Err(Error::Unsupported(format!(
            "{}: {channels} channels",
            path.display()
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?}",
                path.display()
            )))
        }
    };
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(2)
            .map(|f| 0.5 * (f[0] + f[1]))
            .collect()
    };
    Ok(AudioClip::new(mono, spec.sample_rate)?.normalized())
}

pub fn write_wav(clip: &AudioClip, path: &Path, encoding: WavEncoding) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => hound::SampleFormat::Int,
            WavEncoding::Float32 => hound::SampleFormat::Float,
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| map_hound(path, e))?;
    for &s in clip.samples() {
        match encoding {
            WavEncoding::Pcm16 => {
                let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                w.write_sample(q)
            }
            WavEncoding::Float32 => w.write_sample(s as f32),
        }
        .map_err(|e| map_hound(path, e))?;
    }
    w.finalize().map_err(|e| map_hound(path, e))
}

/// Zero crossings of the sinc kernel kept on each side.
pub const SINC_HALF_TAPS: usize = 16;
const KAISER_BETA: f64 = 8.6;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kaiser(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / bessel_i0(KAISER_BETA)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Interpolation weights for an output instant at source position `t`,
/// returned as `(first_source_index, weights)`. Weights are renormalized
/// over the in-range taps so they sum to one.
pub fn resample_kernel(t: f64, cutoff: f64, source_len: usize) -> (usize, Vec<f64>) {
    let half_width = SINC_HALF_TAPS as f64 / cutoff;
    let lo = (t - half_width).ceil().max(0.0) as usize;
    let hi = ((t + half_width).floor() as isize).min(source_len as isize - 1);
    if hi < lo as isize {
        return (lo, Vec::new());
    }
    let mut w: Vec<f64> = (lo..=hi as usize)
        .map(|i| {
            let d = t - i as f64;
            cutoff * sinc(cutoff * d) * kaiser(d / half_width)
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total != 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    }
    (lo, w)
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
pub fn resample(clip: &AudioClip, target_rate_hz: u32) -> Result<AudioClip> {
    if target_rate_hz == 0 {
        return Err(Error::Contract("target sample rate must be positive".into()));
    }
    let src = clip.sample_rate_hz() as u64;
    let dst = target_rate_hz as u64;
    if src == dst {
        return Ok(clip.clone());
    }
    let n_in = clip.len() as u64;
    let n_out = ((n_in * dst + src / 2) / src) as usize;
    let ratio = src as f64 / dst as f64;
    let cutoff = (dst as f64 / src as f64).min(1.0);
    let x = clip.samples();
    let out = (0..n_out)
        .map(|j| {
            let t = j as f64 * ratio;
            let (lo, w) = resample_kernel(t, cutoff, x.len());
            w.iter().zip(&x[lo..]).map(|(a, b)| a * b).sum()
        })
        .collect();
    AudioClip::new(out, target_rate_hz)
}

/// Zero-pads the tail to a multiple of `multiple`; returns the original
/// length for later truncation.
pub fn pad_to_multiple(clip: &AudioClip, multiple: usize) -> Result<(AudioClip, usize)> {
    if multiple == 0 {
        return Err(Error::Contract("pad multiple must be >= 1".into()));
    }
    let n = clip.len();
    let padded = n.div_ceil(multiple) * multiple;
    let mut samples = clip.samples().to_vec();
    samples.resize(padded, 0.0);
    Ok((clip.with_samples(samples)?, n))
}

/// Non-overlapping segments of `len` samples; the tail is zero-padded.
pub fn segment(clip: &AudioClip, len: usize) -> Result<Vec<AudioClip>> {
    if len == 0 {
        return Err(Error::Contract("segment length must be positive".into()));
    }
    let (padded, _) = pad_to_multiple(clip, len)?;
    padded
        .samples()
        .chunks(len)
        .map(|c| clip.with_samples(c.to_vec()))
        .collect()
}
