//! Objective quality metrics in dB: SDR, SI-SNR and segmental SNR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reported in place of +inf when the residual vanishes.
pub const DB_CAP: f64 = 120.0;
pub const SEG_SNR_MIN_DB: f64 = -10.0;
pub const SEG_SNR_MAX_DB: f64 = 35.0;
pub const DEFAULT_SEG_FRAME: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub sdr_db: f64,
    pub si_snr_db: f64,
    pub seg_snr_db: f64,
    /// Set when the SDR or SI-SNR residual vanished and the cap was reported.
    pub capped: bool,
}

fn ratio_db(signal: f64, residual: f64) -> (f64, bool) {
    let db = 10.0 * (signal / residual).log10();
    if db.is_nan() || db >= DB_CAP {
        (DB_CAP, true)
    } else if db <= -DB_CAP {
        (-DB_CAP, false)
    } else {
        (db, false)
    }
}

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::Contract(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    Ok(())
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn sdr_capped(reference: &[f64], estimate: &[f64]) -> Result<(f64, bool)> {
    check_pair(reference, estimate)?;
    let e_ref = energy(reference);
    if e_ref == 0.0 {
        return Err(Error::Contract("SDR of a silent reference".into()));
    }
    let e_res: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(r, e)| (r - e).powi(2))
        .sum();
    Ok(ratio_db(e_ref, e_res))
}

/// `10 log10(|y|^2 / |y - y_hat|^2)`.
pub fn sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    sdr_capped(reference, estimate).map(|r| r.0)
}

fn si_snr_capped(reference: &[f64], estimate: &[f64]) -> Result<(f64, bool)> {
    check_pair(reference, estimate)?;
    let n = reference.len() as f64;
    let mr = reference.iter().sum::<f64>() / n;
    let me = estimate.iter().sum::<f64>() / n;
    let r: Vec<f64> = reference.iter().map(|v| v - mr).collect();
    let e: Vec<f64> = estimate.iter().map(|v| v - me).collect();
    let rr = energy(&r);
    if rr == 0.0 || energy(&e) == 0.0 {
        return Err(Error::Contract("SI-SNR needs non-zero energies".into()));
    }
    let alpha = r.iter().zip(&e).map(|(a, b)| a * b).sum::<f64>() / rr;
    let target = alpha * alpha * rr;
    let noise: f64 = r
        .iter()
        .zip(&e)
        .map(|(a, b)| (b - alpha * a).powi(2))
        .sum();
    Ok(ratio_db(target, noise))
}

/// Scale-invariant SNR after mean removal.
pub fn si_snr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    si_snr_capped(reference, estimate).map(|r| r.0)
}

/// Mean over full frames of the per-frame SNR, each clamped to
/// `[-10, 35]` dB. A trailing partial frame is dropped.
pub fn seg_snr(reference: &[f64], estimate: &[f64], frame: usize) -> Result<f64> {
    check_pair(reference, estimate)?;
    if frame == 0 || reference.len() < frame {
        return Err(Error::Contract(format!(
            "segmental SNR needs at least one frame of {frame} samples, got {}",
            reference.len()
        )));
    }
    let frames = reference.len() / frame;
    let total: f64 = reference
        .chunks_exact(frame)
        .zip(estimate.chunks_exact(frame))
        .map(|(r, e)| {
            let s = energy(r);
            let n: f64 = r.iter().zip(e).map(|(a, b)| (a - b).powi(2)).sum();
            let db = 10.0 * (s / n).log10();
            if db.is_nan() {
                // silent frame reproduced exactly
                SEG_SNR_MAX_DB
            } else {
                db.clamp(SEG_SNR_MIN_DB, SEG_SNR_MAX_DB)
            }
        })
        .sum();
    Ok(total / frames as f64)
}

pub fn evaluate(reference: &[f64], estimate: &[f64]) -> Result<MetricResult> {
    let (sdr_db, c1) = sdr_capped(reference, estimate)?;
    let (si_snr_db, c2) = si_snr_capped(reference, estimate)?;
    let frame = DEFAULT_SEG_FRAME.min(reference.len());
    let seg_snr_db = seg_snr(reference, estimate, frame)?;
    Ok(MetricResult {
        sdr_db,
        si_snr_db,
        seg_snr_db,
        capped: c1 || c2,
    })
}
