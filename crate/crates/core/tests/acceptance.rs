//! Acceptance suite. Each test prints one `[criterion N] PASS|FAIL` line
//! to stderr (uncaptured) before asserting. Tests hold a shared lock so
//! that wall-clock limits are measured without interference.

mod common;

use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use diffgmm::audio::{read_wav, write_wav, AudioClip, WavEncoding};
use diffgmm::config::RunConfig;
use diffgmm::denoiser::{
    decompose_report, denoise, DenoiseOptions, EmNoiseEstimator, NoiseEstimate, NoiseEstimator, NoiseOverlay,
    ReverseSchedule,
};
use diffgmm::gmm::{self, best_permutation, elbo_decomposition, em_fit, EmOptions, GmmParams};
use diffgmm::harness::experiment::{evaluate_pairs, named_heldout, MeanMetrics};
use diffgmm::harness::{sweep_k, train_and_evaluate, train_model, ExperimentRecord, SuiteSpec};
use diffgmm::metrics::{seg_snr, si_snr, sdr};
use diffgmm::model::{AblationMode, ModelState};
use diffgmm::Result;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "[criterion {id}] {} {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

/// Configuration used for the desk-scale runs: default depth, kernel,
/// K and training schedule, narrower layers.
fn desk_config() -> RunConfig {
    RunConfig {
        filters: 16,
        ..RunConfig::default()
    }
}

struct FullRun {
    state: ModelState,
    record: ExperimentRecord,
    seconds: f64,
}

fn full_run() -> &'static FullRun {
    static RUN: OnceLock<FullRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let t0 = Instant::now();
        let (state, record) = train_and_evaluate(&SuiteSpec::default(), &desk_config()).unwrap();
        FullRun {
            state,
            record,
            seconds: t0.elapsed().as_secs_f64(),
        }
    })
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_gradient_suite() {
    let _g = serial();
    let t0 = Instant::now();
    let mut checks = common::gradcheck::primitive_checks();
    checks.extend(common::gradcheck::model_checks());
    let secs = t0.elapsed().as_secs_f64();
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed()).collect();
    let worst_prim = checks
        .iter()
        .filter(|c| !c.name.starts_with("model"))
        .map(|c| c.max_rel_err)
        .fold(0.0, f64::max);
    let worst_model = checks
        .iter()
        .filter(|c| c.name.starts_with("model"))
        .map(|c| c.max_rel_err)
        .fold(0.0, f64::max);
    let pass = failed.is_empty() && secs < 60.0;
    report(
        1,
        "gradient suite",
        pass,
        &format!(
            "{} checks, worst primitive rel err {worst_prim:.2e} (< 1e-4), worst model rel err {worst_model:.2e} (< 1e-3), {secs:.1} s (< 60 s)",
            checks.len()
        ),
    );
    assert!(failed.is_empty(), "failed checks: {failed:?}");
    assert!(secs < 60.0);
}

// ---------------------------------------------------------------- 2

fn random_gmm(rng: &mut ChaCha8Rng, k: usize) -> GmmParams {
    let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = raw.iter().sum();
    GmmParams::new(
        raw.iter().map(|w| w / s).collect(),
        (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        (0..k).map(|_| rng.gen_range(0.01..2.0)).collect(),
    )
    .unwrap()
}

/// Composite trapezoid rule on `[lo, hi]` with `n` intervals.
fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|i| f(lo + i as f64 * h)).sum();
    h * (inner + 0.5 * (f(lo) + f(hi)))
}

fn naive_log_likelihood(p: &GmmParams, data: &[f64]) -> f64 {
    let mut total = 0.0;
    for &x in data {
        let mut d = 0.0;
        for k in 0..p.k() {
            let v = p.variances()[k];
            d += p.weights()[k] * (-(x - p.means()[k]).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        }
        total += d.ln();
    }
    total
}

#[test]
fn criterion_2_gmm_suite() {
    let _g = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(42);

    let mut worst_mass: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.gen_range(1..=6);
        let p = random_gmm(&mut rng, k);
        let lo = (0..k).map(|i| p.means()[i] - 12.0 * p.variances()[i].sqrt()).fold(f64::INFINITY, f64::min);
        let hi = (0..k).map(|i| p.means()[i] + 12.0 * p.variances()[i].sqrt()).fold(f64::NEG_INFINITY, f64::max);
        let mass = trapezoid(|x| gmm::density(&p, x), lo, hi, 200_000);
        worst_mass = worst_mass.max((mass - 1.0).abs());
    }

    let mut worst_elbo: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.gen_range(1..=5);
        let p = random_gmm(&mut rng, k);
        let data: Vec<f64> = (0..200).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let q: Vec<Vec<f64>> = (0..data.len())
            .map(|_| {
                let r: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = r.iter().sum();
                r.iter().map(|v| v / s).collect()
            })
            .collect();
        let split = elbo_decomposition(&p, &data, &q).unwrap();
        let ll = naive_log_likelihood(&p, &data);
        worst_elbo = worst_elbo.max((split.lower_bound + split.kl - ll).abs());
        assert!(split.kl >= -1e-12);
    }

    let mut worst_drop: f64 = 0.0;
    for d in 0..100u64 {
        let mut r = ChaCha8Rng::seed_from_u64(1000 + d);
        let k_true = r.gen_range(1..=4);
        let truth = random_gmm(&mut r, k_true);
        let data = gmm::sample_with(&truth, 300, &mut r);
        let fit = em_fit(
            &data,
            &EmOptions {
                k: 1 + (d as usize % 4),
                seed: d,
                ..EmOptions::default()
            },
        )
        .unwrap();
        for w in fit.log_likelihood_trace.windows(2) {
            let scale = w[0].abs().max(1.0);
            worst_drop = worst_drop.max((w[0] - w[1]) / scale);
        }
    }
    let monotone = worst_drop <= 1e-12;

    let truth = GmmParams::new(vec![0.4, 0.6], vec![-1.0, 2.0], vec![0.25, 0.5]).unwrap();
    let data = gmm::sample(&truth, 5000, 7);
    let fit = em_fit(
        &data,
        &EmOptions {
            k: 2,
            seed: 3,
            ..EmOptions::default()
        },
    )
    .unwrap();
    let aligned = fit.params.permuted(&best_permutation(&truth, &fit.params));
    let mean_err = (0..2)
        .map(|i| (aligned.means()[i] - truth.means()[i]).abs())
        .fold(0.0, f64::max);

    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_mass <= 1e-6 && worst_elbo <= 1e-8 && monotone && mean_err <= 0.05 && secs < 120.0;
    report(
        2,
        "GMM suite",
        pass,
        &format!(
            "quadrature |mass-1| {worst_mass:.1e} (<= 1e-6), ELBO identity err {worst_elbo:.1e} (<= 1e-8), \
             EM worst relative drop {worst_drop:.1e} over 100 datasets, two-cluster mean err {mean_err:.4} (<= 0.05), {secs:.1} s (< 120 s)"
        ),
    );
    assert!(worst_mass <= 1e-6);
    assert!(worst_elbo <= 1e-8);
    assert!(monotone);
    assert!(mean_err <= 0.05);
    assert!(secs < 120.0);
}

// ---------------------------------------------------------------- 3

struct Oracle(Vec<f64>);

impl NoiseEstimator for Oracle {
    fn estimate(&self, signal: &[f64]) -> Result<NoiseEstimate> {
        let mut noise = self.0.clone();
        noise.resize(signal.len(), 0.0);
        Ok(NoiseEstimate { noise, gmm: None })
    }

    fn length_multiple(&self) -> usize {
        64
    }

    fn mode(&self) -> AblationMode {
        AblationMode::Full
    }
}

#[test]
fn criterion_3_oracle_denoising() {
    let _g = serial();
    let t0 = Instant::now();
    let (_, heldout) = SuiteSpec::default().build().unwrap();
    let mut worst_oracle: f64 = 0.0;
    let mut identity = true;
    for pair in &heldout {
        let truth = pair.true_noise();
        let peak = pair.noisy.peak();
        let single = DenoiseOptions {
            schedule: ReverseSchedule::uniform(1).unwrap(),
            ..DenoiseOptions::default()
        };
        let (y, _) = denoise(&Oracle(truth.clone()), &pair.noisy, &single).unwrap();
        let err = y
            .samples()
            .iter()
            .zip(pair.clean.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_oracle = worst_oracle.max(err / (f64::EPSILON * peak));

        let (z, report) = denoise(&Oracle(vec![]), &pair.noisy, &DenoiseOptions::default()).unwrap();
        identity &= z.samples().iter().zip(pair.noisy.samples()).all(|(a, b)| a.to_bits() == b.to_bits());
        identity &= report.residual_energy.len() == 5 && z.sample_rate_hz() == pair.noisy.sample_rate_hz();
    }
    let secs = t0.elapsed().as_secs_f64();
    let exact = worst_oracle <= 1.0;
    let pass = exact && identity && secs < 5.0;
    report(
        3,
        "oracle denoising",
        pass,
        &format!(
            "oracle max error {worst_oracle:.2} ulp-of-peak (<= 1), zero estimator bit-identical: {identity}, {secs:.2} s (< 5 s)"
        ),
    );
    assert!(exact && identity && secs < 5.0);
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_4_end_to_end_training() {
    let _g = serial();
    let run = full_run();
    let improvement = run.record.mean_after.si_snr_db - run.record.mean_before.si_snr_db;

    // same seed, same result: two short trainings and a repeated evaluation
    let (train, heldout) = SuiteSpec::default().build().unwrap();
    let short = RunConfig {
        iterations: 50,
        ..desk_config()
    };
    let a = train_model(&short, &train).unwrap();
    let b = train_model(&short, &train).unwrap();
    let params_equal = a.params() == b.params() && a.loss_trace() == b.loss_trace();
    let heldout = named_heldout(&heldout);
    let again = evaluate_pairs(&run.state, &heldout, &ReverseSchedule::default(), false).unwrap();
    let eval_equal = again == run.record.clips;
    let deterministic = params_equal && eval_equal;

    let pass = improvement >= 5.0 && run.seconds <= 1800.0 && deterministic;
    report(
        4,
        "end-to-end desk-scale training",
        pass,
        &format!(
            "held-out mean SI-SNR {:.2} -> {:.2} dB (improvement {improvement:.2} dB, >= 5), \
             5000 iterations + evaluation in {:.0} s (<= 1800 s), deterministic: {deterministic}",
            run.record.mean_before.si_snr_db, run.record.mean_after.si_snr_db, run.seconds
        ),
    );
    assert!(improvement >= 5.0);
    assert!(run.seconds <= 1800.0);
    assert!(deterministic);
}

// ---------------------------------------------------------------- 5

fn single_shot(state: &ModelState, heldout: &[(String, diffgmm::audio::NoisyPair)]) -> f64 {
    let clips = evaluate_pairs(state, heldout, &ReverseSchedule::uniform(1).unwrap(), false).unwrap();
    MeanMetrics::of(clips.iter().map(|c| &c.after)).sdr_db
}

#[test]
fn criterion_5_ablation_ordering() {
    let _g = serial();
    let suite = SuiteSpec::default();
    let cfg = desk_config();
    let full = full_run();
    let (diff_state, diff) = train_and_evaluate(
        &suite,
        &RunConfig {
            mode: AblationMode::DiffusionOnly,
            ..cfg.clone()
        },
    )
    .unwrap();
    let (_, heldout) = suite.build().unwrap();
    let heldout = named_heldout(&heldout);
    let em = EmNoiseEstimator { k: cfg.k, seed: cfg.seed };
    let gmm_clips = evaluate_pairs(&em, &heldout, &ReverseSchedule::uniform(1).unwrap(), false).unwrap();
    let gmm_only = MeanMetrics::of(gmm_clips.iter().map(|c| &c.after)).sdr_db;

    let f = full.record.mean_after.sdr_db;
    let d = diff.mean_after.sdr_db;
    let pass = f >= d && f >= gmm_only;
    report(
        5,
        "ablation ordering",
        pass,
        &format!(
            "mean SDR full {f:.2} dB, diffusion_only {d:.2} dB, gmm_only {gmm_only:.2} dB (input {:.2} dB); \
             single-step reference: full {:.2} dB, diffusion_only {:.2} dB",
            full.record.mean_before.sdr_db,
            single_shot(&full.state, &heldout),
            single_shot(&diff_state, &heldout)
        ),
    );
    assert!(f >= d, "full {f} < diffusion_only {d}");
    assert!(f >= gmm_only, "full {f} < gmm_only {gmm_only}");
}

// ---------------------------------------------------------------- 6

/// Per-K training budget of the sweep.
const SWEEP_ITERATIONS: usize = 500;

#[test]
fn criterion_6_k_sweep() {
    let _g = serial();
    let t0 = Instant::now();
    let ks: Vec<usize> = (1..=8).collect();
    let cfg = RunConfig {
        iterations: SWEEP_ITERATIONS,
        ..desk_config()
    };
    let sweep = sweep_k(&ks, &SuiteSpec::default(), &cfg).unwrap();
    let csv = sweep.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    let rows_ok = lines.len() == 9
        && lines[0] == "k,mean_sdr_db,mean_si_snr_db"
        && sweep.rows.iter().map(|r| r.k).eq(ks.iter().copied());
    let best = sweep
        .rows
        .iter()
        .max_by(|a, b| a.mean_sdr_db.total_cmp(&b.mean_sdr_db))
        .unwrap();
    let best_ok = best.mean_sdr_db == sweep.rows.iter().find(|r| r.k == sweep.best_k).unwrap().mean_sdr_db;
    let table: Vec<String> = sweep.rows.iter().map(|r| format!("K={} {:.2}", r.k, r.mean_sdr_db)).collect();
    report(
        6,
        "K sweep",
        rows_ok && best_ok,
        &format!(
            "8-row CSV, mean SDR dB [{}], best K = {} ({SWEEP_ITERATIONS} iterations per K, {:.0} s)",
            table.join(", "),
            sweep.best_k,
            t0.elapsed().as_secs_f64()
        ),
    );
    assert!(rows_ok && best_ok);
}

// ---------------------------------------------------------------- 7

fn naive_sdr(y: &[f64], e: &[f64]) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for i in 0..y.len() {
        s += y[i] * y[i];
        n += (y[i] - e[i]) * (y[i] - e[i]);
    }
    10.0 * (s / n).log10()
}

fn naive_si_snr(y: &[f64], e: &[f64]) -> f64 {
    let len = y.len() as f64;
    let my = y.iter().sum::<f64>() / len;
    let me = e.iter().sum::<f64>() / len;
    let (mut dot, mut yy) = (0.0, 0.0);
    for i in 0..y.len() {
        dot += (y[i] - my) * (e[i] - me);
        yy += (y[i] - my) * (y[i] - my);
    }
    let (mut t, mut n) = (0.0, 0.0);
    for i in 0..y.len() {
        let proj = dot / yy * (y[i] - my);
        t += proj * proj;
        n += (e[i] - me - proj) * (e[i] - me - proj);
    }
    10.0 * (t / n).log10()
}

fn naive_seg_snr(y: &[f64], e: &[f64], frame: usize) -> f64 {
    let frames = y.len() / frame;
    let mut total = 0.0;
    for f in 0..frames {
        let (mut s, mut n) = (0.0, 0.0);
        for i in f * frame..(f + 1) * frame {
            s += y[i] * y[i];
            n += (y[i] - e[i]) * (y[i] - e[i]);
        }
        total += (10.0 * (s / n).log10()).clamp(-10.0, 35.0);
    }
    total / frames as f64
}

#[test]
fn criterion_7_metrics() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let y: Vec<f64> = (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y_plus: Vec<f64> = y.iter().map(|v| v + 0.1 * v).collect();
    let twenty = (sdr(&y, &y_plus).unwrap() - 20.0).abs();

    let mut scale_err: f64 = 0.0;
    let mut oracle_err: f64 = 0.0;
    for trial in 0..20 {
        let e: Vec<f64> = y.iter().map(|v| v + rng.gen_range(-0.5..0.5) * (trial as f64 + 1.0) / 10.0).collect();
        let base = si_snr(&y, &e).unwrap();
        for s in [1e-3, 0.5, 3.0, 1e3] {
            let scaled: Vec<f64> = e.iter().map(|v| v * s).collect();
            scale_err = scale_err.max((si_snr(&y, &scaled).unwrap() - base).abs());
        }
        oracle_err = oracle_err
            .max((sdr(&y, &e).unwrap() - naive_sdr(&y, &e)).abs())
            .max((base - naive_si_snr(&y, &e)).abs())
            .max((seg_snr(&y, &e, 512).unwrap() - naive_seg_snr(&y, &e, 512)).abs());
    }
    let pass = twenty <= 1e-9 && scale_err <= 1e-9 && oracle_err <= 1e-9;
    report(
        7,
        "metrics",
        pass,
        &format!(
            "|sdr(y, 1.1y) - 20| = {twenty:.1e} (<= 1e-9), SI-SNR scale drift {scale_err:.1e} dB (<= 1e-9), \
             max deviation from naive loops {oracle_err:.1e} dB"
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 8

#[test]
fn criterion_8_io() {
    let _g = serial();
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let samples: Vec<f64> = (0..20_000).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect();
    let clip = AudioClip::new(samples.clone(), 16_000).unwrap();

    let f32_path = dir.path().join("f32.wav");
    write_wav(&clip, &f32_path, WavEncoding::Float32).unwrap();
    let back = read_wav(&f32_path).unwrap();
    let float_exact = back.sample_rate_hz() == 16_000
        && back.samples().iter().zip(&samples).all(|(a, b)| a.to_bits() == b.to_bits())
        && back.len() == samples.len();

    let pcm_path = dir.path().join("pcm.wav");
    write_wav(&clip, &pcm_path, WavEncoding::Pcm16).unwrap();
    let back = read_wav(&pcm_path).unwrap();
    let pcm_err = back
        .samples()
        .iter()
        .zip(&samples)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let pcm_ok = back.len() == samples.len() && pcm_err <= 1.0 / 32768.0;

    let mut state = ModelState::new(desk_config().unet(), AblationMode::Full, 8).unwrap();
    let (train, heldout) = SuiteSpec {
        train_count: 2,
        heldout_count: 1,
        duration_s: 0.25,
        ..SuiteSpec::default()
    }
    .build()
    .unwrap();
    state
        .train_epoch(
            &train,
            &diffgmm::model::TrainOptions {
                iterations: 5,
                trace_every: 5,
                ..Default::default()
            },
        )
        .unwrap();
    let ckpt = dir.path().join("model.ckpt");
    state.save(&ckpt).unwrap();
    let loaded = ModelState::load(&ckpt).unwrap();
    let x = &heldout[0].noisy.samples()[..3968];
    let (a, b) = (state.forward(x).unwrap(), loaded.forward(x).unwrap());
    let ckpt_ok = a
        .noise_estimate
        .iter()
        .zip(&b.noise_estimate)
        .all(|(p, q)| p.to_bits() == q.to_bits())
        && a.gmm == b.gmm;

    let pass = float_exact && pcm_ok && ckpt_ok;
    report(
        8,
        "I/O",
        pass,
        &format!(
            "float32 WAV sample-exact: {float_exact}, PCM16 max error {:.3} LSB (<= 1), checkpoint forward bit-identical: {ckpt_ok}",
            pcm_err * 32768.0
        ),
    );
    assert!(pass);
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_decomposition_report() {
    let _g = serial();
    let run = full_run();
    let (_, heldout) = SuiteSpec::default().build().unwrap();
    let pair = &heldout[0];
    let m = run.state.config().length_multiple();
    let len = pair.noisy.len() / m * m;
    let out = run.state.forward(&pair.noisy.samples()[..len]).unwrap();
    let gmm = out.gmm.clone().unwrap();
    let truth = pair.true_noise()[..len].to_vec();
    let rep = decompose_report(
        &gmm,
        Some(NoiseOverlay {
            estimated: out.noise_estimate.clone(),
            truth: Some(truth),
        }),
    );

    let h = rep.grid[1] - rep.grid[0];
    let mut worst: f64 = 0.0;
    for c in &rep.components {
        let d = &c.density;
        let mass = h * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[d.len() - 1]));
        worst = worst.max((mass - gmm.weights()[c.index]).abs());
    }
    let overlay_ok = rep
        .overlay
        .as_ref()
        .is_some_and(|o| o.estimated.len() == len && o.truth.as_ref().is_some_and(|t| t.len() == len))
        && rep.overlay_csv().is_some_and(|csv| csv.lines().count() == len + 1);
    let five = rep.components.len() == 5 && gmm.k() == 5;
    let echoed = rep
        .components
        .iter()
        .all(|c| c.weight == gmm.weights()[c.index] && c.mean == gmm.means()[c.index] && c.variance == gmm.variances()[c.index]);
    let pass = five && echoed && worst <= 1e-4 && overlay_ok;
    let weights: Vec<String> = gmm.weights().iter().map(|w| format!("{w:.3}")).collect();
    report(
        9,
        "decomposition report",
        pass,
        &format!(
            "{} curves, pi = [{}], max |mass - pi_k| {worst:.1e} (<= 1e-4), overlay of {len} samples: {overlay_ok}",
            rep.components.len(),
            weights.join(", ")
        ),
    );
    assert!(pass);
}
