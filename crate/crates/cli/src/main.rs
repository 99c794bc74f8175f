use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use diffgmm::audio::{read_wav, write_wav, NoisyPair, WavEncoding};
use diffgmm::config::RunConfig;
use diffgmm::denoiser::{decompose_report, denoise, DenoiseOptions, NoiseOverlay, ReverseSchedule};
use diffgmm::gmm::{em_fit, EmOptions};
use diffgmm::harness::{
    evaluate_pairs, ingest_dataset, run_ablation, synth_pair, sweep_k, train_model, DatasetLayout,
    ExperimentRecord, SuiteSpec, SynthSpec,
};
use diffgmm::model::{AblationMode, LossKind, ModelState};
use diffgmm::{Error, Result};

#[derive(Parser)]
#[command(name = "diffgmm", version, about = "GMM-headed 1-D U-Net audio denoiser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint plus JSON sidecar.
    Train(TrainArgs),
    /// Denoise one WAV file with a trained checkpoint.
    Denoise(DenoiseArgs),
    /// Evaluate a checkpoint on a paired dataset.
    Eval(EvalArgs),
    /// Fit a GMM to the samples of a WAV file with EM.
    GmmFit(GmmFitArgs),
    /// Train one model per K on the synthetic suite and tabulate mean SDR.
    SweepK(SweepArgs),
    /// Compare gmm_only, diffusion_only and full on the synthetic suite.
    Ablate(AblateArgs),
    /// Render a synthetic pair or suite to WAV files.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Key-value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Suite description (JSON); defaults to the built-in suite.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Training iterations per model.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root with noisy/clean pairs.
    #[arg(long, conflicts_with = "synth", required_unless_present = "synth")]
    data: Option<PathBuf>,
    #[arg(long, default_value = "paired_dirs")]
    layout: DatasetLayout,
    /// Synthetic suite description (JSON); trains on its training split.
    #[arg(long)]
    synth: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<AblationMode>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ReverseSchedule::DEFAULT_STEPS)]
    steps: usize,
    /// Estimate once and reuse it at every step.
    #[arg(long)]
    freeze: bool,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Clean reference for metrics and residual energies.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Per-component density curves (CSV) of the last step's mixture.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Estimated vs true noise (CSV); needs --reference.
    #[arg(long, requires = "reference")]
    overlay: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "paired_dirs")]
    layout: DatasetLayout,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = ReverseSchedule::DEFAULT_STEPS)]
    steps: usize,
    /// Full experiment record (JSON).
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Args)]
struct GmmFitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = diffgmm::gmm::DEFAULT_K)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6,7,8")]
    ks: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    exp: ExperimentArgs,
}

#[derive(Args)]
struct SynthArgs {
    /// A single pair spec or a suite spec (JSON).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SynthInput {
    Pair(SynthSpec),
    Suite(SuiteSpec),
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    let cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.with_env()
}

fn load_suite(path: Option<&Path>) -> Result<SuiteSpec> {
    match path {
        Some(p) => Ok(serde_json::from_str(&read_text(p)?)?),
        None => Ok(SuiteSpec::default()),
    }
}

fn experiment_config(exp: &ExperimentArgs) -> Result<(RunConfig, SuiteSpec)> {
    let mut cfg = load_config(exp.config.as_deref())?;
    if let Some(n) = exp.iters {
        cfg.iterations = n;
    }
    if let Some(s) = exp.seed {
        cfg.seed = s;
    }
    Ok((cfg, load_suite(exp.suite.as_deref())?))
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(m) = a.mode {
        cfg.mode = m;
    }
    if let Some(l) = a.loss {
        cfg.loss = l;
    }
    if let Some(n) = a.iters {
        cfg.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let pairs: Vec<NoisyPair> = match (&a.data, &a.synth) {
        (Some(root), _) => {
            let ds = ingest_dataset(root, a.layout)?;
            for s in &ds.skipped {
                eprintln!("skipped {}: {}", s.path.display(), s.reason);
            }
            ds.pairs.iter().map(|p| p.load()).collect::<Result<_>>()?
        }
        (None, Some(spec)) => load_suite(Some(spec))?.build()?.0,
        (None, None) => unreachable!("clap requires one source"),
    };
    let started = Instant::now();
    let state = train_model(&cfg, &pairs)?;
    state.save(&a.out)?;
    let last = state.loss_trace().last().map(|t| t.loss);
    eprintln!(
        "trained {} iterations in {:.1} s, final loss {:?}",
        state.iteration(),
        started.elapsed().as_secs_f64(),
        last
    );
    Ok(())
}

fn denoise_cmd(a: DenoiseArgs) -> Result<()> {
    let state = ModelState::load(&a.ckpt)?;
    let x = read_wav(&a.input)?;
    let reference = a.reference.as_deref().map(read_wav).transpose()?;
    let opts = DenoiseOptions {
        schedule: ReverseSchedule::uniform(a.steps)?,
        freeze: a.freeze,
        reference: reference.as_ref(),
    };
    let (y_hat, report) = denoise(&state, &x, &opts)?;
    write_wav(&y_hat, &a.out, WavEncoding::Float32)?;
    if let Some(p) = &a.report {
        write_text(p, &report.to_json()?)?;
    }
    if a.curves.is_some() || a.overlay.is_some() {
        let gmm = report
            .gmm_per_step
            .last()
            .cloned()
            .flatten()
            .ok_or_else(|| Error::Contract(format!("{} mode has no mixture to decompose", state.mode())))?;
        let overlay = reference.as_ref().map(|r| NoiseOverlay {
            estimated: x.samples().iter().zip(y_hat.samples()).map(|(a, b)| a - b).collect(),
            truth: Some(x.samples().iter().zip(r.samples()).map(|(a, b)| a - b).collect()),
        });
        let rep = decompose_report(&gmm, overlay);
        if let Some(p) = &a.curves {
            write_text(p, &rep.curves_csv())?;
        }
        if let (Some(p), Some(csv)) = (&a.overlay, rep.overlay_csv()) {
            write_text(p, &csv)?;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let started = Instant::now();
    let state = ModelState::load(&a.ckpt)?;
    let ds = ingest_dataset(&a.data, a.layout)?;
    let pairs = ds
        .pairs
        .iter()
        .map(|p| Ok((p.noisy.display().to_string(), p.load()?)))
        .collect::<Result<Vec<_>>>()?;
    let clips = evaluate_pairs(&state, &pairs, &ReverseSchedule::uniform(a.steps)?, false)?;
    let snapshot = serde_json::json!({
        "checkpoint": a.ckpt,
        "data": a.data,
        "layout": a.layout,
        "steps": a.steps,
        "model": state.sidecar().config,
    });
    let mut record = ExperimentRecord::new("eval", snapshot, clips, started);
    if a.no_timestamp {
        record = record.without_timestamps();
    }
    write_text(&a.out, &record.clips_csv())?;
    if let Some(p) = &a.record {
        write_text(p, &record.to_json()?)?;
    }
    eprintln!(
        "{} clips: mean SDR {:.2} dB -> {:.2} dB",
        record.clips.len(),
        record.mean_before.sdr_db,
        record.mean_after.sdr_db
    );
    Ok(())
}

fn gmm_fit(a: GmmFitArgs) -> Result<()> {
    let x = read_wav(&a.input)?;
    let fit = em_fit(
        x.samples(),
        &EmOptions {
            k: a.k,
            seed: a.seed,
            ..EmOptions::default()
        },
    )?;
    write_text(&a.out, &fit.params.to_json()?)?;
    if let Some(p) = &a.curves {
        write_text(p, &decompose_report(&fit.params, None).curves_csv())?;
    }
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let (cfg, suite) = experiment_config(&a.exp)?;
    let result = sweep_k(&a.ks, &suite, &cfg)?;
    write_text(&a.out, &result.to_csv())?;
    println!("best_k={}", result.best_k);
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let (cfg, suite) = experiment_config(&a.exp)?;
    let table = run_ablation(&suite, &cfg)?;
    write_text(&a.out, &table.to_csv())?;
    Ok(())
}

fn write_pair(dir: &Path, name: &str, pair: &NoisyPair) -> Result<()> {
    for (sub, clip) in [("noisy", &pair.noisy), ("clean", &pair.clean)] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        write_wav(clip, &d.join(format!("{name}.wav")), WavEncoding::Float32)?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    match serde_json::from_str::<SynthInput>(&read_text(&a.spec)?)? {
        SynthInput::Pair(spec) => write_pair(&a.out, "pair", &synth_pair(&spec)?),
        SynthInput::Suite(suite) => {
            let (train, heldout) = suite.build()?;
            for (split, pairs) in [("train", &train), ("heldout", &heldout)] {
                for (i, p) in pairs.iter().enumerate() {
                    write_pair(&a.out.join(split), &format!("{split}_{i:03}"), p)?;
                }
            }
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite(_) => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Denoise(a) => denoise_cmd(a),
        Command::Eval(a) => eval(a),
        Command::GmmFit(a) => gmm_fit(a),
        Command::SweepK(a) => sweep(a),
        Command::Ablate(a) => ablate(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
