//! Trains one model on the default synthetic suite and prints held-out
//! metrics for a few reverse schedules.
//!
//! cargo run --release -p diffgmm --example desk_suite -- [mode] [iterations] [filters] [ckpt]

use std::path::Path;
use std::time::Instant;

use diffgmm::config::RunConfig;
use diffgmm::denoiser::ReverseSchedule;
use diffgmm::harness::experiment::{evaluate_pairs, named_heldout, train_model, MeanMetrics};
use diffgmm::harness::SuiteSpec;

fn main() -> diffgmm::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = RunConfig {
        filters: 16,
        ..RunConfig::default()
    };
    if let Some(m) = args.first() {
        cfg.mode = m.parse()?;
    }
    if let Some(n) = args.get(1) {
        cfg.iterations = n.parse().expect("iterations");
    }
    if let Some(f) = args.get(2) {
        cfg.filters = f.parse().expect("filters");
    }
    let (train, heldout) = SuiteSpec::default().build()?;
    let heldout = named_heldout(&heldout);
    let t0 = Instant::now();
    let state = train_model(&cfg, &train)?;
    println!("{} trained {} iterations in {:.1} s", cfg.mode, cfg.iterations, t0.elapsed().as_secs_f64());
    for p in state.loss_trace() {
        println!("  iter {:5} loss {:.5}", p.iteration, p.loss);
    }
    for (steps, freeze) in [(1, false), (5, false), (5, true)] {
        let clips = evaluate_pairs(&state, &heldout, &ReverseSchedule::uniform(steps)?, freeze)?;
        let before = MeanMetrics::of(clips.iter().map(|c| &c.before));
        let after = MeanMetrics::of(clips.iter().map(|c| &c.after));
        println!(
            "T={steps} freeze={freeze}: SDR {:.2} -> {:.2} dB, SI-SNR {:.2} -> {:.2} dB",
            before.sdr_db, after.sdr_db, before.si_snr_db, after.si_snr_db
        );
    }
    if let Some(path) = args.get(3) {
        state.save(Path::new(path))?;
    }
    Ok(())
}
