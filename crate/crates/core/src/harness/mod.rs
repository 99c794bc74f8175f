//! Synthetic data, dataset ingestion and experiment drivers.

pub mod dataset;
pub mod experiment;
pub mod synth;

pub use dataset::{ingest_dataset, Dataset, DatasetLayout, PairRef, SkipEntry};
pub use experiment::{
    evaluate_pairs, run_ablation, sweep_k, train_and_evaluate, train_model, AblationTable, ClipResult,
    ExperimentRecord, KSweep, MeanMetrics,
};
pub use synth::{synth_pair, CleanKind, SuiteSpec, SynthSpec};
