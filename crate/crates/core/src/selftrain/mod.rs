//! The self-training loop: train, score, pseudo-label, mix, retrain.

pub mod artifacts;
pub mod config;
pub mod manifest;
pub mod run;
pub mod trainer;

pub use artifacts::{curves_csv, report_text, ArtifactSink};
pub use config::{Ablation, BinningConfig, BinningKind, ConfidenceConfig, MixupConfig, PseudoConfig, RunConfig};
pub use manifest::{compare_manifests, deviation_ledger, Comparison, RunManifest};
pub use run::{
    build_partitions, build_round_sets, evaluate, run, run_from, IterationRecord, Partitions, RoundSets,
    RunCheckpoint, RunInputs, RunOutput,
};
pub use trainer::{total_loss, train_grea, train_round, train_step, RoundOutcome, TrainOptions};
