//! Dataset manifests, synthetic data, graph construction, training and
//! evaluation.

mod build;
mod manifest;
mod metrics;
mod synth;
mod train;

pub use build::{build_entries, build_graph, cache_key, read_graph, BuiltGraph, GraphCache, GraphContext, ManifestGraphs};
pub use manifest::{load_manifest, DatasetManifest, ManifestEntry, Split, MANIFEST_FORMAT};
pub use metrics::{predicted_label, MetricsReport};
pub use synth::{load_synth_recipe, plant_checkerboard, SYNTH_RECIPE, pool_dependency_fixture, raster_from_values, synth_dataset, synth_samples, SynthConfig, SynthSample, SENTENCE_POOL};
pub use train::{evaluate, history_csv, predict_all, train, EpochRecord, TrainConfig, TrainOutcome};
