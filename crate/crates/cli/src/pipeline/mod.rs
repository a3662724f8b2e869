//! Config-driven orchestration of the full experiment graph with
//! content-addressed stage caching and reproducibility manifests.

pub mod config;
pub mod digest;
pub mod manifest;
pub mod stages;

pub use config::{
    BaselineSpec, ClassifierGrid, CorpusSource, CvParams, FeatureParams, OccurrenceSource,
    PipelineConfig, SelectionScope, SelectorGrid, SplitParams, UndersampleParams,
};
pub use manifest::{RunManifest, StageRecord, StageStatus};
pub use stages::{run, CellOutcome};
