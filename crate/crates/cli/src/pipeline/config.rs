//! Pipeline configuration: one JSON document, all seeds explicit.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use finegrain::features::ScoreMethod;
use finegrain::learn::{ClassifierKind, OptimizerOptions, Penalty, TreeOptions};
use finegrain::recognizer::Granularity;
use finegrain::synth::SynthSpec;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum CorpusSource {
    /// Retrieve the corpus from an E-utilities endpoint.
    Fetch {
        endpoint: String,
        page_size: usize,
        batch_size: usize,
    },
    /// Load an existing JSONL corpus.
    File { path: PathBuf },
    /// Generate a synthetic corpus (the golden labels come with it).
    Synth { spec: SynthSpec },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum OccurrenceSource {
    /// The built-in dictionary recognizer.
    Builtin {
        granularity: Granularity,
        /// Extra concept registry supplying non-descriptor concepts.
        #[serde(default)]
        aux_dictionary: Option<PathBuf>,
    },
    /// Import externally produced annotations.
    Import { path: PathBuf },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SplitParams {
    pub ma1_n: usize,
    pub ma2_n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UndersampleParams {
    pub target: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionScope {
    /// One feature set shared by every one-vs-rest model (max-aggregated
    /// scores).
    Shared,
    /// Each label's model gets its own top-k features.
    PerLabel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectorGrid {
    pub methods: Vec<ScoreMethod>,
    pub k: Vec<usize>,
    #[serde(default = "default_exclusion_flags")]
    pub exclude_ct_concepts: Vec<bool>,
    #[serde(default = "default_scope")]
    pub scope: SelectionScope,
}

fn default_exclusion_flags() -> Vec<bool> {
    vec![false]
}

fn default_scope() -> SelectionScope {
    SelectionScope::Shared
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierGrid {
    pub classifiers: Vec<ClassifierKind>,
    #[serde(default = "default_penalties")]
    pub penalties: Vec<Penalty>,
    pub c: Vec<f64>,
    #[serde(default)]
    pub tree: TreeOptions,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
}

fn default_penalties() -> Vec<Penalty> {
    vec![Penalty::L2]
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureParams {
    #[serde(default = "default_min_token_df")]
    pub min_token_df: usize,
}

fn default_min_token_df() -> usize {
    2
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams { min_token_df: 2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Descriptor JSON; not required when the corpus source is synthetic.
    #[serde(default)]
    pub descriptor: Option<PathBuf>,
    pub corpus: CorpusSource,
    pub occurrences: OccurrenceSource,
    /// Golden label CSV covering at least the held-out articles; synthetic
    /// corpora bring their own.
    #[serde(default)]
    pub golden: Option<PathBuf>,
    pub split: SplitParams,
    #[serde(default)]
    pub undersample: Option<UndersampleParams>,
    #[serde(default = "default_min_support")]
    pub min_support: usize,
    #[serde(default)]
    pub features: FeatureParams,
    pub selector_grid: SelectorGrid,
    pub classifier_grid: ClassifierGrid,
    pub train_seed: u64,
    #[serde(default)]
    pub cv: Option<CvParams>,
    #[serde(default)]
    pub baselines: Vec<BaselineSpec>,
    #[serde(default)]
    pub relabel: bool,
    pub output_dir: PathBuf,
}

fn default_min_support() -> usize {
    1
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CvParams {
    pub k: usize,
    pub seed: u64,
}

/// Baseline selection in the config; `random` carries its seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineSpec {
    AllAll,
    Random { seed: u64 },
    WsLabels,
    WsRestAll,
    AllM,
    WsRestM,
    DTerms,
    DTokens,
}

impl From<BaselineSpec> for finegrain::evalkit::BaselineKind {
    fn from(spec: BaselineSpec) -> Self {
        use finegrain::evalkit::BaselineKind as K;
        match spec {
            BaselineSpec::AllAll => K::AllAll,
            BaselineSpec::Random { seed } => K::Random { seed },
            BaselineSpec::WsLabels => K::WsLabels,
            BaselineSpec::WsRestAll => K::WsRestAll,
            BaselineSpec::AllM => K::AllM,
            BaselineSpec::WsRestM => K::WsRestM,
            BaselineSpec::DTerms => K::DTerms,
            BaselineSpec::DTokens => K::DTokens,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<PipelineConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| anyhow::anyhow!("invalid config JSON: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !matches!(self.corpus, CorpusSource::Synth { .. }) && self.descriptor.is_none() {
            anyhow::bail!("config: descriptor is required unless the corpus source is synth");
        }
        if let Some(path) = &self.descriptor {
            if !path.exists() {
                anyhow::bail!("config: descriptor file {} does not exist", path.display());
            }
        }
        if let CorpusSource::File { path } = &self.corpus {
            if !path.exists() {
                anyhow::bail!("config: corpus file {} does not exist", path.display());
            }
        }
        if let OccurrenceSource::Import { path } = &self.occurrences {
            if !path.exists() {
                anyhow::bail!("config: occurrence file {} does not exist", path.display());
            }
        }
        if let Some(path) = &self.golden {
            if !path.exists() {
                anyhow::bail!("config: golden file {} does not exist", path.display());
            }
        }
        if self.selector_grid.methods.is_empty()
            || self.selector_grid.k.is_empty()
            || self.selector_grid.exclude_ct_concepts.is_empty()
        {
            anyhow::bail!("config: selector grid must be non-empty");
        }
        if self.classifier_grid.classifiers.is_empty() {
            anyhow::bail!("config: classifier grid must be non-empty");
        }
        let linear = self
            .classifier_grid
            .classifiers
            .iter()
            .any(|c| matches!(c, ClassifierKind::LogReg | ClassifierKind::LinearSvm));
        if linear && (self.classifier_grid.c.is_empty() || self.classifier_grid.penalties.is_empty())
        {
            anyhow::bail!("config: linear classifiers need at least one penalty and one C value");
        }
        for c in &self.classifier_grid.c {
            if *c <= 0.0 {
                anyhow::bail!("config: C must be positive, got {c}");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json(dir: &Path) -> String {
        serde_json::json!({
            "corpus": {"source": "synth", "spec": {
                "n_articles": 50, "labels": ["C-0"], "miss_rate": 0.1,
                "spurious_rate": 0.0, "seed": 1
            }},
            "occurrences": {"source": "builtin", "granularity": "term_level"},
            "split": {"ma1_n": 5, "ma2_n": 5, "seed": 2},
            "selector_grid": {"methods": ["chi2"], "k": [5]},
            "classifier_grid": {"classifiers": ["log_reg"], "c": [1.0]},
            "train_seed": 3,
            "output_dir": dir.join("out"),
        })
        .to_string()
    }

    #[test]
    fn minimal_synth_config_parses_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, minimal_json(dir.path())).unwrap();
        let config = PipelineConfig::load(&path).unwrap();
        assert_eq!(config.min_support, 1);
        assert_eq!(config.features.min_token_df, 2);
        assert_eq!(config.selector_grid.scope, SelectionScope::Shared);
        assert!(config.baselines.is_empty());
    }

    #[test]
    fn file_corpus_without_descriptor_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("c.jsonl");
        std::fs::write(&corpus, "").unwrap();
        let config = serde_json::json!({
            "corpus": {"source": "file", "path": corpus},
            "occurrences": {"source": "builtin", "granularity": "term_level"},
            "split": {"ma1_n": 5, "ma2_n": 5, "seed": 2},
            "selector_grid": {"methods": ["chi2"], "k": [5]},
            "classifier_grid": {"classifiers": ["log_reg"], "c": [1.0]},
            "train_seed": 3,
            "output_dir": dir.path().join("out"),
        });
        let parsed: PipelineConfig = serde_json::from_value(config).unwrap();
        assert!(parsed.validate().is_err());
    }
}
