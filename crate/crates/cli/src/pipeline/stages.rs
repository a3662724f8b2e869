//! Config-driven execution of the experiment graph.
//!
//! Every stage is keyed by the digest of its parameters and input digests;
//! outputs live under `stages/<name>-<key>/` and a rerun with identical
//! inputs reuses them. Grid cells (selector x classifier) run concurrently;
//! their seeds are derived from the cell name, so scheduling never changes
//! results.

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use finegrain::datasets::{build_ws, make_folds, split_ma1, split_ma2, undersample_majority, SplitBundle};
use finegrain::evalkit::{baseline_predict, evaluate, BaselineDicts, EvalReport};
use finegrain::features::{
    apply_tfidf, build_features, featurize, score_features, select_top_k, select_top_k_for_label,
    selection_report, BuildOptions, FeatureMatrix, FeatureSpace, ScoreMethod, SelectorConfig,
};
use finegrain::ingest::eutils::EutilsClient;
use finegrain::ingest::{load_corpus, save_corpus, Corpus};
use finegrain::learn::{
    derive_seed, predict, relabel_and_retrain, train, ClassifierKind, OvrModel, Penalty,
    TrainConfig,
};
use finegrain::recognizer::{
    build_dictionary, import_occurrences, load_aux_dictionary, load_occurrences,
    recognize_corpus, save_occurrences, ConceptOccurrence,
};
use finegrain::synth::generate_synthetic;
use finegrain::thesaurus::{load_thesaurus, save_thesaurus, Descriptor};
use finegrain::weaklabel::{assign_weak_labels, target_labels, LabelMatrix, MatrixKind};

use super::config::{
    BaselineSpec, CorpusSource, OccurrenceSource, PipelineConfig, SelectionScope,
};
use super::digest::{digest_file, digest_json, write_atomic};
use super::manifest::{now_unix_secs, RunManifest, StageRecord, StageStatus};

struct Pipeline<'a> {
    config: &'a PipelineConfig,
    out_dir: PathBuf,
    stages_dir: PathBuf,
    manifest: Mutex<RunManifest>,
}

/// Digest of the experiment definition: the config with the output location
/// blanked, so runs into different directories still compare equal.
fn config_fingerprint(config: &PipelineConfig) -> String {
    let mut normalized = config.clone();
    normalized.output_dir = PathBuf::new();
    digest_json(&normalized)
}

#[derive(Debug)]
struct StageFailure {
    stage: String,
}

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {} failed", self.stage)
    }
}

impl std::error::Error for StageFailure {}

impl<'a> Pipeline<'a> {
    fn warn(&self, message: String) {
        self.manifest.lock().unwrap().warnings.push(message);
    }

    fn push_record(&self, record: StageRecord) {
        self.manifest.lock().unwrap().stages.push(record);
    }

    /// Run (or reuse) one stage. Returns the stage value and the digest of
    /// its output map, which downstream stages mix into their keys.
    fn stage<T>(
        &self,
        name: &str,
        key_inputs: &impl Serialize,
        produce: impl FnOnce(&Path) -> anyhow::Result<T>,
        load: impl FnOnce(&Path) -> anyhow::Result<T>,
    ) -> anyhow::Result<(T, String)> {
        let key = digest_json(&(name, key_inputs));
        let dir = self.stages_dir.join(format!("{name}-{}", &key[..16]));
        let marker = dir.join("stage.json");
        if marker.exists() {
            let recorded: StageRecord = serde_json::from_str(&fs::read_to_string(&marker)?)
                .with_context(|| format!("stage {name}: unreadable stage marker"))?;
            if recorded.key == key {
                let value = load(&dir)
                    .with_context(|| format!("stage {name}: loading cached outputs"))
                    .map_err(|e| e.context(StageFailure { stage: name.into() }))?;
                let outputs_digest = digest_json(&recorded.outputs);
                self.push_record(StageRecord {
                    status: StageStatus::Cached,
                    ..recorded
                });
                return Ok((value, outputs_digest));
            }
            fs::remove_dir_all(&dir)?;
        }

        let tmp = self
            .stages_dir
            .join(format!(".{name}-{}.tmp", &key[..16]));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        let value = produce(&tmp)
            .with_context(|| format!("stage {name}"))
            .map_err(|e| e.context(StageFailure { stage: name.into() }))?;

        let mut outputs = BTreeMap::new();
        for entry in fs::read_dir(&tmp)? {
            let path = entry?.path();
            if path.is_file() {
                let file_name = path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                outputs.insert(file_name, digest_file(&path)?);
            }
        }
        let record = StageRecord {
            name: name.to_string(),
            key,
            status: StageStatus::Computed,
            outputs,
        };
        fs::write(
            tmp.join("stage.json"),
            serde_json::to_string_pretty(&record)?,
        )?;
        fs::rename(&tmp, &dir)?;
        let outputs_digest = digest_json(&record.outputs);
        self.push_record(record);
        Ok((value, outputs_digest))
    }
}

struct CorpusStage {
    corpus: Corpus,
    descriptor: Descriptor,
    golden: Option<LabelMatrix>,
}

#[derive(Serialize, Deserialize)]
struct CorpusMeta {
    descriptor_id: String,
    has_golden: bool,
}

struct FeatureStage {
    space: Arc<FeatureSpace>,
    train: FeatureMatrix,
    ma1: FeatureMatrix,
    ma2: FeatureMatrix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
enum Selection {
    Shared(Vec<u32>),
    PerLabel(Vec<(String, Vec<u32>)>),
}

#[derive(Clone)]
enum CellModels {
    Shared(OvrModel),
    PerLabel(Vec<OvrModel>),
}

/// One grid cell's coordinates plus its evaluation results.
#[derive(Debug, Clone, Serialize)]
pub struct CellOutcome {
    pub selector: String,
    pub method: ScoreMethod,
    pub k: usize,
    pub exclude_ct_concepts: bool,
    pub classifier: ClassifierKind,
    pub penalty: Option<Penalty>,
    pub c: Option<f64>,
    pub ma1: Option<EvalReport>,
    pub ma2: Option<EvalReport>,
    pub cv_mean_macro_f1: Option<f64>,
}

impl CellOutcome {
    pub fn name(&self) -> String {
        format!("{}__{}", self.selector, classifier_name(self.classifier, self.penalty, self.c))
    }
}

fn method_name(method: ScoreMethod) -> &'static str {
    match method {
        ScoreMethod::Chi2 => "chi2",
        ScoreMethod::AnovaF => "anovaf",
    }
}

fn classifier_name(kind: ClassifierKind, penalty: Option<Penalty>, c: Option<f64>) -> String {
    let base = match kind {
        ClassifierKind::LogReg => "logreg",
        ClassifierKind::LinearSvm => "linearsvm",
        ClassifierKind::DecisionTree => "dtree",
        ClassifierKind::RandomForest => "rforest",
    };
    match (penalty, c) {
        (Some(p), Some(c)) => {
            let p = match p {
                Penalty::L1 => "l1",
                Penalty::L2 => "l2",
            };
            format!("{base}-{p}-c{c}")
        }
        _ => base.to_string(),
    }
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

fn write_lines(path: &Path, lines: &[String]) -> anyhow::Result<()> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Execute the full pipeline for a validated config. On a stage error the
/// partial manifest is still written, with the failing stage named.
pub fn run(config: &PipelineConfig) -> anyhow::Result<RunManifest> {
    config.validate()?;
    let out_dir = config.output_dir.clone();
    let stages_dir = out_dir.join("stages");
    fs::create_dir_all(&stages_dir)?;

    let mut manifest = RunManifest::new(config_fingerprint(config));
    for (label, path) in [
        ("descriptor", config.descriptor.as_ref()),
        (
            "corpus",
            match &config.corpus {
                CorpusSource::File { path } => Some(path),
                _ => None,
            },
        ),
        (
            "occurrences",
            match &config.occurrences {
                OccurrenceSource::Import { path } => Some(path),
                _ => None,
            },
        ),
        ("golden", config.golden.as_ref()),
    ] {
        if let Some(path) = path {
            manifest
                .input_digests
                .insert(label.to_string(), digest_file(path)?);
        }
    }

    let pipeline = Pipeline {
        config,
        out_dir: out_dir.clone(),
        stages_dir,
        manifest: Mutex::new(manifest),
    };

    let result = execute(&pipeline);
    let mut manifest = pipeline.manifest.into_inner().unwrap();
    manifest.stages.sort_by(|a, b| a.name.cmp(&b.name));
    manifest.finished_unix_secs = now_unix_secs();
    if let Err(error) = &result {
        manifest.failed_stage = error
            .downcast_ref::<StageFailure>()
            .map(|f| f.stage.clone());
        manifest.collect_files(&out_dir).ok();
        manifest.write(&out_dir)?;
        return result.map(|_| manifest);
    }
    manifest.collect_files(&out_dir)?;
    manifest.write(&out_dir)?;
    Ok(manifest)
}

fn execute(p: &Pipeline) -> anyhow::Result<()> {
    let config = p.config;

    // ── corpus ────────────────────────────────────────────────────────────
    let corpus_key = (
        &config.corpus,
        &config.descriptor,
        &config.golden,
        p.manifest.lock().unwrap().input_digests.clone(),
    );
    let (corpus_stage, corpus_digest) = p.stage(
        "corpus",
        &corpus_key,
        |dir| {
            let stage = match &config.corpus {
                CorpusSource::Synth { spec } => {
                    let data = generate_synthetic(spec)?;
                    CorpusStage {
                        corpus: data.corpus,
                        descriptor: data.descriptor,
                        golden: Some(data.golden),
                    }
                }
                CorpusSource::File { path } => {
                    let descriptor =
                        load_thesaurus(config.descriptor.as_ref().expect("validated"))?;
                    let corpus = load_corpus(path, &descriptor.descriptor_id)?;
                    let golden = config
                        .golden
                        .as_ref()
                        .map(|g| LabelMatrix::load_csv(g, MatrixKind::Golden))
                        .transpose()?;
                    CorpusStage {
                        corpus,
                        descriptor,
                        golden,
                    }
                }
                CorpusSource::Fetch {
                    endpoint,
                    page_size,
                    batch_size,
                } => {
                    let descriptor =
                        load_thesaurus(config.descriptor.as_ref().expect("validated"))?;
                    let client = EutilsClient::new(endpoint);
                    let pmids = client.search_pmids(&descriptor.descriptor_id, *page_size)?;
                    let result = client
                        .fetch_articles(&pmids, *batch_size, &descriptor.descriptor_id)
                        .map_err(|abort| anyhow::anyhow!("{abort}"))?;
                    write_atomic(
                        &dir.join("fetch_manifest.json"),
                        serde_json::to_string_pretty(&result.manifest)?.as_bytes(),
                    )?;
                    let golden = config
                        .golden
                        .as_ref()
                        .map(|g| LabelMatrix::load_csv(g, MatrixKind::Golden))
                        .transpose()?;
                    CorpusStage {
                        corpus: result.corpus,
                        descriptor,
                        golden,
                    }
                }
            };
            save_corpus(&stage.corpus, dir.join("corpus.jsonl"))?;
            save_thesaurus(&stage.descriptor, dir.join("descriptor.json"))?;
            if let Some(golden) = &stage.golden {
                golden.save_csv(dir.join("golden.csv"))?;
            }
            let meta = CorpusMeta {
                descriptor_id: stage.corpus.descriptor_id.clone(),
                has_golden: stage.golden.is_some(),
            };
            write_atomic(
                &dir.join("meta.json"),
                serde_json::to_string(&meta)?.as_bytes(),
            )?;
            Ok(stage)
        },
        |dir| {
            let meta: CorpusMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
            let corpus = load_corpus(dir.join("corpus.jsonl"), &meta.descriptor_id)?;
            let descriptor = load_thesaurus(dir.join("descriptor.json"))?;
            let golden = meta
                .has_golden
                .then(|| LabelMatrix::load_csv(dir.join("golden.csv"), MatrixKind::Golden))
                .transpose()?;
            Ok(CorpusStage {
                corpus,
                descriptor,
                golden,
            })
        },
    )?;
    let corpus = &corpus_stage.corpus;
    let descriptor = &corpus_stage.descriptor;

    // ── occurrences ───────────────────────────────────────────────────────
    let (occurrences, occurrences_digest) = p.stage(
        "occurrences",
        &(&config.occurrences, &corpus_digest),
        |dir| {
            let occurrences: Vec<ConceptOccurrence> = match &config.occurrences {
                OccurrenceSource::Builtin {
                    granularity,
                    aux_dictionary,
                } => {
                    let mut dict = build_dictionary(descriptor, *granularity);
                    if let Some(aux) = aux_dictionary {
                        dict = dict.merge(&load_aux_dictionary(aux, *granularity)?);
                    }
                    recognize_corpus(corpus, &dict)
                }
                OccurrenceSource::Import { path } => import_occurrences(path, corpus)?,
            };
            save_occurrences(&occurrences, dir.join("occurrences.jsonl"))?;
            Ok(occurrences)
        },
        |dir| Ok(load_occurrences(dir.join("occurrences.jsonl"))?),
    )?;

    // ── weak labels & targets ─────────────────────────────────────────────
    let ((weak, targets), weak_digest) = p.stage(
        "weaklabel",
        &(&corpus_digest, &occurrences_digest, config.min_support),
        |dir| {
            let weak = assign_weak_labels(corpus, &occurrences, descriptor)?;
            let targets = target_labels(&weak, descriptor, config.min_support)?;
            weak.save_csv(dir.join("weak.csv"))?;
            weak.save_json(dir.join("weak.json"))?;
            write_lines(&dir.join("targets.txt"), &targets)?;
            Ok((weak, targets))
        },
        |dir| {
            let weak = LabelMatrix::load_json(dir.join("weak.json"))?;
            let targets = read_lines(&dir.join("targets.txt"))?;
            Ok((weak, targets))
        },
    )?;

    // ── splits ────────────────────────────────────────────────────────────
    let (bundle, split_digest) = p.stage(
        "split",
        &(&weak_digest, config.split),
        |dir| {
            let pmids = corpus.pmids();
            let ma1 = split_ma1(&pmids, config.split.ma1_n, config.split.seed)?;
            let remaining: Vec<String> = pmids
                .iter()
                .filter(|pm| !ma1.contains(pm))
                .cloned()
                .collect();
            let ma2 = split_ma2(
                &remaining,
                &weak,
                descriptor,
                config.split.ma2_n,
                derive_seed(config.split.seed, "ma2"),
            )?;
            let ws = build_ws(&pmids, &ma1, &ma2, &weak)?;
            let bundle = SplitBundle {
                seed: config.split.seed,
                ma1,
                ma2,
                ws,
            };
            bundle.validate_against(&pmids)?;
            bundle.save(dir.join("splits.json"))?;
            Ok(bundle)
        },
        |dir| Ok(SplitBundle::load(dir.join("splits.json"))?),
    )?;

    // ── under-sampling ────────────────────────────────────────────────────
    let (train_pmids, train_set_digest) = match &config.undersample {
        None => (bundle.ws.clone(), split_digest.clone()),
        Some(params) => p.stage(
            "undersample",
            &(&split_digest, &weak_digest, params.target, params.seed),
            |dir| {
                let und = undersample_majority(
                    &bundle.ws,
                    &weak,
                    descriptor,
                    params.target,
                    params.seed,
                )?;
                write_lines(&dir.join("ws_und.txt"), &und)?;
                Ok(und)
            },
            |dir| read_lines(&dir.join("ws_und.txt")),
        )?,
    };

    // ── features ──────────────────────────────────────────────────────────
    let (feature_stage, features_digest) = p.stage(
        "features",
        &(
            &corpus_digest,
            &occurrences_digest,
            &train_set_digest,
            config.features.min_token_df,
        ),
        |dir| {
            let train_corpus = corpus.select(&train_pmids)?;
            let (space, raw_train) = build_features(
                &train_corpus,
                &occurrences,
                descriptor,
                BuildOptions {
                    min_token_df: config.features.min_token_df,
                },
            );
            let (train, idf) = finegrain::features::tfidf(&raw_train)?;
            let ma1_corpus = corpus.select(&bundle.ma1)?;
            let ma2_corpus = corpus.select(&bundle.ma2)?;
            let ma1 = apply_tfidf(&featurize(&space, &ma1_corpus, &occurrences), &idf)?;
            let ma2 = apply_tfidf(&featurize(&space, &ma2_corpus, &occurrences), &idf)?;
            write_atomic(&dir.join("space.json"), space.to_json().as_bytes())?;
            write_atomic(
                &dir.join("idf.json"),
                serde_json::to_string(&idf)?.as_bytes(),
            )?;
            write_atomic(&dir.join("train.json"), train.to_json().as_bytes())?;
            write_atomic(&dir.join("ma1.json"), ma1.to_json().as_bytes())?;
            write_atomic(&dir.join("ma2.json"), ma2.to_json().as_bytes())?;
            write_lines(&dir.join("train_pmids.txt"), &train_pmids)?;
            Ok(FeatureStage {
                space,
                train,
                ma1,
                ma2,
            })
        },
        |dir| {
            let space = FeatureSpace::from_json(&fs::read_to_string(dir.join("space.json"))?)?;
            let train = FeatureMatrix::from_json(&fs::read_to_string(dir.join("train.json"))?)?;
            let ma1 = FeatureMatrix::from_json(&fs::read_to_string(dir.join("ma1.json"))?)?;
            let ma2 = FeatureMatrix::from_json(&fs::read_to_string(dir.join("ma2.json"))?)?;
            Ok(FeatureStage {
                space,
                train,
                ma1,
                ma2,
            })
        },
    )?;
    let train_weak = weak.select_rows(&train_pmids)?;
    let golden = corpus_stage.golden.as_ref();
    if golden.is_none() {
        p.warn("no golden labels supplied: grid cells and baselines are not evaluated".into());
    }

    // ── grid ──────────────────────────────────────────────────────────────
    let mut outcomes: Vec<CellOutcome> = Vec::new();
    let mut best_cell: Option<(f64, String, Selection, TrainConfig)> = None;
    for &method in &config.selector_grid.methods {
        let scores = score_features(&feature_stage.train, &train_weak, &targets, method)?;
        if !scores.degenerate_labels.is_empty() {
            p.warn(format!(
                "selector {}: single-class labels score zero: {:?}",
                method_name(method),
                scores.degenerate_labels
            ));
        }
        for &k in &config.selector_grid.k {
            for &exclude in &config.selector_grid.exclude_ct_concepts {
                let selector = format!(
                    "{}-k{}{}",
                    method_name(method),
                    k,
                    if exclude { "-noct" } else { "" }
                );
                let cfg = SelectorConfig {
                    method,
                    k,
                    exclude_ct_concepts: exclude,
                };
                let (selection, selection_digest) = p.stage(
                    &format!("select-{selector}"),
                    &(&features_digest, &weak_digest, &cfg, config.selector_grid.scope),
                    |dir| {
                        let selection = match config.selector_grid.scope {
                            SelectionScope::Shared => {
                                let ids =
                                    select_top_k(&scores, &cfg, descriptor, &feature_stage.space)?;
                                write_atomic(
                                    &dir.join("report.csv"),
                                    selection_report(&scores, &ids, &feature_stage.space)
                                        .as_bytes(),
                                )?;
                                Selection::Shared(ids)
                            }
                            SelectionScope::PerLabel => {
                                let mut per_label = Vec::new();
                                for target in &targets {
                                    let ids = select_top_k_for_label(
                                        &scores,
                                        target,
                                        &cfg,
                                        descriptor,
                                        &feature_stage.space,
                                    )?;
                                    write_atomic(
                                        &dir.join(format!("report-{target}.csv")),
                                        selection_report(&scores, &ids, &feature_stage.space)
                                            .as_bytes(),
                                    )?;
                                    per_label.push((target.clone(), ids));
                                }
                                Selection::PerLabel(per_label)
                            }
                        };
                        write_atomic(
                            &dir.join("selection.json"),
                            serde_json::to_string(&selection)?.as_bytes(),
                        )?;
                        Ok(selection)
                    },
                    |dir| {
                        Ok(serde_json::from_str(&fs::read_to_string(
                            dir.join("selection.json"),
                        )?)?)
                    },
                )?;

                let projected = ProjectedCell::build(&feature_stage, &selection);
                let classifier_cells = enumerate_classifier_cells(config);
                let results: Vec<anyhow::Result<CellOutcome>> = classifier_cells
                    .par_iter()
                    .map(|clf| {
                        grid_cell(
                            p,
                            &selector,
                            &selection_digest,
                            method,
                            k,
                            exclude,
                            clf,
                            &selection,
                            &projected,
                            &train_weak,
                            &targets,
                            &bundle,
                            golden,
                        )
                    })
                    .collect();
                for result in results {
                    let outcome = result?;
                    let score = match (&outcome.ma1, &outcome.ma2) {
                        (Some(a), Some(b)) => Some((a.macro_f1 + b.macro_f1) / 2.0),
                        (Some(a), None) => Some(a.macro_f1),
                        (None, Some(b)) => Some(b.macro_f1),
                        (None, None) => None,
                    };
                    if let Some(score) = score {
                        let better = best_cell
                            .as_ref()
                            .map(|(best, _, _, _)| score > *best)
                            .unwrap_or(true);
                        if better {
                            best_cell = Some((
                                score,
                                outcome.name(),
                                selection.clone(),
                                cell_train_config(config, clf_of(&outcome), &outcome.name()),
                            ));
                        }
                    }
                    outcomes.push(outcome);
                }
            }
        }
    }

    // ── baselines ─────────────────────────────────────────────────────────
    let mut baseline_rows: Vec<(String, Option<EvalReport>, Option<EvalReport>)> = Vec::new();
    if !config.baselines.is_empty() {
        let dicts = BaselineDicts::from_descriptor(descriptor);
        for spec in &config.baselines {
            let kind: finegrain::evalkit::BaselineKind = (*spec).into();
            let name = format!(
                "{}{}",
                kind.name(),
                match spec {
                    BaselineSpec::Random { seed } => format!("-s{seed}"),
                    _ => String::new(),
                }
            );
            let ((ma1_report, ma2_report), _) = p.stage(
                &format!("baseline-{name}"),
                &(&weak_digest, &split_digest, spec),
                |dir| {
                    let mut reports = (None, None);
                    for (dataset, pmids, slot) in [
                        ("ma1", &bundle.ma1, 0usize),
                        ("ma2", &bundle.ma2, 1usize),
                    ] {
                        let weak_subset = weak.select_rows(pmids)?;
                        let corpus_subset = corpus.select(pmids)?;
                        let pred = baseline_predict(
                            kind,
                            Some(&corpus_subset),
                            &weak_subset,
                            Some(&dicts),
                            descriptor,
                            &targets,
                        )?;
                        pred.save_csv(dir.join(format!("pred_{dataset}.csv")))?;
                        if let Some(golden) = golden {
                            let golden_subset = golden.select_rows(pmids)?;
                            let report = evaluate(&pred, &golden_subset, &targets)?;
                            write_atomic(
                                &dir.join(format!("eval_{dataset}.csv")),
                                report.to_csv().as_bytes(),
                            )?;
                            write_atomic(
                                &dir.join(format!("eval_{dataset}.json")),
                                serde_json::to_string_pretty(&report)?.as_bytes(),
                            )?;
                            if slot == 0 {
                                reports.0 = Some(report);
                            } else {
                                reports.1 = Some(report);
                            }
                        }
                    }
                    Ok(reports)
                },
                |dir| {
                    let read = |dataset: &str| -> anyhow::Result<Option<EvalReport>> {
                        let path = dir.join(format!("eval_{dataset}.json"));
                        if path.exists() {
                            Ok(Some(serde_json::from_str(&fs::read_to_string(path)?)?))
                        } else {
                            Ok(None)
                        }
                    };
                    Ok((read("ma1")?, read("ma2")?))
                },
            )?;
            baseline_rows.push((name, ma1_report, ma2_report));
        }
    }

    // ── relabel & retrain ─────────────────────────────────────────────────
    if config.relabel {
        match &best_cell {
            None => p.warn(
                "relabel requested but no grid cell could be ranked (no golden labels)".into(),
            ),
            Some((_, cell_name, selection, train_config)) => {
                relabel_stage(
                    p,
                    cell_name,
                    selection,
                    train_config,
                    &feature_stage,
                    &train_weak,
                    &targets,
                    &bundle,
                    golden,
                    &features_digest,
                )?;
            }
        }
    }

    // ── reports ───────────────────────────────────────────────────────────
    write_reports(&p.out_dir, &outcomes, &baseline_rows)?;
    Ok(())
}

fn clf_of(outcome: &CellOutcome) -> ClassifierCell {
    ClassifierCell {
        kind: outcome.classifier,
        penalty: outcome.penalty,
        c: outcome.c,
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct ClassifierCell {
    kind: ClassifierKind,
    penalty: Option<Penalty>,
    c: Option<f64>,
}

fn enumerate_classifier_cells(config: &PipelineConfig) -> Vec<ClassifierCell> {
    let mut cells = Vec::new();
    for &kind in &config.classifier_grid.classifiers {
        match kind {
            ClassifierKind::LogReg | ClassifierKind::LinearSvm => {
                for &penalty in &config.classifier_grid.penalties {
                    for &c in &config.classifier_grid.c {
                        cells.push(ClassifierCell {
                            kind,
                            penalty: Some(penalty),
                            c: Some(c),
                        });
                    }
                }
            }
            _ => cells.push(ClassifierCell {
                kind,
                penalty: None,
                c: None,
            }),
        }
    }
    cells
}

fn cell_train_config(
    config: &PipelineConfig,
    cell: ClassifierCell,
    cell_name: &str,
) -> TrainConfig {
    TrainConfig {
        classifier: cell.kind,
        penalty: cell.penalty.unwrap_or(Penalty::L2),
        c: cell.c.unwrap_or(1.0),
        tree: config.classifier_grid.tree,
        seed: derive_seed(config.train_seed, cell_name),
        optimizer: config.classifier_grid.optimizer,
    }
}

struct ProjectedCell {
    train: Vec<FeatureMatrix>,
    ma1: Vec<FeatureMatrix>,
    ma2: Vec<FeatureMatrix>,
}

impl ProjectedCell {
    /// Shared scope projects once; per-label scope projects per target.
    fn build(features: &FeatureStage, selection: &Selection) -> ProjectedCell {
        let project_all = |ids: &[u32]| {
            (
                features.train.project(ids),
                features.ma1.project(ids),
                features.ma2.project(ids),
            )
        };
        match selection {
            Selection::Shared(ids) => {
                let (train, ma1, ma2) = project_all(ids);
                ProjectedCell {
                    train: vec![train],
                    ma1: vec![ma1],
                    ma2: vec![ma2],
                }
            }
            Selection::PerLabel(per_label) => {
                let mut cell = ProjectedCell {
                    train: Vec::new(),
                    ma1: Vec::new(),
                    ma2: Vec::new(),
                };
                for (_, ids) in per_label {
                    let (train, ma1, ma2) = project_all(ids);
                    cell.train.push(train);
                    cell.ma1.push(ma1);
                    cell.ma2.push(ma2);
                }
                cell
            }
        }
    }
}

fn train_cell_models(
    selection: &Selection,
    projected: &ProjectedCell,
    train_weak: &LabelMatrix,
    targets: &[String],
    cfg: &TrainConfig,
) -> anyhow::Result<CellModels> {
    match selection {
        Selection::Shared(_) => Ok(CellModels::Shared(train(
            &projected.train[0],
            train_weak,
            targets,
            cfg,
        )?)),
        Selection::PerLabel(per_label) => {
            let mut models = Vec::new();
            for ((label, _), matrix) in per_label.iter().zip(&projected.train) {
                models.push(train(matrix, train_weak, std::slice::from_ref(label), cfg)?);
            }
            Ok(CellModels::PerLabel(models))
        }
    }
}

fn predict_cell(
    models: &CellModels,
    matrices: &[FeatureMatrix],
    targets: &[String],
) -> anyhow::Result<LabelMatrix> {
    match models {
        CellModels::Shared(model) => Ok(predict(model, &matrices[0])?),
        CellModels::PerLabel(label_models) => {
            let pmids = matrices[0].pmids.clone();
            let mut rows: Vec<Vec<u32>> = vec![Vec::new(); pmids.len()];
            for (column, (model, matrix)) in label_models.iter().zip(matrices).enumerate() {
                let single = predict(model, matrix)?;
                for (row, labels) in single.rows.iter().enumerate() {
                    if !labels.is_empty() {
                        rows[row].push(column as u32);
                    }
                }
            }
            Ok(LabelMatrix::new(
                pmids,
                targets.to_vec(),
                rows,
                MatrixKind::Predicted,
            )?)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn grid_cell(
    p: &Pipeline,
    selector: &str,
    selection_digest: &str,
    method: ScoreMethod,
    k: usize,
    exclude: bool,
    clf: &ClassifierCell,
    selection: &Selection,
    projected: &ProjectedCell,
    train_weak: &LabelMatrix,
    targets: &[String],
    bundle: &SplitBundle,
    golden: Option<&LabelMatrix>,
) -> anyhow::Result<CellOutcome> {
    let cell_name = format!("{selector}__{}", classifier_name(clf.kind, clf.penalty, clf.c));
    let cfg = cell_train_config(p.config, *clf, &cell_name);

    let (models, models_digest) = p.stage(
        &format!("train-{cell_name}"),
        &(selection_digest, &cfg),
        |dir| {
            let models = train_cell_models(selection, projected, train_weak, targets, &cfg)?;
            match &models {
                CellModels::Shared(model) => {
                    if !model.warnings.is_empty() {
                        p.warn(format!("train {cell_name}: {:?}", model.warnings));
                    }
                    model.save(dir.join("model.json"))?;
                }
                CellModels::PerLabel(label_models) => {
                    for model in label_models {
                        model.save(dir.join(format!("model-{}.json", model.label_ids[0])))?;
                    }
                }
            }
            Ok(models)
        },
        |dir| match selection {
            Selection::Shared(_) => Ok(CellModels::Shared(OvrModel::load(dir.join("model.json"))?)),
            Selection::PerLabel(per_label) => {
                let mut models = Vec::new();
                for (label, _) in per_label {
                    models.push(OvrModel::load(dir.join(format!("model-{label}.json")))?);
                }
                Ok(CellModels::PerLabel(models))
            }
        },
    )?;

    let ((pred_ma1, pred_ma2), pred_digest) = p.stage(
        &format!("predict-{cell_name}"),
        &(&models_digest,),
        |dir| {
            let pred_ma1 = predict_cell(&models, &projected.ma1, targets)?;
            let pred_ma2 = predict_cell(&models, &projected.ma2, targets)?;
            pred_ma1.save_csv(dir.join("pred_ma1.csv"))?;
            pred_ma2.save_csv(dir.join("pred_ma2.csv"))?;
            Ok((pred_ma1, pred_ma2))
        },
        |dir| {
            Ok((
                LabelMatrix::load_csv(dir.join("pred_ma1.csv"), MatrixKind::Predicted)?,
                LabelMatrix::load_csv(dir.join("pred_ma2.csv"), MatrixKind::Predicted)?,
            ))
        },
    )?;

    let mut outcome = CellOutcome {
        selector: selector.to_string(),
        method,
        k,
        exclude_ct_concepts: exclude,
        classifier: clf.kind,
        penalty: clf.penalty,
        c: clf.c,
        ma1: None,
        ma2: None,
        cv_mean_macro_f1: None,
    };

    if let Some(golden) = golden {
        let ((ma1_report, ma2_report), _) = p.stage(
            &format!("evaluate-{cell_name}"),
            &(&pred_digest,),
            |dir| {
                let golden_ma1 = golden.select_rows(&bundle.ma1)?;
                let golden_ma2 = golden.select_rows(&bundle.ma2)?;
                let ma1_report = evaluate(&pred_ma1, &golden_ma1, targets)?;
                let ma2_report = evaluate(&pred_ma2, &golden_ma2, targets)?;
                let mut digests = BTreeMap::new();
                digests.insert("config".to_string(), config_fingerprint(p.config));
                digests.insert("model".to_string(), models_digest.clone());
                digests.insert("predictions".to_string(), pred_digest.clone());
                for (dataset, report) in [("ma1", &ma1_report), ("ma2", &ma2_report)] {
                    write_atomic(
                        &dir.join(format!("eval_{dataset}.csv")),
                        report.to_csv().as_bytes(),
                    )?;
                    write_atomic(
                        &dir.join(format!("eval_{dataset}.json")),
                        report.to_json_bundle(&digests).as_bytes(),
                    )?;
                }
                Ok((ma1_report, ma2_report))
            },
            |dir| {
                let read = |dataset: &str| -> anyhow::Result<EvalReport> {
                    let bundle: serde_json::Value = serde_json::from_str(&fs::read_to_string(
                        dir.join(format!("eval_{dataset}.json")),
                    )?)?;
                    Ok(serde_json::from_value(bundle["report"].clone())?)
                };
                Ok((read("ma1")?, read("ma2")?))
            },
        )?;
        outcome.ma1 = Some(ma1_report);
        outcome.ma2 = Some(ma2_report);
    }

    if let Some(cv) = p.config.cv {
        let ((mean,), _) = p.stage(
            &format!("cv-{cell_name}"),
            &(&models_digest, cv.k, cv.seed),
            |dir| {
                let folds = make_folds(&train_weak.pmids, cv.k, cv.seed)?;
                let mut rows = String::from("fold,macro_f1\n");
                let mut sum = 0.0;
                for fold in 0..cv.k {
                    let held: Vec<String> = train_weak
                        .pmids
                        .iter()
                        .filter(|pm| folds.assignments[*pm] == fold)
                        .cloned()
                        .collect();
                    let rest: Vec<String> = train_weak
                        .pmids
                        .iter()
                        .filter(|pm| folds.assignments[*pm] != fold)
                        .cloned()
                        .collect();
                    let fold_weak = train_weak.select_rows(&rest)?;
                    let fold_models = match selection {
                        Selection::Shared(_) => {
                            let matrix = select_matrix_rows(&projected.train[0], &rest)?;
                            CellModels::Shared(train(&matrix, &fold_weak, targets, &cfg)?)
                        }
                        Selection::PerLabel(per_label) => {
                            let mut models = Vec::new();
                            for ((label, _), matrix) in per_label.iter().zip(&projected.train) {
                                let matrix = select_matrix_rows(matrix, &rest)?;
                                models.push(train(&matrix, &fold_weak, std::slice::from_ref(label), &cfg)?);
                            }
                            CellModels::PerLabel(models)
                        }
                    };
                    let held_matrices: Vec<FeatureMatrix> = projected
                        .train
                        .iter()
                        .map(|m| select_matrix_rows(m, &held))
                        .collect::<anyhow::Result<_>>()?;
                    let pred = predict_cell(&fold_models, &held_matrices, targets)?;
                    let held_weak = train_weak
                        .select_rows(&held)?
                        .restrict_labels(targets)?;
                    let report = evaluate(&pred, &held_weak, targets)?;
                    rows.push_str(&format!("{fold},{}\n", report.macro_f1));
                    sum += report.macro_f1;
                }
                let mean = sum / cv.k as f64;
                rows.push_str(&format!("mean,{mean}\n"));
                write_atomic(&dir.join("cv.csv"), rows.as_bytes())?;
                write_atomic(
                    &dir.join("cv.json"),
                    serde_json::to_string(&serde_json::json!({ "mean_macro_f1": mean }))?
                        .as_bytes(),
                )?;
                Ok((mean,))
            },
            |dir| {
                let value: serde_json::Value =
                    serde_json::from_str(&fs::read_to_string(dir.join("cv.json"))?)?;
                Ok((value["mean_macro_f1"].as_f64().unwrap_or(f64::NAN),))
            },
        )?;
        outcome.cv_mean_macro_f1 = Some(mean);
    }

    Ok(outcome)
}

/// Rows of a feature matrix by pmid, preserving the requested order.
fn select_matrix_rows(m: &FeatureMatrix, pmids: &[String]) -> anyhow::Result<FeatureMatrix> {
    let index: std::collections::HashMap<&str, usize> = m
        .pmids
        .iter()
        .enumerate()
        .map(|(i, pm)| (pm.as_str(), i))
        .collect();
    let mut rows = Vec::with_capacity(pmids.len());
    for pmid in pmids {
        let &i = index
            .get(pmid.as_str())
            .ok_or_else(|| anyhow::anyhow!("pmid {pmid} not in feature matrix"))?;
        rows.push(m.rows[i].clone());
    }
    Ok(FeatureMatrix {
        pmids: pmids.to_vec(),
        space: Arc::clone(&m.space),
        rows,
        weighted: m.weighted,
    })
}

#[allow(clippy::too_many_arguments)]
fn relabel_stage(
    p: &Pipeline,
    cell_name: &str,
    selection: &Selection,
    train_config: &TrainConfig,
    features: &FeatureStage,
    train_weak: &LabelMatrix,
    targets: &[String],
    bundle: &SplitBundle,
    golden: Option<&LabelMatrix>,
    features_digest: &str,
) -> anyhow::Result<()> {
    let projected = ProjectedCell::build(features, selection);
    let (_, _digest) = p.stage(
        &format!("relabel-{cell_name}"),
        &(features_digest, train_config, selection),
        |dir| {
            let mut report = String::from("model,dataset,macro_f1\n");
            let models = train_cell_models(selection, &projected, train_weak, targets, train_config)?;
            let single = match &models {
                CellModels::Shared(model) => vec![model.clone()],
                CellModels::PerLabel(models) => models.clone(),
            };
            let train_matrices: Vec<&FeatureMatrix> = projected.train.iter().collect();
            let mut retrained = Vec::new();
            for (i, model) in single.iter().enumerate() {
                let matrix = train_matrices[i.min(train_matrices.len() - 1)];
                let outcome = relabel_and_retrain(model, matrix, train_weak, train_config)?;
                for warning in &outcome.warnings {
                    p.warn(format!("relabel {cell_name}: {warning}"));
                }
                outcome
                    .relabeled
                    .save_csv(dir.join(format!("relabeled-{i}.csv")))?;
                outcome
                    .retrained
                    .save(dir.join(format!("retrained-{i}.json")))?;
                retrained.push(outcome.retrained);
            }
            let retrained_models = match &models {
                CellModels::Shared(_) => CellModels::Shared(retrained[0].clone()),
                CellModels::PerLabel(_) => CellModels::PerLabel(retrained),
            };
            if let Some(golden) = golden {
                for (dataset, matrices, pmids) in [
                    ("ma1", &projected.ma1, &bundle.ma1),
                    ("ma2", &projected.ma2, &bundle.ma2),
                ] {
                    let golden_subset = golden.select_rows(pmids)?;
                    let before = predict_cell(&models, matrices, targets)?;
                    let after = predict_cell(&retrained_models, matrices, targets)?;
                    let before_report = evaluate(&before, &golden_subset, targets)?;
                    let after_report = evaluate(&after, &golden_subset, targets)?;
                    report.push_str(&format!("original,{dataset},{}\n", before_report.macro_f1));
                    report.push_str(&format!("retrained,{dataset},{}\n", after_report.macro_f1));
                }
            }
            write_atomic(&dir.join("relabel_report.csv"), report.as_bytes())?;
            Ok(())
        },
        |_| Ok(()),
    )?;
    Ok(())
}

fn write_reports(
    out_dir: &Path,
    outcomes: &[CellOutcome],
    baselines: &[(String, Option<EvalReport>, Option<EvalReport>)],
) -> anyhow::Result<()> {
    let mut report = String::from(
        "kind,selector,k,exclude_ct,classifier,penalty,c,dataset,macro_f1,per_label_f1,cv_mean_macro_f1\n",
    );
    let mut plot = String::from("configuration,dataset,macro_f1\n");
    let per_label = |r: &EvalReport| {
        r.per_label
            .iter()
            .map(|m| format!("{}:{}", m.label_id, m.f1))
            .collect::<Vec<_>>()
            .join("|")
    };
    let kind_name = |kind: ClassifierKind| match kind {
        ClassifierKind::LogReg => "logreg",
        ClassifierKind::LinearSvm => "linearsvm",
        ClassifierKind::DecisionTree => "dtree",
        ClassifierKind::RandomForest => "rforest",
    };
    for outcome in outcomes {
        let penalty = outcome
            .penalty
            .map(|p| match p {
                Penalty::L1 => "l1",
                Penalty::L2 => "l2",
            })
            .unwrap_or("");
        let c = outcome.c.map(|c| c.to_string()).unwrap_or_default();
        let cv = outcome
            .cv_mean_macro_f1
            .map(|v| v.to_string())
            .unwrap_or_default();
        for (dataset, eval) in [("ma1", &outcome.ma1), ("ma2", &outcome.ma2)] {
            if let Some(eval) = eval {
                report.push_str(&format!(
                    "model,{},{},{},{},{},{},{},{},{},{}\n",
                    outcome.selector,
                    outcome.k,
                    outcome.exclude_ct_concepts,
                    kind_name(outcome.classifier),
                    penalty,
                    c,
                    dataset,
                    eval.macro_f1,
                    per_label(eval),
                    cv
                ));
                plot.push_str(&format!(
                    "{},{},{}\n",
                    outcome.name(),
                    dataset,
                    eval.macro_f1
                ));
            }
        }
        if outcome.ma1.is_none() && outcome.ma2.is_none() && outcome.cv_mean_macro_f1.is_some() {
            report.push_str(&format!(
                "model,{},{},{},{},{},{},cv,,,{}\n",
                outcome.selector,
                outcome.k,
                outcome.exclude_ct_concepts,
                kind_name(outcome.classifier),
                penalty,
                c,
                cv
            ));
        }
    }
    for (name, ma1, ma2) in baselines {
        for (dataset, eval) in [("ma1", ma1), ("ma2", ma2)] {
            if let Some(eval) = eval {
                report.push_str(&format!(
                    "baseline,,,,{name},,,{dataset},{},{},\n",
                    eval.macro_f1,
                    per_label(eval)
                ));
                plot.push_str(&format!("baseline-{name},{dataset},{}\n", eval.macro_f1));
            }
        }
    }
    write_atomic(&out_dir.join("report.csv"), report.as_bytes())?;
    write_atomic(&out_dir.join("plot_data.csv"), plot.as_bytes())?;
    Ok(())
}
