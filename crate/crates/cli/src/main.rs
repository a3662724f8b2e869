//! Command-line interface for corpus construction, weak labeling,
//! featurization, training, evaluation and full pipeline runs.

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use std::collections::BTreeMap;
use std::path::PathBuf;

use finegrain::datasets::{
    build_ws, make_folds, split_ma1, split_ma2, undersample_majority, SplitBundle,
};
use finegrain::evalkit::{baseline_predict, evaluate, kappa, BaselineDicts, BaselineKind};
use finegrain::features::{
    apply_tfidf, build_features, featurize, score_features, select_top_k, selection_report,
    BuildOptions, FeatureMatrix, ScoreMethod, SelectorConfig,
};
use finegrain::ingest::eutils::{missing_pmids, EutilsClient};
use finegrain::ingest::{load_corpus, save_corpus, Corpus};
use finegrain::learn::{
    predict, relabel_and_retrain, train, ClassifierKind, OptimizerOptions, OvrModel, Penalty,
    TrainConfig, TreeOptions,
};
use finegrain::recognizer::{
    build_dictionary, import_occurrences, load_aux_dictionary, load_occurrences, recognize_corpus,
    save_occurrences, Granularity,
};
use finegrain::synth::{generate_synthetic, SynthSpec};
use finegrain::thesaurus::{fine_grained_labels, load_thesaurus, save_thesaurus};
use finegrain::weaklabel::{assign_weak_labels, target_labels, LabelMatrix, MatrixKind};
use finegrain_cli::pipeline::{self, PipelineConfig};

#[derive(Parser)]
#[command(
    name = "finegrain",
    version,
    about = "Refine coarse subject annotations into concept-level labels using concept occurrence as weak supervision"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Term,
    Token,
}

impl From<GranularityArg> for Granularity {
    fn from(value: GranularityArg) -> Self {
        match value {
            GranularityArg::Term => Granularity::TermLevel,
            GranularityArg::Token => Granularity::TokenLevel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Chi2,
    AnovaF,
}

impl From<MethodArg> for ScoreMethod {
    fn from(value: MethodArg) -> Self {
        match value {
            MethodArg::Chi2 => ScoreMethod::Chi2,
            MethodArg::AnovaF => ScoreMethod::AnovaF,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassifierArg {
    LogReg,
    LinearSvm,
    DecisionTree,
    RandomForest,
}

impl From<ClassifierArg> for ClassifierKind {
    fn from(value: ClassifierArg) -> Self {
        match value {
            ClassifierArg::LogReg => ClassifierKind::LogReg,
            ClassifierArg::LinearSvm => ClassifierKind::LinearSvm,
            ClassifierArg::DecisionTree => ClassifierKind::DecisionTree,
            ClassifierArg::RandomForest => ClassifierKind::RandomForest,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    L1,
    L2,
}

impl From<PenaltyArg> for Penalty {
    fn from(value: PenaltyArg) -> Self {
        match value {
            PenaltyArg::L1 => Penalty::L1,
            PenaltyArg::L2 => Penalty::L2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    AllAll,
    Random,
    WsLabels,
    WsRestAll,
    AllM,
    WsRestM,
    DTerms,
    DTokens,
}

#[derive(Subcommand)]
enum Command {
    /// Retrieve the corpus for a descriptor from an E-utilities endpoint.
    Fetch {
        #[arg(long)]
        descriptor_id: String,
        #[arg(long, default_value = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils")]
        endpoint: String,
        #[arg(long, default_value_t = 5000)]
        page_size: usize,
        #[arg(long, default_value_t = 200)]
        batch_size: usize,
        /// Corpus JSONL to write (or extend with --resume).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest_out: PathBuf,
        /// Fetch only pmids missing from the existing corpus file.
        #[arg(long)]
        resume: bool,
    },
    /// Import externally produced occurrence annotations.
    Import {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        descriptor_id: String,
        #[arg(long)]
        occurrences: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect concept occurrences with the built-in dictionary matcher.
    Annotate {
        #[arg(long)]
        thesaurus: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value_t = GranularityArg::Term)]
        granularity: GranularityArg,
        /// Auxiliary concept registry JSON for non-descriptor concepts.
        #[arg(long)]
        aux_dictionary: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also dump the dictionary mapping for debugging.
        #[arg(long)]
        dump_dictionary: Option<PathBuf>,
    },
    /// Convert occurrences into the weak label matrix.
    Weaklabel {
        #[arg(long)]
        thesaurus: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        occurrences: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_json: Option<PathBuf>,
        /// Also list the target labels (fine-grained, support >= min-support).
        #[arg(long)]
        targets_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        min_support: usize,
    },
    /// Construct the MA1/MA2/WS splits.
    Split {
        #[arg(long)]
        thesaurus: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        weak: PathBuf,
        #[arg(long)]
        ma1_n: usize,
        #[arg(long)]
        ma2_n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Under-sample the majority (preferred-concept-only) articles of WS.
    Undersample {
        #[arg(long)]
        thesaurus: PathBuf,
        #[arg(long)]
        weak: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        seed: u64,
        /// Output pmid list, one per line.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the feature space on the training articles and featurize splits.
    Featurize {
        #[arg(long)]
        thesaurus: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        occurrences: PathBuf,
        /// Training pmids, one per line; the space and IDF are fitted here.
        #[arg(long)]
        train_pmids: PathBuf,
        #[arg(long, default_value_t = 2)]
        min_token_df: usize,
        /// Directory for space.json, idf.json and train.json.
        #[arg(long)]
        out_dir: PathBuf,
        /// Additional pmid lists to featurize into the same space.
        #[arg(long)]
        extra: Vec<PathBuf>,
    },
    /// Score features and select the top k.
    Select {
        #[arg(long)]
        thesaurus: PathBuf,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        weak: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        exclude_ct_concepts: bool,
        #[arg(long)]
        out_selection: PathBuf,
        #[arg(long)]
        out_report: PathBuf,
    },
    /// Train one-vs-rest classifiers.
    Train {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        weak: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        /// Optional feature id list (selection.json) to project onto.
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long, value_enum)]
        classifier: ClassifierArg,
        #[arg(long, value_enum, default_value_t = PenaltyArg::L2)]
        penalty: PenaltyArg,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        max_iters: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        matrix: PathBuf,
        /// Optional feature id list the model was trained on.
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce a baseline prediction matrix.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineArg,
        #[arg(long)]
        thesaurus: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        weak: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate predictions against golden labels.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        golden: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        out_csv: PathBuf,
        #[arg(long)]
        out_json: Option<PathBuf>,
        /// Also report Cohen's kappa between the two annotations.
        #[arg(long)]
        with_kappa: bool,
    },
    /// K-fold cross-validation of one configuration on the training set.
    Cv {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        weak: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum)]
        classifier: ClassifierArg,
        #[arg(long, value_enum, default_value_t = PenaltyArg::L2)]
        penalty: PenaltyArg,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long)]
        train_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relabel the training set with a model's predictions and retrain.
    Relabel {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        weak: PathBuf,
        /// Optional feature id list the model was trained on.
        #[arg(long)]
        selection: Option<PathBuf>,
        #[arg(long)]
        out_model: PathBuf,
        #[arg(long)]
        out_relabeled: PathBuf,
    },
    /// Execute the full pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Generate a synthetic corpus with controlled weak-label noise.
    Synth {
        /// Full SynthSpec JSON; overrides the individual flags.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        n_articles: usize,
        #[arg(long, default_value_t = 4)]
        n_labels: usize,
        #[arg(long, default_value_t = 0.3)]
        miss_rate: f64,
        #[arg(long, default_value_t = 0.05)]
        spurious_rate: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn read_lines(path: &PathBuf) -> anyhow::Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect())
}

fn write_lines(path: &PathBuf, lines: &[String]) -> anyhow::Result<()> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_matrix(path: &PathBuf) -> anyhow::Result<FeatureMatrix> {
    FeatureMatrix::from_json(
        &std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?,
    )
    .map_err(Into::into)
}

fn load_selection(path: &PathBuf) -> anyhow::Result<Vec<u32>> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn corpus_with_descriptor(path: &PathBuf, descriptor_id: &str) -> anyhow::Result<Corpus> {
    load_corpus(path, descriptor_id).with_context(|| format!("loading corpus {}", path.display()))
}

fn subset_rows(matrix: &FeatureMatrix, pmids: &[String]) -> FeatureMatrix {
    let index: std::collections::HashMap<&str, usize> = matrix
        .pmids
        .iter()
        .enumerate()
        .map(|(i, pm)| (pm.as_str(), i))
        .collect();
    FeatureMatrix {
        pmids: pmids.to_vec(),
        space: std::sync::Arc::clone(&matrix.space),
        rows: pmids
            .iter()
            .map(|pm| matrix.rows[index[pm.as_str()]].clone())
            .collect(),
        weighted: matrix.weighted,
    }
}

fn main() {
    if let Err(error) = dispatch(Cli::parse()) {
        eprintln!("error: {error:#}");
        std::process::exit(1);
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Fetch {
            descriptor_id,
            endpoint,
            page_size,
            batch_size,
            out,
            manifest_out,
            resume,
        } => {
            let client = EutilsClient::new(&endpoint);
            let pmids = client
                .search_pmids(&descriptor_id, page_size)
                .context("stage fetch: esearch")?;
            eprintln!("fetch: {} pmids for {descriptor_id}", pmids.len());
            let mut corpus = if resume && out.exists() {
                corpus_with_descriptor(&out, &descriptor_id)?
            } else {
                Corpus {
                    descriptor_id: descriptor_id.clone(),
                    articles: Vec::new(),
                }
            };
            let todo = missing_pmids(&pmids, &corpus);
            eprintln!(
                "fetch: {} to retrieve, {} already present",
                todo.len(),
                corpus.len()
            );
            match client.fetch_articles(&todo, batch_size, &descriptor_id) {
                Ok(result) => {
                    corpus.articles.extend(result.corpus.articles);
                    save_corpus(&corpus, &out)?;
                    std::fs::write(
                        &manifest_out,
                        serde_json::to_string_pretty(&result.manifest)?,
                    )?;
                    eprintln!(
                        "fetch: {} articles written, {} unresolvable",
                        corpus.len(),
                        result.manifest.missing.len()
                    );
                    Ok(())
                }
                Err(abort) => {
                    // Keep the partial progress so the run can be resumed.
                    corpus.articles.extend(abort.partial.corpus.articles.clone());
                    save_corpus(&corpus, &out)?;
                    std::fs::write(
                        &manifest_out,
                        serde_json::to_string_pretty(&abort.partial.manifest)?,
                    )?;
                    Err(anyhow::anyhow!("stage fetch: {abort}"))
                }
            }
        }
        Command::Import {
            corpus,
            descriptor_id,
            occurrences,
            out,
        } => {
            let corpus = corpus_with_descriptor(&corpus, &descriptor_id)?;
            let imported = import_occurrences(&occurrences, &corpus).context("stage import")?;
            save_occurrences(&imported, &out)?;
            eprintln!("import: {} occurrences", imported.len());
            Ok(())
        }
        Command::Annotate {
            thesaurus,
            corpus,
            granularity,
            aux_dictionary,
            out,
            dump_dictionary,
        } => {
            let descriptor = load_thesaurus(&thesaurus).context("stage annotate: thesaurus")?;
            let corpus = corpus_with_descriptor(&corpus, &descriptor.descriptor_id)?;
            let mut dict = build_dictionary(&descriptor, granularity.into());
            if let Some(aux) = aux_dictionary {
                dict = dict.merge(&load_aux_dictionary(&aux, granularity.into())?);
            }
            if let Some(dump) = dump_dictionary {
                std::fs::write(&dump, dict.dump_json())?;
            }
            let occurrences = recognize_corpus(&corpus, &dict);
            save_occurrences(&occurrences, &out)?;
            eprintln!(
                "annotate: {} occurrences across {} articles",
                occurrences.len(),
                corpus.len()
            );
            Ok(())
        }
        Command::Weaklabel {
            thesaurus,
            corpus,
            occurrences,
            out_csv,
            out_json,
            targets_out,
            min_support,
        } => {
            let descriptor = load_thesaurus(&thesaurus)?;
            let corpus = corpus_with_descriptor(&corpus, &descriptor.descriptor_id)?;
            let occurrences = load_occurrences(&occurrences)?;
            let weak = assign_weak_labels(&corpus, &occurrences, &descriptor)
                .context("stage weaklabel")?;
            weak.save_csv(&out_csv)?;
            if let Some(path) = out_json {
                weak.save_json(&path)?;
            }
            if let Some(path) = targets_out {
                let targets = target_labels(&weak, &descriptor, min_support)?;
                write_lines(&path, &targets)?;
            }
            for label in fine_grained_labels(&descriptor) {
                eprintln!(
                    "weaklabel: {label} support {}",
                    weak.column_support(&label).unwrap_or(0)
                );
            }
            Ok(())
        }
        Command::Split {
            thesaurus,
            corpus,
            weak,
            ma1_n,
            ma2_n,
            seed,
            out,
        } => {
            let descriptor = load_thesaurus(&thesaurus)?;
            let corpus = corpus_with_descriptor(&corpus, &descriptor.descriptor_id)?;
            let weak = LabelMatrix::load_json(&weak)?;
            let pmids = corpus.pmids();
            let ma1 = split_ma1(&pmids, ma1_n, seed).context("stage split: ma1")?;
            let remaining: Vec<String> = pmids
                .iter()
                .filter(|pm| !ma1.contains(pm))
                .cloned()
                .collect();
            let ma2 = split_ma2(
                &remaining,
                &weak,
                &descriptor,
                ma2_n,
                finegrain::learn::derive_seed(seed, "ma2"),
            )
            .context("stage split: ma2")?;
            let ws = build_ws(&pmids, &ma1, &ma2, &weak)?;
            let bundle = SplitBundle { seed, ma1, ma2, ws };
            bundle.validate_against(&pmids)?;
            bundle.save(&out)?;
            eprintln!(
                "split: ma1 {} ma2 {} ws {}",
                bundle.ma1.len(),
                bundle.ma2.len(),
                bundle.ws.len()
            );
            Ok(())
        }
        Command::Undersample {
            thesaurus,
            weak,
            splits,
            target,
            seed,
            out,
        } => {
            let descriptor = load_thesaurus(&thesaurus)?;
            let weak = LabelMatrix::load_json(&weak)?;
            let bundle = SplitBundle::load(&splits)?;
            let und = undersample_majority(&bundle.ws, &weak, &descriptor, target, seed)
                .context("stage undersample")?;
            write_lines(&out, &und)?;
            eprintln!("undersample: {} -> {} articles", bundle.ws.len(), und.len());
            Ok(())
        }
        Command::Featurize {
            thesaurus,
            corpus,
            occurrences,
            train_pmids,
            min_token_df,
            out_dir,
            extra,
        } => {
            let descriptor = load_thesaurus(&thesaurus)?;
            let corpus = corpus_with_descriptor(&corpus, &descriptor.descriptor_id)?;
            let occurrences = load_occurrences(&occurrences)?;
            let train_list = read_lines(&train_pmids)?;
            let train_corpus = corpus.select(&train_list)?;
            std::fs::create_dir_all(&out_dir)?;
            let (space, raw) = build_features(
                &train_corpus,
                &occurrences,
                &descriptor,
                BuildOptions { min_token_df },
            );
            let (weighted, idf) = finegrain::features::tfidf(&raw).context("stage featurize")?;
            std::fs::write(out_dir.join("space.json"), space.to_json())?;
            std::fs::write(out_dir.join("idf.json"), serde_json::to_string(&idf)?)?;
            std::fs::write(out_dir.join("train.json"), weighted.to_json())?;
            for list_path in extra {
                let name = list_path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "extra".into());
                let pmids = read_lines(&list_path)?;
                let subset = corpus.select(&pmids)?;
                let matrix = apply_tfidf(&featurize(&space, &subset, &occurrences), &idf)?;
                std::fs::write(out_dir.join(format!("{name}.json")), matrix.to_json())?;
            }
            eprintln!(
                "featurize: {} features over {} training articles",
                space.len(),
                train_list.len()
            );
            Ok(())
        }
        Command::Select {
            thesaurus,
            matrix,
            weak,
            targets,
            method,
            k,
            exclude_ct_concepts,
            out_selection,
            out_report,
        } => {
            let descriptor = load_thesaurus(&thesaurus)?;
            let matrix = load_matrix(&matrix)?;
            let weak = LabelMatrix::load_json(&weak)?.select_rows(&matrix.pmids)?;
            let target_list = read_lines(&targets)?;
            let scores = score_features(&matrix, &weak, &target_list, method.into())
                .context("stage select")?;
            let cfg = SelectorConfig {
                method: method.into(),
                k,
                exclude_ct_concepts,
            };
            let selected =
                select_top_k(&scores, &cfg, &descriptor, &matrix.space).context("stage select")?;
            std::fs::write(&out_selection, serde_json::to_string(&selected)?)?;
            std::fs::write(
                &out_report,
                selection_report(&scores, &selected, &matrix.space),
            )?;
            eprintln!("select: {} features", selected.len());
            Ok(())
        }
        Command::Train {
            matrix,
            weak,
            targets,
            selection,
            classifier,
            penalty,
            c,
            seed,
            max_iters,
            out,
        } => {
            let mut matrix = load_matrix(&matrix)?;
            if let Some(path) = selection {
                matrix = matrix.project(&load_selection(&path)?);
            }
            let weak = LabelMatrix::load_json(&weak)?.select_rows(&matrix.pmids)?;
            let target_list = read_lines(&targets)?;
            let cfg = TrainConfig {
                classifier: classifier.into(),
                penalty: penalty.into(),
                c,
                tree: TreeOptions::default(),
                seed,
                optimizer: OptimizerOptions {
                    max_iters,
                    ..OptimizerOptions::default()
                },
            };
            let model = train(&matrix, &weak, &target_list, &cfg).context("stage train")?;
            for warning in &model.warnings {
                eprintln!("train: warning: {warning}");
            }
            model.save(&out)?;
            eprintln!("train: {} per-label models", model.label_ids.len());
            Ok(())
        }
        Command::Predict {
            model,
            matrix,
            selection,
            out,
        } => {
            let model = OvrModel::load(&model)?;
            let mut matrix = load_matrix(&matrix)?;
            if let Some(path) = selection {
                matrix = matrix.project(&load_selection(&path)?);
            }
            let pred = predict(&model, &matrix).context("stage predict")?;
            pred.save_csv(&out)?;
            eprintln!("predict: {} articles", pred.n_rows());
            Ok(())
        }
        Command::Baseline {
            kind,
            thesaurus,
            corpus,
            weak,
            targets,
            seed,
            out,
        } => {
            let descriptor = load_thesaurus(&thesaurus)?;
            let corpus = corpus_with_descriptor(&corpus, &descriptor.descriptor_id)?;
            let weak = LabelMatrix::load_json(&weak)?.select_rows(&corpus.pmids())?;
            let target_list = read_lines(&targets)?;
            let kind = match kind {
                BaselineArg::AllAll => BaselineKind::AllAll,
                BaselineArg::Random => BaselineKind::Random { seed },
                BaselineArg::WsLabels => BaselineKind::WsLabels,
                BaselineArg::WsRestAll => BaselineKind::WsRestAll,
                BaselineArg::AllM => BaselineKind::AllM,
                BaselineArg::WsRestM => BaselineKind::WsRestM,
                BaselineArg::DTerms => BaselineKind::DTerms,
                BaselineArg::DTokens => BaselineKind::DTokens,
            };
            let dicts = BaselineDicts::from_descriptor(&descriptor);
            let pred = baseline_predict(
                kind,
                Some(&corpus),
                &weak,
                Some(&dicts),
                &descriptor,
                &target_list,
            )
            .context("stage baseline")?;
            pred.save_csv(&out)?;
            eprintln!("baseline {}: {} articles", kind.name(), pred.n_rows());
            Ok(())
        }
        Command::Evaluate {
            pred,
            golden,
            targets,
            out_csv,
            out_json,
            with_kappa,
        } => {
            let pred = LabelMatrix::load_csv(&pred, MatrixKind::Predicted)?;
            let golden_all = LabelMatrix::load_csv(&golden, MatrixKind::Golden)?;
            let golden = golden_all.select_rows(&pred.pmids)?;
            let target_list = read_lines(&targets)?;
            let report = evaluate(&pred, &golden, &target_list).context("stage evaluate")?;
            std::fs::write(&out_csv, report.to_csv())?;
            if let Some(path) = out_json {
                std::fs::write(&path, report.to_json_bundle(&BTreeMap::new()))?;
            }
            println!("macro_f1 {}", report.macro_f1);
            if with_kappa {
                let result = kappa(&pred, &golden, &target_list)?;
                println!("macro_kappa {}", result.macro_kappa);
            }
            Ok(())
        }
        Command::Cv {
            matrix,
            weak,
            targets,
            k,
            seed,
            classifier,
            penalty,
            c,
            train_seed,
            out,
        } => {
            let matrix = load_matrix(&matrix)?;
            let weak = LabelMatrix::load_json(&weak)?.select_rows(&matrix.pmids)?;
            let target_list = read_lines(&targets)?;
            let folds = make_folds(&matrix.pmids, k, seed).context("stage cv")?;
            let cfg = TrainConfig {
                classifier: classifier.into(),
                penalty: penalty.into(),
                c,
                tree: TreeOptions::default(),
                seed: train_seed,
                optimizer: OptimizerOptions::default(),
            };
            let mut rows = String::from("fold,macro_f1\n");
            let mut sum = 0.0;
            for fold in 0..k {
                let held: Vec<String> = matrix
                    .pmids
                    .iter()
                    .filter(|pm| folds.assignments[*pm] == fold)
                    .cloned()
                    .collect();
                let rest: Vec<String> = matrix
                    .pmids
                    .iter()
                    .filter(|pm| folds.assignments[*pm] != fold)
                    .cloned()
                    .collect();
                let model = train(
                    &subset_rows(&matrix, &rest),
                    &weak.select_rows(&rest)?,
                    &target_list,
                    &cfg,
                )?;
                let pred = predict(&model, &subset_rows(&matrix, &held))?;
                let report = evaluate(
                    &pred,
                    &weak.select_rows(&held)?.restrict_labels(&target_list)?,
                    &target_list,
                )?;
                rows.push_str(&format!("{fold},{}\n", report.macro_f1));
                sum += report.macro_f1;
            }
            rows.push_str(&format!("mean,{}\n", sum / k as f64));
            std::fs::write(&out, rows)?;
            println!("cv mean macro_f1 {}", sum / k as f64);
            Ok(())
        }
        Command::Relabel {
            model,
            matrix,
            weak,
            selection,
            out_model,
            out_relabeled,
        } => {
            let model = OvrModel::load(&model)?;
            let mut matrix = load_matrix(&matrix)?;
            if let Some(path) = selection {
                matrix = matrix.project(&load_selection(&path)?);
            }
            let weak = LabelMatrix::load_json(&weak)?.select_rows(&matrix.pmids)?;
            let cfg = model.config.clone();
            let outcome =
                relabel_and_retrain(&model, &matrix, &weak, &cfg).context("stage relabel")?;
            for warning in &outcome.warnings {
                eprintln!("relabel: warning: {warning}");
            }
            outcome.retrained.save(&out_model)?;
            outcome.relabeled.save_csv(&out_relabeled)?;
            Ok(())
        }
        Command::Run { config } => {
            let config = PipelineConfig::load(&config)?;
            let manifest = pipeline::run(&config)?;
            let cached = manifest
                .stages
                .iter()
                .filter(|s| s.status == pipeline::StageStatus::Cached)
                .count();
            println!(
                "run: {} stages ({} cached), manifest at {}",
                manifest.stages.len(),
                cached,
                config.output_dir.join("manifest.json").display()
            );
            Ok(())
        }
        Command::Synth {
            spec,
            n_articles,
            n_labels,
            miss_rate,
            spurious_rate,
            seed,
            out_dir,
        } => {
            let spec = match spec {
                Some(path) => serde_json::from_str(&std::fs::read_to_string(&path)?)?,
                None => {
                    SynthSpec::with_defaults(n_articles, n_labels, miss_rate, spurious_rate, seed)
                }
            };
            let data = generate_synthetic(&spec).context("stage synth")?;
            std::fs::create_dir_all(&out_dir)?;
            save_corpus(&data.corpus, out_dir.join("corpus.jsonl"))?;
            data.golden.save_csv(out_dir.join("golden.csv"))?;
            save_thesaurus(&data.descriptor, out_dir.join("thesaurus.json"))?;
            std::fs::write(
                out_dir.join("spec.json"),
                serde_json::to_string_pretty(&spec)?,
            )?;
            eprintln!(
                "synth: {} articles, {} labels -> {}",
                data.corpus.len(),
                spec.labels.len(),
                out_dir.display()
            );
            Ok(())
        }
    }
}
