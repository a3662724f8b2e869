//! One-vs-rest training and prediction.
//!
//! A distinct binary classifier is trained for each target label: logistic
//! regression or a linear SVM (L1/L2, parameter `C` on the data term), a
//! CART decision tree, or a random forest. Per-label work is independent and
//! seeded from `(seed, label_id)`, so training in any order, or in parallel,
//! produces identical models.

pub mod linear;
pub mod tree;

pub use linear::{OptimizerOptions, Penalty};
pub use tree::{TreeModel, TreeOptions};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::weaklabel::{LabelMatrix, MatrixKind};

use linear::{fit_linear, LinearProblem, LossKind};
use tree::{fit_forest, fit_tree, ColumnData};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid model JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("matrix must be TF-IDF weighted before training or prediction")]
    NotWeighted,
    #[error("matrix rows are not aligned with the label matrix")]
    RowMismatch,
    #[error("unknown target label {label}")]
    UnknownLabel { label: String },
    #[error("single-class target labels cannot be trained: {labels:?}")]
    SingleClass { labels: Vec<String> },
    #[error("feature space mismatch: model was trained on {expected}, matrix has {got}")]
    SpaceMismatch { expected: String, got: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    LogReg,
    LinearSvm,
    DecisionTree,
    RandomForest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub classifier: ClassifierKind,
    #[serde(default = "default_penalty")]
    pub penalty: Penalty,
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default)]
    pub tree: TreeOptions,
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
}

fn default_penalty() -> Penalty {
    Penalty::L2
}

fn default_c() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn new(classifier: ClassifierKind, seed: u64) -> Self {
        TrainConfig {
            classifier,
            penalty: Penalty::L2,
            c: 1.0,
            tree: TreeOptions::default(),
            seed,
            optimizer: OptimizerOptions::default(),
        }
    }

    pub fn with_penalty(mut self, penalty: Penalty) -> Self {
        self.penalty = penalty;
        self
    }

    pub fn with_c(mut self, c: f64) -> Self {
        assert!(c > 0.0, "C must be positive");
        self.c = c;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
#[serde(rename_all = "snake_case")]
pub enum BinaryModel {
    Linear { weights: Vec<f64>, intercept: f64 },
    Tree { tree: TreeModel },
    Forest { trees: Vec<TreeModel> },
}

impl BinaryModel {
    fn predict_row(&self, row: &[(u32, f64)]) -> bool {
        let value_of = |f: u32| match row.binary_search_by_key(&f, |&(j, _)| j) {
            Ok(i) => row[i].1,
            Err(_) => 0.0,
        };
        match self {
            BinaryModel::Linear { weights, intercept } => {
                let decision: f64 = row
                    .iter()
                    .map(|&(j, v)| weights[j as usize] * v)
                    .sum::<f64>()
                    + intercept;
                decision >= 0.0
            }
            BinaryModel::Tree { tree } => tree.predict(&value_of),
            BinaryModel::Forest { trees } => {
                let votes = trees.iter().filter(|t| t.predict(&value_of)).count();
                2 * votes > trees.len()
            }
        }
    }
}

/// One binary model per target label, tied to the feature space it was
/// trained on via the space digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OvrModel {
    pub config: TrainConfig,
    pub label_ids: Vec<String>,
    pub space_digest: String,
    pub models: Vec<BinaryModel>,
    pub warnings: Vec<String>,
}

impl OvrModel {
    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), LearnError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<OvrModel, LearnError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn binary_model(&self, label: &str) -> Option<&BinaryModel> {
        self.label_ids
            .iter()
            .position(|l| l == label)
            .map(|i| &self.models[i])
    }
}

/// Stable per-task seed derived from the run seed and a task name, so that
/// parallel per-label (or per-tree) work never depends on scheduling.
pub fn derive_seed(seed: u64, salt: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(salt.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn check_alignment(m: &FeatureMatrix, labels: &LabelMatrix) -> Result<(), LearnError> {
    if !m.weighted {
        return Err(LearnError::NotWeighted);
    }
    if m.pmids != labels.pmids {
        return Err(LearnError::RowMismatch);
    }
    Ok(())
}

/// Train one binary classifier per target label.
pub fn train(
    m: &FeatureMatrix,
    labels: &LabelMatrix,
    targets: &[String],
    cfg: &TrainConfig,
) -> Result<OvrModel, LearnError> {
    check_alignment(m, labels)?;
    let mut columns = Vec::with_capacity(targets.len());
    for target in targets {
        let column = labels
            .label_index(target)
            .ok_or_else(|| LearnError::UnknownLabel {
                label: target.clone(),
            })?;
        columns.push(column);
    }
    let n = labels.n_rows();
    let single_class: Vec<String> = targets
        .iter()
        .zip(&columns)
        .filter(|(_, &c)| {
            let pos = (0..n).filter(|&r| labels.get(r, c)).count();
            pos == 0 || pos == n
        })
        .map(|(t, _)| t.clone())
        .collect();
    if !single_class.is_empty() {
        return Err(LearnError::SingleClass {
            labels: single_class,
        });
    }

    let needs_columns = matches!(
        cfg.classifier,
        ClassifierKind::DecisionTree | ClassifierKind::RandomForest
    );
    let column_data = needs_columns.then(|| ColumnData::from_rows(&m.rows, m.space.len()));

    let results: Vec<(BinaryModel, Vec<String>)> = targets
        .par_iter()
        .zip(&columns)
        .map(|(target, &column)| {
            let y_bool: Vec<bool> = (0..n).map(|r| labels.get(r, column)).collect();
            let label_seed = derive_seed(cfg.seed, target);
            match cfg.classifier {
                ClassifierKind::LogReg | ClassifierKind::LinearSvm => {
                    let y: Vec<f64> = y_bool.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
                    let problem = LinearProblem {
                        rows: &m.rows,
                        y: &y,
                        loss: if cfg.classifier == ClassifierKind::LogReg {
                            LossKind::Logistic
                        } else {
                            LossKind::Hinge
                        },
                        penalty: cfg.penalty,
                        c: cfg.c,
                        dim: m.space.len(),
                    };
                    let fit = fit_linear(&problem, &cfg.optimizer);
                    // The objective is convex and descent is monotone from
                    // the zero vector, so this can only fire on a bug.
                    assert!(
                        fit.objective <= fit.objective_at_zero + 1e-9,
                        "objective increased during training of {target}"
                    );
                    let mut warnings = Vec::new();
                    if !fit.converged {
                        warnings.push(format!(
                            "label {target}: optimizer stopped after {} iterations without reaching tol {}",
                            fit.iterations, cfg.optimizer.tol
                        ));
                    }
                    (
                        BinaryModel::Linear {
                            weights: fit.weights,
                            intercept: fit.intercept,
                        },
                        warnings,
                    )
                }
                ClassifierKind::DecisionTree => {
                    let data = column_data.as_ref().expect("columns built");
                    let mut rng = ChaCha8Rng::seed_from_u64(label_seed);
                    let tree = fit_tree(
                        data,
                        &y_bool,
                        &cfg.tree,
                        (0..n as u32).collect(),
                        None,
                        &mut rng,
                    );
                    (BinaryModel::Tree { tree }, Vec::new())
                }
                ClassifierKind::RandomForest => {
                    let data = column_data.as_ref().expect("columns built");
                    let trees = fit_forest(data, &y_bool, &cfg.tree, label_seed);
                    (BinaryModel::Forest { trees }, Vec::new())
                }
            }
        })
        .collect();

    let mut models = Vec::with_capacity(results.len());
    let mut warnings = Vec::new();
    for (model, mut w) in results {
        models.push(model);
        warnings.append(&mut w);
    }
    Ok(OvrModel {
        config: cfg.clone(),
        label_ids: targets.to_vec(),
        space_digest: m.space.digest(),
        models,
        warnings,
    })
}

/// Apply every per-label model; positive iff the decision value is
/// nonnegative (linear), the leaf majority (tree) or a strict majority of
/// tree votes (forest, ties negative).
pub fn predict(model: &OvrModel, m: &FeatureMatrix) -> Result<LabelMatrix, LearnError> {
    if !m.weighted {
        return Err(LearnError::NotWeighted);
    }
    let digest = m.space.digest();
    if digest != model.space_digest {
        return Err(LearnError::SpaceMismatch {
            expected: model.space_digest.clone(),
            got: digest,
        });
    }
    let rows: Vec<Vec<u32>> = m
        .rows
        .par_iter()
        .map(|row| {
            model
                .models
                .iter()
                .enumerate()
                .filter(|(_, bm)| bm.predict_row(row))
                .map(|(i, _)| i as u32)
                .collect()
        })
        .collect();
    LabelMatrix::new(
        m.pmids.clone(),
        model.label_ids.clone(),
        rows,
        MatrixKind::Predicted,
    )
    .map_err(|_| LearnError::RowMismatch)
}

/// Objective value and (sub)gradient of a linear configuration at `(w, b)`.
/// For L1 the gradient is the smooth part's; the penalty still enters the
/// value.
pub struct ObjectiveEval {
    pub value: f64,
    pub grad_weights: Vec<f64>,
    pub grad_intercept: f64,
}

pub fn loss_gradient(
    w: &[f64],
    b: f64,
    m: &FeatureMatrix,
    y: &[bool],
    cfg: &TrainConfig,
) -> Result<ObjectiveEval, LearnError> {
    if y.len() != m.n_rows() {
        return Err(LearnError::RowMismatch);
    }
    let loss = match cfg.classifier {
        ClassifierKind::LogReg => LossKind::Logistic,
        ClassifierKind::LinearSvm => LossKind::Hinge,
        other => {
            return Err(LearnError::UnknownLabel {
                label: format!("{other:?} has no differentiable objective"),
            })
        }
    };
    let y_signed: Vec<f64> = y.iter().map(|&p| if p { 1.0 } else { -1.0 }).collect();
    let problem = LinearProblem {
        rows: &m.rows,
        y: &y_signed,
        loss,
        penalty: cfg.penalty,
        c: cfg.c,
        dim: m.space.len(),
    };
    let eval = problem.value_grad(w, b);
    Ok(ObjectiveEval {
        value: eval.value,
        grad_weights: eval.grad_weights,
        grad_intercept: eval.grad_intercept,
    })
}

/// Everything a relabel-and-retrain round produces, kept for comparison.
#[derive(Debug)]
pub struct RelabelOutcome {
    pub original: OvrModel,
    pub retrained: OvrModel,
    pub original_labels: LabelMatrix,
    pub relabeled: LabelMatrix,
    pub warnings: Vec<String>,
}

/// Predict on the training matrix, substitute the predictions for the weak
/// labels and retrain. A label whose relabeled column loses all positives
/// (or all negatives) is skipped with a warning and keeps its original
/// binary model.
pub fn relabel_and_retrain(
    model: &OvrModel,
    train_m: &FeatureMatrix,
    train_labels: &LabelMatrix,
    cfg: &TrainConfig,
) -> Result<RelabelOutcome, LearnError> {
    check_alignment(train_m, train_labels)?;
    let predicted = predict(model, train_m)?;
    let relabeled = predicted.clone().with_kind(MatrixKind::Weak);

    let n = relabeled.n_rows();
    let mut warnings = Vec::new();
    let mut retrainable = Vec::new();
    for label in &model.label_ids {
        let column = relabeled.label_index(label).expect("own label");
        let pos = (0..n).filter(|&r| relabeled.get(r, column)).count();
        if pos == 0 || pos == n {
            warnings.push(format!(
                "label {label}: relabeled column is single-class ({pos} positives), keeping the original model"
            ));
        } else {
            retrainable.push(label.clone());
        }
    }

    let retrained = if retrainable.is_empty() {
        let mut copy = model.clone();
        copy.warnings = warnings.clone();
        copy
    } else {
        let partial = train(train_m, &relabeled, &retrainable, cfg)?;
        let mut models = Vec::with_capacity(model.label_ids.len());
        for label in &model.label_ids {
            match partial.binary_model(label) {
                Some(bm) => models.push(bm.clone()),
                None => models.push(model.binary_model(label).expect("own label").clone()),
            }
        }
        OvrModel {
            config: cfg.clone(),
            label_ids: model.label_ids.clone(),
            space_digest: model.space_digest.clone(),
            models,
            warnings: [partial.warnings.clone(), warnings.clone()].concat(),
        }
    };

    Ok(RelabelOutcome {
        original: model.clone(),
        retrained,
        original_labels: train_labels.clone(),
        relabeled,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FeatureDef, FeatureKind, FeatureSpace};
    use std::sync::Arc;

    fn space(n: usize) -> Arc<FeatureSpace> {
        Arc::new(FeatureSpace::new(
            (0..n)
                .map(|i| FeatureDef {
                    id: i as u32,
                    kind: FeatureKind::Lexical,
                    key: format!("f{i}"),
                })
                .collect(),
        ))
    }

    fn matrix(values: &[Vec<f64>], weighted: bool) -> FeatureMatrix {
        let n_features = values[0].len();
        FeatureMatrix {
            pmids: (0..values.len()).map(|i| format!("p{i}")).collect(),
            space: space(n_features),
            rows: values
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, &v)| v != 0.0)
                        .map(|(f, &v)| (f as u32, v))
                        .collect()
                })
                .collect(),
            weighted,
        }
    }

    fn labels_of(rows: &[Vec<u32>]) -> LabelMatrix {
        LabelMatrix::new(
            (0..rows.len()).map(|i| format!("p{i}")).collect(),
            vec!["A".into(), "B".into()],
            rows.to_vec(),
            MatrixKind::Weak,
        )
        .unwrap()
    }

    fn separable() -> (FeatureMatrix, LabelMatrix) {
        let m = matrix(&[vec![1.0, 0.0], vec![-1.0, 0.5]], true);
        let y = labels_of(&[vec![0], vec![1]]);
        (m, y)
    }

    #[test]
    fn separable_pair_is_reproduced_by_every_classifier() {
        let (m, y) = separable();
        let targets = vec!["A".to_string(), "B".to_string()];
        for kind in [
            ClassifierKind::LogReg,
            ClassifierKind::LinearSvm,
            ClassifierKind::DecisionTree,
            ClassifierKind::RandomForest,
        ] {
            let cfg = TrainConfig::new(kind, 5);
            let model = train(&m, &y, &targets, &cfg).unwrap();
            let pred = predict(&model, &m).unwrap();
            assert_eq!(pred.rows, y.rows, "classifier {kind:?}");
        }
    }

    #[test]
    fn unweighted_matrix_is_rejected() {
        let (m, y) = separable();
        let raw = FeatureMatrix {
            weighted: false,
            ..m
        };
        let cfg = TrainConfig::new(ClassifierKind::LogReg, 5);
        assert!(matches!(
            train(&raw, &y, &["A".to_string()], &cfg),
            Err(LearnError::NotWeighted)
        ));
    }

    #[test]
    fn single_class_targets_are_listed_in_the_error() {
        let m = matrix(&[vec![1.0], vec![0.5]], true);
        let y = labels_of(&[vec![0], vec![0]]);
        let cfg = TrainConfig::new(ClassifierKind::LogReg, 5);
        match train(&m, &y, &["A".to_string(), "B".to_string()], &cfg) {
            Err(LearnError::SingleClass { labels }) => {
                assert_eq!(labels, vec!["A".to_string(), "B".to_string()]);
            }
            other => panic!("expected single-class error, got {other:?}"),
        }
    }

    #[test]
    fn all_zero_row_with_negative_intercept_predicts_negative() {
        let model = OvrModel {
            config: TrainConfig::new(ClassifierKind::LogReg, 0),
            label_ids: vec!["A".into()],
            space_digest: space(2).digest(),
            models: vec![BinaryModel::Linear {
                weights: vec![1.0, 1.0],
                intercept: -0.25,
            }],
            warnings: Vec::new(),
        };
        let m = matrix(&[vec![0.0, 0.0]], true);
        let pred = predict(&model, &m).unwrap();
        assert!(pred.rows[0].is_empty());
    }

    #[test]
    fn forest_tie_votes_negative() {
        use tree::{TreeModel, TreeNode};
        let yes = TreeModel {
            nodes: vec![TreeNode::Leaf { pos: 1, neg: 0 }],
        };
        let no = TreeModel {
            nodes: vec![TreeNode::Leaf { pos: 0, neg: 1 }],
        };
        let model = OvrModel {
            config: TrainConfig::new(ClassifierKind::RandomForest, 0),
            label_ids: vec!["A".into()],
            space_digest: space(1).digest(),
            models: vec![BinaryModel::Forest {
                trees: vec![yes, no],
            }],
            warnings: Vec::new(),
        };
        let m = matrix(&[vec![1.0]], true);
        let pred = predict(&model, &m).unwrap();
        assert!(pred.rows[0].is_empty(), "2-tree disagreement is negative");
    }

    #[test]
    fn space_mismatch_is_a_hard_error() {
        let (m, y) = separable();
        let cfg = TrainConfig::new(ClassifierKind::LogReg, 5);
        let model = train(&m, &y, &["A".to_string()], &cfg).unwrap();
        let other = matrix(&[vec![1.0, 0.0, 0.0]], true);
        assert!(matches!(
            predict(&model, &other),
            Err(LearnError::SpaceMismatch { .. })
        ));
    }

    #[test]
    fn training_is_deterministic_and_order_independent() {
        let m = matrix(
            &[
                vec![1.0, 0.2, 0.0],
                vec![0.8, 0.0, 0.3],
                vec![-0.9, 0.1, 0.2],
                vec![-1.0, 0.0, 0.1],
                vec![0.7, 0.3, 0.0],
                vec![-0.6, 0.2, 0.4],
            ],
            true,
        );
        let y = labels_of(&[vec![0], vec![0, 1], vec![1], vec![], vec![0], vec![1]]);
        for kind in [ClassifierKind::LogReg, ClassifierKind::RandomForest] {
            let cfg = TrainConfig::new(kind, 9);
            let ab = train(&m, &y, &["A".to_string(), "B".to_string()], &cfg).unwrap();
            let ba = train(&m, &y, &["B".to_string(), "A".to_string()], &cfg).unwrap();
            assert_eq!(ab.to_json(), train(&m, &y, &["A".to_string(), "B".to_string()], &cfg).unwrap().to_json());
            assert_eq!(ab.binary_model("A"), ba.binary_model("A"), "{kind:?}");
            assert_eq!(ab.binary_model("B"), ba.binary_model("B"), "{kind:?}");
        }
    }

    #[test]
    fn model_roundtrips_through_json() {
        let (m, y) = separable();
        let cfg = TrainConfig::new(ClassifierKind::RandomForest, 5);
        let model = train(&m, &y, &["A".to_string()], &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let loaded = OvrModel::load(&path).unwrap();
        assert_eq!(model, loaded);
    }

    #[test]
    fn l2_weight_norm_is_nondecreasing_in_c() {
        // A non-separable dataset so the optimum is finite for every C.
        let m = matrix(
            &[
                vec![1.0, 0.3],
                vec![0.9, 0.1],
                vec![-1.0, 0.2],
                vec![-0.8, 0.4],
                vec![0.5, 0.25],
                vec![-0.5, 0.15],
                vec![0.2, 0.0],
                vec![-0.2, 0.3],
                // two mislabeled rows
                vec![0.7, 0.2],
                vec![-0.7, 0.1],
            ],
            true,
        );
        let rows: Vec<Vec<u32>> = vec![
            vec![0],
            vec![0],
            vec![],
            vec![],
            vec![0],
            vec![],
            vec![0],
            vec![],
            vec![],
            vec![0],
        ];
        let y = LabelMatrix::new(
            (0..rows.len()).map(|i| format!("p{i}")).collect(),
            vec!["A".into(), "B".into()],
            rows,
            MatrixKind::Weak,
        )
        .unwrap();
        let mut previous = -1.0;
        for c in [0.01, 0.15, 1.0, 10.0] {
            let cfg = TrainConfig::new(ClassifierKind::LogReg, 3).with_c(c);
            let model = train(&m, &y, &["A".to_string()], &cfg).unwrap();
            let BinaryModel::Linear { weights, .. } = &model.models[0] else {
                panic!("linear model expected");
            };
            let norm = weights.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(
                norm >= previous - 1e-6,
                "norm {norm} decreased from {previous} at C={c}"
            );
            previous = norm;
        }
    }

    #[test]
    fn relabel_fixed_point_keeps_training_labels() {
        let (m, y) = separable();
        let cfg = TrainConfig::new(ClassifierKind::LogReg, 5);
        let model = train(&m, &y, &["A".to_string(), "B".to_string()], &cfg).unwrap();
        let outcome = relabel_and_retrain(&model, &m, &y, &cfg).unwrap();
        // The model reproduces its training labels, so the relabeled matrix
        // equals the original and the retrained model matches.
        assert_eq!(outcome.relabeled.rows, y.rows);
        assert_eq!(outcome.retrained.models, model.models);
    }

    #[test]
    fn relabel_skips_labels_that_lose_all_positives() {
        // Label B has one positive the model will not reproduce (its row is
        // identical to a negative-majority pattern).
        let m = matrix(
            &[vec![1.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![-1.0, 0.0]],
            true,
        );
        let y = labels_of(&[vec![0], vec![0, 1], vec![], vec![]]);
        let cfg = TrainConfig::new(ClassifierKind::LogReg, 5);
        let model = train(&m, &y, &["A".to_string(), "B".to_string()], &cfg).unwrap();
        let outcome = relabel_and_retrain(&model, &m, &y, &cfg).unwrap();
        // B's lone positive sits on a row whose twin is negative; logistic
        // regression predicts the majority, so B's relabeled column is empty.
        assert!(outcome
            .warnings
            .iter()
            .any(|w| w.contains("label B") && w.contains("single-class")));
        assert_eq!(
            outcome.retrained.binary_model("B"),
            model.binary_model("B"),
            "skipped label keeps its original model"
        );
    }
}
