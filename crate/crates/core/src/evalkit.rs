//! Evaluation metrics and baseline predictors.
//!
//! Per-label precision/recall/F1 use the 0/0 -> 0 convention, macro-F1 is
//! the unweighted mean over target labels, and agreement is measured with
//! per-label Cohen's kappa. The baselines range from trivial (everything,
//! coin flips) through trusting the weak labels to dictionary matching.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use thiserror::Error;

use crate::ingest::Corpus;
use crate::recognizer::{build_dictionary, recognize, Dictionary, Granularity};
use crate::thesaurus::Descriptor;
use crate::weaklabel::{LabelMatrix, MatrixKind};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("matrices are not row-aligned")]
    RowMismatch,
    #[error("unknown target label {label}")]
    UnknownLabel { label: String },
    #[error("baseline {baseline} requires the preferred concept {concept_id} among the targets")]
    PrefNotInTargets {
        baseline: String,
        concept_id: String,
    },
    #[error("baseline {baseline} requires {input}")]
    MissingInput {
        baseline: String,
        input: &'static str,
    },
}

/// Binary confusion counts and derived scores for one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label_id: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl LabelMetrics {
    fn from_counts(label_id: &str, tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        LabelMetrics {
            label_id: label_id.to_string(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_label: Vec<LabelMetrics>,
    pub macro_f1: f64,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// One row per label plus a macro row.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("label,true_positives,false_positives,false_negatives,precision,recall,f1\n");
        for m in &self.per_label {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                m.label_id,
                m.true_positives,
                m.false_positives,
                m.false_negatives,
                m.precision,
                m.recall,
                m.f1
            ));
        }
        out.push_str(&format!("macro,,,,,,{}\n", self.macro_f1));
        out
    }

    /// JSON bundle with the digests of whatever produced the inputs.
    pub fn to_json_bundle(&self, digests: &BTreeMap<String, String>) -> String {
        #[derive(Serialize)]
        struct Bundle<'a> {
            report: &'a EvalReport,
            digests: &'a BTreeMap<String, String>,
        }
        serde_json::to_string_pretty(&Bundle {
            report: self,
            digests,
        })
        .expect("report serializes")
    }
}

/// Per-label precision/recall/F1 over the target labels, and their
/// unweighted mean F1.
pub fn evaluate(
    pred: &LabelMatrix,
    golden: &LabelMatrix,
    targets: &[String],
) -> Result<EvalReport, EvalError> {
    if pred.pmids != golden.pmids {
        return Err(EvalError::RowMismatch);
    }
    let mut per_label = Vec::with_capacity(targets.len());
    let mut notes = Vec::new();
    for target in targets {
        let pc = pred
            .label_index(target)
            .ok_or_else(|| EvalError::UnknownLabel {
                label: target.clone(),
            })?;
        let gc = golden
            .label_index(target)
            .ok_or_else(|| EvalError::UnknownLabel {
                label: target.clone(),
            })?;
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for row in 0..pred.n_rows() {
            match (pred.get(row, pc), golden.get(row, gc)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        if tp + fp == 0 && tp + fn_ == 0 {
            notes.push(format!(
                "label {target}: no golden positives and no predictions; F1 = 0 by the 0/0 convention"
            ));
        }
        per_label.push(LabelMetrics::from_counts(target, tp, fp, fn_));
    }
    let macro_f1 = if per_label.is_empty() {
        0.0
    } else {
        per_label.iter().map(|m| m.f1).sum::<f64>() / per_label.len() as f64
    };
    Ok(EvalReport {
        per_label,
        macro_f1,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelKappa {
    pub label_id: String,
    pub kappa: f64,
    /// Chance agreement was 1 (both annotations constant and identical), so
    /// kappa is reported as 0 by convention.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub per_label: Vec<LabelKappa>,
    pub macro_kappa: f64,
}

/// Per-label Cohen's kappa between two annotations of the same articles.
pub fn kappa(
    a: &LabelMatrix,
    b: &LabelMatrix,
    targets: &[String],
) -> Result<KappaResult, EvalError> {
    if a.pmids != b.pmids {
        return Err(EvalError::RowMismatch);
    }
    let n = a.n_rows() as f64;
    let mut per_label = Vec::with_capacity(targets.len());
    for target in targets {
        let ca = a
            .label_index(target)
            .ok_or_else(|| EvalError::UnknownLabel {
                label: target.clone(),
            })?;
        let cb = b
            .label_index(target)
            .ok_or_else(|| EvalError::UnknownLabel {
                label: target.clone(),
            })?;
        let mut both = 0.0;
        let mut neither = 0.0;
        let mut only_a = 0.0;
        let mut only_b = 0.0;
        for row in 0..a.n_rows() {
            match (a.get(row, ca), b.get(row, cb)) {
                (true, true) => both += 1.0,
                (false, false) => neither += 1.0,
                (true, false) => only_a += 1.0,
                (false, true) => only_b += 1.0,
            }
        }
        let p_observed = (both + neither) / n;
        let a_yes = (both + only_a) / n;
        let b_yes = (both + only_b) / n;
        let p_expected = a_yes * b_yes + (1.0 - a_yes) * (1.0 - b_yes);
        let (value, degenerate) = if (1.0 - p_expected).abs() < 1e-12 {
            (0.0, true)
        } else {
            ((p_observed - p_expected) / (1.0 - p_expected), false)
        };
        per_label.push(LabelKappa {
            label_id: target.clone(),
            kappa: value,
            degenerate,
        });
    }
    let macro_kappa = if per_label.is_empty() {
        0.0
    } else {
        per_label.iter().map(|k| k.kappa).sum::<f64>() / per_label.len() as f64
    };
    Ok(KappaResult {
        per_label,
        macro_kappa,
    })
}

/// The baseline predictors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineKind {
    /// Every target label on every article.
    AllAll,
    /// An independent fair coin per cell.
    Random { seed: u64 },
    /// Trust the weak labels.
    WsLabels,
    /// Weak labels, plus every target label on weakly unlabeled articles.
    WsRestAll,
    /// The preferred concept on every article, nothing else.
    AllM,
    /// Weak labels, plus the preferred concept on weakly unlabeled articles.
    WsRestM,
    /// Dictionary matching with full concept terms.
    DTerms,
    /// Dictionary matching with the terms' individual tokens.
    DTokens,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::AllAll => "all_all",
            BaselineKind::Random { .. } => "random",
            BaselineKind::WsLabels => "ws_labels",
            BaselineKind::WsRestAll => "ws_rest_all",
            BaselineKind::AllM => "all_m",
            BaselineKind::WsRestM => "ws_rest_m",
            BaselineKind::DTerms => "d_terms",
            BaselineKind::DTokens => "d_tokens",
        }
    }
}

/// Term- and token-level dictionaries for the dictionary baselines.
pub struct BaselineDicts {
    pub term: Dictionary,
    pub token: Dictionary,
}

impl BaselineDicts {
    pub fn from_descriptor(d: &Descriptor) -> Self {
        BaselineDicts {
            term: build_dictionary(d, Granularity::TermLevel),
            token: build_dictionary(d, Granularity::TokenLevel),
        }
    }
}

/// Produce a baseline prediction matrix over the target labels, row-aligned
/// with the weak matrix. "Weakly unlabeled" means an all-zero weak row over
/// every descriptor concept, the top concept included.
pub fn baseline_predict(
    kind: BaselineKind,
    corpus: Option<&Corpus>,
    weak: &LabelMatrix,
    dicts: Option<&BaselineDicts>,
    d: &Descriptor,
    targets: &[String],
) -> Result<LabelMatrix, EvalError> {
    let n = weak.n_rows();
    let all_targets: Vec<u32> = (0..targets.len() as u32).collect();
    let rows: Vec<Vec<u32>> = match kind {
        BaselineKind::AllAll => (0..n).map(|_| all_targets.clone()).collect(),
        BaselineKind::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    (0..targets.len() as u32)
                        .filter(|_| rng.gen_bool(0.5))
                        .collect()
                })
                .collect()
        }
        BaselineKind::WsLabels => {
            return Ok(weak
                .restrict_labels(targets)
                .map_err(|_| EvalError::UnknownLabel {
                    label: targets.join(","),
                })?
                .with_kind(MatrixKind::Predicted));
        }
        BaselineKind::WsRestAll => {
            let restricted = weak
                .restrict_labels(targets)
                .map_err(|_| EvalError::UnknownLabel {
                    label: targets.join(","),
                })?;
            (0..n)
                .map(|row| {
                    if weak.rows[row].is_empty() {
                        all_targets.clone()
                    } else {
                        restricted.rows[row].clone()
                    }
                })
                .collect()
        }
        BaselineKind::AllM | BaselineKind::WsRestM => {
            let pref = targets
                .iter()
                .position(|t| *t == d.preferred_concept_id)
                .ok_or_else(|| EvalError::PrefNotInTargets {
                    baseline: kind.name().to_string(),
                    concept_id: d.preferred_concept_id.clone(),
                })? as u32;
            match kind {
                BaselineKind::AllM => (0..n).map(|_| vec![pref]).collect(),
                _ => {
                    let restricted = weak.restrict_labels(targets).map_err(|_| {
                        EvalError::UnknownLabel {
                            label: targets.join(","),
                        }
                    })?;
                    (0..n)
                        .map(|row| {
                            if weak.rows[row].is_empty() {
                                vec![pref]
                            } else {
                                restricted.rows[row].clone()
                            }
                        })
                        .collect()
                }
            }
        }
        BaselineKind::DTerms | BaselineKind::DTokens => {
            let corpus = corpus.ok_or(EvalError::MissingInput {
                baseline: kind.name().to_string(),
                input: "a corpus",
            })?;
            let dicts = dicts.ok_or(EvalError::MissingInput {
                baseline: kind.name().to_string(),
                input: "dictionaries",
            })?;
            if corpus.pmids() != weak.pmids {
                return Err(EvalError::RowMismatch);
            }
            let dict = match kind {
                BaselineKind::DTerms => &dicts.term,
                _ => &dicts.token,
            };
            corpus
                .articles
                .iter()
                .map(|article| {
                    let mut row: Vec<u32> = recognize(article, dict)
                        .into_iter()
                        .filter_map(|occ| {
                            targets
                                .iter()
                                .position(|t| *t == occ.concept_id)
                                .map(|i| i as u32)
                        })
                        .collect();
                    row.sort_unstable();
                    row.dedup();
                    row
                })
                .collect()
        }
    };
    LabelMatrix::new(
        weak.pmids.clone(),
        targets.to_vec(),
        rows,
        MatrixKind::Predicted,
    )
    .map_err(|_| EvalError::RowMismatch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Article;
    use crate::thesaurus::load_thesaurus;

    fn fixture(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../data")
            .join(name)
    }

    fn matrix(rows: Vec<Vec<u32>>, labels: &[&str], kind: MatrixKind) -> LabelMatrix {
        LabelMatrix::new(
            (0..rows.len()).map(|i| format!("p{i}")).collect(),
            labels.iter().map(|l| l.to_string()).collect(),
            rows,
            kind,
        )
        .unwrap()
    }

    #[test]
    fn identical_matrices_score_macro_f1_one() {
        let golden = matrix(
            vec![vec![0], vec![1], vec![0, 1], vec![]],
            &["A", "B"],
            MatrixKind::Golden,
        );
        let pred = golden.clone().with_kind(MatrixKind::Predicted);
        let report =
            evaluate(&pred, &golden, &["A".to_string(), "B".to_string()]).unwrap();
        assert_eq!(report.macro_f1, 1.0);
    }

    #[test]
    fn zero_over_zero_convention_is_zero_and_noted() {
        let golden = matrix(vec![vec![], vec![]], &["A"], MatrixKind::Golden);
        let pred = matrix(vec![vec![], vec![]], &["A"], MatrixKind::Predicted);
        let report = evaluate(&pred, &golden, &["A".to_string()]).unwrap();
        assert_eq!(report.per_label[0].f1, 0.0);
        assert_eq!(report.macro_f1, 0.0);
        assert!(!report.notes.is_empty());
    }

    #[test]
    fn evaluate_matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let labels = ["A", "B", "C", "D"];
        for _ in 0..20 {
            let rows = |rng: &mut ChaCha8Rng| -> Vec<Vec<u32>> {
                (0..50)
                    .map(|_| (0..4u32).filter(|_| rng.gen_bool(0.4)).collect())
                    .collect()
            };
            let golden = matrix(rows(&mut rng), &labels, MatrixKind::Golden);
            let pred = matrix(rows(&mut rng), &labels, MatrixKind::Predicted);
            let targets: Vec<String> = labels.iter().map(|l| l.to_string()).collect();
            let report = evaluate(&pred, &golden, &targets).unwrap();

            // Independent cell-by-cell recount.
            let mut f1_sum = 0.0;
            for (t, target) in targets.iter().enumerate() {
                let mut tp = 0.0;
                let mut fp = 0.0;
                let mut fn_ = 0.0;
                for row in 0..50 {
                    let p = pred.get(row, t as u32);
                    let g = golden.get(row, t as u32);
                    if p && g {
                        tp += 1.0;
                    }
                    if p && !g {
                        fp += 1.0;
                    }
                    if !p && g {
                        fn_ += 1.0;
                    }
                }
                let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
                let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                assert!((report.per_label[t].f1 - f1).abs() < 1e-12, "{target}");
                f1_sum += f1;
            }
            assert!((report.macro_f1 - f1_sum / 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn macro_f1_is_invariant_to_row_and_label_permutations() {
        let golden = matrix(
            vec![vec![0], vec![1], vec![0, 1], vec![], vec![1]],
            &["A", "B"],
            MatrixKind::Golden,
        );
        let pred = matrix(
            vec![vec![0, 1], vec![], vec![1], vec![0], vec![1]],
            &["A", "B"],
            MatrixKind::Predicted,
        );
        let targets = vec!["A".to_string(), "B".to_string()];
        let forward = evaluate(&pred, &golden, &targets).unwrap();

        let reversed_rows: Vec<String> = golden.pmids.iter().rev().cloned().collect();
        let golden_rev = golden.select_rows(&reversed_rows).unwrap();
        let pred_rev = pred.select_rows(&reversed_rows).unwrap();
        let swapped_targets = vec!["B".to_string(), "A".to_string()];
        let backward = evaluate(&pred_rev, &golden_rev, &swapped_targets).unwrap();
        assert!((forward.macro_f1 - backward.macro_f1).abs() < 1e-12);
    }

    #[test]
    fn misaligned_rows_are_rejected_by_evaluate_and_kappa() {
        let a = matrix(vec![vec![0], vec![]], &["A"], MatrixKind::Golden);
        let mut b = a.clone();
        b.pmids.reverse();
        assert!(matches!(
            evaluate(&b, &a, &["A".to_string()]),
            Err(EvalError::RowMismatch)
        ));
        assert!(matches!(
            kappa(&a, &b, &["A".to_string()]),
            Err(EvalError::RowMismatch)
        ));
    }

    #[test]
    fn kappa_of_identical_annotations_is_one() {
        let a = matrix(vec![vec![0], vec![], vec![0]], &["A"], MatrixKind::Golden);
        let result = kappa(&a, &a, &["A".to_string()]).unwrap();
        assert_eq!(result.per_label[0].kappa, 1.0);
        assert!(!result.per_label[0].degenerate);
    }

    #[test]
    fn kappa_of_complementary_balanced_annotations_is_minus_one() {
        let a = matrix(
            vec![vec![0], vec![0], vec![], vec![]],
            &["A"],
            MatrixKind::Golden,
        );
        let b = matrix(
            vec![vec![], vec![], vec![0], vec![0]],
            &["A"],
            MatrixKind::Golden,
        );
        let result = kappa(&a, &b, &["A".to_string()]).unwrap();
        assert!((result.per_label[0].kappa + 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_hand_arithmetic_40_40_10_10() {
        // 40 both-yes, 40 both-no, 10 a-only, 10 b-only -> kappa 0.6.
        let mut rows_a = Vec::new();
        let mut rows_b = Vec::new();
        for i in 0..100 {
            let (a_yes, b_yes) = match i {
                0..=39 => (true, true),
                40..=79 => (false, false),
                80..=89 => (true, false),
                _ => (false, true),
            };
            rows_a.push(if a_yes { vec![0] } else { vec![] });
            rows_b.push(if b_yes { vec![0] } else { vec![] });
        }
        let a = matrix(rows_a, &["A"], MatrixKind::Golden);
        let b = matrix(rows_b, &["A"], MatrixKind::Golden);
        let result = kappa(&a, &b, &["A".to_string()]).unwrap();
        assert!((result.per_label[0].kappa - 0.6).abs() < 1e-12);
    }

    #[test]
    fn kappa_is_symmetric() {
        let a = matrix(
            vec![vec![0], vec![], vec![0], vec![]],
            &["A"],
            MatrixKind::Golden,
        );
        let b = matrix(
            vec![vec![0], vec![0], vec![], vec![]],
            &["A"],
            MatrixKind::Golden,
        );
        let ab = kappa(&a, &b, &["A".to_string()]).unwrap();
        let ba = kappa(&b, &a, &["A".to_string()]).unwrap();
        assert_eq!(ab.per_label[0].kappa, ba.per_label[0].kappa);
    }

    #[test]
    fn degenerate_agreement_reports_zero_with_flag() {
        let a = matrix(vec![vec![0], vec![0]], &["A"], MatrixKind::Golden);
        let result = kappa(&a, &a, &["A".to_string()]).unwrap();
        assert_eq!(result.per_label[0].kappa, 0.0);
        assert!(result.per_label[0].degenerate);
    }

    fn weak_fixture() -> (Descriptor, LabelMatrix, Vec<String>) {
        let d = load_thesaurus(fixture("ad.json")).unwrap();
        // Columns follow the descriptor: 0 top/pref, 1 PD, 2 FAD, 3 EOAD...
        let weak = LabelMatrix::new(
            (0..4).map(|i| format!("p{i}")).collect(),
            d.concept_ids(),
            vec![vec![3], vec![0], vec![], vec![1, 2]],
            MatrixKind::Weak,
        )
        .unwrap();
        let targets: Vec<String> = vec![
            "M0000546".into(),
            "M0000547".into(),
            "M0000548".into(),
            "M0000549".into(),
        ];
        (d, weak, targets)
    }

    #[test]
    fn ws_labels_restricts_weak_to_targets() {
        let (d, weak, targets) = weak_fixture();
        let pred =
            baseline_predict(BaselineKind::WsLabels, None, &weak, None, &d, &targets).unwrap();
        // Article 0 has weak EOAD only.
        assert_eq!(pred.rows[0], vec![2]);
        // Article 1 has only the top concept: no target predictions.
        assert!(pred.rows[1].is_empty());
    }

    #[test]
    fn ws_rest_all_fills_unlabeled_rows_with_everything() {
        let (d, weak, targets) = weak_fixture();
        let pred =
            baseline_predict(BaselineKind::WsRestAll, None, &weak, None, &d, &targets).unwrap();
        // Article 2 has an all-zero weak row.
        assert_eq!(pred.rows[2], vec![0, 1, 2, 3]);
        // Article 1 is weakly labeled (top concept), so it is NOT filled.
        assert!(pred.rows[1].is_empty());
    }

    #[test]
    fn all_m_requires_pref_in_targets() {
        let (d, weak, targets) = weak_fixture();
        assert!(matches!(
            baseline_predict(BaselineKind::AllM, None, &weak, None, &d, &targets),
            Err(EvalError::PrefNotInTargets { .. })
        ));
        // For a descriptor whose preferred concept is a target it works.
        let dmd = load_thesaurus(fixture("dmd.json")).unwrap();
        let weak_dmd = LabelMatrix::new(
            vec!["x".into(), "y".into()],
            dmd.concept_ids(),
            vec![vec![1], vec![]],
            MatrixKind::Weak,
        )
        .unwrap();
        let targets_dmd: Vec<String> = vec!["M0029077".into(), "M0029078".into()];
        let pred = baseline_predict(
            BaselineKind::AllM,
            None,
            &weak_dmd,
            None,
            &dmd,
            &targets_dmd,
        )
        .unwrap();
        assert_eq!(pred.rows, vec![vec![0], vec![0]]);
        let rest = baseline_predict(
            BaselineKind::WsRestM,
            None,
            &weak_dmd,
            None,
            &dmd,
            &targets_dmd,
        )
        .unwrap();
        // Row x keeps its weak BMD label, row y gets the preferred concept.
        assert_eq!(rest.rows, vec![vec![1], vec![0]]);
    }

    #[test]
    fn random_baseline_recall_is_near_half() {
        let n = 10_000;
        let golden = LabelMatrix::new(
            (0..n).map(|i| format!("p{i}")).collect(),
            vec!["A".into()],
            (0..n).map(|_| vec![0]).collect(),
            MatrixKind::Golden,
        )
        .unwrap();
        let d = load_thesaurus(fixture("ad.json")).unwrap();
        let weak = LabelMatrix::new(
            golden.pmids.clone(),
            d.concept_ids(),
            (0..n).map(|_| vec![]).collect(),
            MatrixKind::Weak,
        )
        .unwrap();
        let pred = baseline_predict(
            BaselineKind::Random { seed: 99 },
            None,
            &weak,
            None,
            &d,
            &["A".to_string()],
        )
        .unwrap();
        let report = evaluate(&pred, &golden, &["A".to_string()]).unwrap();
        assert!(
            (report.per_label[0].recall - 0.5).abs() < 0.02,
            "recall {}",
            report.per_label[0].recall
        );
    }

    #[test]
    fn token_dictionary_labels_are_a_superset_of_term_labels() {
        let d = load_thesaurus(fixture("ad.json")).unwrap();
        let texts = [
            "Presenile dementia with familial aggregation",
            "Early onset Alzheimer disease: a case of EOAD",
            "Nothing relevant here",
            "LOAD and FAD in one abstract about late onset Alzheimer disease",
        ];
        let articles: Vec<Article> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Article {
                pmid: format!("p{i}"),
                title: t.to_string(),
                abstract_text: String::new(),
                descriptor_ids: vec!["D000544".into()],
            })
            .collect();
        let corpus = Corpus::new("D000544", articles).unwrap();
        let weak = LabelMatrix::new(
            corpus.pmids(),
            d.concept_ids(),
            (0..4).map(|_| vec![]).collect(),
            MatrixKind::Weak,
        )
        .unwrap();
        let dicts = BaselineDicts::from_descriptor(&d);
        let targets: Vec<String> = crate::thesaurus::fine_grained_labels(&d);
        let terms = baseline_predict(
            BaselineKind::DTerms,
            Some(&corpus),
            &weak,
            Some(&dicts),
            &d,
            &targets,
        )
        .unwrap();
        let tokens = baseline_predict(
            BaselineKind::DTokens,
            Some(&corpus),
            &weak,
            Some(&dicts),
            &d,
            &targets,
        )
        .unwrap();
        for row in 0..corpus.len() {
            for &c in &terms.rows[row] {
                assert!(
                    tokens.rows[row].contains(&c),
                    "row {row}: token labels must include term labels"
                );
            }
        }
    }
}
