//! Per-label feature scoring (chi-squared, one-way ANOVA F) and top-k
//! selection.
//!
//! Scores are computed independently per target label against the binary
//! label column. For ranking, per-label scores are aggregated with max so a
//! single feature set serves every one-vs-rest model; per-label selection is
//! available for configurations that give each model its own set.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use super::{FeatureError, FeatureKind, FeatureMatrix, FeatureSpace};
use crate::thesaurus::Descriptor;
use crate::weaklabel::LabelMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMethod {
    Chi2,
    AnovaF,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub method: ScoreMethod,
    pub k: usize,
    /// Drop semantic features of the descriptor's own concepts before
    /// ranking, so models cannot simply reproduce the weak labels.
    pub exclude_ct_concepts: bool,
}

/// Per-feature scores for each target label, plus the labels that could not
/// discriminate anything (single-class columns score zero everywhere).
#[derive(Debug, Clone)]
pub struct FeatureScores {
    pub method: ScoreMethod,
    pub targets: Vec<String>,
    /// `per_label[t][f]` is the score of feature `f` for target `t`.
    pub per_label: Vec<Vec<f64>>,
    pub degenerate_labels: Vec<String>,
}

impl FeatureScores {
    /// Max over target labels, the shared-space ranking criterion.
    pub fn aggregate(&self) -> Vec<f64> {
        let n = self.per_label.first().map_or(0, Vec::len);
        let mut agg = vec![0.0f64; n];
        for scores in &self.per_label {
            for (a, &s) in agg.iter_mut().zip(scores) {
                if s > *a {
                    *a = s;
                }
            }
        }
        agg
    }

    pub fn label_scores(&self, label: &str) -> Option<&[f64]> {
        self.targets
            .iter()
            .position(|t| t == label)
            .map(|i| self.per_label[i].as_slice())
    }
}

struct ColumnStats {
    total_sum: Vec<f64>,
    total_sq: Vec<f64>,
}

fn column_stats(m: &FeatureMatrix) -> ColumnStats {
    let mut total_sum = vec![0.0; m.space.len()];
    let mut total_sq = vec![0.0; m.space.len()];
    for row in &m.rows {
        for &(f, v) in row {
            total_sum[f as usize] += v;
            total_sq[f as usize] += v * v;
        }
    }
    ColumnStats {
        total_sum,
        total_sq,
    }
}

fn chi2_scores(
    m: &FeatureMatrix,
    stats: &ColumnStats,
    positive_rows: &[bool],
    n_pos: usize,
) -> Vec<f64> {
    let n = m.n_rows() as f64;
    let n_pos = n_pos as f64;
    let n_neg = n - n_pos;
    let mut pos_sum = vec![0.0; m.space.len()];
    for (row, &is_pos) in m.rows.iter().zip(positive_rows) {
        if is_pos {
            for &(f, v) in row {
                pos_sum[f as usize] += v;
            }
        }
    }
    (0..m.space.len())
        .map(|f| {
            let total = stats.total_sum[f];
            if total == 0.0 {
                return 0.0;
            }
            let observed_pos = pos_sum[f];
            let observed_neg = total - observed_pos;
            let expected_pos = total * n_pos / n;
            let expected_neg = total * n_neg / n;
            let mut score = 0.0;
            if expected_pos > 0.0 {
                score += (observed_pos - expected_pos).powi(2) / expected_pos;
            }
            if expected_neg > 0.0 {
                score += (observed_neg - expected_neg).powi(2) / expected_neg;
            }
            score
        })
        .collect()
}

fn anova_f_scores(
    m: &FeatureMatrix,
    stats: &ColumnStats,
    positive_rows: &[bool],
    n_pos: usize,
) -> Vec<f64> {
    let n = m.n_rows() as f64;
    let n_pos_f = n_pos as f64;
    let n_neg_f = n - n_pos_f;
    let mut pos_sum = vec![0.0; m.space.len()];
    let mut pos_sq = vec![0.0; m.space.len()];
    for (row, &is_pos) in m.rows.iter().zip(positive_rows) {
        if is_pos {
            for &(f, v) in row {
                pos_sum[f as usize] += v;
                pos_sq[f as usize] += v * v;
            }
        }
    }
    (0..m.space.len())
        .map(|f| {
            let mean_pos = pos_sum[f] / n_pos_f;
            let neg_sum = stats.total_sum[f] - pos_sum[f];
            let mean_neg = neg_sum / n_neg_f;
            let grand = stats.total_sum[f] / n;
            let ss_between =
                n_pos_f * (mean_pos - grand).powi(2) + n_neg_f * (mean_neg - grand).powi(2);
            let neg_sq = stats.total_sq[f] - pos_sq[f];
            let ss_within = (pos_sq[f] - n_pos_f * mean_pos * mean_pos).max(0.0)
                + (neg_sq - n_neg_f * mean_neg * mean_neg).max(0.0);
            if ss_within <= f64::EPSILON * stats.total_sq[f].max(1.0) {
                // Zero within-group variance: a perfectly separating feature
                // ranks above everything finite; a constant feature scores 0.
                return if ss_between > 1e-12 { f64::INFINITY } else { 0.0 };
            }
            let df_within = n - 2.0;
            (ss_between / 1.0) / (ss_within / df_within)
        })
        .collect()
}

/// Score every feature against every target label.
pub fn score_features(
    m: &FeatureMatrix,
    labels: &LabelMatrix,
    targets: &[String],
    method: ScoreMethod,
) -> Result<FeatureScores, FeatureError> {
    if m.pmids != labels.pmids {
        return Err(FeatureError::RowMismatch);
    }
    let stats = column_stats(m);
    let mut columns = Vec::with_capacity(targets.len());
    for target in targets {
        let column = labels
            .label_index(target)
            .ok_or_else(|| FeatureError::UnknownLabel {
                label: target.clone(),
            })?;
        columns.push(column);
    }

    let results: Vec<(Vec<f64>, bool)> = columns
        .par_iter()
        .map(|&column| {
            let positive_rows: Vec<bool> = (0..labels.n_rows())
                .map(|r| labels.get(r, column))
                .collect();
            let n_pos = positive_rows.iter().filter(|&&p| p).count();
            if n_pos == 0 || n_pos == labels.n_rows() {
                return (vec![0.0; m.space.len()], true);
            }
            let scores = match method {
                ScoreMethod::Chi2 => chi2_scores(m, &stats, &positive_rows, n_pos),
                ScoreMethod::AnovaF => anova_f_scores(m, &stats, &positive_rows, n_pos),
            };
            (scores, false)
        })
        .collect();

    let mut per_label = Vec::with_capacity(targets.len());
    let mut degenerate_labels = Vec::new();
    for (target, (scores, degenerate)) in targets.iter().zip(results) {
        if degenerate {
            degenerate_labels.push(target.clone());
        }
        per_label.push(scores);
    }
    Ok(FeatureScores {
        method,
        targets: targets.to_vec(),
        per_label,
        degenerate_labels,
    })
}

fn ranked_candidates(
    scores: &[f64],
    cfg: &SelectorConfig,
    d: &Descriptor,
    space: &FeatureSpace,
    k: usize,
) -> Result<Vec<u32>, FeatureError> {
    let excluded: HashSet<&str> = if cfg.exclude_ct_concepts {
        d.concepts.iter().map(|c| c.concept_id.as_str()).collect()
    } else {
        HashSet::new()
    };
    let mut candidates: Vec<u32> = space
        .features
        .iter()
        .filter(|f| !(f.kind == FeatureKind::Semantic && excluded.contains(f.key.as_str())))
        .map(|f| f.id)
        .collect();
    if k > candidates.len() {
        return Err(FeatureError::KTooLarge {
            k,
            available: candidates.len(),
        });
    }
    candidates.sort_by(|&a, &b| {
        scores[b as usize]
            .total_cmp(&scores[a as usize])
            .then(a.cmp(&b))
    });
    candidates.truncate(k);
    Ok(candidates)
}

/// The `k` best features by max-aggregated score, ties broken by feature id.
pub fn select_top_k(
    scores: &FeatureScores,
    cfg: &SelectorConfig,
    d: &Descriptor,
    space: &FeatureSpace,
) -> Result<Vec<u32>, FeatureError> {
    ranked_candidates(&scores.aggregate(), cfg, d, space, cfg.k)
}

/// The `k` best features for one specific target label.
pub fn select_top_k_for_label(
    scores: &FeatureScores,
    label: &str,
    cfg: &SelectorConfig,
    d: &Descriptor,
    space: &FeatureSpace,
) -> Result<Vec<u32>, FeatureError> {
    let label_scores = scores
        .label_scores(label)
        .ok_or_else(|| FeatureError::UnknownLabel {
            label: label.to_string(),
        })?;
    ranked_candidates(label_scores, cfg, d, space, cfg.k)
}

/// CSV report over the selected features: rank, kind, key, per-label scores
/// and the aggregate.
pub fn selection_report(
    scores: &FeatureScores,
    selected: &[u32],
    space: &FeatureSpace,
) -> String {
    let mut out = String::from("rank,kind,key");
    for target in &scores.targets {
        out.push(',');
        out.push_str(target);
    }
    out.push_str(",aggregate\n");
    let aggregate = scores.aggregate();
    for (rank, &f) in selected.iter().enumerate() {
        let def = space.def(f);
        let kind = match def.kind {
            FeatureKind::Lexical => "L",
            FeatureKind::Semantic => "S",
        };
        out.push_str(&format!("{},{},{}", rank + 1, kind, def.key));
        for label_scores in &scores.per_label {
            out.push_str(&format!(",{}", label_scores[f as usize]));
        }
        out.push_str(&format!(",{}\n", aggregate[f as usize]));
    }
    out
}
