//! Lexical and semantic feature generation with TF-IDF weighting.
//!
//! Lexical features are bag-of-words token counts over title+abstract.
//! Semantic features are binary concept-occurrence indicators, one per
//! descriptor concept (always present, so the occurrence column of a concept
//! equals its weak label column) plus one per imported out-of-descriptor
//! concept. TF-IDF uses the smoothed form `ln((1+N)/(1+df)) + 1` followed by
//! row L2 normalization.

pub mod select;

pub use select::{
    score_features, select_top_k, select_top_k_for_label, selection_report, FeatureScores,
    ScoreMethod, SelectorConfig,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use thiserror::Error;

use crate::ingest::Corpus;
use crate::recognizer::{occurrences_by_pmid, ConceptOccurrence};
use crate::thesaurus::Descriptor;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid feature matrix JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("matrix is already TF-IDF weighted")]
    AlreadyWeighted,
    #[error("matrix rows are not aligned with the label matrix")]
    RowMismatch,
    #[error("feature space mismatch: expected digest {expected}, got {got}")]
    SpaceMismatch { expected: String, got: String },
    #[error("k = {k} exceeds the {available} available features")]
    KTooLarge { k: usize, available: usize },
    #[error("unknown target label {label}")]
    UnknownLabel { label: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Lexical,
    Semantic,
}

/// One feature: a token (lexical) or a concept id (semantic).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub id: u32,
    pub kind: FeatureKind,
    pub key: String,
}

/// The ordered feature registry. Ids are dense `0..n`; keys are unique
/// within each kind.
#[derive(Debug, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub features: Vec<FeatureDef>,
    #[serde(skip)]
    lexical: HashMap<String, u32>,
    #[serde(skip)]
    semantic: HashMap<String, u32>,
}

impl FeatureSpace {
    pub fn new(features: Vec<FeatureDef>) -> Self {
        let mut space = FeatureSpace {
            features,
            lexical: HashMap::new(),
            semantic: HashMap::new(),
        };
        space.rebuild_index();
        space
    }

    fn rebuild_index(&mut self) {
        self.lexical.clear();
        self.semantic.clear();
        for f in &self.features {
            match f.kind {
                FeatureKind::Lexical => self.lexical.insert(f.key.clone(), f.id),
                FeatureKind::Semantic => self.semantic.insert(f.key.clone(), f.id),
            };
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn lexical_id(&self, token: &str) -> Option<u32> {
        self.lexical.get(token).copied()
    }

    pub fn semantic_id(&self, concept_id: &str) -> Option<u32> {
        self.semantic.get(concept_id).copied()
    }

    pub fn def(&self, id: u32) -> &FeatureDef {
        &self.features[id as usize]
    }

    /// Content digest identifying the space; models refuse to predict on a
    /// matrix whose space digest differs from the one they were trained on.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for f in &self.features {
            let kind = match f.kind {
                FeatureKind::Lexical => "L",
                FeatureKind::Semantic => "S",
            };
            hasher.update(kind.as_bytes());
            hasher.update(b":");
            hasher.update(f.key.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_json(text: &str) -> Result<Arc<FeatureSpace>, FeatureError> {
        let mut space: FeatureSpace = serde_json::from_str(text)?;
        space.rebuild_index();
        Ok(Arc::new(space))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("feature space serializes")
    }
}

/// Sparse article-by-feature matrix. Rows hold `(feature_id, value)` pairs
/// sorted by feature id; values are nonnegative.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub pmids: Vec<String>,
    pub space: Arc<FeatureSpace>,
    pub rows: Vec<Vec<(u32, f64)>>,
    pub weighted: bool,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.pmids.len()
    }

    pub fn get(&self, row: usize, feature: u32) -> f64 {
        match self.rows[row].binary_search_by_key(&feature, |&(f, _)| f) {
            Ok(i) => self.rows[row][i].1,
            Err(_) => 0.0,
        }
    }

    /// Document frequency per feature: rows with a nonzero value.
    pub fn document_frequencies(&self) -> Vec<u32> {
        let mut df = vec![0u32; self.space.len()];
        for row in &self.rows {
            for &(f, v) in row {
                if v != 0.0 {
                    df[f as usize] += 1;
                }
            }
        }
        df
    }

    /// Project onto the selected features, renumbering ids to `0..k` in the
    /// order given. The projected matrix carries its own (smaller) space.
    pub fn project(&self, selected: &[u32]) -> FeatureMatrix {
        let mut remap: HashMap<u32, u32> = HashMap::with_capacity(selected.len());
        let mut defs = Vec::with_capacity(selected.len());
        for (new_id, &old_id) in selected.iter().enumerate() {
            let def = self.space.def(old_id);
            defs.push(FeatureDef {
                id: new_id as u32,
                kind: def.kind,
                key: def.key.clone(),
            });
            remap.insert(old_id, new_id as u32);
        }
        let space = Arc::new(FeatureSpace::new(defs));
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut new_row: Vec<(u32, f64)> = row
                    .iter()
                    .filter_map(|&(f, v)| remap.get(&f).map(|&nf| (nf, v)))
                    .collect();
                new_row.sort_unstable_by_key(|&(f, _)| f);
                new_row
            })
            .collect();
        FeatureMatrix {
            pmids: self.pmids.clone(),
            space,
            rows,
            weighted: self.weighted,
        }
    }

    /// Sparse JSON dump of the matrix (space embedded).
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct MatrixFile<'a> {
            weighted: bool,
            pmids: &'a [String],
            space: &'a FeatureSpace,
            rows: &'a [Vec<(u32, f64)>],
        }
        serde_json::to_string(&MatrixFile {
            weighted: self.weighted,
            pmids: &self.pmids,
            space: &self.space,
            rows: &self.rows,
        })
        .expect("feature matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<FeatureMatrix, FeatureError> {
        #[derive(Deserialize)]
        struct MatrixFile {
            weighted: bool,
            pmids: Vec<String>,
            space: FeatureSpace,
            rows: Vec<Vec<(u32, f64)>>,
        }
        let mut file: MatrixFile = serde_json::from_str(text)?;
        file.space.rebuild_index();
        Ok(FeatureMatrix {
            pmids: file.pmids,
            space: Arc::new(file.space),
            rows: file.rows,
            weighted: file.weighted,
        })
    }
}

/// Lowercase the text and split it into maximal runs of Unicode
/// alphanumerics; everything else is a delimiter.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in lower.chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Tokens occurring in fewer articles than this are dropped.
    pub min_token_df: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { min_token_df: 2 }
    }
}

/// Build the feature space over a corpus and featurize it.
///
/// Lexical features are the tokens with document frequency of at least
/// `min_token_df`, in lexicographic order. Semantic features are every
/// descriptor concept in declaration order, then any other concept seen in
/// the occurrences, in lexicographic order. Lexical values are raw counts,
/// semantic values are binary.
pub fn build_features(
    corpus: &Corpus,
    occurrences: &[ConceptOccurrence],
    d: &Descriptor,
    options: BuildOptions,
) -> (Arc<FeatureSpace>, FeatureMatrix) {
    let article_tokens: Vec<HashMap<String, f64>> = corpus
        .articles
        .iter()
        .map(|a| {
            let mut counts: HashMap<String, f64> = HashMap::new();
            for token in tokenize(&a.text()) {
                *counts.entry(token).or_insert(0.0) += 1.0;
            }
            counts
        })
        .collect();

    let mut token_df: BTreeMap<&str, usize> = BTreeMap::new();
    for counts in &article_tokens {
        for token in counts.keys() {
            *token_df.entry(token).or_insert(0) += 1;
        }
    }

    let pmid_set: HashSet<&str> = corpus.articles.iter().map(|a| a.pmid.as_str()).collect();
    let descriptor_concepts: Vec<String> = d.concept_ids();
    let known: HashSet<&str> = descriptor_concepts.iter().map(String::as_str).collect();
    let mut extra_concepts: BTreeSet<&str> = BTreeSet::new();
    for occ in occurrences {
        if pmid_set.contains(occ.pmid.as_str()) && !known.contains(occ.concept_id.as_str()) {
            extra_concepts.insert(occ.concept_id.as_str());
        }
    }

    let mut defs = Vec::new();
    for (token, &df) in &token_df {
        if df >= options.min_token_df {
            defs.push(FeatureDef {
                id: defs.len() as u32,
                kind: FeatureKind::Lexical,
                key: (*token).to_string(),
            });
        }
    }
    for concept in &descriptor_concepts {
        defs.push(FeatureDef {
            id: defs.len() as u32,
            kind: FeatureKind::Semantic,
            key: concept.clone(),
        });
    }
    for concept in extra_concepts {
        defs.push(FeatureDef {
            id: defs.len() as u32,
            kind: FeatureKind::Semantic,
            key: concept.to_string(),
        });
    }
    let space = Arc::new(FeatureSpace::new(defs));
    let matrix = featurize_into(&space, corpus, occurrences, Some(article_tokens));
    (space, matrix)
}

/// Featurize a corpus into an existing space; tokens and concepts absent
/// from the space are dropped.
pub fn featurize(
    space: &Arc<FeatureSpace>,
    corpus: &Corpus,
    occurrences: &[ConceptOccurrence],
) -> FeatureMatrix {
    featurize_into(space, corpus, occurrences, None)
}

fn featurize_into(
    space: &Arc<FeatureSpace>,
    corpus: &Corpus,
    occurrences: &[ConceptOccurrence],
    precomputed_tokens: Option<Vec<HashMap<String, f64>>>,
) -> FeatureMatrix {
    let by_pmid = occurrences_by_pmid(occurrences);
    let token_counts = precomputed_tokens.unwrap_or_else(|| {
        corpus
            .articles
            .iter()
            .map(|a| {
                let mut counts: HashMap<String, f64> = HashMap::new();
                for token in tokenize(&a.text()) {
                    *counts.entry(token).or_insert(0.0) += 1.0;
                }
                counts
            })
            .collect()
    });

    let rows = corpus
        .articles
        .iter()
        .zip(token_counts)
        .map(|(article, counts)| {
            let mut row: Vec<(u32, f64)> = Vec::new();
            for (token, count) in &counts {
                if let Some(id) = space.lexical_id(token) {
                    row.push((id, *count));
                }
            }
            if let Some(occs) = by_pmid.get(article.pmid.as_str()) {
                let mut seen: HashSet<u32> = HashSet::new();
                for occ in occs {
                    if let Some(id) = space.semantic_id(&occ.concept_id) {
                        if seen.insert(id) {
                            row.push((id, 1.0));
                        }
                    }
                }
            }
            row.sort_unstable_by_key(|&(f, _)| f);
            row
        })
        .collect();

    FeatureMatrix {
        pmids: corpus.pmids(),
        space: Arc::clone(space),
        rows,
        weighted: false,
    }
}

/// The document frequencies a TF-IDF transform was fitted on, for applying
/// the same weighting to held-out articles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdfWeights {
    pub n_rows: usize,
    pub df: Vec<u32>,
    pub space_digest: String,
}

impl IdfWeights {
    pub fn idf(&self, feature: u32) -> f64 {
        let df = self.df[feature as usize] as f64;
        ((1.0 + self.n_rows as f64) / (1.0 + df)).ln() + 1.0
    }
}

/// TF-IDF transform: `weight = tf * (ln((1+N)/(1+df)) + 1)`, then each
/// nonzero row is scaled to unit Euclidean norm. Returns the weighted matrix
/// and the fitted weights for transforming held-out rows.
pub fn tfidf(raw: &FeatureMatrix) -> Result<(FeatureMatrix, IdfWeights), FeatureError> {
    if raw.weighted {
        return Err(FeatureError::AlreadyWeighted);
    }
    let weights = IdfWeights {
        n_rows: raw.n_rows(),
        df: raw.document_frequencies(),
        space_digest: raw.space.digest(),
    };
    let weighted = apply_tfidf(raw, &weights)?;
    Ok((weighted, weights))
}

/// Apply previously fitted TF-IDF weights to a raw matrix in the same space.
pub fn apply_tfidf(raw: &FeatureMatrix, weights: &IdfWeights) -> Result<FeatureMatrix, FeatureError> {
    if raw.weighted {
        return Err(FeatureError::AlreadyWeighted);
    }
    let digest = raw.space.digest();
    if digest != weights.space_digest {
        return Err(FeatureError::SpaceMismatch {
            expected: weights.space_digest.clone(),
            got: digest,
        });
    }
    let rows = raw
        .rows
        .iter()
        .map(|row| {
            let mut out: Vec<(u32, f64)> = row
                .iter()
                .map(|&(f, v)| (f, v * weights.idf(f)))
                .collect();
            let norm = out.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (_, v) in &mut out {
                    *v /= norm;
                }
            }
            out
        })
        .collect();
    Ok(FeatureMatrix {
        pmids: raw.pmids.clone(),
        space: Arc::clone(&raw.space),
        rows,
        weighted: true,
    })
}
