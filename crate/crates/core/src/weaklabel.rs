//! Binary article-by-label matrices and the concept-occurrence weak labeler.
//!
//! The weak matrix covers every concept of the descriptor, including the top
//! concept: its column is bookkeeping (it identifies the majority class for
//! under-sampling) and is masked out of training and evaluation by
//! [`target_labels`].

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::ingest::Corpus;
use crate::recognizer::ConceptOccurrence;
use crate::thesaurus::{fine_grained_labels, Descriptor};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid label matrix JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("occurrence refers to pmid {pmid} which is not in the corpus")]
    UnknownPmid { pmid: String },
    #[error("duplicate pmid {pmid}")]
    DuplicatePmid { pmid: String },
    #[error("unknown label {label}")]
    UnknownLabel { label: String },
    #[error("row {row} references column {column} out of {columns}")]
    BadColumn {
        row: usize,
        column: u32,
        columns: usize,
    },
    #[error("no trainable labels: every fine-grained label has support below {min_support}")]
    NoTrainableLabels { min_support: usize },
    #[error("label matrix CSV is malformed at line {line}: {message}")]
    Csv { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    Weak,
    Golden,
    Predicted,
}

/// Sparse binary article-by-label matrix. Rows hold the sorted column
/// indices of the article's labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    pub pmids: Vec<String>,
    pub label_ids: Vec<String>,
    pub rows: Vec<Vec<u32>>,
    pub kind: MatrixKind,
}

impl LabelMatrix {
    pub fn new(
        pmids: Vec<String>,
        label_ids: Vec<String>,
        mut rows: Vec<Vec<u32>>,
        kind: MatrixKind,
    ) -> Result<Self, LabelError> {
        assert_eq!(pmids.len(), rows.len(), "row count must match pmid count");
        let mut seen = HashSet::new();
        for pmid in &pmids {
            if !seen.insert(pmid.clone()) {
                return Err(LabelError::DuplicatePmid { pmid: pmid.clone() });
            }
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            if let Some(&column) = row.last() {
                if column as usize >= label_ids.len() {
                    return Err(LabelError::BadColumn {
                        row: i,
                        column,
                        columns: label_ids.len(),
                    });
                }
            }
        }
        Ok(LabelMatrix {
            pmids,
            label_ids,
            rows,
            kind,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.pmids.len()
    }

    pub fn label_index(&self, label_id: &str) -> Option<u32> {
        self.label_ids
            .iter()
            .position(|l| l == label_id)
            .map(|i| i as u32)
    }

    pub fn pmid_index(&self, pmid: &str) -> Option<usize> {
        self.pmids.iter().position(|p| p == pmid)
    }

    pub fn get(&self, row: usize, column: u32) -> bool {
        self.rows[row].binary_search(&column).is_ok()
    }

    /// Number of rows with a 1 in the label's column.
    pub fn column_support(&self, label_id: &str) -> Option<usize> {
        let column = self.label_index(label_id)?;
        Some(
            self.rows
                .iter()
                .filter(|row| row.binary_search(&column).is_ok())
                .count(),
        )
    }

    /// Rows with the given pmids, in the order given.
    pub fn select_rows(&self, pmids: &[String]) -> Result<LabelMatrix, LabelError> {
        let index: HashMap<&str, usize> = self
            .pmids
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect();
        let mut rows = Vec::with_capacity(pmids.len());
        for pmid in pmids {
            let &i = index
                .get(pmid.as_str())
                .ok_or_else(|| LabelError::UnknownPmid { pmid: pmid.clone() })?;
            rows.push(self.rows[i].clone());
        }
        LabelMatrix::new(pmids.to_vec(), self.label_ids.clone(), rows, self.kind)
    }

    /// Column projection onto `label_ids`, preserving the order given.
    pub fn restrict_labels(&self, label_ids: &[String]) -> Result<LabelMatrix, LabelError> {
        let mut columns = Vec::with_capacity(label_ids.len());
        for label in label_ids {
            let column = self
                .label_index(label)
                .ok_or_else(|| LabelError::UnknownLabel {
                    label: label.clone(),
                })?;
            columns.push(column);
        }
        let rows = self
            .rows
            .iter()
            .map(|row| {
                columns
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| row.binary_search(c).is_ok())
                    .map(|(new, _)| new as u32)
                    .collect()
            })
            .collect();
        LabelMatrix::new(self.pmids.clone(), label_ids.to_vec(), rows, self.kind)
    }

    pub fn with_kind(mut self, kind: MatrixKind) -> LabelMatrix {
        self.kind = kind;
        self
    }

    /// CSV form: header `pmid,<label>...`, one 0/1 row per article.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pmid");
        for label in &self.label_ids {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for (i, pmid) in self.pmids.iter().enumerate() {
            out.push_str(pmid);
            for c in 0..self.label_ids.len() as u32 {
                out.push(',');
                out.push(if self.get(i, c) { '1' } else { '0' });
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, kind: MatrixKind) -> Result<LabelMatrix, LabelError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(LabelError::Csv {
            line: 1,
            message: "empty file".into(),
        })?;
        let mut fields = header.split(',');
        let first = fields.next().unwrap_or_default();
        if first != "pmid" {
            return Err(LabelError::Csv {
                line: 1,
                message: format!("header must start with 'pmid', got {first:?}"),
            });
        }
        let label_ids: Vec<String> = fields.map(str::to_string).collect();
        let mut pmids = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let pmid = fields.next().unwrap_or_default().to_string();
            let mut row = Vec::new();
            let mut count = 0;
            for (c, value) in fields.enumerate() {
                count += 1;
                match value {
                    "0" => {}
                    "1" => row.push(c as u32),
                    other => {
                        return Err(LabelError::Csv {
                            line: i + 1,
                            message: format!("cell must be 0 or 1, got {other:?}"),
                        })
                    }
                }
            }
            if count != label_ids.len() {
                return Err(LabelError::Csv {
                    line: i + 1,
                    message: format!("expected {} cells, got {count}", label_ids.len()),
                });
            }
            pmids.push(pmid);
            rows.push(row);
        }
        LabelMatrix::new(pmids, label_ids, rows, kind)
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<(), LabelError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load_csv<P: AsRef<Path>>(path: P, kind: MatrixKind) -> Result<LabelMatrix, LabelError> {
        LabelMatrix::from_csv(&fs::read_to_string(path)?, kind)
    }

    /// Sparse JSON form.
    pub fn save_json<P: AsRef<Path>>(&self, path: P) -> Result<(), LabelError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load_json<P: AsRef<Path>>(path: P) -> Result<LabelMatrix, LabelError> {
        let matrix: LabelMatrix = serde_json::from_str(&fs::read_to_string(path)?)?;
        LabelMatrix::new(matrix.pmids, matrix.label_ids, matrix.rows, matrix.kind)
    }
}

/// Assign weak labels from concept occurrences: cell (article, concept) is 1
/// iff at least one occurrence of that concept exists for the article.
/// Occurrences of concepts outside the descriptor are ignored here (they
/// remain available as semantic features).
pub fn assign_weak_labels(
    corpus: &Corpus,
    occurrences: &[ConceptOccurrence],
    d: &Descriptor,
) -> Result<LabelMatrix, LabelError> {
    let concept_ids = d.concept_ids();
    let column: HashMap<&str, u32> = concept_ids
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i as u32))
        .collect();
    let row: HashMap<&str, usize> = corpus
        .articles
        .iter()
        .enumerate()
        .map(|(i, a)| (a.pmid.as_str(), i))
        .collect();
    let mut rows = vec![Vec::new(); corpus.len()];
    for occ in occurrences {
        let &r = row
            .get(occ.pmid.as_str())
            .ok_or_else(|| LabelError::UnknownPmid {
                pmid: occ.pmid.clone(),
            })?;
        if let Some(&c) = column.get(occ.concept_id.as_str()) {
            rows[r].push(c);
        }
    }
    LabelMatrix::new(corpus.pmids(), concept_ids, rows, MatrixKind::Weak)
}

/// The prediction targets: fine-grained labels with column support of at
/// least `min_support` in the weak matrix, in declaration order.
pub fn target_labels(
    m: &LabelMatrix,
    d: &Descriptor,
    min_support: usize,
) -> Result<Vec<String>, LabelError> {
    let targets: Vec<String> = fine_grained_labels(d)
        .into_iter()
        .filter(|label| m.column_support(label).unwrap_or(0) >= min_support)
        .collect();
    if targets.is_empty() {
        return Err(LabelError::NoTrainableLabels { min_support });
    }
    Ok(targets)
}
