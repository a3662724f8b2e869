//! Corpus acquisition and normalization.
//!
//! Articles annotated with a descriptor are retrieved through the Entrez
//! E-utilities ([`eutils`]), parsed from MEDLINE XML ([`medline`]) and stored
//! as a JSONL corpus, one article per line. Only the title and the abstract
//! are kept: downstream featurization uses nothing else.

pub mod eutils;
pub mod medline;

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: invalid article JSON: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("duplicate pmid {pmid}")]
    DuplicatePmid { pmid: String },
    #[error("article with empty pmid")]
    EmptyPmid,
    #[error("article {pmid} is not annotated with descriptor {descriptor_id}")]
    MissingDescriptor {
        pmid: String,
        descriptor_id: String,
    },
    #[error("unknown pmid {pmid}")]
    UnknownPmid { pmid: String },
    #[error("malformed XML near byte {offset}: {message}")]
    Xml { offset: u64, message: String },
    #[error("HTTP request failed after {attempts} attempts: {message}")]
    Http { attempts: u32, message: String },
    #[error("malformed E-utilities response: {0}")]
    BadResponse(String),
    #[error("{param} out of range: {value}")]
    BadParam { param: &'static str, value: usize },
}

/// One document: identifier, text fields and its coarse manual annotations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub pmid: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    pub descriptor_ids: Vec<String>,
}

impl Article {
    /// The text seen by the recognizer and the featurizer.
    pub fn text(&self) -> String {
        let mut t = String::with_capacity(self.title.len() + self.abstract_text.len() + 1);
        t.push_str(&self.title);
        t.push(' ');
        t.push_str(&self.abstract_text);
        t
    }
}

/// An ordered collection of articles, all annotated with one descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub descriptor_id: String,
    pub articles: Vec<Article>,
}

impl Corpus {
    pub fn new(descriptor_id: &str, articles: Vec<Article>) -> Result<Self, IngestError> {
        let mut seen = HashSet::new();
        for a in &articles {
            if a.pmid.is_empty() {
                return Err(IngestError::EmptyPmid);
            }
            if !seen.insert(a.pmid.clone()) {
                return Err(IngestError::DuplicatePmid {
                    pmid: a.pmid.clone(),
                });
            }
            if !a.descriptor_ids.iter().any(|d| d == descriptor_id) {
                return Err(IngestError::MissingDescriptor {
                    pmid: a.pmid.clone(),
                    descriptor_id: descriptor_id.to_string(),
                });
            }
        }
        Ok(Corpus {
            descriptor_id: descriptor_id.to_string(),
            articles,
        })
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn pmids(&self) -> Vec<String> {
        self.articles.iter().map(|a| a.pmid.clone()).collect()
    }

    pub fn article(&self, pmid: &str) -> Option<&Article> {
        self.articles.iter().find(|a| a.pmid == pmid)
    }

    /// Sub-corpus with the articles of `pmids`, in the order given.
    pub fn select(&self, pmids: &[String]) -> Result<Corpus, IngestError> {
        let mut articles = Vec::with_capacity(pmids.len());
        for pmid in pmids {
            let a = self
                .article(pmid)
                .ok_or_else(|| IngestError::UnknownPmid { pmid: pmid.clone() })?;
            articles.push(a.clone());
        }
        Corpus::new(&self.descriptor_id, articles)
    }
}

/// Load a JSONL corpus, one article per line.
pub fn load_corpus<P: AsRef<Path>>(path: P, descriptor_id: &str) -> Result<Corpus, IngestError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut articles = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let article: Article =
            serde_json::from_str(&line).map_err(|source| IngestError::Json {
                line: i + 1,
                source,
            })?;
        articles.push(article);
    }
    Corpus::new(descriptor_id, articles)
}

/// Save a corpus as JSONL; `save_corpus` then [`load_corpus`] is identity.
pub fn save_corpus<P: AsRef<Path>>(corpus: &Corpus, path: P) -> Result<(), IngestError> {
    let mut out = fs::File::create(path)?;
    for a in &corpus.articles {
        let line = serde_json::to_string(a).expect("article serializes");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn article(pmid: &str) -> Article {
        Article {
            pmid: pmid.into(),
            title: format!("Title {pmid}"),
            abstract_text: "Some abstract.".into(),
            descriptor_ids: vec!["D1".into()],
        }
    }

    #[test]
    fn corpus_roundtrip_is_identity() {
        let corpus =
            Corpus::new("D1", (0..100).map(|i| article(&format!("p{i}"))).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        save_corpus(&corpus, &path).unwrap();
        let loaded = load_corpus(&path, "D1").unwrap();
        assert_eq!(corpus, loaded);
    }

    #[test]
    fn duplicate_pmid_is_rejected_by_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let a = serde_json::to_string(&article("p7")).unwrap();
        fs::write(&path, format!("{a}\n{a}\n")).unwrap();
        match load_corpus(&path, "D1") {
            Err(IngestError::DuplicatePmid { pmid }) => assert_eq!(pmid, "p7"),
            other => panic!("expected duplicate pmid error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_an_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        fs::write(&path, "").unwrap();
        let corpus = load_corpus(&path, "D1").unwrap();
        assert!(corpus.is_empty());
    }

    #[test]
    fn article_without_the_corpus_descriptor_is_rejected() {
        let mut a = article("p1");
        a.descriptor_ids = vec!["D9".into()];
        match Corpus::new("D1", vec![a]) {
            Err(IngestError::MissingDescriptor { pmid, .. }) => assert_eq!(pmid, "p1"),
            other => panic!("expected missing descriptor error, got {other:?}"),
        }
    }

    #[test]
    fn select_preserves_requested_order() {
        let corpus =
            Corpus::new("D1", (0..5).map(|i| article(&format!("p{i}"))).collect()).unwrap();
        let sub = corpus
            .select(&["p3".to_string(), "p1".to_string()])
            .unwrap();
        assert_eq!(sub.pmids(), vec!["p3", "p1"]);
        assert!(corpus.select(&["nope".to_string()]).is_err());
    }
}
