//! Concept occurrence detection in titles and abstracts.
//!
//! The built-in recognizer is a normalized dictionary matcher: thesaurus
//! terms (or their individual tokens) are looked up in the normalized
//! title+abstract text with greedy longest-match, left-to-right,
//! non-overlapping resolution. Annotations produced by an external tagger
//! can be imported instead and take part in the pipeline identically.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{Article, Corpus};
use crate::thesaurus::Descriptor;

#[derive(Debug, Error)]
pub enum RecognizerError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: invalid occurrence JSON: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: pmid {pmid} is not in the corpus")]
    UnknownPmid { pmid: String, line: usize },
    #[error("auxiliary dictionary file is not valid JSON: {0}")]
    AuxJson(serde_json::Error),
}

/// Dictionary granularity: full term strings, or additionally every
/// individual token of every term. Token-level trades precision for recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    TermLevel,
    TokenLevel,
}

/// Normalized term string -> concept ids.
#[derive(Debug, Clone)]
pub struct Dictionary {
    entries: BTreeMap<String, Vec<String>>,
    granularity: Granularity,
    max_entry_tokens: usize,
}

/// Where an occurrence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccurrenceSource {
    DictionaryMatch,
    Imported,
}

/// Evidence that a concept occurs in an article. For dictionary matches the
/// span indexes the normalized title+" "+abstract text and `matched_text`
/// equals that slice; imported occurrences carry a (0,0) span.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptOccurrence {
    pub pmid: String,
    pub concept_id: String,
    pub matched_text: String,
    pub start: usize,
    pub end: usize,
    pub source: OccurrenceSource,
}

/// Lowercase, map every non-alphanumeric character to a space and collapse
/// runs of spaces. Makes "Early-Onset" match "early onset" while staying a
/// literal matcher.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            for lower in ch.to_lowercase() {
                out.push(lower);
            }
        } else {
            pending_space = true;
        }
    }
    out
}

fn token_spans(normalized: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, ch) in normalized.char_indices() {
        if ch == ' ' {
            if let Some(s) = start.take() {
                spans.push((s, i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push((s, normalized.len()));
    }
    spans
}

impl Dictionary {
    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn concepts_for(&self, normalized_term: &str) -> Option<&[String]> {
        self.entries.get(normalized_term).map(Vec::as_slice)
    }

    fn insert(&mut self, normalized: String, concept_id: &str) {
        if normalized.is_empty() {
            return;
        }
        let tokens = normalized.split(' ').count();
        self.max_entry_tokens = self.max_entry_tokens.max(tokens);
        let ids = self.entries.entry(normalized).or_default();
        if !ids.iter().any(|c| c == concept_id) {
            ids.push(concept_id.to_string());
            ids.sort();
        }
    }

    /// Union of two dictionaries, e.g. a descriptor dictionary plus an
    /// auxiliary registry of non-descriptor concepts for semantic features.
    pub fn merge(mut self, other: &Dictionary) -> Dictionary {
        for (term, ids) in &other.entries {
            for id in ids {
                self.insert(term.clone(), id);
            }
        }
        self
    }

    /// Debugging dump: JSON mapping from normalized term to concept ids.
    pub fn dump_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("dictionary serializes")
    }
}

/// Build the matcher dictionary from a descriptor's concept terms.
pub fn build_dictionary(d: &Descriptor, granularity: Granularity) -> Dictionary {
    let mut dict = Dictionary {
        entries: BTreeMap::new(),
        granularity,
        max_entry_tokens: 0,
    };
    for concept in &d.concepts {
        for term in &concept.terms {
            let normalized = normalize(&term.text);
            dict.insert(normalized.clone(), &concept.concept_id);
            if granularity == Granularity::TokenLevel {
                for token in normalized.split(' ') {
                    dict.insert(token.to_string(), &concept.concept_id);
                }
            }
        }
    }
    dict
}

/// Load an auxiliary concept registry: JSON `{"concepts": {"id": ["term", ...]}}`.
pub fn load_aux_dictionary<P: AsRef<Path>>(
    path: P,
    granularity: Granularity,
) -> Result<Dictionary, RecognizerError> {
    #[derive(Deserialize)]
    struct AuxFile {
        concepts: BTreeMap<String, Vec<String>>,
    }
    let text = fs::read_to_string(path)?;
    let file: AuxFile = serde_json::from_str(&text).map_err(RecognizerError::AuxJson)?;
    let mut dict = Dictionary {
        entries: BTreeMap::new(),
        granularity,
        max_entry_tokens: 0,
    };
    for (concept_id, terms) in &file.concepts {
        for term in terms {
            let normalized = normalize(term);
            dict.insert(normalized.clone(), concept_id);
            if granularity == Granularity::TokenLevel {
                for token in normalized.split(' ') {
                    dict.insert(token.to_string(), concept_id);
                }
            }
        }
    }
    Ok(dict)
}

/// Greedy longest-match, left-to-right, non-overlapping matching over the
/// normalized title+" "+abstract. Pure: the same inputs always produce the
/// same occurrence list. A matched segment emits one occurrence per concept
/// mapped to the matched entry.
pub fn recognize(article: &Article, dict: &Dictionary) -> Vec<ConceptOccurrence> {
    let normalized = normalize(&article.text());
    let tokens = token_spans(&normalized);
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let max_len = dict.max_entry_tokens.min(tokens.len() - i);
        let mut advanced = false;
        for len in (1..=max_len).rev() {
            let (start, _) = tokens[i];
            let (_, end) = tokens[i + len - 1];
            let candidate = &normalized[start..end];
            if let Some(ids) = dict.concepts_for(candidate) {
                for concept_id in ids {
                    out.push(ConceptOccurrence {
                        pmid: article.pmid.clone(),
                        concept_id: concept_id.clone(),
                        matched_text: candidate.to_string(),
                        start,
                        end,
                        source: OccurrenceSource::DictionaryMatch,
                    });
                }
                i += len;
                advanced = true;
                break;
            }
        }
        if !advanced {
            i += 1;
        }
    }
    out
}

/// Recognize every article of a corpus in parallel. Output is deterministic:
/// corpus order, then span order within each article.
pub fn recognize_corpus(corpus: &Corpus, dict: &Dictionary) -> Vec<ConceptOccurrence> {
    corpus
        .articles
        .par_iter()
        .map(|a| recognize(a, dict))
        .reduce(Vec::new, |mut acc, mut chunk| {
            acc.append(&mut chunk);
            acc
        })
}

#[derive(Deserialize)]
struct ImportLine {
    pmid: String,
    concept_id: String,
    #[serde(default)]
    matched_text: Option<String>,
}

/// Import externally produced occurrence annotations (e.g. from a UMLS
/// tagger): JSONL of `{"pmid","concept_id","matched_text"?}`.
pub fn import_occurrences<P: AsRef<Path>>(
    path: P,
    corpus: &Corpus,
) -> Result<Vec<ConceptOccurrence>, RecognizerError> {
    let known: std::collections::HashSet<&str> =
        corpus.articles.iter().map(|a| a.pmid.as_str()).collect();
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ImportLine = serde_json::from_str(&line).map_err(|source| {
            RecognizerError::Json {
                line: i + 1,
                source,
            }
        })?;
        if !known.contains(parsed.pmid.as_str()) {
            return Err(RecognizerError::UnknownPmid {
                pmid: parsed.pmid,
                line: i + 1,
            });
        }
        out.push(ConceptOccurrence {
            pmid: parsed.pmid,
            concept_id: parsed.concept_id,
            matched_text: parsed.matched_text.unwrap_or_default(),
            start: 0,
            end: 0,
            source: OccurrenceSource::Imported,
        });
    }
    Ok(out)
}

/// Write occurrences as JSONL, one per line.
pub fn save_occurrences<P: AsRef<Path>>(
    occurrences: &[ConceptOccurrence],
    path: P,
) -> Result<(), RecognizerError> {
    let mut out = fs::File::create(path)?;
    for occ in occurrences {
        let line = serde_json::to_string(occ).expect("occurrence serializes");
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Read occurrences saved by [`save_occurrences`].
pub fn load_occurrences<P: AsRef<Path>>(path: P) -> Result<Vec<ConceptOccurrence>, RecognizerError> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let occ: ConceptOccurrence = serde_json::from_str(&line).map_err(|source| {
            RecognizerError::Json {
                line: i + 1,
                source,
            }
        })?;
        out.push(occ);
    }
    Ok(out)
}

/// Group occurrences by pmid for matrix and feature construction.
pub fn occurrences_by_pmid(
    occurrences: &[ConceptOccurrence],
) -> HashMap<&str, Vec<&ConceptOccurrence>> {
    let mut map: HashMap<&str, Vec<&ConceptOccurrence>> = HashMap::new();
    for occ in occurrences {
        map.entry(occ.pmid.as_str()).or_default().push(occ);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thesaurus::load_thesaurus;

    fn fixture(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../data")
            .join(name)
    }

    fn article(pmid: &str, title: &str, abstract_text: &str) -> Article {
        Article {
            pmid: pmid.into(),
            title: title.into(),
            abstract_text: abstract_text.into(),
            descriptor_ids: vec!["D000544".into()],
        }
    }

    #[test]
    fn normalization_lowercases_and_collapses_punctuation() {
        assert_eq!(normalize("Early-Onset  AD!"), "early onset ad");
        assert_eq!(normalize("  (FAD) "), "fad");
        assert_eq!(normalize(""), "");
    }

    #[test]
    fn term_level_maps_full_terms_only() {
        let d = load_thesaurus(fixture("ad.json")).unwrap();
        let dict = build_dictionary(&d, Granularity::TermLevel);
        assert_eq!(
            dict.concepts_for("presenile dementia").unwrap(),
            &["M0000546".to_string()]
        );
        assert!(dict.concepts_for("presenile").is_none());
    }

    #[test]
    fn token_level_additionally_maps_individual_tokens() {
        let d = load_thesaurus(fixture("ad.json")).unwrap();
        let dict = build_dictionary(&d, Granularity::TokenLevel);
        assert_eq!(
            dict.concepts_for("presenile").unwrap(),
            &["M0000546".to_string()]
        );
        // "alzheimer" is a token of terms from several concepts.
        assert!(dict.concepts_for("alzheimer").unwrap().len() > 1);
    }

    #[test]
    fn abbreviation_in_parentheses_is_matched() {
        let d = load_thesaurus(fixture("ad.json")).unwrap();
        let dict = build_dictionary(&d, Granularity::TermLevel);
        let a = article(
            "p1",
            "A study",
            "We describe familial Alzheimer's disease (FAD) in two kindreds.",
        );
        let occs = recognize(&a, &dict);
        let fad: Vec<_> = occs.iter().filter(|o| o.concept_id == "M0000547").collect();
        assert_eq!(fad.len(), 1);
        assert_eq!(fad[0].matched_text, "fad");
        let normalized = normalize(&a.text());
        assert_eq!(&normalized[fad[0].start..fad[0].end], "fad");
    }

    #[test]
    fn longest_match_suppresses_nested_matches() {
        let d = load_thesaurus(fixture("ad.json")).unwrap();
        let dict = build_dictionary(&d, Granularity::TokenLevel);
        let a = article("p1", "Presenile dementia", "");
        let occs = recognize(&a, &dict);
        // The full term wins; its tokens are not matched separately.
        assert_eq!(occs.len(), 1);
        assert_eq!(occs[0].concept_id, "M0000546");
        assert_eq!(occs[0].matched_text, "presenile dementia");
    }

    #[test]
    fn text_without_dictionary_terms_yields_nothing() {
        let d = load_thesaurus(fixture("ad.json")).unwrap();
        let dict = build_dictionary(&d, Granularity::TermLevel);
        let a = article("p1", "An unrelated cardiology study", "Nothing to see.");
        assert!(recognize(&a, &dict).is_empty());
    }

    #[test]
    fn matched_segments_never_partially_overlap() {
        let d = load_thesaurus(fixture("ad.json")).unwrap();
        let dict = build_dictionary(&d, Granularity::TokenLevel);
        let a = article(
            "p1",
            "Late onset Alzheimer disease and presenile dementia",
            "Familial Alzheimer disease (FAD), EOAD and LOAD cases.",
        );
        let occs = recognize(&a, &dict);
        assert!(!occs.is_empty());
        for x in &occs {
            for y in &occs {
                let same = x.start == y.start && x.end == y.end;
                let disjoint = x.end <= y.start || y.end <= x.start;
                assert!(same || disjoint, "overlapping spans {x:?} vs {y:?}");
            }
        }
    }

    #[test]
    fn import_rejects_unknown_pmid_with_line_number() {
        let corpus = Corpus::new("D000544", vec![article("p1", "T", "A")]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("occ.jsonl");
        fs::write(
            &path,
            "{\"pmid\":\"p1\",\"concept_id\":\"C1\"}\n{\"pmid\":\"p9\",\"concept_id\":\"C1\"}\n",
        )
        .unwrap();
        match import_occurrences(&path, &corpus) {
            Err(RecognizerError::UnknownPmid { pmid, line }) => {
                assert_eq!(pmid, "p9");
                assert_eq!(line, 2);
            }
            other => panic!("expected unknown pmid error, got {other:?}"),
        }
    }

    #[test]
    fn import_accepts_valid_lines_and_empty_files() {
        let corpus = Corpus::new("D000544", vec![article("p1", "T", "A")]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("occ.jsonl");
        fs::write(
            &path,
            "{\"pmid\":\"p1\",\"concept_id\":\"C1\",\"matched_text\":\"x\"}\n{\"pmid\":\"p1\",\"concept_id\":\"C2\"}\n",
        )
        .unwrap();
        let occs = import_occurrences(&path, &corpus).unwrap();
        assert_eq!(occs.len(), 2);
        assert!(occs.iter().all(|o| o.source == OccurrenceSource::Imported));

        fs::write(&path, "").unwrap();
        assert!(import_occurrences(&path, &corpus).unwrap().is_empty());
    }

    #[test]
    fn recognition_is_pure() {
        let d = load_thesaurus(fixture("ad.json")).unwrap();
        let dict = build_dictionary(&d, Granularity::TokenLevel);
        let a = article("p1", "Early onset Alzheimer disease", "EOAD and FAD.");
        assert_eq!(recognize(&a, &dict), recognize(&a, &dict));
    }
}
