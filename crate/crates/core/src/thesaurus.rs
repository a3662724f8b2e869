//! Descriptor/concept/term model of a MeSH-like thesaurus entry.
//!
//! A descriptor aggregates several related concepts, each of which is a set
//! of synonymous terms. Exactly one concept is the preferred one, and exactly
//! one (the preferred itself, or a unique broader concept) sits on top of all
//! the others. The top concept is excluded from the fine-grained label set:
//! every article carrying the descriptor is trivially relevant to it.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ThesaurusError {
    #[error("cannot read thesaurus file: {0}")]
    Io(#[from] std::io::Error),
    #[error("thesaurus file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("concept {concept_id} has no terms")]
    NoTerms { concept_id: String },
    #[error("concept {concept_id} has an empty term")]
    EmptyTerm { concept_id: String },
    #[error("duplicate concept id {concept_id}")]
    DuplicateConceptId { concept_id: String },
    #[error("preferred_concept_id {concept_id} does not exist in concepts")]
    UnknownPreferred { concept_id: String },
    #[error("top_concept_id {concept_id} does not exist in concepts")]
    UnknownTop { concept_id: String },
    #[error("exactly one concept must have relation 'preferred', found {count}")]
    PreferredCount { count: usize },
    #[error("concept {concept_id} has relation 'preferred' but preferred_concept_id is {expected}")]
    PreferredMismatch {
        concept_id: String,
        expected: String,
    },
    #[error("at most one concept may have relation 'broader', found {count}")]
    BroaderCount { count: usize },
    #[error(
        "top_concept_id {top} must equal preferred_concept_id {preferred} or the unique broader concept"
    )]
    TopNotBroaderOrPreferred { top: String, preferred: String },
}

/// How a concept relates to the descriptor's preferred concept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Preferred,
    Narrower,
    Broader,
    Related,
}

/// A single surface form of a concept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub text: String,
    /// True for the concept's first (name-bearing) term.
    pub is_preferred_of_concept: bool,
}

/// A set of synonymous terms inside a descriptor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub concept_id: String,
    pub name: String,
    pub terms: Vec<Term>,
    pub relation_to_preferred: Relation,
}

/// A thesaurus entry: the coarse annotation unit being refined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Descriptor {
    pub descriptor_id: String,
    pub name: String,
    pub concepts: Vec<Concept>,
    pub preferred_concept_id: String,
    pub top_concept_id: String,
}

#[derive(Serialize, Deserialize)]
struct ConceptFile {
    concept_id: String,
    name: String,
    relation: Relation,
    terms: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct DescriptorFile {
    descriptor_id: String,
    name: String,
    preferred_concept_id: String,
    top_concept_id: String,
    concepts: Vec<ConceptFile>,
}

impl Descriptor {
    /// Build a descriptor from its JSON file representation, enforcing all
    /// structural invariants.
    fn from_file(file: DescriptorFile) -> Result<Self, ThesaurusError> {
        let mut concepts = Vec::with_capacity(file.concepts.len());
        for c in file.concepts {
            if c.terms.is_empty() {
                return Err(ThesaurusError::NoTerms {
                    concept_id: c.concept_id,
                });
            }
            let mut terms = Vec::with_capacity(c.terms.len());
            for (i, text) in c.terms.into_iter().enumerate() {
                if text.trim().is_empty() {
                    return Err(ThesaurusError::EmptyTerm {
                        concept_id: c.concept_id,
                    });
                }
                terms.push(Term {
                    text,
                    is_preferred_of_concept: i == 0,
                });
            }
            concepts.push(Concept {
                concept_id: c.concept_id,
                name: c.name,
                terms,
                relation_to_preferred: c.relation,
            });
        }
        let descriptor = Descriptor {
            descriptor_id: file.descriptor_id,
            name: file.name,
            concepts,
            preferred_concept_id: file.preferred_concept_id,
            top_concept_id: file.top_concept_id,
        };
        descriptor.validate()?;
        Ok(descriptor)
    }

    fn validate(&self) -> Result<(), ThesaurusError> {
        for (i, c) in self.concepts.iter().enumerate() {
            if self.concepts[..i].iter().any(|p| p.concept_id == c.concept_id) {
                return Err(ThesaurusError::DuplicateConceptId {
                    concept_id: c.concept_id.clone(),
                });
            }
        }
        if self.concept(&self.preferred_concept_id).is_none() {
            return Err(ThesaurusError::UnknownPreferred {
                concept_id: self.preferred_concept_id.clone(),
            });
        }
        if self.concept(&self.top_concept_id).is_none() {
            return Err(ThesaurusError::UnknownTop {
                concept_id: self.top_concept_id.clone(),
            });
        }
        let preferred: Vec<&Concept> = self
            .concepts
            .iter()
            .filter(|c| c.relation_to_preferred == Relation::Preferred)
            .collect();
        if preferred.len() != 1 {
            return Err(ThesaurusError::PreferredCount {
                count: preferred.len(),
            });
        }
        if preferred[0].concept_id != self.preferred_concept_id {
            return Err(ThesaurusError::PreferredMismatch {
                concept_id: preferred[0].concept_id.clone(),
                expected: self.preferred_concept_id.clone(),
            });
        }
        let broader: Vec<&Concept> = self
            .concepts
            .iter()
            .filter(|c| c.relation_to_preferred == Relation::Broader)
            .collect();
        if broader.len() > 1 {
            return Err(ThesaurusError::BroaderCount {
                count: broader.len(),
            });
        }
        let top_ok = if self.top_concept_id == self.preferred_concept_id {
            broader.is_empty()
        } else {
            broader.len() == 1 && broader[0].concept_id == self.top_concept_id
        };
        if !top_ok {
            return Err(ThesaurusError::TopNotBroaderOrPreferred {
                top: self.top_concept_id.clone(),
                preferred: self.preferred_concept_id.clone(),
            });
        }
        Ok(())
    }

    pub fn concept(&self, concept_id: &str) -> Option<&Concept> {
        self.concepts.iter().find(|c| c.concept_id == concept_id)
    }

    pub fn contains_concept(&self, concept_id: &str) -> bool {
        self.concept(concept_id).is_some()
    }

    /// Concept ids in declaration order.
    pub fn concept_ids(&self) -> Vec<String> {
        self.concepts.iter().map(|c| c.concept_id.clone()).collect()
    }
}

/// Load a descriptor from its JSON file, validating all invariants.
pub fn load_thesaurus<P: AsRef<Path>>(path: P) -> Result<Descriptor, ThesaurusError> {
    let text = fs::read_to_string(path)?;
    let file: DescriptorFile = serde_json::from_str(&text)?;
    Descriptor::from_file(file)
}

/// Write a descriptor back to its JSON file form.
///
/// `save_thesaurus` followed by [`load_thesaurus`] reproduces the descriptor
/// exactly, and re-saving the loaded descriptor reproduces the bytes.
pub fn save_thesaurus<P: AsRef<Path>>(d: &Descriptor, path: P) -> Result<(), ThesaurusError> {
    let file = DescriptorFile {
        descriptor_id: d.descriptor_id.clone(),
        name: d.name.clone(),
        preferred_concept_id: d.preferred_concept_id.clone(),
        top_concept_id: d.top_concept_id.clone(),
        concepts: d
            .concepts
            .iter()
            .map(|c| ConceptFile {
                concept_id: c.concept_id.clone(),
                name: c.name.clone(),
                relation: c.relation_to_preferred,
                terms: c.terms.iter().map(|t| t.text.clone()).collect(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// All concept ids of the descriptor except the top concept, in declaration
/// order. These are the prediction targets of the refinement task.
pub fn fine_grained_labels(d: &Descriptor) -> Vec<String> {
    d.concepts
        .iter()
        .filter(|c| c.concept_id != d.top_concept_id)
        .map(|c| c.concept_id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn concept(id: &str, relation: Relation, terms: &[&str]) -> ConceptFile {
        ConceptFile {
            concept_id: id.to_string(),
            name: terms[0].to_string(),
            relation,
            terms: terms.iter().map(|t| t.to_string()).collect(),
        }
    }

    fn single_concept_descriptor() -> DescriptorFile {
        DescriptorFile {
            descriptor_id: "D1".into(),
            name: "Solo".into(),
            preferred_concept_id: "C1".into(),
            top_concept_id: "C1".into(),
            concepts: vec![concept("C1", Relation::Preferred, &["Solo"])],
        }
    }

    #[test]
    fn single_concept_descriptor_is_valid_and_has_no_fine_grained_labels() {
        let d = Descriptor::from_file(single_concept_descriptor()).unwrap();
        assert_eq!(d.preferred_concept_id, d.top_concept_id);
        assert!(fine_grained_labels(&d).is_empty());
    }

    #[test]
    fn broader_concept_becomes_top_and_is_excluded_from_labels() {
        let file = DescriptorFile {
            descriptor_id: "D020388".into(),
            name: "Muscular Dystrophy, Duchenne".into(),
            preferred_concept_id: "M-DMD".into(),
            top_concept_id: "M-DBMD".into(),
            concepts: vec![
                concept("M-DMD", Relation::Preferred, &["Duchenne Muscular Dystrophy"]),
                concept("M-BMD", Relation::Related, &["Becker Muscular Dystrophy"]),
                concept(
                    "M-DBMD",
                    Relation::Broader,
                    &["Duchenne and Becker Muscular Dystrophy"],
                ),
            ],
        };
        let d = Descriptor::from_file(file).unwrap();
        assert_eq!(d.top_concept_id, "M-DBMD");
        assert_eq!(d.preferred_concept_id, "M-DMD");
        assert_eq!(fine_grained_labels(&d), vec!["M-DMD", "M-BMD"]);
    }

    #[test]
    fn two_broader_concepts_are_rejected() {
        let file = DescriptorFile {
            descriptor_id: "D1".into(),
            name: "Bad".into(),
            preferred_concept_id: "C1".into(),
            top_concept_id: "C2".into(),
            concepts: vec![
                concept("C1", Relation::Preferred, &["a"]),
                concept("C2", Relation::Broader, &["b"]),
                concept("C3", Relation::Broader, &["c"]),
            ],
        };
        match Descriptor::from_file(file) {
            Err(ThesaurusError::BroaderCount { count: 2 }) => {}
            other => panic!("expected BroaderCount error, got {other:?}"),
        }
    }

    #[test]
    fn top_must_be_preferred_or_the_broader_concept() {
        let file = DescriptorFile {
            descriptor_id: "D1".into(),
            name: "Bad".into(),
            preferred_concept_id: "C1".into(),
            top_concept_id: "C2".into(),
            concepts: vec![
                concept("C1", Relation::Preferred, &["a"]),
                concept("C2", Relation::Narrower, &["b"]),
            ],
        };
        assert!(matches!(
            Descriptor::from_file(file),
            Err(ThesaurusError::TopNotBroaderOrPreferred { .. })
        ));
    }

    #[test]
    fn empty_term_is_rejected() {
        let mut file = single_concept_descriptor();
        file.concepts[0].terms.push("   ".into());
        assert!(matches!(
            Descriptor::from_file(file),
            Err(ThesaurusError::EmptyTerm { .. })
        ));
    }

    #[test]
    fn duplicate_concept_id_is_rejected() {
        let file = DescriptorFile {
            descriptor_id: "D1".into(),
            name: "Bad".into(),
            preferred_concept_id: "C1".into(),
            top_concept_id: "C1".into(),
            concepts: vec![
                concept("C1", Relation::Preferred, &["a"]),
                concept("C1", Relation::Narrower, &["b"]),
            ],
        };
        assert!(matches!(
            Descriptor::from_file(file),
            Err(ThesaurusError::DuplicateConceptId { .. })
        ));
    }

    #[test]
    fn preferred_relation_must_match_preferred_id() {
        let file = DescriptorFile {
            descriptor_id: "D1".into(),
            name: "Bad".into(),
            preferred_concept_id: "C2".into(),
            top_concept_id: "C2".into(),
            concepts: vec![
                concept("C1", Relation::Preferred, &["a"]),
                concept("C2", Relation::Narrower, &["b"]),
            ],
        };
        assert!(matches!(
            Descriptor::from_file(file),
            Err(ThesaurusError::PreferredMismatch { .. })
        ));
    }
}
