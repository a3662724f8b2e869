//! Synthetic corpora with controlled weak-label noise.
//!
//! Articles are composed from label-conditioned token distributions: each
//! golden-positive article mentions one of its concept's thesaurus terms
//! with probability `1 - miss_rate` (a missing mention becomes a weak false
//! negative) and an off-label term with probability `spurious_rate` (a weak
//! false positive). Per-label signature words carry lexical signal beyond
//! the term mentions, which is what a trained model can exploit.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use thiserror::Error;

use crate::ingest::{Article, Corpus};
use crate::thesaurus::{Concept, Descriptor, Relation, Term};
use crate::weaklabel::{LabelMatrix, MatrixKind};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("a synthetic corpus needs at least one label")]
    NoLabels,
    #[error("{which} must be in [0, 1), got {value}")]
    BadRate { which: &'static str, value: f64 },
}

pub const SYNTH_DESCRIPTOR_ID: &str = "D-SYN";
pub const SYNTH_TOP_CONCEPT_ID: &str = "C-TOP";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_articles: usize,
    pub labels: Vec<String>,
    /// Concept id -> surface terms; labels without an entry get a generated
    /// single-token term.
    #[serde(default)]
    pub synonym_map: BTreeMap<String, Vec<String>>,
    /// Probability that a golden-positive article does NOT mention a term.
    pub miss_rate: f64,
    /// Probability that a golden-negative article mentions a term anyway.
    pub spurious_rate: f64,
    pub seed: u64,
    #[serde(default = "default_prevalence")]
    pub label_prevalence: f64,
    #[serde(default = "default_signature_words")]
    pub signature_words_per_label: usize,
    #[serde(default = "default_signature_rate")]
    pub signature_word_rate: f64,
    #[serde(default = "default_signature_noise")]
    pub signature_noise_rate: f64,
    #[serde(default = "default_background_vocabulary")]
    pub background_vocabulary: usize,
    #[serde(default = "default_background_words")]
    pub background_words_per_article: usize,
}

fn default_prevalence() -> f64 {
    0.3
}

fn default_signature_words() -> usize {
    6
}

fn default_signature_rate() -> f64 {
    0.8
}

fn default_signature_noise() -> f64 {
    0.02
}

fn default_background_vocabulary() -> usize {
    120
}

fn default_background_words() -> usize {
    25
}

const CONDITION_NAMES: [&str; 8] = [
    "alphacond",
    "betacond",
    "gammacond",
    "deltacond",
    "epsiloncond",
    "zetacond",
    "etacond",
    "thetacond",
];

impl SynthSpec {
    /// A ready-to-use spec with generated labels `C-0..C-{n}` and two
    /// synonyms per label.
    pub fn with_defaults(
        n_articles: usize,
        n_labels: usize,
        miss_rate: f64,
        spurious_rate: f64,
        seed: u64,
    ) -> SynthSpec {
        let labels: Vec<String> = (0..n_labels).map(|i| format!("C-{i}")).collect();
        let mut synonym_map = BTreeMap::new();
        for (i, label) in labels.iter().enumerate() {
            let name = CONDITION_NAMES[i % CONDITION_NAMES.len()];
            let terms = if i < CONDITION_NAMES.len() {
                vec![name.to_string(), format!("{name} syndrome")]
            } else {
                vec![format!("{name}{i}"), format!("{name}{i} syndrome")]
            };
            synonym_map.insert(label.clone(), terms);
        }
        SynthSpec {
            n_articles,
            labels,
            synonym_map,
            miss_rate,
            spurious_rate,
            seed,
            label_prevalence: default_prevalence(),
            signature_words_per_label: default_signature_words(),
            signature_word_rate: default_signature_rate(),
            signature_noise_rate: default_signature_noise(),
            background_vocabulary: default_background_vocabulary(),
            background_words_per_article: default_background_words(),
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.labels.is_empty() {
            return Err(SynthError::NoLabels);
        }
        for (which, value) in [
            ("miss_rate", self.miss_rate),
            ("spurious_rate", self.spurious_rate),
            ("label_prevalence", self.label_prevalence),
            ("signature_word_rate", self.signature_word_rate),
            ("signature_noise_rate", self.signature_noise_rate),
        ] {
            if !(0.0..1.0).contains(&value) {
                return Err(SynthError::BadRate { which, value });
            }
        }
        Ok(())
    }

    fn terms_of(&self, index: usize, label: &str) -> Vec<String> {
        match self.synonym_map.get(label) {
            Some(terms) if !terms.is_empty() => terms.clone(),
            _ => vec![format!("cond{index}x")],
        }
    }
}

#[derive(Debug)]
pub struct SynthData {
    pub corpus: Corpus,
    pub golden: LabelMatrix,
    pub descriptor: Descriptor,
}

/// Generate a corpus, its golden label matrix and a matching thesaurus
/// entry. Deterministic given the spec's seed.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut concepts = vec![Concept {
        concept_id: SYNTH_TOP_CONCEPT_ID.to_string(),
        name: "Rootcond".to_string(),
        terms: vec![Term {
            text: "rootcond".to_string(),
            is_preferred_of_concept: true,
        }],
        relation_to_preferred: Relation::Preferred,
    }];
    let mut label_terms: Vec<Vec<String>> = Vec::with_capacity(spec.labels.len());
    for (i, label) in spec.labels.iter().enumerate() {
        let terms = spec.terms_of(i, label);
        label_terms.push(terms.clone());
        concepts.push(Concept {
            concept_id: label.clone(),
            name: terms[0].clone(),
            terms: terms
                .iter()
                .enumerate()
                .map(|(j, t)| Term {
                    text: t.clone(),
                    is_preferred_of_concept: j == 0,
                })
                .collect(),
            relation_to_preferred: Relation::Narrower,
        });
    }
    let descriptor = Descriptor {
        descriptor_id: SYNTH_DESCRIPTOR_ID.to_string(),
        name: "Synthetic Condition".to_string(),
        concepts,
        preferred_concept_id: SYNTH_TOP_CONCEPT_ID.to_string(),
        top_concept_id: SYNTH_TOP_CONCEPT_ID.to_string(),
    };

    let mut articles = Vec::with_capacity(spec.n_articles);
    let mut golden_rows = Vec::with_capacity(spec.n_articles);
    for i in 0..spec.n_articles {
        let golden: Vec<bool> = (0..spec.labels.len())
            .map(|_| rng.gen_bool(spec.label_prevalence))
            .collect();

        let mut phrases: Vec<String> = Vec::new();
        for _ in 0..spec.background_words_per_article {
            phrases.push(format!("bg{}", rng.gen_range(0..spec.background_vocabulary)));
        }
        for (li, &is_golden) in golden.iter().enumerate() {
            let rate = if is_golden {
                spec.signature_word_rate
            } else {
                spec.signature_noise_rate
            };
            for s in 0..spec.signature_words_per_label {
                if rng.gen_bool(rate) {
                    phrases.push(format!("sg{li}w{s}"));
                }
            }
        }
        for (li, &is_golden) in golden.iter().enumerate() {
            let mention = if is_golden {
                rng.gen_bool(1.0 - spec.miss_rate)
            } else {
                rng.gen_bool(spec.spurious_rate)
            };
            if mention {
                let terms = &label_terms[li];
                let term = &terms[rng.gen_range(0..terms.len())];
                phrases.push(term.clone());
            }
        }
        if rng.gen_bool(0.8) {
            phrases.push("rootcond".to_string());
        }

        articles.push(Article {
            pmid: format!("S{i:06}"),
            title: format!("Synthetic record {i:05}"),
            abstract_text: phrases.join(" "),
            descriptor_ids: vec![SYNTH_DESCRIPTOR_ID.to_string()],
        });
        golden_rows.push(
            golden
                .iter()
                .enumerate()
                .filter(|(_, &g)| g)
                .map(|(li, _)| li as u32)
                .collect(),
        );
    }

    let corpus = Corpus {
        descriptor_id: SYNTH_DESCRIPTOR_ID.to_string(),
        articles,
    };
    let golden = LabelMatrix::new(
        corpus.pmids(),
        spec.labels.clone(),
        golden_rows,
        MatrixKind::Golden,
    )
    .expect("generated pmids are unique");
    Ok(SynthData {
        corpus,
        golden,
        descriptor,
    })
}
