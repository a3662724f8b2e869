//! Refinement of coarse subject annotations into concept-level multi-label
//! annotations, using concept occurrence in titles and abstracts as weak
//! supervision.
//!
//! The crate is organised around the stages of the refinement pipeline:
//!
//! * [`thesaurus`] — descriptor/concept/term model and the fine-grained label set
//! * [`ingest`] — corpus acquisition (Entrez E-utilities), MEDLINE XML parsing, JSONL corpus IO
//! * [`recognizer`] — dictionary-based concept occurrence detection and annotation import
//! * [`weaklabel`] — occurrence evidence to binary label matrices
//! * [`datasets`] — test/train splits, under-sampling, cross-validation folds
//! * [`features`] — lexical + semantic feature spaces, TF-IDF, chi²/ANOVA-F selection
//! * [`learn`] — one-vs-rest linear models and tree ensembles
//! * [`evalkit`] — per-label metrics, macro-F1, Cohen's kappa, baseline predictors
//! * [`synth`] — synthetic corpora with controlled label noise, for testing

pub mod datasets;
pub mod evalkit;
pub mod features;
pub mod ingest;
pub mod learn;
pub mod recognizer;
pub mod synth;
pub mod thesaurus;
pub mod weaklabel;
