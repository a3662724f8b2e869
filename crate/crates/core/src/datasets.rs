//! Test/train split construction.
//!
//! MA1 is a uniform random hold-out. MA2 balances label combinations: the
//! articles are grouped by the exact set of their weak labels, the
//! combination holding only the preferred concept is excluded, and the
//! remaining combinations are cycled round-robin, one random article at a
//! time, each combination capped at half of its pool. WS is everything left
//! that carries at least one weak label, and WS_und under-samples the
//! articles whose only weak label is the preferred concept.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::thesaurus::Descriptor;
use crate::weaklabel::LabelMatrix;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid split manifest JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot sample {n} from {available} articles")]
    SampleTooLarge { n: usize, available: usize },
    #[error("eligible pool ({available} after exclusion and caps) is smaller than {n}")]
    PoolTooSmall { n: usize, available: usize },
    #[error("pmid {pmid} is not in the weak label matrix")]
    UnknownPmid { pmid: String },
    #[error("preferred concept {concept_id} is not a column of the weak matrix")]
    MissingPreferredColumn { concept_id: String },
    #[error("fold count {k} out of range for {n} articles")]
    BadFoldCount { k: usize, n: usize },
    #[error("split sets are not disjoint: {pmid} appears twice")]
    Overlap { pmid: String },
}

/// The three article sets of one experiment, plus the seed that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBundle {
    pub seed: u64,
    pub ma1: Vec<String>,
    pub ma2: Vec<String>,
    pub ws: Vec<String>,
}

impl SplitBundle {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut seen = HashSet::new();
        for pmid in self.ma1.iter().chain(&self.ma2).chain(&self.ws) {
            if !seen.insert(pmid.clone()) {
                return Err(DatasetError::Overlap { pmid: pmid.clone() });
            }
        }
        Ok(())
    }

    /// Disjointness plus containment in the corpus the split was drawn from.
    pub fn validate_against(&self, corpus_pmids: &[String]) -> Result<(), DatasetError> {
        self.validate()?;
        let known: HashSet<&str> = corpus_pmids.iter().map(String::as_str).collect();
        for pmid in self.ma1.iter().chain(&self.ma2).chain(&self.ws) {
            if !known.contains(pmid.as_str()) {
                return Err(DatasetError::UnknownPmid { pmid: pmid.clone() });
            }
        }
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), DatasetError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<SplitBundle, DatasetError> {
        let bundle: SplitBundle = serde_json::from_str(&fs::read_to_string(path)?)?;
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Assignment of articles to cross-validation folds; fold sizes differ by at
/// most one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_members(&self, fold: usize) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(p, _)| p.clone())
            .collect()
    }
}

fn row_index(weak: &LabelMatrix) -> HashMap<&str, usize> {
    weak.pmids
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_str(), i))
        .collect()
}

fn row_of(
    index: &HashMap<&str, usize>,
    pmid: &str,
) -> Result<usize, DatasetError> {
    index
        .get(pmid)
        .copied()
        .ok_or_else(|| DatasetError::UnknownPmid {
            pmid: pmid.to_string(),
        })
}

/// Uniform sample of `n` pmids without replacement, deterministic given seed.
pub fn split_ma1(pmids: &[String], n: usize, seed: u64) -> Result<Vec<String>, DatasetError> {
    if n > pmids.len() {
        return Err(DatasetError::SampleTooLarge {
            n,
            available: pmids.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..pmids.len()).collect();
    for i in 0..n {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    Ok(indices[..n].iter().map(|&i| pmids[i].clone()).collect())
}

/// Label-combination-balanced sample.
///
/// Articles are grouped by their exact weak label set over all descriptor
/// concepts. The combination holding only the preferred concept is excluded;
/// every other combination participates, the empty set included. Combinations
/// are visited in ascending pool size (ties by label-set order), one uniform
/// draw per visit, skipping combinations that reached their cap of
/// `max(1, pool/2)` articles, until `n` articles are selected.
pub fn split_ma2(
    pmids: &[String],
    weak: &LabelMatrix,
    d: &Descriptor,
    n: usize,
    seed: u64,
) -> Result<Vec<String>, DatasetError> {
    let pref_column =
        weak.label_index(&d.preferred_concept_id)
            .ok_or_else(|| DatasetError::MissingPreferredColumn {
                concept_id: d.preferred_concept_id.clone(),
            })?;
    let index = row_index(weak);
    let mut groups: BTreeMap<Vec<u32>, Vec<String>> = BTreeMap::new();
    for pmid in pmids {
        let row = row_of(&index, pmid)?;
        let combination = weak.rows[row].clone();
        if combination == [pref_column] {
            continue;
        }
        groups.entry(combination).or_default().push(pmid.clone());
    }

    let mut order: Vec<&Vec<u32>> = groups.keys().collect();
    order.sort_by(|a, b| {
        groups[*a]
            .len()
            .cmp(&groups[*b].len())
            .then_with(|| a.cmp(b))
    });
    let caps: Vec<usize> = order.iter().map(|c| (groups[*c].len() / 2).max(1)).collect();
    let capacity: usize = caps.iter().sum();
    if capacity < n {
        return Err(DatasetError::PoolTooSmall {
            n,
            available: capacity,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<Vec<String>> = order.iter().map(|c| groups[*c].clone()).collect();
    let mut taken = vec![0usize; pools.len()];
    let mut selected = Vec::with_capacity(n);
    while selected.len() < n {
        for (g, pool) in pools.iter_mut().enumerate() {
            if selected.len() == n {
                break;
            }
            if taken[g] >= caps[g] || pool.is_empty() {
                continue;
            }
            let i = rng.gen_range(0..pool.len());
            selected.push(pool.swap_remove(i));
            taken[g] += 1;
        }
    }
    Ok(selected)
}

/// The weakly supervised training set: everything outside MA1 and MA2 that
/// carries at least one weak label (top concept included).
pub fn build_ws(
    pmids: &[String],
    ma1: &[String],
    ma2: &[String],
    weak: &LabelMatrix,
) -> Result<Vec<String>, DatasetError> {
    let held: HashSet<&str> = ma1.iter().chain(ma2).map(String::as_str).collect();
    let index = row_index(weak);
    let mut ws = Vec::new();
    for pmid in pmids {
        if held.contains(pmid.as_str()) {
            continue;
        }
        let row = row_of(&index, pmid)?;
        if !weak.rows[row].is_empty() {
            ws.push(pmid.clone());
        }
    }
    Ok(ws)
}

/// Under-sample the majority class: every article with at least one weak
/// label other than the preferred concept is retained; of the articles whose
/// only weak label is the preferred concept, a uniform sample of
/// `min(target, pool)` is kept. Output preserves input order.
pub fn undersample_majority(
    ws_pmids: &[String],
    weak: &LabelMatrix,
    d: &Descriptor,
    target: usize,
    seed: u64,
) -> Result<Vec<String>, DatasetError> {
    let pref_column =
        weak.label_index(&d.preferred_concept_id)
            .ok_or_else(|| DatasetError::MissingPreferredColumn {
                concept_id: d.preferred_concept_id.clone(),
            })?;
    let index = row_index(weak);
    let mut majority_pool = Vec::new();
    let mut retained: HashSet<&str> = HashSet::new();
    for pmid in ws_pmids {
        let row = row_of(&index, pmid)?;
        let labels = &weak.rows[row];
        if labels.iter().any(|&c| c != pref_column) {
            retained.insert(pmid.as_str());
        } else if labels.as_slice() == [pref_column] {
            majority_pool.push(pmid.clone());
        }
    }
    let kept_majority: HashSet<String> = split_ma1(
        &majority_pool,
        target.min(majority_pool.len()),
        seed,
    )?
    .into_iter()
    .collect();
    Ok(ws_pmids
        .iter()
        .filter(|p| retained.contains(p.as_str()) || kept_majority.contains(*p))
        .cloned()
        .collect())
}

/// Random shuffle followed by contiguous partition into `k` folds.
pub fn make_folds(pmids: &[String], k: usize, seed: u64) -> Result<FoldPlan, DatasetError> {
    if k < 2 || k > pmids.len() {
        return Err(DatasetError::BadFoldCount { k, n: pmids.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled: Vec<&String> = pmids.iter().collect();
    for i in (1..shuffled.len()).rev() {
        let j = rng.gen_range(0..=i);
        shuffled.swap(i, j);
    }
    let n = shuffled.len();
    let base = n / k;
    let extra = n % k;
    let mut assignments = BTreeMap::new();
    let mut cursor = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for pmid in &shuffled[cursor..cursor + size] {
            assignments.insert((*pmid).clone(), fold);
        }
        cursor += size;
    }
    Ok(FoldPlan { k, assignments })
}
