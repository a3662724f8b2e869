//! CART decision trees with Gini impurity, and bagged forests with
//! per-split feature subsampling.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeOptions {
    pub max_depth: Option<u32>,
    pub min_leaf: u32,
    pub n_trees: u32,
    /// Fraction of features examined per split in forests; `None` means
    /// `sqrt(F)/F`.
    pub feature_subsample: Option<f64>,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions {
            max_depth: None,
            min_leaf: 1,
            n_trees: 100,
            feature_subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node")]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        pos: u32,
        neg: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<TreeNode>,
}

impl TreeModel {
    /// Majority vote of the reached leaf; ties are negative.
    pub fn predict(&self, value_of: &dyn Fn(u32) -> f64) -> bool {
        let mut index = 0u32;
        loop {
            match &self.nodes[index as usize] {
                TreeNode::Leaf { pos, neg } => return pos > neg,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    index = if value_of(*feature) <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }
}

/// Column-major training view shared by every tree of a training run.
pub(crate) struct ColumnData {
    pub columns: Vec<Vec<f64>>,
    pub n_rows: usize,
}

impl ColumnData {
    pub fn from_rows(rows: &[Vec<(u32, f64)>], n_features: usize) -> Self {
        let n_rows = rows.len();
        let mut columns = vec![vec![0.0; n_rows]; n_features];
        for (r, row) in rows.iter().enumerate() {
            for &(f, v) in row {
                columns[f as usize][r] = v;
            }
        }
        ColumnData { columns, n_rows }
    }
}

struct TreeBuilder<'a> {
    data: &'a ColumnData,
    y: &'a [bool],
    options: &'a TreeOptions,
    nodes: Vec<TreeNode>,
    /// Number of features examined per split; `None` examines all.
    m_try: Option<usize>,
    feature_pool: Vec<u32>,
}

struct BestSplit {
    feature: u32,
    threshold: f64,
    weighted_impurity: f64,
}

impl<'a> TreeBuilder<'a> {
    fn leaf(&mut self, rows: &[u32]) -> u32 {
        let pos = rows.iter().filter(|&&r| self.y[r as usize]).count() as u32;
        let neg = rows.len() as u32 - pos;
        self.nodes.push(TreeNode::Leaf { pos, neg });
        (self.nodes.len() - 1) as u32
    }

    fn candidate_features(&mut self, rng: &mut ChaCha8Rng) -> Vec<u32> {
        match self.m_try {
            None => (0..self.data.columns.len() as u32).collect(),
            Some(m) => {
                let pool_len = self.feature_pool.len();
                let m = m.min(pool_len);
                for i in 0..m {
                    let j = rng.gen_range(i..pool_len);
                    self.feature_pool.swap(i, j);
                }
                let mut chosen: Vec<u32> = self.feature_pool[..m].to_vec();
                chosen.sort_unstable();
                chosen
            }
        }
    }

    fn best_split(&self, rows: &[u32], candidates: &[u32]) -> Option<BestSplit> {
        let n = rows.len() as f64;
        let min_leaf = self.options.min_leaf as usize;
        let mut best: Option<BestSplit> = None;
        let mut sortable: Vec<(f64, bool)> = Vec::with_capacity(rows.len());
        for &feature in candidates {
            let column = &self.data.columns[feature as usize];
            sortable.clear();
            sortable.extend(
                rows.iter()
                    .map(|&r| (column[r as usize], self.y[r as usize])),
            );
            sortable.sort_by(|a, b| a.0.total_cmp(&b.0));
            let total_pos = sortable.iter().filter(|(_, p)| *p).count() as f64;
            let mut left_pos = 0.0f64;
            for i in 0..sortable.len() - 1 {
                if sortable[i].1 {
                    left_pos += 1.0;
                }
                if sortable[i].0 == sortable[i + 1].0 {
                    continue;
                }
                let n_left = (i + 1) as f64;
                let n_right = n - n_left;
                if (n_left as usize) < min_leaf || (n_right as usize) < min_leaf {
                    continue;
                }
                let right_pos = total_pos - left_pos;
                let gini = |pos: f64, count: f64| {
                    let p = pos / count;
                    1.0 - p * p - (1.0 - p) * (1.0 - p)
                };
                let weighted =
                    n_left * gini(left_pos, n_left) + n_right * gini(right_pos, n_right);
                let better = match &best {
                    None => true,
                    Some(b) => weighted < b.weighted_impurity - 1e-12,
                };
                if better {
                    best = Some(BestSplit {
                        feature,
                        threshold: (sortable[i].0 + sortable[i + 1].0) / 2.0,
                        weighted_impurity: weighted,
                    });
                }
            }
        }
        best
    }

    fn build(&mut self, rows: Vec<u32>, depth: u32, rng: &mut ChaCha8Rng) -> u32 {
        let pos = rows.iter().filter(|&&r| self.y[r as usize]).count();
        let pure = pos == 0 || pos == rows.len();
        let depth_done = self.options.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_done || rows.len() < 2 * self.options.min_leaf as usize {
            return self.leaf(&rows);
        }
        let candidates = self.candidate_features(rng);
        let Some(split) = self.best_split(&rows, &candidates) else {
            return self.leaf(&rows);
        };
        let column = &self.data.columns[split.feature as usize];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&r| column[r as usize] <= split.threshold);
        let index = self.nodes.len() as u32;
        self.nodes.push(TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let left = self.build(left_rows, depth + 1, rng);
        let right = self.build(right_rows, depth + 1, rng);
        if let TreeNode::Split {
            left: l, right: r, ..
        } = &mut self.nodes[index as usize]
        {
            *l = left;
            *r = right;
        }
        index
    }
}

pub(crate) fn fit_tree(
    data: &ColumnData,
    y: &[bool],
    options: &TreeOptions,
    rows: Vec<u32>,
    m_try: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> TreeModel {
    let n_features = data.columns.len();
    let mut builder = TreeBuilder {
        data,
        y,
        options,
        nodes: Vec::new(),
        m_try,
        feature_pool: (0..n_features as u32).collect(),
    };
    builder.build(rows, 0, rng);
    TreeModel {
        nodes: builder.nodes,
    }
}

/// Bagged trees: one bootstrap sample per tree, per-split feature
/// subsampling, per-tree rngs derived from `seed` so results do not depend
/// on scheduling.
pub(crate) fn fit_forest(
    data: &ColumnData,
    y: &[bool],
    options: &TreeOptions,
    seed: u64,
) -> Vec<TreeModel> {
    let n_features = data.columns.len();
    let fraction = options
        .feature_subsample
        .unwrap_or_else(|| (n_features as f64).sqrt() / (n_features as f64).max(1.0));
    let m_try = ((fraction * n_features as f64).round() as usize).clamp(1, n_features);
    (0..options.n_trees)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let rows: Vec<u32> = (0..data.n_rows)
                .map(|_| rng.gen_range(0..data.n_rows) as u32)
                .collect();
            fit_tree(data, y, options, rows, Some(m_try), &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xor_data() -> (ColumnData, Vec<bool>) {
        // y = x0 XOR x1, needs a depth-2 tree.
        let rows: Vec<Vec<(u32, f64)>> = vec![
            vec![],
            vec![(0, 1.0)],
            vec![(1, 1.0)],
            vec![(0, 1.0), (1, 1.0)],
        ];
        let y = vec![false, true, true, false];
        (ColumnData::from_rows(&rows, 2), y)
    }

    #[test]
    fn tree_learns_xor_exactly() {
        let (data, y) = xor_data();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = fit_tree(
            &data,
            &y,
            &TreeOptions::default(),
            (0..4).collect(),
            None,
            &mut rng,
        );
        for (r, &want) in y.iter().enumerate() {
            let got = tree.predict(&|f| data.columns[f as usize][r]);
            assert_eq!(got, want, "row {r}");
        }
    }

    #[test]
    fn max_depth_zero_gives_a_single_leaf() {
        let (data, y) = xor_data();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tree = fit_tree(
            &data,
            &y,
            &TreeOptions {
                max_depth: Some(0),
                ..TreeOptions::default()
            },
            (0..4).collect(),
            None,
            &mut rng,
        );
        assert_eq!(tree.nodes.len(), 1);
        // 2 vs 2 at the root: the tie is negative.
        assert!(!tree.predict(&|_| 0.0));
    }

    #[test]
    fn forest_is_deterministic_given_a_seed() {
        let (data, y) = xor_data();
        let options = TreeOptions {
            n_trees: 7,
            ..TreeOptions::default()
        };
        let a = fit_forest(&data, &y, &options, 42);
        let b = fit_forest(&data, &y, &options, 42);
        assert_eq!(a, b);
        let c = fit_forest(&data, &y, &options, 43);
        assert_ne!(a, c, "different seed should bootstrap differently");
    }
}
