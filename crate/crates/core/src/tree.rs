//! Least-squares regression trees grown leaf-wise, and tree ensembles.
//!
//! Growth always splits the leaf whose best split removes the most squared
//! error, until the leaf budget is spent or no leaf has an admissible split.
//! Split search is exact over midpoints of consecutive distinct values unless
//! histogram mode is selected.

use rayon::prelude::*;

use crate::booster::Loss;
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// Rows with `value <= threshold` go left. `feature` is 1-based.
    Internal {
        feature: u32,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        output: f64,
        doc_count: usize,
    },
}

/// Binary tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    nodes: Vec<TreeNode>,
}

impl RegressionTree {
    pub fn leaf(output: f64, doc_count: usize) -> Self {
        RegressionTree {
            nodes: vec![TreeNode::Leaf { output, doc_count }],
        }
    }

    /// Builds a tree from an arena, checking that it is well formed.
    pub fn from_nodes(nodes: Vec<TreeNode>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::validation("tree has no nodes"));
        }
        let mut parents = vec![0usize; nodes.len()];
        for (id, node) in nodes.iter().enumerate() {
            if let TreeNode::Internal {
                feature,
                threshold,
                left,
                right,
            } = *node
            {
                if feature == 0 {
                    return Err(Error::validation(format!(
                        "node {id}: feature indices start at 1"
                    )));
                }
                if threshold.is_nan() {
                    return Err(Error::validation(format!("node {id}: threshold is NaN")));
                }
                for child in [left, right] {
                    if child == 0 || child >= nodes.len() {
                        return Err(Error::validation(format!("node {id}: bad child {child}")));
                    }
                    parents[child] += 1;
                }
            }
        }
        if parents.iter().skip(1).any(|&p| p != 1) {
            return Err(Error::validation(
                "every non-root node needs exactly one parent",
            ));
        }
        Ok(RegressionTree { nodes })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    /// Overwrites the output of leaf node `node`.
    pub fn set_leaf_output(&mut self, node: usize, value: f64) {
        match &mut self.nodes[node] {
            TreeNode::Leaf { output, .. } => *output = value,
            TreeNode::Internal { .. } => panic!("node {node} is not a leaf"),
        }
    }

    /// Node id of the leaf reached by `row`.
    pub fn leaf_index(&self, row: &[f64]) -> Result<usize> {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                TreeNode::Leaf { .. } => return Ok(id),
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let value = row.get(feature as usize - 1).copied().unwrap_or(0.0);
                    if value.is_nan() {
                        return Err(Error::validation(format!("feature {feature} is NaN")));
                    }
                    id = if value <= threshold { left } else { right };
                }
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        match self.nodes[self.leaf_index(row)?] {
            TreeNode::Leaf { output, .. } => Ok(output),
            TreeNode::Internal { .. } => unreachable!(),
        }
    }

    /// Largest feature index referenced by any split.
    pub fn max_feature(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Internal { feature, .. } => Some(*feature as usize),
                TreeNode::Leaf { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }
}

pub fn predict_tree(tree: &RegressionTree, row: &[f64]) -> Result<f64> {
    tree.predict(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    #[default]
    Exact,
    /// Thresholds restricted to uniform bin edges between each feature's
    /// minimum and maximum.
    Histogram { bins: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub leaf_limit: usize,
    pub min_leaf_docs: usize,
    pub split_mode: SplitMode,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            leaf_limit: 30,
            min_leaf_docs: 1,
            split_mode: SplitMode::Exact,
        }
    }
}

/// A fitted tree plus the leaf node each training row landed in.
#[derive(Debug, Clone)]
pub struct FittedTree {
    pub tree: RegressionTree,
    pub leaf_of_row: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    /// 0-based column.
    pub column: usize,
    pub threshold: f64,
    /// Reduction in squared error.
    pub gain: f64,
}

/// Gains within this relative distance count as tied. The same partition
/// reached through different features is summed in a different order, so its
/// gain can differ in the last bits.
const GAIN_TIE_TOLERANCE: f64 = 1e-12;

fn clearly_greater(gain: f64, incumbent: f64) -> bool {
    gain > incumbent + GAIN_TIE_TOLERANCE * incumbent.abs()
}

impl Split {
    fn better_than(&self, other: &Option<Split>) -> bool {
        match other {
            None => true,
            Some(o) => clearly_greater(self.gain, o.gain),
        }
    }
}

/// Pre-binned columns for histogram mode.
struct Bins {
    edges: Vec<Vec<f64>>,
    codes: Vec<Vec<u16>>,
}

impl Bins {
    fn new(features: &FeatureMatrix, bins: usize) -> Self {
        let (edges, codes) = (0..features.cols())
            .into_par_iter()
            .map(|c| {
                let (lo, hi) = (0..features.rows())
                    .map(|r| features.get(r, c))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                        (lo.min(v), hi.max(v))
                    });
                let mut edges: Vec<f64> = if hi > lo {
                    (1..bins)
                        .map(|b| lo + (hi - lo) * b as f64 / bins as f64)
                        .collect()
                } else {
                    Vec::new()
                };
                edges.dedup();
                let codes = (0..features.rows())
                    .map(|r| {
                        let v = features.get(r, c);
                        edges.partition_point(|&e| e < v) as u16
                    })
                    .collect();
                (edges, codes)
            })
            .unzip();
        Bins { edges, codes }
    }
}

struct GrowingLeaf {
    node: usize,
    rows: Vec<usize>,
    best: Option<Split>,
}

/// Fits an L-leaf least-squares tree; provisional leaf outputs are mean responses.
pub fn fit_tree(
    features: &FeatureMatrix,
    responses: &[f64],
    params: &TreeParams,
) -> Result<FittedTree> {
    if params.leaf_limit < 2 {
        return Err(Error::config("a tree needs a leaf limit of at least 2"));
    }
    if params.min_leaf_docs < 1 {
        return Err(Error::config("min_leaf_docs must be at least 1"));
    }
    if let SplitMode::Histogram { bins } = params.split_mode {
        if !(2..=u16::MAX as usize).contains(&bins) {
            return Err(Error::config(
                "histogram mode needs between 2 and 65535 bins",
            ));
        }
    }
    if features.rows() != responses.len() {
        return Err(Error::validation(format!(
            "{} feature rows for {} responses",
            features.rows(),
            responses.len()
        )));
    }
    if responses.is_empty() {
        return Err(Error::validation("cannot fit a tree on zero rows"));
    }
    if responses.iter().any(|r| !r.is_finite()) {
        return Err(Error::validation("responses must be finite"));
    }
    if (0..features.rows()).any(|r| features.row(r).iter().any(|v| v.is_nan())) {
        return Err(Error::validation("feature matrix contains NaN"));
    }

    let bins = match params.split_mode {
        SplitMode::Exact => None,
        SplitMode::Histogram { bins } => Some(Bins::new(features, bins)),
    };
    let search = |rows: &[usize]| match &bins {
        None => best_split_exact(features, responses, rows, params.min_leaf_docs),
        Some(b) => best_split_binned(b, features.cols(), responses, rows, params.min_leaf_docs),
    };

    let all_rows: Vec<usize> = (0..responses.len()).collect();
    let mut nodes = vec![TreeNode::Leaf {
        output: 0.0,
        doc_count: 0,
    }];
    let mut leaves = vec![GrowingLeaf {
        node: 0,
        best: search(&all_rows),
        rows: all_rows,
    }];

    while leaves.len() < params.leaf_limit {
        // highest gain; ties go to the earliest created leaf
        let mut pick: Option<usize> = None;
        for (i, leaf) in leaves.iter().enumerate() {
            if let Some(split) = leaf.best {
                if pick.is_none_or(|p| clearly_greater(split.gain, leaves[p].best.unwrap().gain)) {
                    pick = Some(i);
                }
            }
        }
        let Some(pick) = pick else { break };
        let leaf = leaves.remove(pick);
        let split = leaf.best.unwrap();
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = leaf
            .rows
            .iter()
            .partition(|&&r| features.get(r, split.column) <= split.threshold);

        let left = nodes.len();
        let right = left + 1;
        nodes[leaf.node] = TreeNode::Internal {
            feature: split.column as u32 + 1,
            threshold: split.threshold,
            left,
            right,
        };
        for _ in 0..2 {
            nodes.push(TreeNode::Leaf {
                output: 0.0,
                doc_count: 0,
            });
        }
        for (node, rows) in [(left, left_rows), (right, right_rows)] {
            leaves.push(GrowingLeaf {
                node,
                best: search(&rows),
                rows,
            });
        }
        leaves.sort_by_key(|l| l.node);
    }

    let mut leaf_of_row = vec![0; responses.len()];
    for leaf in &leaves {
        let sum: f64 = leaf.rows.iter().map(|&r| responses[r]).sum();
        nodes[leaf.node] = TreeNode::Leaf {
            output: sum / leaf.rows.len() as f64,
            doc_count: leaf.rows.len(),
        };
        for &r in &leaf.rows {
            leaf_of_row[r] = leaf.node;
        }
    }
    Ok(FittedTree {
        tree: RegressionTree { nodes },
        leaf_of_row,
    })
}

/// Mean-centred responses and their squared error.
fn centred(responses: &[f64], rows: &[usize]) -> Option<(Vec<f64>, f64)> {
    let first = responses[rows[0]];
    if rows.iter().all(|&r| responses[r] == first) {
        return None;
    }
    let mean = rows.iter().map(|&r| responses[r]).sum::<f64>() / rows.len() as f64;
    let values: Vec<f64> = rows.iter().map(|&r| responses[r] - mean).collect();
    let sse = values.iter().map(|v| v * v).sum();
    Some((values, sse))
}

fn admissible(gain: f64, node_sse: f64) -> bool {
    gain > 0.0 && gain > 1e-12 * node_sse
}

/// Reduction in squared error from splitting a centred node into prefix/suffix.
fn split_gain(left_sum: f64, left_n: usize, total_sum: f64, total_n: usize) -> f64 {
    let right_sum = total_sum - left_sum;
    let right_n = total_n - left_n;
    left_sum * left_sum / left_n as f64 + right_sum * right_sum / right_n as f64
        - total_sum * total_sum / total_n as f64
}

fn pick_best(per_feature: Vec<Option<Split>>) -> Option<Split> {
    // lowest column wins ties
    per_feature.into_iter().flatten().fold(
        None,
        |best, s| if s.better_than(&best) { Some(s) } else { best },
    )
}

fn best_split_exact(
    features: &FeatureMatrix,
    responses: &[f64],
    rows: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let (values, node_sse) = centred(responses, rows)?;
    let total: f64 = values.iter().sum();

    let per_feature: Vec<Option<Split>> = (0..features.cols())
        .into_par_iter()
        .map(|col| {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                features
                    .get(rows[a], col)
                    .total_cmp(&features.get(rows[b], col))
                    .then(a.cmp(&b))
            });
            let mut best: Option<Split> = None;
            let mut left_sum = 0.0;
            for i in 0..n - 1 {
                left_sum += values[order[i]];
                let left_n = i + 1;
                if left_n < min_leaf || n - left_n < min_leaf {
                    continue;
                }
                let lo = features.get(rows[order[i]], col);
                let hi = features.get(rows[order[i + 1]], col);
                if lo == hi {
                    continue;
                }
                let gain = split_gain(left_sum, left_n, total, n);
                if !admissible(gain, node_sse) {
                    continue;
                }
                let candidate = Split {
                    column: col,
                    threshold: midpoint(lo, hi),
                    gain,
                };
                if candidate.better_than(&best) {
                    best = Some(candidate);
                }
            }
            best
        })
        .collect();
    pick_best(per_feature)
}

/// Midpoint that still routes `lo` left and `hi` right.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi || !mid.is_finite() {
        lo
    } else {
        mid
    }
}

fn best_split_binned(
    bins: &Bins,
    cols: usize,
    responses: &[f64],
    rows: &[usize],
    min_leaf: usize,
) -> Option<Split> {
    let n = rows.len();
    if n < 2 * min_leaf {
        return None;
    }
    let (values, node_sse) = centred(responses, rows)?;
    let total: f64 = values.iter().sum();

    let per_feature: Vec<Option<Split>> = (0..cols)
        .into_par_iter()
        .map(|col| {
            let edges = &bins.edges[col];
            let codes = &bins.codes[col];
            let mut sums = vec![0.0; edges.len() + 1];
            let mut counts = vec![0usize; edges.len() + 1];
            for (i, &r) in rows.iter().enumerate() {
                let b = codes[r] as usize;
                sums[b] += values[i];
                counts[b] += 1;
            }
            let mut best: Option<Split> = None;
            let (mut left_sum, mut left_n) = (0.0, 0);
            for (j, &edge) in edges.iter().enumerate() {
                left_sum += sums[j];
                left_n += counts[j];
                if counts[j] == 0 || left_n < min_leaf || n - left_n < min_leaf {
                    continue;
                }
                let gain = split_gain(left_sum, left_n, total, n);
                if !admissible(gain, node_sse) {
                    continue;
                }
                let candidate = Split {
                    column: col,
                    threshold: edge,
                    gain,
                };
                if candidate.better_than(&best) {
                    best = Some(candidate);
                }
            }
            best
        })
        .collect();
    pick_best(per_feature)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMeta {
    pub loss: Loss,
    pub top_k: usize,
    pub feature_count: usize,
}

/// `prediction = base + init(row) + learning_rate * sum of tree outputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub trees: Vec<RegressionTree>,
    pub learning_rate: f64,
    pub base_score: f64,
    /// Background model the trees were trained on top of.
    pub init: Option<Box<Ensemble>>,
    pub meta: EnsembleMeta,
}

impl Ensemble {
    pub fn new(learning_rate: f64, meta: EnsembleMeta) -> Self {
        Ensemble {
            trees: Vec::new(),
            learning_rate,
            base_score: 0.0,
            init: None,
            meta,
        }
    }

    /// Model that scores every document `value`.
    pub fn constant(value: f64, meta: EnsembleMeta) -> Self {
        Ensemble {
            base_score: value,
            ..Ensemble::new(1.0, meta)
        }
    }

    /// The part of the prediction that does not come from this ensemble's trees.
    pub fn offset(&self, row: &[f64]) -> Result<f64> {
        let init = match &self.init {
            Some(model) => model.predict(row)?,
            None => 0.0,
        };
        Ok(self.base_score + init)
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for tree in &self.trees {
            sum += tree.predict(row)?;
        }
        Ok(self.offset(row)? + self.learning_rate * sum)
    }

    pub fn predict_matrix(&self, features: &FeatureMatrix) -> Result<Vec<f64>> {
        (0..features.rows())
            .into_par_iter()
            .map(|r| self.predict(features.row(r)))
            .collect()
    }

    /// Largest feature index referenced anywhere, including the init model.
    pub fn max_feature(&self) -> usize {
        let own = self
            .trees
            .iter()
            .map(RegressionTree::max_feature)
            .max()
            .unwrap_or(0);
        let init = self.init.as_ref().map_or(0, |m| m.max_feature());
        own.max(init)
    }
}

pub fn predict_ensemble(ensemble: &Ensemble, row: &[f64]) -> Result<f64> {
    ensemble.predict(row)
}
