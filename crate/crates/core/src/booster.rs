//! Gradient boosting driver for the Plackett-Luce ranker and the squared-loss
//! MART variants.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::metrics::{self, gain, DegeneratePolicy};
use crate::permutation::{build_permutations, query_rng, PermutationSet};
use crate::pl_objective::{accumulate_leaf_stats, LeafNewton, PlWorkspace};
use crate::tree::{fit_tree, Ensemble, EnsembleMeta, SplitMode, TreeNode, TreeParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Plackett-Luce likelihood of top-K ground-truth permutations.
    PlRank,
    /// Squared loss against `2^r - 1`.
    Mart1,
    /// Squared loss against the raw grade.
    Mart2,
    /// Squared loss against `(2^r - 1)` divided by the query's ideal DCG.
    CMart1,
}

impl Loss {
    pub fn name(self) -> &'static str {
        match self {
            Loss::PlRank => "plrank",
            Loss::Mart1 => "mart1",
            Loss::Mart2 => "mart2",
            Loss::CMart1 => "cmart1",
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plrank" => Ok(Loss::PlRank),
            "mart1" => Ok(Loss::Mart1),
            "mart2" => Ok(Loss::Mart2),
            "cmart1" => Ok(Loss::CMart1),
            other => Err(Error::config(format!("unknown loss `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub loss: Loss,
    pub trees: usize,
    pub leaves: usize,
    pub learning_rate: f64,
    pub top_k: usize,
    /// Ground-truth permutations sampled per query.
    pub objectives: usize,
    pub seed: u64,
    pub min_leaf_docs: usize,
    pub split_mode: SplitMode,
    /// Background model whose predictions initialize the scores.
    pub init_model: Option<Ensemble>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: Loss::PlRank,
            trees: 1000,
            leaves: 30,
            learning_rate: 0.1,
            top_k: 10,
            objectives: 1,
            seed: 42,
            min_leaf_docs: 1,
            split_mode: SplitMode::Exact,
            init_model: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trees < 1 {
            return Err(Error::config("at least one tree is required"));
        }
        if self.leaves < 2 {
            return Err(Error::config("trees need at least 2 leaves"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::config("learning rate must lie in (0, 1]"));
        }
        if self.top_k < 1 {
            return Err(Error::config("top-K must be at least 1"));
        }
        if self.objectives < 1 {
            return Err(Error::config("at least one objective is required"));
        }
        if self.min_leaf_docs < 1 {
            return Err(Error::config("min_leaf_docs must be at least 1"));
        }
        Ok(())
    }

    fn tree_params(&self) -> TreeParams {
        TreeParams {
            leaf_limit: self.leaves,
            min_leaf_docs: self.min_leaf_docs,
            split_mode: self.split_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Log-likelihood (plrank) or squared error (MART) after this iteration.
    pub objective: f64,
    pub valid_ndcg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainTrace {
    pub initial_objective: f64,
    pub entries: Vec<TraceEntry>,
    /// Cutoff used for the validation NDCG column, when validating.
    pub valid_k: Option<usize>,
}

impl TrainTrace {
    pub fn final_objective(&self) -> f64 {
        self.entries
            .last()
            .map_or(self.initial_objective, |e| e.objective)
    }
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "iter={} objective={}", self.iteration, self.objective)
    }
}

impl fmt::Display for TrainTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            write!(f, "{e}")?;
            if let (Some(k), Some(v)) = (self.valid_k, e.valid_ndcg) {
                write!(f, " valid_ndcg@{k}={v}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Gain target divisor for `cmart1`: DCG of the query's ideal ordering.
pub fn query_norm(grades: &[u32]) -> f64 {
    metrics::ideal_dcg_at_k(grades, grades.len().max(1)).unwrap_or(0.0)
}

/// Negative gradient of the squared loss for one query.
pub fn mart_response(scores: &[f64], grades: &[u32], variant: Loss, query_norm: f64) -> Vec<f64> {
    mart_targets(grades, variant, query_norm)
        .iter()
        .zip(scores)
        .map(|(t, s)| t - s)
        .collect()
}

fn mart_targets(grades: &[u32], variant: Loss, query_norm: f64) -> Vec<f64> {
    grades
        .iter()
        .map(|&r| match variant {
            Loss::Mart2 => r as f64,
            Loss::Mart1 => gain(r),
            Loss::CMart1 => {
                if query_norm > 0.0 {
                    gain(r) / query_norm
                } else {
                    0.0
                }
            }
            Loss::PlRank => panic!("plrank has no squared-loss target"),
        })
        .collect()
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(Ensemble, TrainTrace)> {
    train_with_validation(dataset, config, None)
}

/// Trains and, when `valid` is given, records validation NDCG@top_k after
/// every iteration.
pub fn train_with_validation(
    dataset: &Dataset,
    config: &TrainConfig,
    valid: Option<&Dataset>,
) -> Result<(Ensemble, TrainTrace)> {
    config.validate()?;
    if dataset.num_documents() == 0 {
        return Err(Error::config("training set is empty"));
    }
    let m = dataset.max_feature_index;
    let mut ensemble = Ensemble::new(
        config.learning_rate,
        EnsembleMeta {
            loss: config.loss,
            top_k: config.top_k,
            feature_count: m,
        },
    );
    ensemble.init = config.init_model.clone().map(Box::new);

    let features = dataset.dense_matrix(m)?;
    let offsets = row_offsets(&ensemble, &features)?;
    let mut tracker = match valid {
        Some(v) => Some(ValidationTracker::new(&ensemble, v, config.top_k)?),
        None => None,
    };

    let trace = match config.loss {
        Loss::PlRank => boost_plrank(
            dataset,
            config,
            &features,
            &offsets,
            &mut ensemble,
            tracker.as_mut(),
        )?,
        _ => boost_mart(
            dataset,
            config,
            &features,
            &offsets,
            &mut ensemble,
            tracker.as_mut(),
        )?,
    };
    Ok((ensemble, trace))
}

fn row_offsets(ensemble: &Ensemble, features: &FeatureMatrix) -> Result<Vec<f64>> {
    (0..features.rows())
        .into_par_iter()
        .map(|r| ensemble.offset(features.row(r)))
        .collect()
}

/// Incrementally scores a validation set as trees are added.
struct ValidationTracker<'a> {
    dataset: &'a Dataset,
    features: FeatureMatrix,
    offsets: Vec<f64>,
    tree_sum: Vec<f64>,
    k: usize,
}

impl<'a> ValidationTracker<'a> {
    fn new(ensemble: &Ensemble, dataset: &'a Dataset, k: usize) -> Result<Self> {
        let features = dataset.dense_matrix(dataset.max_feature_index)?;
        let offsets = row_offsets(ensemble, &features)?;
        Ok(ValidationTracker {
            dataset,
            tree_sum: vec![0.0; features.rows()],
            features,
            offsets,
            k,
        })
    }

    fn add_tree(&mut self, ensemble: &Ensemble) -> Result<f64> {
        let tree = ensemble.trees.last().expect("tree just added");
        let outputs: Vec<f64> = (0..self.features.rows())
            .into_par_iter()
            .map(|r| tree.predict(self.features.row(r)))
            .collect::<Result<_>>()?;
        for (s, o) in self.tree_sum.iter_mut().zip(outputs) {
            *s += o;
        }
        let scores: Vec<f64> = self
            .offsets
            .iter()
            .zip(&self.tree_sum)
            .map(|(o, s)| o + ensemble.learning_rate * s)
            .collect();
        let report = metrics::evaluate(
            self.dataset,
            &scores,
            &[self.k],
            self.dataset.max_grade,
            DegeneratePolicy::Zero,
        )?;
        Ok(report.ndcg_at[&self.k])
    }
}

struct Query {
    start: usize,
    len: usize,
    pset: PermutationSet,
}

fn boost_plrank(
    dataset: &Dataset,
    config: &TrainConfig,
    features: &FeatureMatrix,
    offsets: &[f64],
    ensemble: &mut Ensemble,
    mut tracker: Option<&mut ValidationTracker<'_>>,
) -> Result<TrainTrace> {
    let group_offsets = dataset.group_offsets();
    let queries: Vec<Query> = dataset
        .groups
        .par_iter()
        .enumerate()
        .map(|(gi, group)| {
            let mut rng = query_rng(config.seed, group.query_id);
            Query {
                start: group_offsets[gi],
                len: group.len(),
                pset: build_permutations(group, config.top_k, config.objectives, &mut rng),
            }
        })
        .collect::<Vec<_>>()
        .into_iter()
        .filter(|q| !q.pset.is_empty())
        .collect();
    if queries.is_empty() {
        return Err(Error::config(
            "no query has two or more documents; the ranking loss has nothing to fit",
        ));
    }

    let rows: Vec<usize> = queries
        .iter()
        .flat_map(|q| q.start..q.start + q.len)
        .collect();
    let train_features = features.select_rows(&rows);
    let mut tree_sum = vec![0.0; dataset.num_documents()];
    let mut scores = offsets.to_vec();
    let mut trace = TrainTrace {
        valid_k: tracker.as_ref().map(|t| t.k),
        ..TrainTrace::default()
    };

    for t in 1..=config.trees {
        let workspaces = workspaces(&queries, &scores);
        let objective: f64 = workspaces.iter().map(|w| w.log_likelihood).sum();
        if t == 1 {
            trace.initial_objective = objective;
        } else {
            trace.entries.last_mut().unwrap().objective = objective;
        }

        let responses: Vec<f64> = workspaces
            .iter()
            .flat_map(|w| w.response.iter().copied())
            .collect();
        let mut fit = fit_tree(&train_features, &responses, &config.tree_params())?;

        // per-query partial sums reduced in query order
        let n_nodes = fit.tree.nodes().len();
        let mut row_cursor = Vec::with_capacity(queries.len());
        let mut cursor = 0;
        for q in &queries {
            row_cursor.push(cursor);
            cursor += q.len;
        }
        let partials: Vec<Vec<LeafNewton>> = queries
            .par_iter()
            .zip(&workspaces)
            .zip(&row_cursor)
            .map(|((q, ws), &start)| {
                let leaf_of: Vec<Option<usize>> = fit.leaf_of_row[start..start + q.len]
                    .iter()
                    .map(|&l| Some(l))
                    .collect();
                let mut stats = vec![LeafNewton::default(); n_nodes];
                accumulate_leaf_stats(&q.pset, ws, &leaf_of, &mut stats);
                stats
            })
            .collect();
        let mut stats = vec![LeafNewton::default(); n_nodes];
        for partial in &partials {
            for (acc, s) in stats.iter_mut().zip(partial) {
                acc.gradient += s.gradient;
                acc.curvature += s.curvature;
            }
        }
        for (node, s) in stats.iter().enumerate() {
            if matches!(fit.tree.nodes()[node], TreeNode::Leaf { .. }) {
                fit.tree.set_leaf_output(node, s.ascent_output());
            }
        }

        let outputs: Vec<f64> = fit
            .tree
            .nodes()
            .iter()
            .map(|n| match n {
                TreeNode::Leaf { output, .. } => *output,
                TreeNode::Internal { .. } => 0.0,
            })
            .collect();
        for (pos, &d) in rows.iter().enumerate() {
            tree_sum[d] += outputs[fit.leaf_of_row[pos]];
            scores[d] = offsets[d] + ensemble.learning_rate * tree_sum[d];
        }
        ensemble.trees.push(fit.tree);

        let valid_ndcg = match tracker.as_deref_mut() {
            Some(v) => Some(v.add_tree(ensemble)?),
            None => None,
        };
        trace.entries.push(TraceEntry {
            iteration: t,
            objective: f64::NAN,
            valid_ndcg,
        });
    }
    let last = workspaces(&queries, &scores)
        .iter()
        .map(|w| w.log_likelihood)
        .sum();
    trace.entries.last_mut().unwrap().objective = last;
    Ok(trace)
}

fn workspaces(queries: &[Query], scores: &[f64]) -> Vec<PlWorkspace> {
    queries
        .par_iter()
        .map(|q| PlWorkspace::new(&scores[q.start..q.start + q.len], &q.pset))
        .collect()
}

fn boost_mart(
    dataset: &Dataset,
    config: &TrainConfig,
    features: &FeatureMatrix,
    offsets: &[f64],
    ensemble: &mut Ensemble,
    mut tracker: Option<&mut ValidationTracker<'_>>,
) -> Result<TrainTrace> {
    let targets: Vec<f64> = dataset
        .groups
        .iter()
        .flat_map(|g| {
            let grades = g.relevances();
            mart_targets(&grades, config.loss, query_norm(&grades))
        })
        .collect();
    let sse = |scores: &[f64]| -> f64 {
        targets
            .iter()
            .zip(scores)
            .map(|(t, s)| (t - s) * (t - s))
            .sum()
    };

    let mut tree_sum = vec![0.0; dataset.num_documents()];
    let mut scores = offsets.to_vec();
    let mut trace = TrainTrace {
        initial_objective: sse(&scores),
        valid_k: tracker.as_ref().map(|t| t.k),
        ..TrainTrace::default()
    };

    for t in 1..=config.trees {
        let responses: Vec<f64> = targets.iter().zip(&scores).map(|(y, s)| y - s).collect();
        let fit = fit_tree(features, &responses, &config.tree_params())?;
        let outputs: Vec<f64> = fit
            .tree
            .nodes()
            .iter()
            .map(|n| match n {
                TreeNode::Leaf { output, .. } => *output,
                TreeNode::Internal { .. } => 0.0,
            })
            .collect();
        for (d, &leaf) in fit.leaf_of_row.iter().enumerate() {
            tree_sum[d] += outputs[leaf];
            scores[d] = offsets[d] + ensemble.learning_rate * tree_sum[d];
        }
        ensemble.trees.push(fit.tree);
        let valid_ndcg = match tracker.as_deref_mut() {
            Some(v) => Some(v.add_tree(ensemble)?),
            None => None,
        };
        trace.entries.push(TraceEntry {
            iteration: t,
            objective: sse(&scores),
            valid_ndcg,
        });
    }
    Ok(trace)
}

/// Total top-K log-likelihood of `scores` (group-major) under freshly built
/// permutation sets, using the same seeding as training.
pub fn training_log_likelihood(
    dataset: &Dataset,
    scores: &[f64],
    top_k: usize,
    objectives: usize,
    seed: u64,
) -> Result<f64> {
    if scores.len() != dataset.num_documents() {
        return Err(Error::validation("score count does not match the dataset"));
    }
    let offsets = dataset.group_offsets();
    let per_query: Vec<f64> = dataset
        .groups
        .par_iter()
        .enumerate()
        .map(|(gi, g)| {
            let mut rng = query_rng(seed, g.query_id);
            let pset = build_permutations(g, top_k, objectives, &mut rng);
            crate::pl_objective::log_likelihood(&scores[offsets[gi]..offsets[gi + 1]], &pset)
        })
        .collect();
    Ok(per_query.iter().sum())
}
