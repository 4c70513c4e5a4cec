//! Linear ListMLE: Plackett-Luce likelihood of linear scores `w . h(d)` with a
//! unit-variance Gaussian prior on `w`, maximized with L-BFGS.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{dense_features, Dataset, FeatureMatrix};
use crate::error::{Error, Result};
use crate::lbfgs::{self, LbfgsConfig, LbfgsReport};
use crate::permutation::{build_permutations, query_rng, PermutationSet};
use crate::pl_objective::PlWorkspace;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(m: usize) -> Self {
        LinearModel {
            weights: vec![0.0; m],
        }
    }

    /// `w . row`; entries beyond either length count as zero.
    pub fn score(&self, row: &[f64]) -> f64 {
        self.weights.iter().zip(row).map(|(w, x)| w * x).sum()
    }

    pub fn predict_matrix(&self, features: &FeatureMatrix) -> Vec<f64> {
        (0..features.rows())
            .map(|r| self.score(features.row(r)))
            .collect()
    }

    /// `linear M=<m>` followed by one `w[<i>]=<value>` line per weight, with
    /// 1-based feature indices.
    pub fn to_text(&self) -> String {
        let mut out = format!("linear M={}\n", self.weights.len());
        for (i, w) in self.weights.iter().enumerate() {
            writeln!(out, "w[{}]={}", i + 1, w).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "empty linear model file"))?;
        let m: usize = header
            .trim()
            .strip_prefix("linear M=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(1, format!("bad linear model header `{header}`")))?;
        let mut weights = vec![0.0; m];
        let mut seen = vec![false; m];
        for (i, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let bad = || Error::parse(lineno, format!("bad weight line `{line}`"));
            let (index, value) = line
                .strip_prefix("w[")
                .and_then(|s| s.split_once("]="))
                .ok_or_else(bad)?;
            let index: usize = index.parse().map_err(|_| bad())?;
            let value: f64 = value.parse().map_err(|_| bad())?;
            if index == 0 || index > m || seen[index - 1] {
                return Err(Error::parse(
                    lineno,
                    format!("weight index {index} out of place"),
                ));
            }
            seen[index - 1] = true;
            weights[index - 1] = value;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::validation("linear model file is missing weights"));
        }
        Ok(LinearModel { weights })
    }
}

/// Per-query feature matrices and ground-truth contexts, built once.
pub struct ListMleProblem {
    queries: Vec<(FeatureMatrix, PermutationSet)>,
    dim: usize,
}

impl ListMleProblem {
    /// Permutation sets use the same per-query seeding as the boosted ranker.
    pub fn new(dataset: &Dataset, k: usize, objectives: usize, seed: u64) -> Result<Self> {
        if k < 1 || objectives < 1 {
            return Err(Error::config("top-K and objectives must be at least 1"));
        }
        let dim = dataset.max_feature_index;
        let queries = dataset
            .groups
            .par_iter()
            .map(|g| {
                let mut rng = query_rng(seed, g.query_id);
                let pset = build_permutations(g, k, objectives, &mut rng);
                Ok((dense_features(g, dim)?, pset))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|(_, p)| !p.is_empty())
            .collect();
        Ok(ListMleProblem { queries, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Log-likelihood minus `w.w / 2`, and its gradient.
    pub fn objective_and_gradient(&self, weights: &[f64]) -> Result<(f64, Vec<f64>)> {
        if weights.len() < self.dim {
            return Err(Error::validation(format!(
                "{} weights for {} features",
                weights.len(),
                self.dim
            )));
        }
        let n = weights.len();
        let partials: Vec<(f64, Vec<f64>)> = self
            .queries
            .par_iter()
            .map(|(x, pset)| {
                let scores: Vec<f64> = (0..x.rows())
                    .map(|r| x.row(r).iter().zip(weights).map(|(a, b)| a * b).sum())
                    .collect();
                let ws = PlWorkspace::new(&scores, pset);
                // d/dw = sum_d response_d * h(d)
                let mut grad = vec![0.0; n];
                for (r, &resp) in ws.response.iter().enumerate() {
                    if resp != 0.0 {
                        for (g, &h) in grad.iter_mut().zip(x.row(r)) {
                            *g += resp * h;
                        }
                    }
                }
                (ws.log_likelihood, grad)
            })
            .collect();

        let mut objective = -0.5 * weights.iter().map(|w| w * w).sum::<f64>();
        let mut gradient: Vec<f64> = weights.iter().map(|w| -w).collect();
        for (ll, g) in partials {
            objective += ll;
            for (acc, v) in gradient.iter_mut().zip(g) {
                *acc += v;
            }
        }
        Ok((objective, gradient))
    }

    /// Maximizes the objective starting from `start`.
    pub fn maximize(&self, start: &[f64], iterations: usize) -> Result<LinearFit> {
        if iterations < 1 {
            return Err(Error::config(
                "at least one optimizer iteration is required",
            ));
        }
        if start.len() < self.dim {
            return Err(Error::validation(
                "starting point is shorter than the feature count",
            ));
        }
        let cfg = LbfgsConfig {
            max_iterations: iterations,
            ..LbfgsConfig::default()
        };
        let report = lbfgs::minimize(
            |w| match self.objective_and_gradient(w) {
                Ok((v, g)) => (-v, g.into_iter().map(|x| -x).collect()),
                Err(_) => (f64::INFINITY, vec![0.0; w.len()]),
            },
            start,
            &cfg,
        );
        Ok(LinearFit::from_report(report))
    }
}

#[derive(Debug, Clone)]
pub struct LinearFit {
    pub model: LinearModel,
    /// Objective after each accepted iteration, starting at the initial point.
    pub objectives: Vec<f64>,
    pub gradient_norm: f64,
    pub termination: lbfgs::Termination,
}

impl LinearFit {
    fn from_report(report: LbfgsReport) -> Self {
        LinearFit {
            model: LinearModel { weights: report.x },
            objectives: report.history.iter().map(|v| -v).collect(),
            gradient_norm: report.gradient_norm,
            termination: report.termination,
        }
    }

    /// `iter=<t> objective=<value>` per accepted iteration.
    pub fn trace(&self) -> String {
        let mut out = String::new();
        for (t, v) in self.objectives.iter().enumerate().skip(1) {
            writeln!(out, "iter={t} objective={v}").unwrap();
        }
        out
    }
}

pub fn linear_objective_and_gradient(
    weights: &[f64],
    dataset: &Dataset,
    k: usize,
    objectives: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    ListMleProblem::new(dataset, k, objectives, seed)?.objective_and_gradient(weights)
}

/// Trains from `w = 0` for at most `iterations` quasi-Newton steps.
pub fn train_linear(
    dataset: &Dataset,
    k: usize,
    objectives: usize,
    iterations: usize,
    seed: u64,
) -> Result<LinearFit> {
    let problem = ListMleProblem::new(dataset, k, objectives, seed)?;
    problem.maximize(&vec![0.0; problem.dim()], iterations)
}
