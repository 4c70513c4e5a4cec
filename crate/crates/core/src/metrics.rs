//! NDCG@K and ERR.
//!
//! Gains are `2^g - 1` with a `log2(rank + 1)` discount. ERR uses the cascade
//! model with satisfaction probability `(2^g - 1) / 2^g_max`.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// `2^grade - 1`.
pub fn gain(grade: u32) -> f64 {
    (2f64).powi(grade as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

pub fn dcg_at_k(grades_in_rank_order: &[u32], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::validation("DCG cutoff must be at least 1"));
    }
    Ok(grades_in_rank_order
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum())
}

/// DCG of the best possible ordering of `grades`.
pub fn ideal_dcg_at_k(grades: &[u32], k: usize) -> Result<f64> {
    let mut sorted = grades.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    dcg_at_k(&sorted, k)
}

/// What NDCG means for a query whose ideal DCG is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegeneratePolicy {
    #[default]
    Zero,
    One,
    Skip,
}

impl std::str::FromStr for DegeneratePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(DegeneratePolicy::Zero),
            "one" => Ok(DegeneratePolicy::One),
            "skip" => Ok(DegeneratePolicy::Skip),
            other => Err(Error::validation(format!(
                "unknown degenerate policy `{other}`"
            ))),
        }
    }
}

/// NDCG@k. `None` means the query was skipped under [`DegeneratePolicy::Skip`].
pub fn ndcg_at_k(
    grades_in_model_order: &[u32],
    k: usize,
    policy: DegeneratePolicy,
) -> Result<Option<f64>> {
    let ideal = ideal_dcg_at_k(grades_in_model_order, k)?;
    if ideal == 0.0 {
        return Ok(match policy {
            DegeneratePolicy::Zero => Some(0.0),
            DegeneratePolicy::One => Some(1.0),
            DegeneratePolicy::Skip => None,
        });
    }
    Ok(Some(dcg_at_k(grades_in_model_order, k)? / ideal))
}

pub fn err(grades_in_model_order: &[u32], g_max: u32) -> Result<f64> {
    if g_max == 0 {
        return Err(Error::validation("ERR needs g_max >= 1"));
    }
    let denom = (2f64).powi(g_max as i32);
    let mut not_satisfied = 1.0;
    let mut total = 0.0;
    for (i, &g) in grades_in_model_order.iter().enumerate() {
        if g > g_max {
            return Err(Error::validation(format!(
                "grade {g} exceeds g_max {g_max}"
            )));
        }
        let satisfy = gain(g) / denom;
        total += not_satisfied * satisfy / (i + 1) as f64;
        not_satisfied *= 1.0 - satisfy;
    }
    Ok(total)
}

/// Document indices sorted by descending score; ties go to the lower index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ndcg_at: BTreeMap<usize, f64>,
    pub err: f64,
    pub query_count: usize,
    pub degenerate_query_count: usize,
}

impl EvalReport {
    /// `key=value` lines, one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.ndcg_at {
            out.push_str(&format!("ndcg@{k}={v}\n"));
        }
        out.push_str(&format!("err={}\n", self.err));
        out.push_str(&format!("queries={}\n", self.query_count));
        out.push_str(&format!(
            "degenerate_queries={}\n",
            self.degenerate_query_count
        ));
        out
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.ndcg_at {
            writeln!(f, "{:<20}{:>10.6}", format!("NDCG@{k}"), v)?;
        }
        writeln!(f, "{:<20}{:>10.6}", "ERR", self.err)?;
        writeln!(f, "{:<20}{:>10}", "queries", self.query_count)?;
        writeln!(
            f,
            "{:<20}{:>10}",
            "degenerate queries", self.degenerate_query_count
        )
    }
}

/// Evaluates group-major `scores` against `dataset`.
///
/// Per-query values are computed independently and then averaged in query
/// order, so the result does not depend on the thread count. ERR is averaged
/// over every query; NDCG follows `policy` for queries with zero ideal DCG.
pub fn evaluate(
    dataset: &Dataset,
    scores: &[f64],
    cutoffs: &[usize],
    g_max: u32,
    policy: DegeneratePolicy,
) -> Result<EvalReport> {
    if scores.len() != dataset.num_documents() {
        return Err(Error::validation(format!(
            "{} scores for {} documents",
            scores.len(),
            dataset.num_documents()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::validation(format!("score {bad} is not a number")));
    }
    if cutoffs.contains(&0) {
        return Err(Error::validation("NDCG cutoff must be at least 1"));
    }
    let g_max = g_max.max(1);
    let offsets = dataset.group_offsets();

    let per_query: Vec<(Vec<Option<f64>>, f64, bool)> = dataset
        .groups
        .par_iter()
        .enumerate()
        .map(|(gi, group)| {
            let s = &scores[offsets[gi]..offsets[gi + 1]];
            let grades: Vec<u32> = rank_order(s)
                .into_iter()
                .map(|i| group.documents[i].relevance)
                .collect();
            let degenerate = grades.iter().all(|&g| g == 0);
            let ndcgs = cutoffs
                .iter()
                .map(|&k| ndcg_at_k(&grades, k, policy))
                .collect::<Result<Vec<_>>>()?;
            Ok((ndcgs, err(&grades, g_max)?, degenerate))
        })
        .collect::<Result<_>>()?;

    let mut ndcg_at = BTreeMap::new();
    for (ci, &k) in cutoffs.iter().enumerate() {
        let (sum, n) = per_query
            .iter()
            .filter_map(|(v, _, _)| v[ci])
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        ndcg_at.insert(k, if n == 0 { 0.0 } else { sum / n as f64 });
    }
    let query_count = per_query.len();
    let err_sum: f64 = per_query.iter().map(|(_, e, _)| *e).sum();
    Ok(EvalReport {
        ndcg_at,
        err: if query_count == 0 {
            0.0
        } else {
            err_sum / query_count as f64
        },
        query_count,
        degenerate_query_count: per_query.iter().filter(|(_, _, d)| *d).count(),
    })
}
