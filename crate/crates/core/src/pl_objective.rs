//! Plackett-Luce log-likelihood over context sets, its functional gradient,
//! and the second-order statistics used to set leaf outputs.

use crate::error::{Error, Result};
use crate::permutation::{ContextSet, PermutationSet};

/// Largest absolute leaf output applied in one boosting step.
pub const MAX_LEAF_OUTPUT: f64 = 10.0;

/// Curvature below this magnitude is treated as flat.
pub const MIN_CURVATURE: f64 = 1e-12;

/// Softmax of member scores with max-subtraction. Returns probabilities in
/// member order and `log(sum exp(s - max)) + max`.
fn softmax(scores: &[f64], members: &[u32], out: &mut Vec<f64>) -> f64 {
    out.clear();
    let max = members
        .iter()
        .map(|&m| scores[m as usize])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for &m in members {
        let e = (scores[m as usize] - max).exp();
        out.push(e);
        total += e;
    }
    for p in out.iter_mut() {
        *p /= total;
    }
    max + total.ln()
}

/// `p(d | C)` for every member of `context`, in member order.
pub fn conditional_probs(scores: &[f64], context: &ContextSet) -> Result<Vec<f64>> {
    if context.members.is_empty() {
        return Err(Error::validation("empty context"));
    }
    for &m in &context.members {
        let s = *scores
            .get(m as usize)
            .ok_or_else(|| Error::validation(format!("no score for document {m}")))?;
        if !s.is_finite() {
            return Err(Error::validation(format!(
                "score {s} of document {m} is not finite"
            )));
        }
    }
    let mut probs = Vec::with_capacity(context.members.len());
    softmax(scores, &context.members, &mut probs);
    Ok(probs)
}

/// Per-query probabilities, log-likelihood and pseudo-responses at fixed scores.
#[derive(Debug, Clone)]
pub struct PlWorkspace {
    /// `probs[c][i]` is `p(members[i] | contexts[c])`.
    pub probs: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    /// Ascent direction `dL/ds_d` for every document of the query.
    pub response: Vec<f64>,
}

impl PlWorkspace {
    pub fn new(scores: &[f64], pset: &PermutationSet) -> Self {
        let mut response = vec![0.0; scores.len()];
        let mut probs = Vec::with_capacity(pset.contexts.len());
        let mut log_likelihood = 0.0;
        let mut buf = Vec::new();
        for context in &pset.contexts {
            let log_norm = softmax(scores, &context.members, &mut buf);
            let terms = context.term_count() as f64;
            for &c in &context.champions {
                log_likelihood += scores[c as usize] - log_norm;
                response[c as usize] += 1.0;
            }
            for (&m, &p) in context.members.iter().zip(&buf) {
                response[m as usize] -= terms * p;
            }
            probs.push(buf.clone());
        }
        PlWorkspace {
            probs,
            log_likelihood,
            response,
        }
    }
}

/// `sum over contexts and their champions of log p(champion | C)`; never
/// positive.
pub fn log_likelihood(scores: &[f64], pset: &PermutationSet) -> f64 {
    let mut buf = Vec::new();
    let mut total = 0.0;
    for c in &pset.contexts {
        let log_norm = softmax(scores, &c.members, &mut buf);
        for &champ in &c.champions {
            total += scores[champ as usize] - log_norm;
        }
    }
    total
}

/// Per-document derivative of [`log_likelihood`]: the number of terms the
/// document wins minus its probability mass summed over every term whose
/// context contains it.
pub fn pseudo_response(scores: &[f64], pset: &PermutationSet) -> Vec<f64> {
    PlWorkspace::new(scores, pset).response
}

/// First and second derivative of the log-likelihood with respect to a shift
/// `v` applied to every document in one leaf, evaluated at `v = 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LeafNewton {
    pub gradient: f64,
    pub curvature: f64,
}

impl LeafNewton {
    /// Raw Newton ratio `L'(0) / L''(0)`; zero on a flat direction.
    pub fn newton_value(&self) -> f64 {
        if self.curvature.abs() < MIN_CURVATURE {
            0.0
        } else {
            self.gradient / self.curvature
        }
    }

    /// Leaf output that increases the likelihood: `-L'(0)/L''(0)`, clamped.
    pub fn ascent_output(&self) -> f64 {
        (-self.newton_value()).clamp(-MAX_LEAF_OUTPUT, MAX_LEAF_OUTPUT)
    }
}

/// Accumulates one query's contribution to every leaf.
///
/// `leaf_of[d]` is the leaf of document `d` (`None` if the document was not
/// part of the fit). `stats` must have one entry per leaf.
pub fn accumulate_leaf_stats(
    pset: &PermutationSet,
    workspace: &PlWorkspace,
    leaf_of: &[Option<usize>],
    stats: &mut [LeafNewton],
) {
    for (d, leaf) in leaf_of.iter().enumerate() {
        if let Some(leaf) = *leaf {
            stats[leaf].gradient += workspace.response[d];
        }
    }
    let mut mass = vec![0.0; stats.len()];
    let mut stamp = vec![usize::MAX; stats.len()];
    let mut touched = Vec::new();
    for (ci, (context, probs)) in pset.contexts.iter().zip(&workspace.probs).enumerate() {
        for (&m, &p) in context.members.iter().zip(probs) {
            if let Some(leaf) = leaf_of[m as usize] {
                if stamp[leaf] != ci {
                    stamp[leaf] = ci;
                    touched.push(leaf);
                }
                mass[leaf] += p;
            }
        }
        // touched leaves are visited in first-seen order, which is fixed by the
        // context's member order
        let terms = context.term_count() as f64;
        for &leaf in &touched {
            // rounding can push a full context's mass just past one
            let p = mass[leaf].min(1.0);
            stats[leaf].curvature += terms * p * (p - 1.0);
            mass[leaf] = 0.0;
        }
        touched.clear();
    }
}

/// Newton statistics for a single leaf given as `(query, document)` pairs.
pub fn leaf_newton_value(
    leaf_docs: &[(usize, usize)],
    psets: &[PermutationSet],
    workspaces: &[PlWorkspace],
) -> LeafNewton {
    let mut stats = [LeafNewton::default()];
    for (q, (pset, ws)) in psets.iter().zip(workspaces).enumerate() {
        let mut leaf_of = vec![None; ws.response.len()];
        let mut any = false;
        for &(lq, d) in leaf_docs {
            if lq == q {
                leaf_of[d] = Some(0);
                any = true;
            }
        }
        if any && !pset.is_empty() {
            accumulate_leaf_stats(pset, ws, &leaf_of, &mut stats);
        }
    }
    stats[0]
}
