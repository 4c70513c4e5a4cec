//! Seeded synthetic ranking datasets for experiments and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Document, QueryGroup};

fn assemble(groups: Vec<Vec<(u32, Vec<f64>)>>) -> Dataset {
    let groups = groups
        .into_iter()
        .enumerate()
        .map(|(q, docs)| QueryGroup {
            query_id: q as u64 + 1,
            documents: docs
                .into_iter()
                .map(|(rel, x)| {
                    let features = x
                        .into_iter()
                        .enumerate()
                        .map(|(i, v)| (i as u32 + 1, v))
                        .collect();
                    Document::new(rel, features).expect("generated document is valid")
                })
                .collect(),
        })
        .collect();
    Dataset::from_groups(groups).expect("generated groups are valid")
}

fn uniform_rows(rng: &mut ChaCha8Rng, n: usize, features: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..features).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect()
}

/// Features uniform in `[0, 1)`; a hidden linear scorer is thresholded at
/// the 50/75/90/97% quantiles of all scores to give grades 0..=4.
pub fn linear_thresholded(queries: usize, docs: usize, features: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..features).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<Vec<f64>>> = (0..queries)
        .map(|_| uniform_rows(&mut rng, docs, features))
        .collect();
    let score = |x: &[f64]| x.iter().zip(&weights).map(|(a, b)| a * b).sum::<f64>();

    let mut all: Vec<f64> = rows.iter().flatten().map(|x| score(x)).collect();
    all.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = [0.5, 0.75, 0.9, 0.97]
        .iter()
        .map(|q| all[((all.len() as f64 * q) as usize).min(all.len().saturating_sub(1))])
        .collect();

    assemble(
        rows.into_iter()
            .map(|docs| {
                docs.into_iter()
                    .map(|x| {
                        let s = score(&x);
                        let grade = cuts.iter().filter(|&&c| s >= c).count() as u32;
                        (grade, x)
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Relevance is 1 exactly when feature 1 exceeds 0.5; other features are noise.
pub fn separable(queries: usize, docs: usize, features: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assemble(
        (0..queries)
            .map(|_| {
                uniform_rows(&mut rng, docs, features.max(1))
                    .into_iter()
                    .map(|x| (u32::from(x[0] > 0.5), x))
                    .collect()
            })
            .collect(),
    )
}

/// Grades 0..=4 drawn at random; feature 1 is `(grade + u) / 5` with
/// `u` in `[0, 0.5)`, so a positive weight on feature 1 alone ranks perfectly.
pub fn linearly_rankable(queries: usize, docs: usize, features: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assemble(
        (0..queries)
            .map(|_| {
                uniform_rows(&mut rng, docs, features.max(1))
                    .into_iter()
                    .map(|mut x| {
                        let grade = rng.gen_range(0..5u32);
                        x[0] = (grade as f64 + rng.gen_range(0.0..0.5)) / 5.0;
                        (grade, x)
                    })
                    .collect()
            })
            .collect(),
    )
}
