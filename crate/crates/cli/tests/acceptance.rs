//! Acceptance checks, one line of output per criterion.
//!
//! Runs as a plain binary (`harness = false`) and exits non-zero if any
//! criterion fails.

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use plrank::booster::{mart_response, query_norm, train_with_validation, Loss, TrainConfig};
use plrank::data::FeatureMatrix;
use plrank::listmle::train_linear;
use plrank::metrics::{dcg_at_k, err, evaluate, ndcg_at_k, DegeneratePolicy};
use plrank::permutation::{build_from_relevances, PermutationSet};
use plrank::pl_objective::{leaf_newton_value, log_likelihood, pseudo_response, PlWorkspace};
use plrank::synth;
use plrank::tree::{fit_tree, SplitMode, TreeNode, TreeParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))?;
    Ok(took)
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=30);
        let k = rng.gen_range(1..=10);
        let objectives = rng.gen_range(1..=3);
        let rel: Vec<u32> = (0..n).map(|_| rng.gen_range(0..5)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..=3.0)).collect();
        let pset = build_from_relevances(&rel, k, objectives, &mut rng);
        let grad = pseudo_response(&scores, &pset);
        for d in 0..n {
            let mut up = scores.clone();
            up[d] += h;
            let mut down = scores.clone();
            down[d] -= h;
            let fd = (log_likelihood(&up, &pset) - log_likelihood(&down, &pset)) / (2.0 * h);
            let scale = grad[d].abs().max(fd.abs());
            let rel_err = if scale == 0.0 {
                0.0
            } else {
                (fd - grad[d]).abs() / scale
            };
            ensure(rel_err < 1e-4, || {
                format!(
                    "doc {d} of n={n}: analytic {} finite difference {fd}",
                    grad[d]
                )
            })?;
            worst = worst.max(rel_err);
            checked += 1;
        }
    }
    let took = within_time(start, Duration::from_secs(10))?;
    Ok(format!(
        "{checked} documents, max relative error {worst:.2e}, {took:.2?}"
    ))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn normalization_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for n in 2..=6 {
        // positive strengths, scored through their logs
        let strengths: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..20.0)).collect();
        let scores: Vec<f64> = strengths.iter().map(|v: &f64| v.ln()).collect();
        let total: f64 = permutations(n)
            .iter()
            .map(|order| {
                let mut pset = PermutationSet::new(n);
                pset.add_permutation(order);
                log_likelihood(&scores, &pset).exp()
            })
            .sum();
        ensure((total - 1.0).abs() < 1e-9, || format!("n={n}: sum {total}"))?;
        worst = worst.max((total - 1.0).abs());
    }
    let took = within_time(start, Duration::from_secs(5))?;
    Ok(format!("n=2..6, max |sum - 1| = {worst:.1e}, {took:.2?}"))
}

fn toy_example() -> Outcome {
    let mut pset = PermutationSet::new(2);
    pset.add_permutation(&[0, 1, 2, 3]);
    let scores = [0.0; 4];
    // equal scores: p = 1/4 in the first context, 1/3 in the second
    let expected = [
        1.0 - 0.25,
        1.0 - 0.25 - 1.0 / 3.0,
        -0.25 - 1.0 / 3.0,
        -0.25 - 1.0 / 3.0,
    ];
    let got = pseudo_response(&scores, &pset);
    for (d, (g, e)) in got.iter().zip(expected).enumerate() {
        ensure((g - e).abs() < 1e-9, || {
            format!("response of d{}: {g} vs {e}", d + 1)
        })?;
    }
    let ws = PlWorkspace::new(&scores, &pset);
    let stats = leaf_newton_value(&[(0, 0), (0, 2)], std::slice::from_ref(&pset), &[ws]);
    let (p1, p2) = (0.5, 1.0 / 3.0);
    let want_gradient = expected[0] + expected[2];
    let want_curvature = p1 * (p1 - 1.0) + p2 * (p2 - 1.0);
    ensure((stats.gradient - want_gradient).abs() < 1e-9, || {
        format!("L'(0) = {} vs {want_gradient}", stats.gradient)
    })?;
    ensure((stats.curvature - want_curvature).abs() < 1e-9, || {
        format!("L''(0) = {} vs {want_curvature}", stats.curvature)
    })?;
    Ok(format!(
        "responses ({:.5}, {:.5}, {:.5}, {:.5}), L'(0) = {:.5}, L''(0) = {:.5}",
        got[0], got[1], got[2], got[3], stats.gradient, stats.curvature
    ))
}

fn compression_example() -> Outcome {
    // relevances (4, 0, 4, 4), documents 0-based
    let mut pset = PermutationSet::new(4);
    pset.add_permutation(&[0, 2, 3, 1]);
    let first = pset.contexts.len();
    ensure(first == 3, || {
        format!("first permutation gave {first} contexts")
    })?;
    pset.add_permutation(&[0, 3, 2, 1]);
    let added = pset.contexts.len() - first;
    ensure(added == 1, || {
        format!("second permutation added {added} contexts")
    })?;
    let new_members = &pset.contexts[first].members;
    ensure(new_members == &[1, 2], || {
        format!("new context {new_members:?}")
    })?;
    let (ratio, effective) = pset.compression_ratio();
    Ok(format!(
        "3 contexts, then +{added} {{d2,d3}}; raw {} terms, ratio {ratio:.4}, effective objectives {effective:.3}",
        pset.raw_term_count
    ))
}

fn monotone_training() -> Outcome {
    let start = Instant::now();
    let ds = synth::linear_thresholded(100, 20, 10, 2024);
    let config = TrainConfig {
        trees: 100,
        leaves: 8,
        learning_rate: 0.1,
        ..TrainConfig::default()
    };
    let (_, trace) = train_with_validation(&ds, &config, None).map_err(|e| e.to_string())?;
    let mut prev = trace.initial_objective;
    let mut decreases = 0;
    for e in &trace.entries {
        if e.objective < prev {
            decreases += 1;
        }
        prev = e.objective;
    }
    let last = trace.final_objective();
    ensure(last > trace.initial_objective, || {
        format!("final {last} not above initial {}", trace.initial_objective)
    })?;
    ensure(decreases * 20 <= trace.entries.len(), || {
        format!(
            "{decreases} of {} iterations decreased",
            trace.entries.len()
        )
    })?;
    let took = within_time(start, Duration::from_secs(60))?;
    Ok(format!(
        "log-likelihood {:.3} -> {last:.3}, {decreases}/100 decreasing iterations, {took:.2?}",
        trace.initial_objective
    ))
}

fn rank_recovery() -> Outcome {
    let ds = synth::separable(30, 20, 5, 7);
    let config = TrainConfig {
        trees: 50,
        leaves: 4,
        top_k: 10,
        ..TrainConfig::default()
    };
    let (_, trace) = train_with_validation(&ds, &config, Some(&ds)).map_err(|e| e.to_string())?;
    let reached = trace
        .entries
        .iter()
        .find(|e| e.valid_ndcg == Some(1.0))
        .map(|e| e.iteration)
        .ok_or_else(|| {
            format!(
                "plrank training NDCG@10 after 50 trees: {:?}",
                trace.entries.last().and_then(|e| e.valid_ndcg)
            )
        })?;

    let rankable = synth::linearly_rankable(30, 20, 5, 8);
    let fit = train_linear(&rankable, 10, 1, 100, 8).map_err(|e| e.to_string())?;
    let x = rankable
        .dense_matrix(rankable.max_feature_index)
        .map_err(|e| e.to_string())?;
    let scores = fit.model.predict_matrix(&x);
    let report = evaluate(
        &rankable,
        &scores,
        &[10],
        rankable.max_grade,
        DegeneratePolicy::Zero,
    )
    .map_err(|e| e.to_string())?;
    let linear = report.ndcg_at[&10];
    ensure(linear == 1.0, || {
        format!("linear ListMLE NDCG@10 = {linear}")
    })?;
    Ok(format!(
        "plrank NDCG@10 = 1 at tree {reached}; linear NDCG@10 = 1 after {} iterations",
        fit.objectives.len() - 1
    ))
}

fn baseline_equivalences() -> Outcome {
    let close = |a: &[f64], b: &[f64]| {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    };

    let r = mart_response(&[0.5], &[2], Loss::Mart2, 0.0);
    ensure(close(&r, &[1.5]), || format!("mart2 r=2 s=0.5 gave {r:?}"))?;
    let r = mart_response(&[0.5], &[2], Loss::Mart1, 0.0);
    ensure(close(&r, &[2.5]), || format!("mart1 r=2 s=0.5 gave {r:?}"))?;
    let grades = [1, 0];
    let r = mart_response(&[0.0, 0.0], &grades, Loss::CMart1, query_norm(&grades));
    ensure(close(&r, &[1.0, 0.0]), || {
        format!("cmart1 [1,0] gave {r:?}")
    })?;

    // hand residuals over a mixed query
    let scores = [0.25, -1.0, 3.0, 0.0];
    let grades = [0, 1, 3, 2];
    let r = mart_response(&scores, &grades, Loss::Mart2, 0.0);
    ensure(close(&r, &[-0.25, 2.0, 0.0, 2.0]), || {
        format!("mart2 gave {r:?}")
    })?;
    let r = mart_response(&scores, &grades, Loss::Mart1, 0.0);
    ensure(close(&r, &[-0.25, 2.0, 4.0, 3.0]), || {
        format!("mart1 gave {r:?}")
    })?;

    // every query whose ideal DCG is 1: one grade-1 document, the rest 0
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases = 0;
    for n in 1..=12 {
        for _ in 0..20 {
            let mut grades = vec![0u32; n];
            grades[rng.gen_range(0..n)] = 1;
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let norm = query_norm(&grades);
            ensure(norm == 1.0, || format!("ideal DCG {norm}"))?;
            let c = mart_response(&scores, &grades, Loss::CMart1, norm);
            let m = mart_response(&scores, &grades, Loss::Mart1, norm);
            ensure(close(&c, &m), || format!("cmart1 {c:?} vs mart1 {m:?}"))?;
            cases += 1;
        }
    }
    Ok(format!(
        "hand residuals exact; cmart1 == mart1 on {cases} unit-norm queries"
    ))
}

/// Best single split by exhaustive search. Ties within a relative 1e-10 go to
/// the lowest feature, then the lowest threshold.
fn brute_force_split(x: &[Vec<f64>], y: &[f64]) -> Option<(usize, f64, f64)> {
    let n = y.len();
    let sse = |idx: &[usize]| {
        let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (y[i] - mean).powi(2)).sum::<f64>()
    };
    let all: Vec<usize> = (0..n).collect();
    let parent = sse(&all);
    let mut candidates = Vec::new();
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = x.iter().map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let mid = w[0] + (w[1] - w[0]) / 2.0;
            let t = if mid < w[1] { mid } else { w[0] };
            let (left, right): (Vec<usize>, Vec<usize>) = all.iter().partition(|&&i| x[i][f] <= t);
            candidates.push((f, t, parent - sse(&left) - sse(&right)));
        }
    }
    let best = candidates
        .iter()
        .map(|c| c.2)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(best > 0.0 && best > 1e-12 * parent) {
        return None;
    }
    candidates
        .into_iter()
        .find(|c| c.2 >= best - 1e-10 * best.abs())
}

fn tree_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = TreeParams {
        leaf_limit: 2,
        min_leaf_docs: 1,
        split_mode: SplitMode::Exact,
    };
    let mut splits = 0;
    let trials = 2000;
    for trial in 0..trials {
        let n = rng.gen_range(2..=12);
        let cols = rng.gen_range(1..=3);
        // small integer grids make repeated values and equal partitions common
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..cols)
                    .map(|_| rng.gen_range(0..5) as f64 * 0.5)
                    .collect()
            })
            .collect();
        let y: Vec<f64> = if trial % 10 == 0 {
            vec![1.25; n]
        } else {
            (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect()
        };
        let fm = FeatureMatrix::from_rows(&x).map_err(|e| e.to_string())?;
        let fit = fit_tree(&fm, &y, &params).map_err(|e| e.to_string())?;
        let chosen = match fit.tree.nodes()[0] {
            TreeNode::Internal {
                feature, threshold, ..
            } => Some((feature as usize - 1, threshold)),
            TreeNode::Leaf { .. } => None,
        };
        let expected = brute_force_split(&x, &y);
        match (chosen, expected) {
            (None, None) => {}
            (Some((f, t)), Some((ef, et, _))) if f == ef && t == et => splits += 1,
            _ => {
                return Err(format!(
                    "trial {trial}: fit chose {chosen:?}, exhaustive search {expected:?} (x={x:?}, y={y:?})"
                ))
            }
        }
    }
    Ok(format!(
        "{trials} random problems, {splits} split, all matching exhaustive search"
    ))
}

fn determinism() -> Outcome {
    let dir = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let data = dir.path().join("train.txt");
    fs::write(
        &data,
        synth::linear_thresholded(40, 15, 6, 9).to_letor_string(),
    )
    .map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for threads in ["1", "2", "8"] {
        let model = dir.path().join(format!("model-{threads}.txt"));
        let args = [
            "plrank",
            "--threads",
            threads,
            "train",
            "--train",
            data.to_str().unwrap(),
            "--trees",
            "20",
            "--leaves",
            "8",
            "--objectives",
            "3",
            "--seed",
            "5",
            "--out",
            model.to_str().unwrap(),
        ];
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = plrank_cli::run(args, &mut out, &mut err);
        ensure(code == 0, || {
            format!(
                "--threads {threads} exited {code}: {}",
                String::from_utf8_lossy(&err)
            )
        })?;
        outputs.push((threads, fs::read(&model).map_err(|e| e.to_string())?));
    }
    for (threads, bytes) in &outputs[1..] {
        ensure(bytes == &outputs[0].1, || {
            format!("--threads {threads} differs from --threads 1")
        })?;
    }
    Ok(format!(
        "--threads 1/2/8 give identical {}-byte model files",
        outputs[0].1.len()
    ))
}

fn metric_spot_values() -> Outcome {
    let tol = 1e-5;
    let check = |name: &str, got: f64, want: f64| {
        ensure((got - want).abs() < tol, || {
            format!("{name} = {got}, expected {want}")
        })
    };
    let m = |e: plrank::Error| e.to_string();
    let z = DegeneratePolicy::Zero;
    check("DCG([3,2],2)", dcg_at_k(&[3, 2], 2).map_err(m)?, 8.89279)?;
    check("DCG([0,0,0],2)", dcg_at_k(&[0, 0, 0], 2).map_err(m)?, 0.0)?;
    check("DCG([1],10)", dcg_at_k(&[1], 10).map_err(m)?, 1.0)?;
    ensure(dcg_at_k(&[1], 0).is_err(), || "DCG at k=0 accepted".into())?;
    for k in 1..=4 {
        check(
            "NDCG(sorted)",
            ndcg_at_k(&[3, 2, 2, 0], k, z).map_err(m)?.unwrap_or(-1.0),
            1.0,
        )?;
    }
    check(
        "NDCG([0,3],1)",
        ndcg_at_k(&[0, 3], 1, z).map_err(m)?.unwrap_or(-1.0),
        0.0,
    )?;
    // (3 + 7/log2 3) / (7 + 3/log2 3)
    let l3 = 3f64.log2();
    let ndcg_203 = ndcg_at_k(&[2, 3, 0], 3, z).map_err(m)?.unwrap_or(-1.0);
    check(
        "NDCG([2,3,0],3)",
        ndcg_203,
        (3.0 + 7.0 / l3) / (7.0 + 3.0 / l3),
    )?;
    check("ERR([4],4)", err(&[4], 4).map_err(m)?, 0.9375)?;
    check("ERR([0,0,0],4)", err(&[0, 0, 0], 4).map_err(m)?, 0.0)?;
    check("ERR([4,4],4)", err(&[4, 4], 4).map_err(m)?, 0.96680)?;
    ensure(err(&[5], 4).is_err(), || {
        "grade above g_max accepted".into()
    })?;
    Ok(format!(
        "DCG([3,2],2) = {:.5}, NDCG([2,3,0],3) = {ndcg_203:.5}, ERR([4],4) = {:.5}, ERR([4,4],4) = {:.5}",
        dcg_at_k(&[3, 2], 2).map_err(m)?,
        err(&[4], 4).map_err(m)?,
        err(&[4, 4], 4).map_err(m)?
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("PL gradient oracle", gradient_oracle),
        ("PL normalization oracle", normalization_oracle),
        ("toy example", toy_example),
        ("compression example", compression_example),
        ("monotone training", monotone_training),
        ("rank recovery", rank_recovery),
        ("baseline equivalences", baseline_equivalences),
        ("brute-force tree oracle", tree_oracle),
        ("determinism", determinism),
        ("metric spot values", metric_spot_values),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
