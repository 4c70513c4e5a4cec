//! Limited-memory BFGS minimizer with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    /// Number of curvature pairs kept.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once the gradient's Euclidean norm falls below this.
    pub gradient_tolerance: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search_steps: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iterations: 100,
            gradient_tolerance: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            max_line_search_steps: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    IterationLimit,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
    pub termination: Termination,
}

impl LbfgsReport {
    pub fn iterations(&self) -> usize {
        self.history.len() - 1
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(x: &[f64], step: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + step * b).collect()
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: approximate `-H g`.
fn direction(memory: &VecDeque<Pair>, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for p in memory.iter().rev() {
        let a = p.rho * dot(&p.s, &q);
        for (qi, yi) in q.iter_mut().zip(&p.y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some(last) = memory.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for (p, a) in memory.iter().zip(alphas.into_iter().rev()) {
        let b = p.rho * dot(&p.y, &q);
        for (qi, si) in q.iter_mut().zip(&p.s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

struct Point {
    step: f64,
    x: Vec<f64>,
    value: f64,
    grad: Vec<f64>,
}

/// Strong-Wolfe bracketing and zoom. Non-finite trial values count as failing
/// sufficient decrease, which shrinks the step.
fn line_search<F>(
    f: &mut F,
    x: &[f64],
    fx: f64,
    dg0: f64,
    d: &[f64],
    first_step: f64,
    cfg: &LbfgsConfig,
) -> Option<Point>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut eval = |step: f64| {
        let xs = axpy(x, step, d);
        let (value, grad) = f(&xs);
        Point {
            step,
            x: xs,
            value,
            grad,
        }
    };
    let armijo = |p: &Point| p.value.is_finite() && p.value <= fx + cfg.c1 * p.step * dg0;

    let mut lo = Point {
        step: 0.0,
        x: x.to_vec(),
        value: fx,
        grad: Vec::new(),
    };
    let mut hi_step;
    let mut step = first_step;
    let mut budget = cfg.max_line_search_steps;

    loop {
        if budget == 0 {
            return None;
        }
        budget -= 1;
        let p = eval(step);
        if !armijo(&p) || (lo.step > 0.0 && p.value >= lo.value) {
            hi_step = p.step;
            break;
        }
        let slope = dot(&p.grad, d);
        if slope.abs() <= -cfg.c2 * dg0 {
            return Some(p);
        }
        if slope >= 0.0 {
            hi_step = lo.step;
            lo = p;
            break;
        }
        lo = p;
        step *= 2.0;
    }

    while budget > 0 {
        budget -= 1;
        // safeguarded bisection between the bracket ends
        let width = hi_step - lo.step;
        let trial = lo.step + 0.5 * width;
        if width.abs() < 1e-16 * lo.step.abs().max(1.0) {
            break;
        }
        let p = eval(trial);
        if !armijo(&p) || p.value >= lo.value {
            hi_step = p.step;
            continue;
        }
        let slope = dot(&p.grad, d);
        if slope.abs() <= -cfg.c2 * dg0 {
            return Some(p);
        }
        if slope * (hi_step - lo.step) >= 0.0 {
            hi_step = lo.step;
        }
        lo = p;
    }
    // settle for sufficient decrease
    (lo.step > 0.0).then_some(lo)
}

/// Minimizes `f`, which returns the value and gradient at a point.
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &LbfgsConfig) -> LbfgsReport
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut x = x0.to_vec();
    let (mut fx, mut g) = f(&x);
    let mut history = vec![fx];
    let mut memory: VecDeque<Pair> = VecDeque::with_capacity(cfg.memory);

    for _ in 0..cfg.max_iterations {
        let gnorm = norm(&g);
        if gnorm < cfg.gradient_tolerance {
            return LbfgsReport {
                x,
                value: fx,
                gradient_norm: gnorm,
                history,
                termination: Termination::GradientTolerance,
            };
        }
        let mut d = direction(&memory, &g);
        let mut dg0 = dot(&g, &d);
        if dg0.is_nan() || dg0 >= 0.0 {
            memory.clear();
            d = g.iter().map(|v| -v).collect();
            dg0 = -gnorm * gnorm;
        }
        let first_step = if memory.is_empty() {
            1.0 / gnorm.max(1.0)
        } else {
            1.0
        };

        let accepted = line_search(&mut f, &x, fx, dg0, &d, first_step, cfg).or_else(|| {
            if memory.is_empty() {
                return None;
            }
            // retry along steepest descent with fresh memory
            memory.clear();
            let d: Vec<f64> = g.iter().map(|v| -v).collect();
            line_search(
                &mut f,
                &x,
                fx,
                -gnorm * gnorm,
                &d,
                1.0 / gnorm.max(1.0),
                cfg,
            )
        });
        let Some(p) = accepted else {
            return LbfgsReport {
                x,
                value: fx,
                gradient_norm: gnorm,
                history,
                termination: Termination::LineSearchFailed,
            };
        };

        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.grad.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if memory.len() == cfg.memory {
                memory.pop_front();
            }
            memory.push_back(Pair {
                s,
                y,
                rho: 1.0 / sy,
            });
        }
        x = p.x;
        fx = p.value;
        g = p.grad;
        history.push(fx);
    }
    LbfgsReport {
        gradient_norm: norm(&g),
        x,
        value: fx,
        history,
        termination: Termination::IterationLimit,
    }
}
