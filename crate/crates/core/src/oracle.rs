//! Reference computations used to check the main code paths.
//!
//! These use deliberately different algorithms from the solvers they check:
//! central differences for gradients, nested golden-section search for the
//! single-class proximal problem, and full-batch gradient descent for the
//! multi-class proximal problem and the exact optimum.

use serde::Serialize;
use thiserror::Error;

use crate::data::{ClassWeights, Dataset};
use crate::implicit::ImplicitContext;
use crate::objective::{log_sum_exp, sampled_grad, term_value, ModelState, SampledTerm};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub max_rel_error: f64,
    pub instances_checked: usize,
    /// JSON description of the worst instance.
    pub worst_case: String,
}

impl OracleReport {
    pub fn empty() -> Self {
        Self { max_rel_error: 0.0, instances_checked: 0, worst_case: String::new() }
    }

    pub fn merge(&mut self, other: OracleReport) {
        self.instances_checked += other.instances_checked;
        if other.max_rel_error > self.max_rel_error || self.worst_case.is_empty() {
            self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
            self.worst_case = other.worst_case;
        }
    }
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares `grad` against central differences of `f` at `point`.
/// Returns the largest relative error and the coordinate where it occurs.
pub fn central_difference_error(f: &dyn Fn(&[f64]) -> f64, point: &[f64], grad: &[f64], h: f64) -> (f64, usize) {
    let mut worst = (0.0, 0);
    let mut p = point.to_vec();
    for j in 0..point.len() {
        p[j] = point[j] + h;
        let up = f(&p);
        p[j] = point[j] - h;
        let down = f(&p);
        p[j] = point[j];
        let e = rel_error(grad[j], (up - down) / (2.0 * h));
        if e > worst.0 {
            worst = (e, j);
        }
    }
    worst
}

#[derive(Serialize)]
struct TermInstance<'a> {
    formulation: &'a str,
    i: usize,
    draws: &'a [usize],
    mu: f64,
    coordinate: usize,
    u: f64,
}

/// Active coordinates of a sampled term: `u_i`, then every entry of each
/// touched row (sampled classes, then the label).
fn active_rows(ds: &Dataset, term: &SampledTerm) -> Vec<usize> {
    let mut rows: Vec<usize> = Vec::new();
    for &k in &term.draws {
        if !rows.contains(&k) {
            rows.push(k);
        }
    }
    rows.push(ds.y(term.i));
    rows
}

fn pack(state: &ModelState, i: usize, rows: &[usize]) -> Vec<f64> {
    let mut v = vec![state.u[i]];
    for &c in rows {
        v.extend_from_slice(state.row(c));
    }
    v
}

fn unpack(state: &mut ModelState, i: usize, rows: &[usize], v: &[f64]) {
    state.u[i] = v[0];
    let d = state.d();
    for (j, &c) in rows.iter().enumerate() {
        state.row_mut(c).copy_from_slice(&v[1 + j * d..1 + (j + 1) * d]);
    }
}

/// Analytic gradient of `f_{i,C}` packed in [`active_rows`] order.
fn packed_grad(
    ds: &Dataset,
    weights: &ClassWeights,
    state: &ModelState,
    mu: f64,
    term: &SampledTerm,
    rows: &[usize],
) -> Vec<f64> {
    let g = sampled_grad(ds, weights, state, mu, term).expect("instance below the overflow guard");
    let mut out = vec![g.d_u];
    for &c in rows {
        let slot = g.classes.iter().position(|&k| k == c).expect("touched row");
        out.extend(g.row_grad(ds, state, slot));
    }
    out
}

/// Finite-difference check of the stochastic gradient of one sampled term
/// in the state's own formulation.
pub fn finite_diff_check(
    ds: &Dataset,
    weights: &ClassWeights,
    state: &ModelState,
    mu: f64,
    term: &SampledTerm,
    h: f64,
) -> OracleReport {
    let rows = active_rows(ds, term);
    let point = pack(state, term.i, &rows);
    let grad = packed_grad(ds, weights, state, mu, term, &rows);
    let f = |v: &[f64]| {
        let mut s = state.clone();
        unpack(&mut s, term.i, &rows, v);
        term_value(ds, weights, &s, mu, term).expect("instance below the overflow guard")
    };
    let (err, coordinate) = central_difference_error(&f, &point, &grad, h);
    let worst = TermInstance {
        formulation: state.formulation.as_str(),
        i: term.i,
        draws: &term.draws,
        mu,
        coordinate,
        u: state.u[term.i],
    };
    OracleReport {
        max_rel_error: err,
        instances_checked: 1,
        worst_case: serde_json::to_string(&worst).unwrap_or_default(),
    }
}

/// `2η f_{i,C}(after) + ‖after - before‖²`.
pub fn prox_objective(
    ds: &Dataset,
    weights: &ClassWeights,
    mu: f64,
    eta: f64,
    before: &ModelState,
    after: &ModelState,
    term: &SampledTerm,
) -> f64 {
    let f = term_value(ds, weights, after, mu, term).expect("finite proximal point");
    let dist: f64 = before.w.iter().zip(&after.w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        + before.u.iter().zip(&after.u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    2.0 * eta * f + dist
}

/// `‖θ' - (θ̃ - η∇f_{i,C}(θ'))‖₂` over the active coordinates.
pub fn fixed_point_residual(
    ds: &Dataset,
    weights: &ClassWeights,
    mu: f64,
    eta: f64,
    before: &ModelState,
    after: &ModelState,
    term: &SampledTerm,
) -> f64 {
    let rows = active_rows(ds, term);
    let new = pack(after, term.i, &rows);
    let old = pack(before, term.i, &rows);
    let g = packed_grad(ds, weights, after, mu, term, &rows);
    new.iter()
        .zip(&old)
        .zip(&g)
        .map(|((n, o), g)| {
            let r = n - (o - eta * g);
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimizes a unimodal `f` by golden-section search after expanding a
/// bracket outward from `start`. Returns `(argmin, min)`.
pub fn golden_min(f: &dyn Fn(f64) -> f64, start: f64, step: f64, width: f64) -> (f64, f64) {
    let f0 = f(start);
    let (mut a, mut b);
    let (fr, fl) = (f(start + step), f(start - step));
    if fr >= f0 && fl >= f0 {
        a = start - step;
        b = start + step;
    } else {
        let dir = if fr < fl { 1.0 } else { -1.0 };
        let mut prev = start;
        let mut cur = start + dir * step;
        let mut f_cur = if dir > 0.0 { fr } else { fl };
        let mut s = step;
        loop {
            s *= 2.0;
            let next = cur + dir * s;
            let f_next = f(next);
            if f_next >= f_cur {
                a = prev.min(next);
                b = prev.max(next);
                break;
            }
            prev = cur;
            cur = next;
            f_cur = f_next;
        }
    }
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > width {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxOracle1x1 {
    pub u: f64,
    pub b: f64,
    pub value: f64,
}

/// The reduced two-variable proximal objective
/// `2ηN(u + e^{-u} + (K-1)e^{b-u}) + (u - ũ)² + γ(b - c)²`.
pub fn reduced_prox_objective(ctx: &ImplicitContext, u: f64, b: f64) -> f64 {
    let en = ctx.eta * ctx.n;
    let km1 = (ctx.num_classes - 1) as f64;
    2.0 * en * (u + (-u).exp() + km1 * (b - u).exp()) + (u - ctx.u_tilde).powi(2) + ctx.gamma * (b - ctx.c).powi(2)
}

/// Nested golden-section minimization of [`reduced_prox_objective`]:
/// outer over `u`, inner over `b`.
pub fn brute_force_prox_1x1(ctx: &ImplicitContext) -> ProxOracle1x1 {
    const WIDTH: f64 = 1e-9;
    let inner = |u: f64| golden_min(&|b| reduced_prox_objective(ctx, u, b), ctx.c, 1.0, WIDTH);
    let (u, value) = golden_min(&|u| inner(u).1, ctx.u_tilde, 1.0, WIDTH);
    let (b, _) = inner(u);
    ProxOracle1x1 { u, b, value }
}

/// Gradient descent with Barzilai-Borwein steps and a nonmonotone Armijo
/// backtrack, optionally projecting coordinate 0 onto `[0, ∞)`. The
/// acceptance test allows rounding-level increases so the gradient can be
/// driven well below `sqrt(eps)·|f|`.
fn minimize_bb(
    fg: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    mut x: Vec<f64>,
    grad_tol: f64,
    max_iter: usize,
    nonneg_first: bool,
) -> (Vec<f64>, f64, f64, usize) {
    const MEMORY: usize = 10;
    let project = |v: &mut Vec<f64>| {
        if nonneg_first && v[0] < 0.0 {
            v[0] = 0.0;
        }
    };
    let pg_norm = |x: &[f64], g: &[f64]| -> f64 {
        g.iter()
            .enumerate()
            .map(|(j, &gj)| if j == 0 && nonneg_first && x[0] <= 0.0 && gj > 0.0 { 0.0 } else { gj * gj })
            .sum::<f64>()
            .sqrt()
    };
    project(&mut x);
    let (mut fx, mut g) = fg(&x);
    let mut recent = std::collections::VecDeque::from([fx]);
    let mut step = 1.0 / g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);
    let mut iters = 0;
    while iters < max_iter && pg_norm(&x, &g) > grad_tol {
        iters += 1;
        let reference = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let slack = 16.0 * f64::EPSILON * fx.abs();
        let mut t = step;
        let mut halvings = 0;
        let (x_new, f_new, g_new) = loop {
            let mut cand: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - t * b).collect();
            project(&mut cand);
            let (fc, gc) = fg(&cand);
            let decrease: f64 = x.iter().zip(&cand).zip(&g).map(|((a, c), gj)| gj * (a - c)).sum();
            if (fc.is_finite() && fc <= reference - 1e-4 * decrease + slack) || halvings == 60 {
                break (cand, fc, gc);
            }
            t *= 0.5;
            halvings += 1;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        let stalled = ss == 0.0 || !f_new.is_finite();
        if !stalled {
            x = x_new;
            fx = f_new;
            g = g_new;
            recent.push_back(fx);
            if recent.len() > MEMORY {
                recent.pop_front();
            }
        }
        if stalled {
            break;
        }
        step = if sy > 0.0 { ss / sy } else { t * 2.0 };
    }
    let gn = pg_norm(&x, &g);
    (x, fx, gn, iters)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxOracleMulti {
    pub state: ModelState,
    pub value: f64,
    pub grad_norm: f64,
}

/// Minimizes `2η f_{i,C}(θ) + ‖θ - θ̃‖²` over `u_i ≥ 0` and the touched rows
/// by full-gradient descent.
pub fn brute_force_prox_multi(
    ds: &Dataset,
    weights: &ClassWeights,
    state: &ModelState,
    mu: f64,
    eta: f64,
    term: &SampledTerm,
) -> ProxOracleMulti {
    let rows = active_rows(ds, term);
    let start = pack(state, term.i, &rows);
    let fg = |v: &[f64]| {
        let mut s = state.clone();
        unpack(&mut s, term.i, &rows, v);
        let f = match term_value(ds, weights, &s, mu, term) {
            Ok(f) => f,
            Err(_) => return (f64::INFINITY, vec![0.0; v.len()]),
        };
        let g = packed_grad(ds, weights, &s, mu, term, &rows);
        let dist: f64 = v.iter().zip(&start).map(|(a, b)| (a - b) * (a - b)).sum();
        let grad = g.iter().zip(v.iter().zip(&start)).map(|(gj, (a, b))| 2.0 * eta * gj + 2.0 * (a - b)).collect();
        (2.0 * eta * f + dist, grad)
    };
    let (x, value, grad_norm, _) = minimize_bb(&fg, start.clone(), 1e-11, 200_000, true);
    let mut out = state.clone();
    unpack(&mut out, term.i, &rows, &x);
    ProxOracleMulti { state: out, value, grad_norm }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("the exact optimum needs at least two classes, got {0}")]
    TooFewClasses(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactOptimum {
    pub w: Vec<f64>,
    pub log_likelihood: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `-L(W)` and its gradient with respect to `W`.
pub fn neg_log_likelihood_grad(ds: &Dataset, w: &[f64], mu: f64) -> (f64, Vec<f64>) {
    let (k, d) = (ds.k(), ds.d());
    let mut grad: Vec<f64> = w.iter().map(|v| mu * v).collect();
    let mut value = 0.5 * mu * w.iter().map(|v| v * v).sum::<f64>();
    let mut logits = vec![0.0; k];
    for ex in &ds.examples {
        for (c, l) in logits.iter_mut().enumerate() {
            *l = ex.x.iter().map(|(j, v)| v * w[c * d + j]).sum();
        }
        let lse = log_sum_exp(&logits);
        value += lse - logits[ex.label];
        for (c, &l) in logits.iter().enumerate() {
            let p = (l - lse).exp() - if c == ex.label { 1.0 } else { 0.0 };
            for (j, v) in ex.x.iter() {
                grad[c * d + j] += p * v;
            }
        }
    }
    (value, grad)
}

/// Maximizes `L(W)` by full-batch gradient descent until the gradient norm
/// is at most `1e-10` (or the iteration cap is hit).
pub fn exact_optimum(ds: &Dataset, mu: f64) -> Result<ExactOptimum, OracleError> {
    if ds.k() < 2 {
        return Err(OracleError::TooFewClasses(ds.k()));
    }
    let fg = |w: &[f64]| neg_log_likelihood_grad(ds, w, mu);
    let (w, value, grad_norm, iterations) = minimize_bb(&fg, vec![0.0; ds.k() * ds.d()], 1e-10, 500_000, false);
    Ok(ExactOptimum { w, log_likelihood: -value, grad_norm, iterations, converged: grad_norm <= 1e-10 })
}
