//! Exact proximal (Implicit SGD) updates for one datapoint.
//!
//! For a sampled term `f_{i,C}` the update is the minimizer of
//! `2η f_{i,C}(θ) + ‖θ - θ̃‖²`. Only `u_i` and the rows of `y_i` and the
//! sampled classes move, and each moved row stays in the span of its old
//! value and `x_i`, so the problem collapses to a scalar root.
//!
//! With one sampled class the root is over `u_i`: the row displacement is a
//! Lambert-W function of `u_i`, and the scalar equation is solved by Brent's
//! method on an explicit bracket. With `m > 1` classes the root is over
//! `v_i = u_i + x_i·w_{y_i}` and is found by safeguarded Newton.

use thiserror::Error;

use crate::brent::brent;
use crate::data::{ClassWeights, Dataset};
use crate::lambert_w::w0_exp;
use crate::objective::{softplus, Formulation, ModelState};

/// Root tolerance on `u_i`.
pub const ROOT_TOL: f64 = 1e-10;
const MAX_BRENT_ITERS: usize = 200;
const MAX_BRACKET_EXPANSIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ImplicitError {
    #[error("non-finite bracket for example {i}, class {k}: {context}")]
    NonFiniteBracket { i: usize, k: usize, context: String },
    #[error("no sign change of the reduced derivative for example {i}: {context}")]
    NoSignChange { i: usize, context: String },
    #[error("class {k} is the label of example {i} or repeated")]
    InvalidClass { i: usize, k: usize },
    #[error("implicit updates over {n} datapoints at once are an unimplemented extension")]
    UnimplementedExtension { n: usize },
    #[error("implicit updates are defined for the `ours` formulation only")]
    Formulation,
}

/// One row after the update: `w_c' = shrink · w̃_c + x_coeff · x_i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowUpdate {
    pub class: usize,
    pub shrink: f64,
    pub x_coeff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitUpdateResult {
    pub i: usize,
    pub u_new: f64,
    /// Step magnitude: `a` of the single-class solver, `a_{y_i}` otherwise.
    pub a: f64,
    /// Sampled rows first, the label row last.
    pub rows: Vec<RowUpdate>,
    /// Root-finder iterations, plus one for the far bracket endpoint.
    pub iterations: usize,
}

impl ImplicitUpdateResult {
    pub fn apply(&self, ds: &Dataset, state: &mut ModelState) {
        let x = ds.x(self.i);
        for r in &self.rows {
            let row = state.row_mut(r.class);
            if r.shrink != 1.0 {
                row.iter_mut().for_each(|w| *w *= r.shrink);
            }
            x.axpy_into(r.x_coeff, row);
        }
        state.u[self.i] = self.u_new;
    }
}

/// Quantities shared by the single-class solver and its oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitContext {
    pub i: usize,
    pub k: usize,
    pub y: usize,
    pub eta: f64,
    pub n: f64,
    pub num_classes: usize,
    pub q: f64,
    pub shrink_k: f64,
    pub shrink_y: f64,
    pub gamma: f64,
    pub c: f64,
    pub u_tilde: f64,
}

impl ImplicitContext {
    /// Takes exactly two inner products with `x_i`.
    pub fn new(
        ds: &Dataset,
        weights: &ClassWeights,
        state: &ModelState,
        mu: f64,
        eta: f64,
        i: usize,
        k: usize,
    ) -> Self {
        let x = ds.x(i);
        let y = ds.y(i);
        let q = x.norm_sq();
        let shrink_k = 1.0 / (1.0 + eta * mu * weights.beta[k]);
        let shrink_y = 1.0 / (1.0 + eta * mu * weights.beta[y]);
        let gamma = 1.0 / (q * (shrink_k + shrink_y));
        let p_k = x.dot(state.row(k));
        let p_y = x.dot(state.row(y));
        Self {
            i,
            k,
            y,
            eta,
            n: ds.n() as f64,
            num_classes: ds.k(),
            q,
            shrink_k,
            shrink_y,
            gamma,
            c: shrink_k * p_k - shrink_y * p_y,
            u_tilde: state.u[i],
        }
    }

    fn log_a_coeff(&self) -> f64 {
        (self.eta * self.n).ln() + ((self.num_classes - 1) as f64).ln() - self.gamma.ln()
    }

    /// `a(u) = W₀(ηN(K-1)/γ · e^{c-u})`.
    pub fn a(&self, u: f64) -> f64 {
        w0_exp(self.log_a_coeff() + self.c - u)
    }

    /// Half of the stationarity residual in `u`; increasing in `u`.
    pub fn g(&self, u: f64) -> f64 {
        let en = self.eta * self.n;
        -en * (-u).exp_m1() + (u - self.u_tilde) - self.gamma * self.a(u)
    }

    /// The far endpoint of the initial bracket, on the side where `g`
    /// changes sign.
    pub fn far_endpoint(&self, g_tilde: f64) -> f64 {
        let en = self.eta * self.n;
        let ln_km1 = ((self.num_classes - 1) as f64).ln();
        let tail = if g_tilde < 0.0 {
            softplus(ln_km1 + self.c)
        } else {
            softplus(ln_km1 + self.c - en / self.gamma)
        };
        self.u_tilde + w0_exp(en.ln() + en - self.u_tilde + tail) - en
    }

    fn rows(&self, a: f64) -> Vec<RowUpdate> {
        let step = self.gamma * a;
        vec![
            RowUpdate { class: self.k, shrink: self.shrink_k, x_coeff: -self.shrink_k * step },
            RowUpdate { class: self.y, shrink: self.shrink_y, x_coeff: self.shrink_y * step },
        ]
    }
}

/// Single datapoint, single class update.
pub fn implicit_update_1x1(
    ds: &Dataset,
    weights: &ClassWeights,
    state: &ModelState,
    mu: f64,
    eta: f64,
    i: usize,
    k: usize,
) -> Result<ImplicitUpdateResult, ImplicitError> {
    if state.formulation != Formulation::Ours {
        return Err(ImplicitError::Formulation);
    }
    if k == ds.y(i) || k >= ds.k() {
        return Err(ImplicitError::InvalidClass { i, k });
    }
    let ctx = ImplicitContext::new(ds, weights, state, mu, eta, i, k);
    if eta == 0.0 {
        return Ok(ImplicitUpdateResult { i, u_new: ctx.u_tilde, a: 0.0, rows: ctx.rows(0.0), iterations: 0 });
    }
    let ut = ctx.u_tilde;
    let g_tilde = ctx.g(ut);
    if g_tilde == 0.0 {
        let a = ctx.a(ut);
        return Ok(ImplicitUpdateResult { i, u_new: ut, a, rows: ctx.rows(a), iterations: 0 });
    }
    let mut far = ctx.far_endpoint(g_tilde);
    if !far.is_finite() || !g_tilde.is_finite() {
        return Err(ImplicitError::NonFiniteBracket { i, k, context: format!("{ctx:?}, far endpoint {far}") });
    }
    let mut g_far = ctx.g(far);
    let mut iterations = 1;
    // The far endpoint is exact in real arithmetic; rounding can leave it a
    // hair short of the root.
    let mut widen = (far - ut).abs().max(ROOT_TOL);
    let mut expansions = 0;
    while g_far != 0.0 && g_far.signum() == g_tilde.signum() {
        if expansions == MAX_BRACKET_EXPANSIONS {
            return Err(ImplicitError::NonFiniteBracket {
                i,
                k,
                context: format!("{ctx:?}, bracket [{ut}, {far}] has no sign change"),
            });
        }
        far += widen * -g_tilde.signum();
        widen *= 2.0;
        g_far = ctx.g(far);
        iterations += 1;
        expansions += 1;
    }
    let tol = ROOT_TOL.max(4.0 * f64::EPSILON * ut.abs());
    let res = brent(|u| ctx.g(u), ut, far, g_tilde, g_far, tol, MAX_BRENT_ITERS);
    let u_new = res.root;
    let a = ctx.a(u_new);
    Ok(ImplicitUpdateResult { i, u_new, a, rows: ctx.rows(a), iterations: iterations + res.iterations })
}

/// Iteration budget for the single-class solver at tolerance `eps`.
pub fn iteration_budget(ctx: &ImplicitContext, eps: f64) -> f64 {
    let spread = (ctx.c - ctx.u_tilde).abs() + 2.0 * ctx.eta * ctx.n * ctx.q + (2.0 * ctx.num_classes as f64).ln();
    (1.0 / eps).log2() + spread.log2() + 2.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iters: 100 }
    }
}

/// The scalar problem in `v_i` for a class set `C_i` drawn without
/// replacement. `weights` should come from
/// [`ClassWeights::for_subset_size`].
struct MultiProblem {
    eta_n: f64,
    q: f64,
    r: f64,
    shrink_y: f64,
    sy_py: f64,
    u_tilde: f64,
    /// Per sampled class: `(shrink, log of the Lambert-W argument at v = 0)`.
    classes: Vec<(f64, f64)>,
}

impl MultiProblem {
    fn a_y(&self, v: f64) -> (f64, f64) {
        let a0 = self.r * (self.eta_n + v - self.sy_py - self.u_tilde);
        let p = w0_exp((self.r * self.eta_n).ln() + self.sy_py - v + a0);
        let deriv = self.r + (1.0 - self.r) * p / (1.0 + p);
        (a0 - p, deriv)
    }

    /// `h(v)` and `h'(v)`; `h` is strictly increasing.
    fn h(&self, v: f64) -> (f64, f64) {
        let (ay, ay_d) = self.a_y(v);
        let mut h = ay / (self.shrink_y * self.q);
        let mut hd = ay_d / (self.shrink_y * self.q);
        for &(s, log_arg) in &self.classes {
            let ak = w0_exp(log_arg - v);
            h -= ak / (s * self.q);
            hd += ak / (1.0 + ak) / (s * self.q);
        }
        (h, hd)
    }
}

/// Single datapoint, `m ≥ 1` distinct classes.
pub fn implicit_update_1xm(
    ds: &Dataset,
    weights: &ClassWeights,
    state: &ModelState,
    mu: f64,
    eta: f64,
    i: usize,
    classes: &[usize],
    opts: NewtonOptions,
) -> Result<ImplicitUpdateResult, ImplicitError> {
    if state.formulation != Formulation::Ours {
        return Err(ImplicitError::Formulation);
    }
    let y = ds.y(i);
    for (j, &k) in classes.iter().enumerate() {
        if k == y || k >= ds.k() || classes[..j].contains(&k) {
            return Err(ImplicitError::InvalidClass { i, k });
        }
    }
    let x = ds.x(i);
    let q = x.norm_sq();
    let n = ds.n() as f64;
    let alpha = (ds.k() - 1) as f64 / classes.len() as f64;
    let shrink = |c: usize| 1.0 / (1.0 + eta * mu * weights.beta[c]);
    let u_tilde = state.u[i];
    if eta == 0.0 {
        let mut rows: Vec<RowUpdate> =
            classes.iter().map(|&k| RowUpdate { class: k, shrink: 1.0, x_coeff: 0.0 }).collect();
        rows.push(RowUpdate { class: y, shrink: 1.0, x_coeff: 0.0 });
        return Ok(ImplicitUpdateResult { i, u_new: u_tilde, a: 0.0, rows, iterations: 0 });
    }
    let shrink_y = shrink(y);
    let sy_py = shrink_y * x.dot(state.row(y));
    let prob = MultiProblem {
        eta_n: eta * n,
        q,
        r: q / (1.0 + eta * mu * weights.beta[y] + q),
        shrink_y,
        sy_py,
        u_tilde,
        classes: classes
            .iter()
            .map(|&k| {
                let s = shrink(k);
                (s, (eta * q * s * n * alpha).ln() + s * x.dot(state.row(k)))
            })
            .collect(),
    };

    let v0 = u_tilde + sy_py;
    let (h0, _) = prob.h(v0);
    if !h0.is_finite() {
        return Err(ImplicitError::NoSignChange { i, context: format!("h({v0}) = {h0}") });
    }
    let (mut lo, mut hi);
    let mut iterations = 0;
    if h0 == 0.0 {
        lo = v0;
        hi = v0;
    } else {
        let dir = -h0.signum();
        let mut width = 1.0;
        let mut far = v0 + dir * width;
        loop {
            iterations += 1;
            let (hf, _) = prob.h(far);
            if hf == 0.0 || hf.signum() != h0.signum() {
                break;
            }
            if iterations > MAX_BRACKET_EXPANSIONS || !far.is_finite() {
                return Err(ImplicitError::NoSignChange {
                    i,
                    context: format!("h stays {} from v = {v0} to {far}", h0.signum()),
                });
            }
            width *= 2.0;
            far = v0 + dir * width;
        }
        lo = v0.min(far);
        hi = v0.max(far);
    }

    let mut v = if h0 == 0.0 { v0 } else { 0.5 * (lo + hi) };
    if h0 != 0.0 {
        let mut converged = false;
        for _ in 0..opts.max_iters {
            iterations += 1;
            let (h, hd) = prob.h(v);
            if h == 0.0 {
                converged = true;
                break;
            }
            if h < 0.0 {
                lo = v;
            } else {
                hi = v;
            }
            let newton = v - h / hd;
            let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            let moved = (next - v).abs();
            v = next;
            if moved <= opts.tol * v.abs().max(1.0) || hi - lo <= opts.tol * v.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        if !converged {
            // Plain bisection on the remaining bracket.
            while hi - lo > opts.tol * v.abs().max(1.0) && iterations < opts.max_iters + 2000 {
                iterations += 1;
                v = 0.5 * (lo + hi);
                let (h, _) = prob.h(v);
                if h == 0.0 {
                    break;
                }
                if h < 0.0 {
                    lo = v;
                } else {
                    hi = v;
                }
            }
        }
    }

    let (a_y, _) = prob.a_y(v);
    let mut rows: Vec<RowUpdate> = prob
        .classes
        .iter()
        .zip(classes)
        .map(|(&(s, log_arg), &k)| RowUpdate { class: k, shrink: s, x_coeff: -w0_exp(log_arg - v) / q })
        .collect();
    rows.push(RowUpdate { class: y, shrink: shrink_y, x_coeff: a_y / q });
    Ok(ImplicitUpdateResult { i, u_new: v - (sy_py + a_y), a: a_y, rows, iterations })
}

/// Dispatches on the number of datapoints; only single-datapoint updates
/// are implemented.
pub fn implicit_update(
    ds: &Dataset,
    weights: &ClassWeights,
    state: &ModelState,
    mu: f64,
    eta: f64,
    examples: &[usize],
    classes: &[usize],
) -> Result<ImplicitUpdateResult, ImplicitError> {
    match (examples, classes) {
        ([i], [k]) => implicit_update_1x1(ds, weights, state, mu, eta, *i, *k),
        ([i], ks) => implicit_update_1xm(ds, weights, state, mu, eta, *i, ks, NewtonOptions::default()),
        _ => Err(ImplicitError::UnimplementedExtension { n: examples.len() }),
    }
}
