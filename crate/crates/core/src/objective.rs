//! The softmax log-likelihood and its double-sum reformulations.
//!
//! Two parameterizations of the auxiliary variable share [`ModelState`]:
//!
//! * [`Formulation::Ours`]: `u_i` estimates `log(1 + Σ_{k≠y_i} e^{x_i·(w_k - w_{y_i})})`,
//!   so `f(u,W) = Σ_i [u_i + e^{-u_i} + Σ_{k≠y_i} e^{x_i·(w_k-w_{y_i}) - u_i}] + μ/2‖W‖²`.
//! * [`Formulation::Raman`]: the slot holds `ū_i = u_i + x_i·w_{y_i}`, an
//!   estimate of the full log-normalizer.
//!
//! Both satisfy `L(W) = N - min_u f(u, W)`.

use thiserror::Error;

use crate::data::{ClassWeights, Dataset};
use crate::sparse::SparseVector;

/// Exponents above this are reported instead of evaluated.
pub const EXP_GUARD: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formulation {
    Ours,
    Raman,
}

impl Formulation {
    pub fn as_str(self) -> &'static str {
        match self {
            Formulation::Ours => "ours",
            Formulation::Raman => "raman",
        }
    }
}

impl std::str::FromStr for Formulation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ours" => Ok(Formulation::Ours),
            "raman" => Ok(Formulation::Raman),
            other => Err(format!("unknown formulation {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coordinate {
    W { class: usize, feature: usize },
    U { example: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ObjectiveError {
    #[error("non-finite parameter {value} at {coordinate:?}")]
    BlowUp { coordinate: Coordinate, value: f64 },
    #[error("exponent {exponent} exceeds the overflow guard")]
    Overflow { exponent: f64 },
}

/// `e^z`, or an overflow signal carrying `z` when `z > EXP_GUARD`.
#[inline]
pub fn guarded_exp(z: f64) -> Result<f64, ObjectiveError> {
    if z > EXP_GUARD || z.is_nan() {
        Err(ObjectiveError::Overflow { exponent: z })
    } else {
        Ok(z.exp())
    }
}

/// `log(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `log Σ e^{z_j}` over a nonempty slice.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let mut arg = 0;
    for (j, &v) in z.iter().enumerate() {
        if v > z[arg] {
            arg = j;
        }
    }
    let m = z[arg];
    if m == f64::NEG_INFINITY {
        return m;
    }
    let rest: f64 = z.iter().enumerate().filter(|&(j, _)| j != arg).map(|(_, &v)| (v - m).exp()).sum();
    m + rest.ln_1p()
}

/// Parameters `W` (K rows of length D, row-major) and the auxiliary `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    k: usize,
    d: usize,
    pub w: Vec<f64>,
    pub u: Vec<f64>,
    pub formulation: Formulation,
}

impl ModelState {
    pub fn new(k: usize, d: usize, n: usize, formulation: Formulation) -> Self {
        Self { k, d, w: vec![0.0; k * d], u: vec![0.0; n], formulation }
    }

    /// `W = 0` and every `u_i = log K`, the exact minimizer of `f(·, 0)`
    /// in either formulation.
    pub fn initial(ds: &Dataset, formulation: Formulation) -> Self {
        let mut s = Self::new(ds.k(), ds.d(), ds.n(), formulation);
        s.u.fill((ds.k() as f64).ln());
        s
    }

    pub fn from_parts(k: usize, d: usize, w: Vec<f64>, u: Vec<f64>, formulation: Formulation) -> Self {
        assert_eq!(w.len(), k * d);
        Self { k, d, w, u, formulation }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.w[class * self.d..(class + 1) * self.d]
    }

    pub fn row_mut(&mut self, class: usize) -> &mut [f64] {
        &mut self.w[class * self.d..(class + 1) * self.d]
    }

    pub fn w_norm_sq(&self) -> f64 {
        self.w.iter().map(|v| v * v).sum()
    }

    pub fn check_finite(&self) -> Result<(), ObjectiveError> {
        if let Some(pos) = self.w.iter().position(|v| !v.is_finite()) {
            return Err(ObjectiveError::BlowUp {
                coordinate: Coordinate::W { class: pos / self.d, feature: pos % self.d },
                value: self.w[pos],
            });
        }
        if let Some(pos) = self.u.iter().position(|v| !v.is_finite()) {
            return Err(ObjectiveError::BlowUp { coordinate: Coordinate::U { example: pos }, value: self.u[pos] });
        }
        Ok(())
    }

    fn check_w_finite(&self) -> Result<(), ObjectiveError> {
        match self.w.iter().position(|v| !v.is_finite()) {
            Some(pos) => Err(ObjectiveError::BlowUp {
                coordinate: Coordinate::W { class: pos / self.d, feature: pos % self.d },
                value: self.w[pos],
            }),
            None => Ok(()),
        }
    }

    /// Logits `x·w_k` for every class.
    pub fn logits(&self, x: &SparseVector) -> Vec<f64> {
        (0..self.k).map(|c| x.dot(self.row(c))).collect()
    }

    /// Same state with the auxiliary slot re-expressed in `target`.
    pub fn converted(&self, ds: &Dataset, target: Formulation) -> ModelState {
        let mut out = self.clone();
        if self.formulation == target {
            return out;
        }
        for (i, u) in out.u.iter_mut().enumerate() {
            let s_y = ds.x(i).dot(self.row(ds.y(i)));
            *u += match target {
                Formulation::Raman => s_y,
                Formulation::Ours => -s_y,
            };
        }
        out.formulation = target;
        out
    }
}

/// `L(W) = Σ_i [x_i·w_{y_i} - log Σ_k e^{x_i·w_k}] - μ/2‖W‖²`.
pub fn log_likelihood(ds: &Dataset, state: &ModelState, mu: f64) -> Result<f64, ObjectiveError> {
    state.check_w_finite()?;
    let mut total = 0.0;
    for (i, ex) in ds.examples.iter().enumerate() {
        let mut gaps = state.logits(&ex.x);
        let s_y = gaps[ds.y(i)];
        gaps.iter_mut().for_each(|g| *g -= s_y);
        total -= log_sum_exp(&gaps);
    }
    Ok(total - 0.5 * mu * state.w_norm_sq())
}

/// Fraction of examples whose argmax logit (lowest id on ties) is wrong.
pub fn error_rate(ds: &Dataset, state: &ModelState) -> f64 {
    let wrong = ds
        .examples
        .iter()
        .filter(|ex| {
            let logits = state.logits(&ex.x);
            let mut best = 0;
            for (c, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = c;
                }
            }
            best != ex.label
        })
        .count();
    wrong as f64 / ds.n() as f64
}

/// `u_i*(W) = log(1 + Σ_{k≠y_i} e^{x_i·(w_k - w_{y_i})})`, always ≥ 0.
pub fn u_star(ds: &Dataset, state: &ModelState, i: usize) -> f64 {
    let logits = state.logits(ds.x(i));
    let s_y = logits[ds.y(i)];
    // The y term contributes e^0 = 1, which is the leading 1.
    let gaps: Vec<f64> = logits.iter().map(|&s| s - s_y).collect();
    log_sum_exp(&gaps).max(0.0)
}

/// Optimal auxiliary value for example `i` in the state's own formulation.
pub fn optimal_aux(ds: &Dataset, state: &ModelState, i: usize) -> f64 {
    match state.formulation {
        Formulation::Ours => u_star(ds, state, i),
        Formulation::Raman => log_sum_exp(&state.logits(ds.x(i))),
    }
}

/// Per-example summand of `f` without the ridge term.
pub fn f_example_term(ds: &Dataset, state: &ModelState, i: usize) -> Result<f64, ObjectiveError> {
    let logits = state.logits(ds.x(i));
    let y = ds.y(i);
    let u = state.u[i];
    let mut acc = 0.0;
    match state.formulation {
        Formulation::Ours => {
            acc += u + guarded_exp(-u)?;
            for (c, &s) in logits.iter().enumerate() {
                if c != y {
                    acc += guarded_exp(s - logits[y] - u)?;
                }
            }
        }
        Formulation::Raman => {
            acc += u - logits[y] + guarded_exp(logits[y] - u)?;
            for (c, &s) in logits.iter().enumerate() {
                if c != y {
                    acc += guarded_exp(s - u)?;
                }
            }
        }
    }
    Ok(acc)
}

/// Exact double sum `f(u, W)` for the state's formulation.
pub fn f_value(ds: &Dataset, state: &ModelState, mu: f64) -> Result<f64, ObjectiveError> {
    state.check_finite()?;
    let mut total = 0.0;
    for i in 0..ds.n() {
        total += f_example_term(ds, state, i)?;
    }
    Ok(total + 0.5 * mu * state.w_norm_sq())
}

/// Exact gradient of `f` as `(∂u, ∂W)`.
pub fn f_gradient(ds: &Dataset, state: &ModelState, mu: f64) -> Result<(Vec<f64>, Vec<f64>), ObjectiveError> {
    let d = state.d();
    let mut du = vec![0.0; ds.n()];
    let mut dw: Vec<f64> = state.w.iter().map(|w| mu * w).collect();
    for i in 0..ds.n() {
        let x = ds.x(i);
        let y = ds.y(i);
        let u = state.u[i];
        let logits = state.logits(x);
        let (mut g_u, mut coeff_y) = match state.formulation {
            Formulation::Ours => (1.0 - guarded_exp(-u)?, 0.0),
            Formulation::Raman => {
                let e = guarded_exp(logits[y] - u)?;
                (1.0 - e, -1.0 + e)
            }
        };
        for (c, &s) in logits.iter().enumerate() {
            if c == y {
                continue;
            }
            let z = match state.formulation {
                Formulation::Ours => s - logits[y] - u,
                Formulation::Raman => s - u,
            };
            let e = guarded_exp(z)?;
            g_u -= e;
            x.axpy_into(e, &mut dw[c * d..(c + 1) * d]);
            if state.formulation == Formulation::Ours {
                coeff_y -= e;
            }
        }
        x.axpy_into(coeff_y, &mut dw[y * d..(y + 1) * d]);
        du[i] = g_u;
    }
    Ok((du, dw))
}

/// One sampled term `f_{i,C}`: datapoint `i` and class draws `C` (no draw
/// equals `y_i`). Class terms are scaled by `(K-1)/|C|`; each draw's ridge
/// weight is `ridge_per_draw · β_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTerm {
    pub i: usize,
    pub draws: Vec<usize>,
    pub ridge_per_draw: f64,
}

impl SampledTerm {
    /// The `(i, k)` term of the single-class scheme.
    pub fn pair(i: usize, k: usize) -> Self {
        Self { i, draws: vec![k], ridge_per_draw: 1.0 }
    }

    /// `m` draws with replacement; ridge split evenly across draws so
    /// that `β` from [`ClassWeights::single`] stays unbiased.
    pub fn with_replacement(i: usize, draws: Vec<usize>) -> Self {
        let r = 1.0 / draws.len() as f64;
        Self { i, draws, ridge_per_draw: r }
    }

    /// Distinct draws without replacement; pair with
    /// [`ClassWeights::for_subset_size`].
    pub fn without_replacement(i: usize, draws: Vec<usize>) -> Self {
        Self { i, draws, ridge_per_draw: 1.0 }
    }

    fn class_scale(&self, k: usize) -> f64 {
        (k - 1) as f64 / self.draws.len() as f64
    }
}

/// Gradient of a sampled term. Rows other than the listed classes have zero
/// gradient; `∂w_c = x_coeff·x_i + ridge·w_c` for each listed class.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledGrad {
    pub i: usize,
    pub y: usize,
    /// Distinct classes touched, `y` last.
    pub classes: Vec<usize>,
    pub x_coeff: Vec<f64>,
    pub ridge: Vec<f64>,
    pub d_u: f64,
    /// Largest exponent evaluated.
    pub max_exponent: f64,
}

impl SampledGrad {
    pub fn row_grad(&self, ds: &Dataset, state: &ModelState, slot: usize) -> Vec<f64> {
        let c = self.classes[slot];
        let mut g: Vec<f64> = state.row(c).iter().map(|w| self.ridge[slot] * w).collect();
        ds.x(self.i).axpy_into(self.x_coeff[slot], &mut g);
        g
    }

    pub fn norm(&self, ds: &Dataset, state: &ModelState) -> f64 {
        let mut sq = self.d_u * self.d_u;
        for slot in 0..self.classes.len() {
            sq += self.row_grad(ds, state, slot).iter().map(|v| v * v).sum::<f64>();
        }
        sq.sqrt()
    }
}

/// Exponents of the class terms of `term`, one per draw.
pub fn term_exponents(ds: &Dataset, state: &ModelState, term: &SampledTerm) -> (f64, Vec<f64>) {
    let x = ds.x(term.i);
    let y = ds.y(term.i);
    let s_y = x.dot(state.row(y));
    let u = state.u[term.i];
    let zs = term
        .draws
        .iter()
        .map(|&k| {
            let s_k = x.dot(state.row(k));
            match state.formulation {
                Formulation::Ours => s_k - s_y - u,
                Formulation::Raman => s_k - u,
            }
        })
        .collect();
    (s_y, zs)
}

/// Value of `f_{i,C}(u, W)`.
pub fn term_value(
    ds: &Dataset,
    weights: &ClassWeights,
    state: &ModelState,
    mu: f64,
    term: &SampledTerm,
) -> Result<f64, ObjectiveError> {
    let n = ds.n() as f64;
    let y = ds.y(term.i);
    let u = state.u[term.i];
    let (s_y, zs) = term_exponents(ds, state, term);
    let scale = term.class_scale(ds.k());
    let mut class_sum = 0.0;
    for &z in &zs {
        class_sum += guarded_exp(z)?;
    }
    let head = match state.formulation {
        Formulation::Ours => u + guarded_exp(-u)?,
        Formulation::Raman => u - s_y + guarded_exp(s_y - u)?,
    };
    let row_sq = |c: usize| state.row(c).iter().map(|v| v * v).sum::<f64>();
    let mut ridge = weights.beta[y] * row_sq(y);
    for &k in &term.draws {
        ridge += term.ridge_per_draw * weights.beta[k] * row_sq(k);
    }
    Ok(n * (head + scale * class_sum) + 0.5 * mu * ridge)
}

/// Gradient of `f_{i,C}`; an exponent above the guard is returned as
/// [`ObjectiveError::Overflow`] before anything is exponentiated.
pub fn sampled_grad(
    ds: &Dataset,
    weights: &ClassWeights,
    state: &ModelState,
    mu: f64,
    term: &SampledTerm,
) -> Result<SampledGrad, ObjectiveError> {
    let n = ds.n() as f64;
    let y = ds.y(term.i);
    let u = state.u[term.i];
    let (s_y, zs) = term_exponents(ds, state, term);
    let head_exp = match state.formulation {
        Formulation::Ours => -u,
        Formulation::Raman => s_y - u,
    };
    let max_exponent = zs.iter().copied().fold(head_exp, f64::max);
    if max_exponent > EXP_GUARD {
        return Err(ObjectiveError::Overflow { exponent: max_exponent });
    }
    let scale = n * term.class_scale(ds.k());

    let mut classes: Vec<usize> = Vec::with_capacity(term.draws.len() + 1);
    let mut x_coeff = Vec::with_capacity(term.draws.len() + 1);
    let mut ridge = Vec::with_capacity(term.draws.len() + 1);
    let mut class_sum = 0.0;
    for (&k, &z) in term.draws.iter().zip(&zs) {
        debug_assert_ne!(k, y, "sampled class equals the label");
        let e = scale * z.exp();
        class_sum += e;
        let r = mu * term.ridge_per_draw * weights.beta[k];
        match classes.iter().position(|&c| c == k) {
            Some(slot) => {
                x_coeff[slot] += e;
                ridge[slot] += r;
            }
            None => {
                classes.push(k);
                x_coeff.push(e);
                ridge.push(r);
            }
        }
    }
    let head = head_exp.exp();
    let (d_u, y_coeff) = match state.formulation {
        Formulation::Ours => (n * (1.0 - head) - class_sum, -class_sum),
        Formulation::Raman => (n * (1.0 - head) - class_sum, n * (head - 1.0)),
    };
    classes.push(y);
    x_coeff.push(y_coeff);
    ridge.push(mu * weights.beta[y]);
    Ok(SampledGrad { i: term.i, y, classes, x_coeff, ridge, d_u, max_exponent })
}

/// Gradient of the single-pair term `f_ik`.
pub fn stoch_grad(
    ds: &Dataset,
    weights: &ClassWeights,
    state: &ModelState,
    mu: f64,
    i: usize,
    k: usize,
) -> Result<SampledGrad, ObjectiveError> {
    sampled_grad(ds, weights, state, mu, &SampledTerm::pair(i, k))
}

/// Compactness and gradient bounds for the projected methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub b_w: f64,
    pub b_u: f64,
    pub b_x: f64,
    pub b_f: f64,
    /// False when `μ = 0` and the bounds are infinite.
    pub finite: bool,
}

/// `B_W² = 2N log K / μ`, `B_u = log(1 + (K-1)e^{2 B_x B_W})`,
/// `B_f = N max(1, e^{B_u} - 1) + 2(N e^{B_u} B_x + μ max β B_W)`.
pub fn bounds(ds: &Dataset, weights: &ClassWeights, mu: f64) -> Bounds {
    let n = ds.n() as f64;
    let k = ds.k() as f64;
    let b_x = ds.max_x_norm();
    if mu <= 0.0 {
        return Bounds { b_w: f64::INFINITY, b_u: f64::INFINITY, b_x, b_f: f64::INFINITY, finite: false };
    }
    let b_w = (2.0 / mu * n * k.ln()).sqrt();
    let b_u = softplus((k - 1.0).ln() + 2.0 * b_x * b_w);
    let e_bu = b_u.exp();
    let b_f = n * f64::max(1.0, e_bu - 1.0) + 2.0 * (n * e_bu * b_x + mu * weights.max() * b_w);
    Bounds { b_w, b_u, b_x, b_f, finite: b_f.is_finite() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;

    fn one_point(x: f64, k: usize) -> Dataset {
        Dataset::new("p", vec![Example { label: 0, x: SparseVector::dense(&[x]) }], k, 1)
    }

    #[test]
    fn log_likelihood_at_zero() {
        let ds = one_point(1.0, 2);
        let s = ModelState::initial(&ds, Formulation::Ours);
        assert!((log_likelihood(&ds, &s, 0.0).unwrap() + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_likelihood_saturates() {
        let ds = one_point(1.0, 2);
        let mut s = ModelState::initial(&ds, Formulation::Ours);
        s.row_mut(0)[0] = 50.0;
        let l = log_likelihood(&ds, &s, 0.0).unwrap();
        assert!(l < 0.0 && l > -1e-20);
    }

    #[test]
    fn log_likelihood_reports_blowup() {
        let ds = one_point(1.0, 2);
        let mut s = ModelState::initial(&ds, Formulation::Ours);
        s.row_mut(1)[0] = f64::NAN;
        match log_likelihood(&ds, &s, 0.0) {
            Err(ObjectiveError::BlowUp { coordinate: Coordinate::W { class: 1, feature: 0 }, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn u_star_values() {
        let ds = one_point(1.0, 4);
        let mut s = ModelState::initial(&ds, Formulation::Ours);
        assert!((u_star(&ds, &s, 0) - 4f64.ln()).abs() < 1e-15);
        let ds = one_point(1.0, 2);
        s = ModelState::initial(&ds, Formulation::Ours);
        s.row_mut(1)[0] = 100.0;
        // log1p(e^100) = 100 + log1p(e^-100)
        assert!((u_star(&ds, &s, 0) - 100.0).abs() < 1e-10);
    }

    #[test]
    fn f_value_one_point() {
        let ds = one_point(1.0, 2);
        let s = ModelState::initial(&ds, Formulation::Ours);
        // u = log 2: log 2 + 1/2 + e^{-log 2} = log 2 + 1
        let f = f_value(&ds, &s, 0.0).unwrap();
        assert!((f - (2f64.ln() + 1.0)).abs() < 1e-15);
        assert!((-f + 1.0 - log_likelihood(&ds, &s, 0.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn f_value_overflow_is_reported() {
        let ds = one_point(1.0, 2);
        let mut s = ModelState::initial(&ds, Formulation::Ours);
        s.row_mut(1)[0] = 800.0;
        assert!(matches!(f_value(&ds, &s, 0.0), Err(ObjectiveError::Overflow { .. })));
    }

    #[test]
    fn stoch_grad_at_zero_state() {
        let ds = one_point(1.0, 3);
        let w = ClassWeights::single(&ds).unwrap();
        let mut s = ModelState::initial(&ds, Formulation::Ours);
        s.u[0] = 0.0;
        let g = stoch_grad(&ds, &w, &s, 0.0, 0, 1).unwrap();
        // N(K-1) = 2
        assert_eq!(g.d_u, -2.0);
        assert_eq!(g.classes, vec![1, 0]);
        assert_eq!(g.row_grad(&ds, &s, 0), vec![2.0]);
        assert_eq!(g.row_grad(&ds, &s, 1), vec![-2.0]);
    }

    #[test]
    fn stoch_grad_overflow_signal() {
        let ds = one_point(1.0, 2);
        let w = ClassWeights::single(&ds).unwrap();
        let mut s = ModelState::initial(&ds, Formulation::Ours);
        s.u[0] = 0.0;
        s.row_mut(1)[0] = 800.0;
        match stoch_grad(&ds, &w, &s, 0.0, 0, 1) {
            Err(ObjectiveError::Overflow { exponent }) => assert_eq!(exponent, 800.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bounds_formula() {
        let examples = (0..100)
            .map(|i| Example { label: i % 10, x: SparseVector::dense(&[1.0]) })
            .collect();
        let ds = Dataset::new("b", examples, 10, 1);
        let w = ClassWeights::single(&ds).unwrap();
        let b = bounds(&ds, &w, 1.0);
        // sqrt(200 ln 10)
        assert!((b.b_w - 21.459660262893472).abs() < 1e-12);
        assert_eq!(b.b_x, 1.0);
        let b0 = bounds(&ds, &w, 0.0);
        assert!(!b0.finite && b0.b_w.is_infinite());
    }

    #[test]
    fn conversion_round_trip() {
        let ds = one_point(0.5, 3);
        let mut s = ModelState::initial(&ds, Formulation::Ours);
        s.row_mut(0)[0] = 2.0;
        let r = s.converted(&ds, Formulation::Raman);
        assert!((r.u[0] - (3f64.ln() + 1.0)).abs() < 1e-15);
        let back = r.converted(&ds, Formulation::Ours);
        assert!((back.u[0] - s.u[0]).abs() < 1e-15);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-16);
        assert!(softplus(-1000.0) >= 0.0);
    }
}
