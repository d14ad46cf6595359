//! Training loops over the double-sum objective and the sampled baselines.

use std::time::Instant;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::{ClassWeights, Dataset};
use crate::implicit::{implicit_update_1x1, implicit_update_1xm, ImplicitError, NewtonOptions};
use crate::objective::{
    bounds, log_sum_exp, sampled_grad, softplus, Formulation, ModelState, ObjectiveError, SampledGrad,
    SampledTerm,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Vanilla,
    Umax,
    Isgd,
    IsgdMulti,
    Ove,
    Nce,
    Is,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Vanilla, Method::Umax, Method::Isgd, Method::IsgdMulti, Method::Ove, Method::Nce, Method::Is];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Umax => "umax",
            Method::Isgd => "isgd",
            Method::IsgdMulti => "isgd_multi",
            Method::Ove => "ove",
            Method::Nce => "nce",
            Method::Is => "is",
        }
    }

    /// Classes per iteration when none is given.
    pub fn default_m(self) -> usize {
        match self {
            Method::Isgd => 1,
            _ => 5,
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::Ove | Method::Nce | Method::Is)
    }

    /// Classes are drawn without replacement for these methods.
    fn distinct_classes(self) -> bool {
        matches!(self, Method::IsgdMulti | Method::Ove | Method::Nce | Method::Is)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("eta0 must be positive and finite, got {0}")]
    Eta0(f64),
    #[error("decay must lie in (0, 1], got {0}")]
    Decay(f64),
    #[error("delta must be positive, got {0}")]
    Delta(f64),
    #[error("mu must be nonnegative, got {0}")]
    Mu(f64),
    #[error("m must be at least 1")]
    ZeroM,
    #[error("isgd samples one class per step; use isgd_multi for m = {0}")]
    IsgdM(usize),
    #[error("method {0} does not support the raman formulation")]
    Formulation(Method),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    pub eta0: f64,
    pub decay: f64,
    pub mu: f64,
    pub delta: f64,
    pub m: usize,
    pub epochs: usize,
    pub seed: u64,
    pub projection: bool,
    /// Upper bound on `u_i` used instead of `B_u` (always used when `μ = 0`).
    pub u_cap: Option<f64>,
    pub formulation: Formulation,
    pub eval_points: usize,
    /// Measure the exact change in `f` at each U-max clip (costs O(KD)).
    pub track_clip_decrease: bool,
}

impl OptimizerConfig {
    pub fn new(method: Method, eta0: f64) -> Self {
        Self {
            method,
            eta0,
            decay: 0.9,
            mu: 0.0,
            delta: 1.0,
            m: method.default_m(),
            epochs: 50,
            seed: 0,
            projection: true,
            u_cap: None,
            formulation: Formulation::Ours,
            eval_points: 10,
            track_clip_decrease: false,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(ConfigError::Eta0(self.eta0));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(ConfigError::Decay(self.decay));
        }
        if self.delta.is_nan() || self.delta <= 0.0 {
            return Err(ConfigError::Delta(self.delta));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(ConfigError::Mu(self.mu));
        }
        if self.m == 0 {
            return Err(ConfigError::ZeroM);
        }
        if self.method == Method::Isgd && self.m != 1 {
            return Err(ConfigError::IsgdM(self.m));
        }
        if self.formulation == Formulation::Raman && matches!(self.method, Method::Isgd | Method::IsgdMulti) {
            return Err(ConfigError::Formulation(self.method));
        }
        Ok(())
    }

    /// `η_t = (eta0 / N) · decay^epoch`, epochs counted from zero.
    pub fn learning_rate(&self, n: usize, epoch: usize) -> f64 {
        self.eta0 / n as f64 * self.decay.powi(epoch as i32)
    }
}

/// One-based epochs at which metrics are recorded: `round(j·E/P)`.
pub fn eval_epochs(epochs: usize, points: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=points)
        .map(|j| ((j * epochs) as f64 / points as f64).round() as usize)
        .filter(|&e| e >= 1)
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOutcome {
    pub applied: bool,
    /// Offending exponent when the step was refused.
    pub overflow: Option<f64>,
    pub clip_event: bool,
    /// Exact decrease of `f` caused by the clip, when tracked.
    pub f_decrease_on_clip: Option<f64>,
}

/// Read-only inputs shared by every step of a run.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub ds: &'a Dataset,
    pub weights: &'a ClassWeights,
    pub mu: f64,
}

/// Box the projected methods keep their iterates in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u_cap: f64,
    /// `B_W`, or `None` when `W` is not projected.
    pub w_radius: Option<f64>,
}

fn apply_grad(ds: &Dataset, state: &mut ModelState, g: &SampledGrad, eta: f64) {
    let x = ds.x(g.i);
    for slot in 0..g.classes.len() {
        let row = state.row_mut(g.classes[slot]);
        let keep = 1.0 - eta * g.ridge[slot];
        if keep != 1.0 {
            row.iter_mut().for_each(|w| *w *= keep);
        }
        x.axpy_into(-eta * g.x_coeff[slot], row);
    }
    state.u[g.i] -= eta * g.d_u;
}

fn clamp_u(state: &mut ModelState, i: usize) {
    if state.formulation == Formulation::Ours && state.u[i] < 0.0 {
        state.u[i] = 0.0;
    }
}

/// Plain SGD on `f_{i,C}` with classes drawn with replacement.
pub fn step_vanilla(ctx: StepContext, state: &mut ModelState, i: usize, draws: &[usize], eta: f64) -> StepOutcome {
    let term = SampledTerm::with_replacement(i, draws.to_vec());
    match sampled_grad(ctx.ds, ctx.weights, state, ctx.mu, &term) {
        Ok(g) => {
            apply_grad(ctx.ds, state, &g, eta);
            clamp_u(state, i);
            StepOutcome { applied: true, ..Default::default() }
        }
        Err(ObjectiveError::Overflow { exponent }) => StepOutcome { overflow: Some(exponent), ..Default::default() },
        Err(ObjectiveError::BlowUp { value, .. }) => StepOutcome { overflow: Some(value), ..Default::default() },
    }
}

fn distinct(draws: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(draws.len());
    for &k in draws {
        if !out.contains(&k) {
            out.push(k);
        }
    }
    out
}

/// Per-example part of `f` as a function of the auxiliary value `u`,
/// given all logits of example `i`.
fn aux_term(formulation: Formulation, logits: &[f64], y: usize, u: f64) -> f64 {
    let s_y = logits[y];
    let mut acc = match formulation {
        Formulation::Ours => u + (-u).exp(),
        Formulation::Raman => u - s_y + (s_y - u).exp(),
    };
    for (c, &s) in logits.iter().enumerate() {
        if c != y {
            acc += match formulation {
                Formulation::Ours => (s - s_y - u).exp(),
                Formulation::Raman => (s - u).exp(),
            };
        }
    }
    acc
}

/// U-max: raise a lagging `u_i` to the sampled lower bound, take the
/// vanilla step, then project.
pub fn step_umax(
    ctx: StepContext,
    state: &mut ModelState,
    i: usize,
    draws: &[usize],
    eta: f64,
    delta: f64,
    proj: Projection,
    w_norm_sq: &mut f64,
    track_clip: bool,
) -> StepOutcome {
    let ds = ctx.ds;
    let x = ds.x(i);
    let y = ds.y(i);
    let s_y = x.dot(state.row(y));
    let sampled = distinct(draws);
    let lower = match state.formulation {
        Formulation::Ours => {
            let mut gaps: Vec<f64> = sampled.iter().map(|&k| x.dot(state.row(k)) - s_y).collect();
            gaps.push(0.0);
            log_sum_exp(&gaps)
        }
        Formulation::Raman => {
            let mut s: Vec<f64> = sampled.iter().map(|&k| x.dot(state.row(k))).collect();
            s.push(s_y);
            log_sum_exp(&s)
        }
    };
    let mut outcome = StepOutcome::default();
    if state.u[i] < lower - delta {
        if track_clip {
            let logits = state.logits(x);
            let before = aux_term(state.formulation, &logits, y, state.u[i]);
            let after = aux_term(state.formulation, &logits, y, lower);
            outcome.f_decrease_on_clip = Some(before - after);
        }
        state.u[i] = lower;
        outcome.clip_event = true;
    }

    let touched: Vec<usize> = sampled.iter().copied().chain(std::iter::once(y)).collect();
    let row_sq = |s: &ModelState, c: usize| s.row(c).iter().map(|v| v * v).sum::<f64>();
    let before_sq: f64 = touched.iter().map(|&c| row_sq(state, c)).sum();

    let step = step_vanilla(ctx, state, i, draws, eta);
    if !step.applied {
        return StepOutcome { overflow: step.overflow, ..outcome };
    }
    outcome.applied = true;

    match state.formulation {
        Formulation::Ours => state.u[i] = state.u[i].clamp(0.0, proj.u_cap),
        Formulation::Raman => {
            let cap = x.dot(state.row(y)) + proj.u_cap;
            if state.u[i] > cap {
                state.u[i] = cap;
            }
        }
    }
    if let Some(radius) = proj.w_radius {
        let after_sq: f64 = touched.iter().map(|&c| row_sq(state, c)).sum();
        *w_norm_sq = (*w_norm_sq + after_sq - before_sq).max(0.0);
        if *w_norm_sq > radius * radius {
            let scale = radius / w_norm_sq.sqrt();
            state.w.iter_mut().for_each(|w| *w *= scale);
            *w_norm_sq = radius * radius;
        }
    }
    outcome
}

/// Implicit SGD; `classes` of length one uses the Lambert-W/Brent solver,
/// longer sets the Newton reduction (with matching subset weights in `ctx`).
pub fn step_isgd(
    ctx: StepContext,
    state: &mut ModelState,
    i: usize,
    classes: &[usize],
    eta: f64,
) -> Result<StepOutcome, ImplicitError> {
    let upd = if classes.len() == 1 {
        implicit_update_1x1(ctx.ds, ctx.weights, state, ctx.mu, eta, i, classes[0])?
    } else {
        implicit_update_1xm(ctx.ds, ctx.weights, state, ctx.mu, eta, i, classes, NewtonOptions::default())?
    };
    upd.apply(ctx.ds, state);
    clamp_u(state, i);
    Ok(StepOutcome { applied: true, ..Default::default() })
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Biased sampled-softmax baselines. Updates `W` only; `ctx.weights` should
/// be the subset weights for `|classes|`.
pub fn step_baseline(
    method: Method,
    ctx: StepContext,
    state: &mut ModelState,
    i: usize,
    classes: &[usize],
    eta: f64,
) -> StepOutcome {
    let ds = ctx.ds;
    let n = ds.n() as f64;
    let k = ds.k() as f64;
    let m = classes.len() as f64;
    let x = ds.x(i);
    let y = ds.y(i);
    let s_y = x.dot(state.row(y));
    let s: Vec<f64> = classes.iter().map(|&c| x.dot(state.row(c))).collect();

    let mut coeffs = Vec::with_capacity(classes.len() + 1);
    match method {
        Method::Ove => {
            let scale = n * (k - 1.0) / m;
            let mut y_coeff = 0.0;
            for &sk in &s {
                let p = scale * sigmoid(sk - s_y);
                coeffs.push(p);
                y_coeff -= p;
            }
            coeffs.push(y_coeff);
        }
        Method::Is => {
            let shift = (m / (k - 1.0)).ln();
            let mut logits: Vec<f64> = s.iter().map(|sk| sk - shift).collect();
            logits.push(s_y);
            let lse = log_sum_exp(&logits);
            for (j, l) in logits.iter().enumerate() {
                let p = (l - lse).exp();
                coeffs.push(if j == classes.len() { n * (p - 1.0) } else { n * p });
            }
        }
        Method::Nce => {
            let log_mq = (m / (k - 1.0)).ln();
            for &sk in &s {
                coeffs.push(n * sigmoid(sk - log_mq));
            }
            coeffs.push(-n * sigmoid(-(s_y - log_mq)));
        }
        other => panic!("{other} is not a baseline"),
    }
    for (j, &c) in classes.iter().chain(std::iter::once(&y)).enumerate() {
        let keep = 1.0 - eta * ctx.mu * ctx.weights.beta[c];
        let row = state.row_mut(c);
        if keep != 1.0 {
            row.iter_mut().for_each(|w| *w *= keep);
        }
        x.axpy_into(-eta * coeffs[j], row);
    }
    StepOutcome { applied: true, ..Default::default() }
}

/// Uniform classes other than `y`, with or without replacement.
pub fn sample_classes<R: Rng>(rng: &mut R, k: usize, y: usize, m: usize, distinct: bool) -> Vec<usize> {
    let lift = |r: usize| if r >= y { r + 1 } else { r };
    if distinct {
        index::sample(rng, k - 1, m.min(k - 1)).into_iter().map(lift).collect()
    } else {
        (0..m).map(|_| lift(rng.gen_range(0..k - 1))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunFailure {
    #[error("overflow (exponent {exponent}) at epoch {epoch}, iteration {iteration}")]
    Overflow { epoch: usize, iteration: usize, exponent: f64 },
    #[error("implicit solver failed at epoch {epoch}, iteration {iteration}: {source}")]
    Solver { epoch: usize, iteration: usize, source: ImplicitError },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunStats {
    pub steps: usize,
    pub clip_events: usize,
    pub clip_decreases: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: ModelState,
    pub failure: Option<RunFailure>,
    pub stats: RunStats,
}

/// Passed to the evaluation hook after each evaluated epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochPoint<'a> {
    /// One-based epoch just completed.
    pub epoch: usize,
    pub state: &'a ModelState,
    /// Training wall-clock seconds so far, excluding evaluation.
    pub elapsed_sec: f64,
}

/// Runs `config.epochs` epochs of `N` iterations from `initial`.
pub fn run_epochs(
    ds: &Dataset,
    config: &OptimizerConfig,
    initial: ModelState,
    eval_hook: &mut dyn FnMut(EpochPoint),
) -> Result<RunOutput, ConfigError> {
    config.validate()?;
    let mut state = initial;
    if state.formulation != config.formulation {
        state = state.converted(ds, config.formulation);
    }
    let method = config.method;
    let m = if method.distinct_classes() { config.m.min(ds.k() - 1) } else { config.m };
    let weights = if method.distinct_classes() {
        ClassWeights::for_subset_size(ds, m)
    } else {
        ClassWeights::single(ds)
    }
    .expect("dataset has at least two classes");
    let ctx = StepContext { ds, weights: &weights, mu: config.mu };
    let b = bounds(ds, &weights, config.mu);
    let default_cap = softplus(((ds.k() - 1) as f64).ln() + 40.0);
    let proj = if config.projection {
        Projection {
            u_cap: config.u_cap.unwrap_or(if b.finite { b.b_u } else { default_cap }),
            w_radius: if config.mu > 0.0 && b.finite { Some(b.b_w) } else { None },
        }
    } else {
        Projection { u_cap: f64::INFINITY, w_radius: None }
    };

    let eval_at = eval_epochs(config.epochs, config.eval_points);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut stats = RunStats::default();
    let mut elapsed = 0.0;
    let n = ds.n();
    for epoch in 0..config.epochs {
        let eta = config.learning_rate(n, epoch);
        let mut w_norm_sq = state.w_norm_sq();
        let started = Instant::now();
        for iteration in 0..n {
            let i = rng.gen_range(0..n);
            let classes = sample_classes(&mut rng, ds.k(), ds.y(i), m, method.distinct_classes());
            let outcome = match method {
                Method::Vanilla => step_vanilla(ctx, &mut state, i, &classes, eta),
                Method::Umax => step_umax(
                    ctx,
                    &mut state,
                    i,
                    &classes,
                    eta,
                    config.delta,
                    proj,
                    &mut w_norm_sq,
                    config.track_clip_decrease,
                ),
                Method::Isgd | Method::IsgdMulti => match step_isgd(ctx, &mut state, i, &classes, eta) {
                    Ok(o) => o,
                    Err(source) => {
                        return Ok(RunOutput {
                            state,
                            failure: Some(RunFailure::Solver { epoch: epoch + 1, iteration, source }),
                            stats,
                        })
                    }
                },
                Method::Ove | Method::Nce | Method::Is => step_baseline(method, ctx, &mut state, i, &classes, eta),
            };
            stats.steps += 1;
            if outcome.clip_event {
                stats.clip_events += 1;
            }
            if let Some(d) = outcome.f_decrease_on_clip {
                stats.clip_decreases.push(d);
            }
            if let Some(exponent) = outcome.overflow {
                return Ok(RunOutput {
                    state,
                    failure: Some(RunFailure::Overflow { epoch: epoch + 1, iteration, exponent }),
                    stats,
                });
            }
        }
        elapsed += started.elapsed().as_secs_f64();
        if eval_at.contains(&(epoch + 1)) {
            eval_hook(EpochPoint { epoch: epoch + 1, state: &state, elapsed_sec: elapsed });
        }
    }
    Ok(RunOutput { state, failure: None, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use crate::sparse::SparseVector;

    fn ds(k: usize) -> Dataset {
        let examples = (0..6)
            .map(|i| Example { label: i % k, x: SparseVector::dense(&[1.0, 0.0]) })
            .collect();
        Dataset::new("t", examples, k, 2)
    }

    #[test]
    fn schedule() {
        let c = OptimizerConfig { eta0: 2.0, ..OptimizerConfig::new(Method::Vanilla, 2.0) };
        let r = c.learning_rate(4, 3);
        assert!((r - 0.5 * 0.9f64.powi(3)).abs() < 1e-16);
    }

    #[test]
    fn eval_schedule() {
        assert_eq!(eval_epochs(50, 10), vec![5, 10, 15, 20, 25, 30, 35, 40, 45, 50]);
        assert_eq!(eval_epochs(3, 10), vec![1, 2, 3]);
        assert_eq!(eval_epochs(200, 10).len(), 10);
    }

    #[test]
    fn config_validation() {
        let mut c = OptimizerConfig::new(Method::Isgd, 1.0);
        c.validate().unwrap();
        c.m = 3;
        assert_eq!(c.validate(), Err(ConfigError::IsgdM(3)));
        let mut c = OptimizerConfig::new(Method::Umax, 0.0);
        assert_eq!(c.validate(), Err(ConfigError::Eta0(0.0)));
        c.eta0 = 1.0;
        c.decay = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
    }

    #[test]
    fn sampling_excludes_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let c = sample_classes(&mut rng, 5, 2, 3, false);
            assert!(c.iter().all(|&k| k != 2 && k < 5));
            let d = sample_classes(&mut rng, 5, 2, 3, true);
            assert_eq!(distinct(&d).len(), 3);
            assert!(d.iter().all(|&k| k != 2 && k < 5));
        }
        assert_eq!(sample_classes(&mut rng, 3, 0, 9, true).len(), 2);
    }

    #[test]
    fn vanilla_zero_state_direction() {
        let d = ds(3);
        let w = ClassWeights::single(&d).unwrap();
        let mut s = ModelState::new(3, 2, 6, Formulation::Ours);
        let ctx = StepContext { ds: &d, weights: &w, mu: 0.0 };
        let out = step_vanilla(ctx, &mut s, 0, &[1], 0.01);
        assert!(out.applied);
        assert!(s.u[0] > 0.0);
        assert!(s.row(1)[0] < 0.0);
        assert_eq!(s.row(1)[0], -s.row(0)[0]);
    }

    #[test]
    fn vanilla_overflow_leaves_state() {
        let d = ds(2);
        let w = ClassWeights::single(&d).unwrap();
        let mut s = ModelState::new(2, 2, 6, Formulation::Ours);
        s.row_mut(1)[0] = 800.0;
        let before = s.clone();
        let ctx = StepContext { ds: &d, weights: &w, mu: 0.0 };
        let out = step_vanilla(ctx, &mut s, 0, &[1], 0.01);
        assert!(!out.applied);
        assert_eq!(out.overflow, Some(800.0));
        assert_eq!(s, before);
    }

    #[test]
    fn umax_clip_condition() {
        let d = ds(2);
        let w = ClassWeights::single(&d).unwrap();
        let ctx = StepContext { ds: &d, weights: &w, mu: 0.0 };
        let proj = Projection { u_cap: 50.0, w_radius: None };
        let mut s = ModelState::new(2, 2, 6, Formulation::Ours);
        let mut nsq = 0.0;
        let out = step_umax(ctx, &mut s, 0, &[1], 0.0, 0.1, proj, &mut nsq, false);
        assert!(out.clip_event);
        assert!((s.u[0] - 2f64.ln()).abs() < 1e-15);

        let mut a = ModelState::new(2, 2, 6, Formulation::Ours);
        let mut b = a.clone();
        let out = step_umax(ctx, &mut a, 0, &[1], 0.05, 1.0, proj, &mut nsq, false);
        assert!(!out.clip_event);
        step_vanilla(ctx, &mut b, 0, &[1], 0.05);
        assert_eq!(a, b);
    }

    #[test]
    fn baseline_values_at_zero() {
        let d = ds(3);
        let w = ClassWeights::for_subset_size(&d, 1).unwrap();
        let ctx = StepContext { ds: &d, weights: &w, mu: 0.0 };
        let mut s = ModelState::new(3, 2, 6, Formulation::Ours);
        step_baseline(Method::Ove, ctx, &mut s, 0, &[1], 1.0);
        // N(K-1)σ(0) = 6
        assert_eq!(s.row(1)[0], -6.0);
        assert_eq!(s.row(0)[0], 6.0);

        let mut s = ModelState::new(3, 2, 6, Formulation::Ours);
        step_baseline(Method::Is, ctx, &mut s, 0, &[1, 2], 1.0);
        let shift_p = 1.0 / 3.0;
        assert!((s.row(1)[0] + 6.0 * shift_p).abs() < 1e-12);
        assert!((s.row(0)[0] - 6.0 * (1.0 - shift_p)).abs() < 1e-12);
    }

    #[test]
    fn run_is_deterministic() {
        let d = ds(3);
        let mut c = OptimizerConfig::new(Method::Umax, 1.0);
        c.epochs = 4;
        c.seed = 9;
        let a = run_epochs(&d, &c, ModelState::initial(&d, Formulation::Ours), &mut |_| {}).unwrap();
        let b = run_epochs(&d, &c, ModelState::initial(&d, Formulation::Ours), &mut |_| {}).unwrap();
        assert_eq!(a.state, b.state);
        let mut evals = 0;
        c.epochs = 50;
        run_epochs(&d, &c, ModelState::initial(&d, Formulation::Ours), &mut |_| evals += 1).unwrap();
        assert_eq!(evals, 10);
    }
}
