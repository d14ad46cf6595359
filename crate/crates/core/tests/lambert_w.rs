use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unbiased_softmax::lambert_w::{lambert_w0, lambert_w0_exp};

/// Above this `w·e^w` cannot be formed to 1e-12 relative in f64, so the
/// residual is checked in log form instead.
const DIRECT_CHECK_LIMIT: f64 = 1e40;

fn check(x: f64) {
    let w = lambert_w0(x).unwrap();
    assert!(w.converged, "x = {x:e}");
    let w = w.value;
    if x <= DIRECT_CHECK_LIMIT {
        let r = (w * w.exp() - x).abs();
        assert!(r <= 1e-12 * x.max(1.0), "x = {x:e}, w = {w}, residual {r:e}");
    } else {
        let r = (w + w.ln() - x.ln()).abs();
        assert!(r <= 8.0 * f64::EPSILON * x.ln(), "x = {x:e}, w = {w}, log residual {r:e}");
    }
}

#[test]
fn residual_on_a_million_log_uniform_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1_000_000 {
        let e: f64 = rng.gen_range(-300.0..=300.0);
        check(10f64.powf(e));
    }
    check(0.0);
    check(1e300);
}

#[test]
fn log_space_matches_direct_where_both_apply() {
    for &l in &[-50.0, -1.0, 0.0, 1.0, 10.0, 100.0, 650.0] {
        let a = lambert_w0(f64::exp(l)).unwrap().value;
        let b = lambert_w0_exp(l).unwrap().value;
        assert!((a - b).abs() <= 1e-12 * a.max(1e-300), "l = {l}: {a} vs {b}");
    }
}

proptest! {
    #[test]
    fn monotone(a in -300.0f64..300.0, b in -300.0f64..300.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let w_lo = lambert_w0(10f64.powf(lo)).unwrap().value;
        let w_hi = lambert_w0(10f64.powf(hi)).unwrap().value;
        prop_assert!(w_lo <= w_hi);
    }

    #[test]
    fn asymptotic_form(log_x in 50.0f64..1e6) {
        let w = lambert_w0_exp(log_x).unwrap().value;
        let ll = log_x.ln();
        prop_assert!((w - (log_x - ll)).abs() <= ll);
    }

    #[test]
    fn log_space_residual(log_x in -700.0f64..1e5) {
        let w = lambert_w0_exp(log_x).unwrap().value;
        prop_assert!(w > 0.0);
        let r = (w + w.ln() - log_x).abs();
        prop_assert!(r <= 1e-12 * log_x.abs().max(1.0), "log_x {} w {} r {:e}", log_x, w, r);
    }
}
