//! Brent's root finder on a sign-changing bracket.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrentResult {
    pub root: f64,
    pub f_root: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Finds a zero of `f` in `[a, b]` given `fa = f(a)`, `fb = f(b)` of
/// opposite signs. Stops when the bracket is within
/// `2·eps·|x| + tol/2` of the estimate.
pub fn brent<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    mut fa: f64,
    mut fb: f64,
    tol: f64,
    max_iter: usize,
) -> BrentResult {
    debug_assert!(fa * fb <= 0.0, "bracket does not change sign");
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    let mut iterations = 0;
    loop {
        if (fb > 0.0 && fc > 0.0) || (fb < 0.0 && fc < 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return BrentResult { root: b, f_root: fb, iterations, converged: true };
        }
        if iterations >= max_iter {
            return BrentResult { root: b, f_root: fb, iterations, converged: false };
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < f64::min(3.0 * xm * q - (tol1 * q).abs(), (e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        iterations += 1;
    }
}
