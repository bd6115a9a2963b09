//! Adaptive Simpson quadrature.

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Integral of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = simpson(fa, fm, fb, a, b);
    refine(&f, a, b, fa, fm, fb, whole, tol, 30)
}

/// Integral over `[a, inf)` of a nonnegative integrand that decays eventually,
/// summed over chunks until a chunk contributes negligibly past the peak.
pub fn integrate_tail(f: impl Fn(f64) -> f64, a: f64, chunk: f64, rel_tol: f64) -> f64 {
    let mut total: f64 = 0.0;
    let mut lo = a;
    let mut prev = f64::INFINITY;
    for _ in 0..100_000 {
        let hi = lo + chunk;
        let rough = adaptive_simpson(&f, lo, hi, f64::INFINITY);
        let tol = rel_tol * total.max(rough.abs()) + f64::MIN_POSITIVE;
        let part = adaptive_simpson(&f, lo, hi, tol);
        total += part;
        if part <= prev && part <= rel_tol * 1e-3 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        if part == 0.0 && total == 0.0 && f(hi) == 0.0 {
            break;
        }
        prev = part;
        lo = hi;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_and_gaussian_integrals() {
        let v = adaptive_simpson(|x| x * x * x - 2.0 * x, 0.0, 3.0, 1e-12);
        assert!((v - (81.0 / 4.0 - 9.0)).abs() < 1e-10);
        let g = integrate_tail(|x| (-x * x / 2.0).exp(), 0.0, 1.0, 1e-10);
        assert!((g - (std::f64::consts::PI / 2.0).sqrt()).abs() < 1e-9);
        // d * exp(-d) on [5, inf) = 6 e^-5
        let t = integrate_tail(|d| d * (-d).exp(), 5.0, 2.0, 1e-10);
        assert!((t / (6.0 * (-5f64).exp()) - 1.0).abs() < 1e-8);
    }
}
