//! Adaptive Gauss-Legendre quadrature used by the H transform and a few
//! oracles.

use gauss_quad::legendre::GaussLegendre;
use std::num::NonZeroUsize;
use std::sync::OnceLock;

fn rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(NonZeroUsize::new(20).expect("nonzero")))
}

/// One 20-node panel on `[a, b]`.
pub fn panel<F: Fn(f64) -> f64>(a: f64, b: f64, f: &F) -> f64 {
    rule().integrate(a, b, f)
}

/// Bisect panels until the two halves agree with the parent to `rel_tol`.
pub fn adaptive<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let mut total = 0.0;
    let mut stack = vec![(a, b, panel(a, b, f), 0u32)];
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = panel(lo, mid, f);
        let right = panel(mid, hi, f);
        let halves = left + right;
        if (halves - whole).abs() <= rel_tol * halves.abs() + 1e-300 || depth >= 48 {
            total += halves;
        } else {
            stack.push((mid, hi, right, depth + 1));
            stack.push((lo, mid, left, depth + 1));
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = adaptive(&|x: f64| 3.0 * x * x, 0.0, 2.0, 1e-14);
        assert!((v - 8.0).abs() < 1e-13);
    }

    #[test]
    fn kinked_integrand_converges() {
        let v = adaptive(&|x: f64| (x - 0.3).abs(), 0.0, 1.0, 1e-13);
        let exact = 0.5 * 0.3 * 0.3 + 0.5 * 0.7 * 0.7;
        assert!((v - exact).abs() < 1e-12);
    }
}
