//! Gauss–Legendre rules from the Golub–Welsch eigenproblem.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let beta = kf / (4.0 * kf * kf - 1.0).sqrt();
        jac[(k, k - 1)] = beta;
        jac[(k - 1, k)] = beta;
    }
    let eig = SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], 2.0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    pairs.into_iter().map(|(x, w)| (mid + half * x, half * w)).unzip()
}

/// `(1/2π) ∫₀^{2π} -ln|2 sin(t/2)| cos(mt) dt`, the Fourier multiplier of the
/// logarithmic kernel on the unit circle, by direct quadrature.
///
/// The endpoint singularities are handled by geometric grading toward `t = 0`
/// and `t = 2π`; the oscillation by panels no wider than a quarter period.
pub fn log_kernel_mode(m: usize) -> f64 {
    let (x, w) = gauss_legendre(20, 0.0, 1.0);
    let f = |t: f64| -(2.0 * (0.5 * t).sin()).ln() * (m as f64 * t).cos();
    let panel = |a: f64, b: f64| -> f64 { x.iter().zip(&w).map(|(x, w)| w * f(a + (b - a) * x)).sum::<f64>() * (b - a) };
    // integrand is symmetric about π
    let first = PI / (4 * m.max(1)) as f64;
    let mut acc = 0.0;
    let mut hi = first;
    for _ in 0..60 {
        let lo = 0.15 * hi;
        acc += panel(lo, hi);
        hi = lo;
    }
    let panels = ((PI - first) / first).ceil() as usize;
    let h = (PI - first) / panels as f64;
    for i in 0..panels {
        acc += panel(first + i as f64 * h, first + (i + 1) as f64 * h);
    }
    acc / PI
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(8, 0.0, 2.0);
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(15)).sum();
        assert!((q - 2f64.powi(16) / 16.0).abs() < 1e-9);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn log_kernel_multipliers() {
        assert!(log_kernel_mode(0).abs() < 1e-13);
        for m in [1usize, 2, 7, 64] {
            assert!((log_kernel_mode(m) - 0.5 / m as f64).abs() < 1e-12, "m = {m}");
        }
    }
}
