//! Closed-form Steklov data for the annulus `{ε < |x| < 1}` and the unit disk.
//!
//! Separating variables, mode `k ≥ 1` eigenfunctions are
//! `C (r^k + β r^{-k}) T(kθ)` with `β = (k - σ)/(k + σ)` and `σ` a root of
//! `p_k(σ) = σ² - σ k ((ε+1)/ε) ((1+ε^{2k})/(1-ε^{2k})) + k²/ε`.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::Point;

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("annulus ratio must lie in (0, 1), got {eps}")))
    }
}

/// The characteristic polynomial `p_k(σ)`.
pub fn characteristic_polynomial(eps: f64, k: usize, sigma: f64) -> f64 {
    let kf = k as f64;
    let e2k = eps.powi(2 * k as i32);
    sigma * sigma - sigma * kf * ((eps + 1.0) / eps) * ((1.0 + e2k) / (1.0 - e2k)) + kf * kf / eps
}

/// Both roots of `p_k` for one mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnulusRoots {
    pub k: usize,
    pub minus: f64,
    pub plus: f64,
    /// `ε^{2k}` fell below machine precision, so the roots equal `k` and `k/ε` exactly.
    pub underflow: bool,
}

/// Roots `σ_k^- < σ_k^+` of `p_k`.
///
/// The larger root is computed directly and the smaller one from the product
/// `k²/ε`, which keeps both accurate when they are far apart.
pub fn annulus_eigenvalues(eps: f64, k: usize) -> Result<AnnulusRoots> {
    check_eps(eps)?;
    if k == 0 {
        return Err(Error::InvalidParameter("mode k must be at least 1".into()));
    }
    let kf = k as f64;
    let e2k = eps.powi(2 * k as i32);
    if kf * e2k < f64::EPSILON * 1e-2 {
        return Ok(AnnulusRoots { k, minus: kf, plus: kf / eps, underflow: true });
    }
    let b = kf * ((eps + 1.0) / eps) * ((1.0 + e2k) / (1.0 - e2k));
    let c = kf * kf / eps;
    let disc = (b * b - 4.0 * c).max(0.0);
    let plus = 0.5 * (b + disc.sqrt());
    let minus = c / plus;
    Ok(AnnulusRoots { k, minus, plus, underflow: false })
}

/// The rotation-invariant eigenvalue `(1+ε)/(ε ln(1/ε))` with eigenfunction
/// `a + b ln r`, and the trivial eigenvalue 0.
pub fn annulus_radial_eigenvalues(eps: f64) -> Result<[f64; 2]> {
    check_eps(eps)?;
    Ok([0.0, (1.0 + eps) / (eps * (1.0 / eps).ln())])
}

/// Which root of `p_k` an eigenpair belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    Minus,
    Plus,
}

/// An explicit annulus eigenpair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnulusEigenpair {
    pub eps: f64,
    pub k: usize,
    pub branch: Branch,
    pub sigma: f64,
    pub beta: f64,
    /// Normalizer giving unit `L²(∂A, dq)` norm for `T = cos(kθ + phase)`.
    pub normalizer: f64,
}

pub fn annulus_eigenpair(eps: f64, k: usize, branch: Branch) -> Result<AnnulusEigenpair> {
    let roots = annulus_eigenvalues(eps, k)?;
    let sigma = match branch {
        Branch::Minus => roots.minus,
        Branch::Plus => roots.plus,
    };
    let kf = k as f64;
    let beta = (kf - sigma) / (kf + sigma);
    let ek = eps.powi(k as i32);
    let inner_trace = ek + beta * eps.powi(-(k as i32));
    let norm2 = PI * ((1.0 + beta).powi(2) + eps * inner_trace.powi(2));
    Ok(AnnulusEigenpair { eps, k, branch, sigma, beta, normalizer: 1.0 / norm2.sqrt() })
}

impl AnnulusEigenpair {
    /// Radial profile `C (r^k + β r^{-k})` and its derivative.
    pub fn radial(&self, r: f64) -> (f64, f64) {
        let k = self.k as i32;
        let kf = self.k as f64;
        let v = r.powi(k) + self.beta * r.powi(-k);
        let dv = kf * (r.powi(k - 1) - self.beta * r.powi(-k - 1));
        (self.normalizer * v, self.normalizer * dv)
    }

    /// Boundary traces `(outer, inner)` of the radial profile.
    pub fn traces(&self) -> (f64, f64) {
        (self.radial(1.0).0, self.radial(self.eps).0)
    }

    /// Radius of the interior nodal circle, if the radial profile changes sign inside.
    pub fn nodal_radius(&self) -> Option<f64> {
        if self.beta < 0.0 {
            let r0 = (-self.beta).powf(1.0 / (2.0 * self.k as f64));
            (r0 > self.eps && r0 < 1.0).then_some(r0)
        } else {
            None
        }
    }

    /// Euclidean length of the nodal set: `2k` radial segments plus the nodal circle.
    pub fn nodal_length(&self) -> f64 {
        let rays = 2.0 * self.k as f64 * (1.0 - self.eps);
        rays + self.nodal_radius().map_or(0.0, |r0| 2.0 * PI * r0)
    }

    pub fn field(&self, phase: f64) -> AnnulusEigenfunction {
        AnnulusEigenfunction { pair: *self, phase }
    }
}

/// `C (r^k + β r^{-k}) cos(kθ + phase)` as a sampled field.
#[derive(Debug, Clone, Copy)]
pub struct AnnulusEigenfunction {
    pub pair: AnnulusEigenpair,
    pub phase: f64,
}

impl ScalarField for AnnulusEigenfunction {
    fn value(&self, p: Point) -> Result<f64> {
        let r = p[0].hypot(p[1]);
        let t = p[1].atan2(p[0]);
        Ok(self.pair.radial(r).0 * (self.pair.k as f64 * t + self.phase).cos())
    }

    fn gradient(&self, p: Point) -> Result<[f64; 2]> {
        let r = p[0].hypot(p[1]);
        let t = p[1].atan2(p[0]);
        let kf = self.pair.k as f64;
        let (v, dv) = self.pair.radial(r);
        let (s, c) = (kf * t + self.phase).sin_cos();
        let dr = dv * c;
        let dt = -v * kf * s / r;
        let (st, ct) = t.sin_cos();
        Ok([dr * ct - dt * st, dr * st + dt * ct])
    }
}

/// Per-mode Dirichlet-to-Neumann matrix of the unit annulus.
///
/// Rows and columns are ordered `(outer, inner)`; the matrix maps the boundary
/// amplitudes of `cos mθ` to outward normal derivatives.
pub fn annulus_mode_dtn(eps: f64, m: usize) -> Result<Matrix2<f64>> {
    check_eps(eps)?;
    if m == 0 {
        let l = eps.ln();
        return Ok(Matrix2::new(-1.0 / l, 1.0 / l, 1.0 / (eps * l), -1.0 / (eps * l)));
    }
    let mf = m as f64;
    let q = eps.powi(m as i32);
    let det = 1.0 - q * q;
    // u = A r^m + B (ε/r)^m; A = (f_o - q f_i)/det, B = (f_i - q f_o)/det.
    let a = [1.0 / det, -q / det];
    let b = [-q / det, 1.0 / det];
    // Outer: ∂_r u at 1 = m A - m B q. Inner: -∂_r u at ε = -(m/ε)(A q - B).
    let outer = [mf * (a[0] - b[0] * q), mf * (a[1] - b[1] * q)];
    let inner = [-(mf / eps) * (a[0] * q - b[0]), -(mf / eps) * (a[1] * q - b[1])];
    Ok(Matrix2::new(outer[0], outer[1], inner[0], inner[1]))
}

/// Closed-form per-mode single- and double-layer matrices for concentric
/// circles of radii `R` (outer) and `εR` (inner), in the `(outer, inner)` order.
///
/// Returns `(S, N)` for the Fourier mode `m`, with `S f = ∫ G f dq` and
/// `N f = -2 ∫ ∂_ν' G f dq` using `G = -(1/2π) ln|x-y|` and the domain normal.
pub fn annulus_mode_layers(eps: f64, outer_radius: f64, m: usize) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    check_eps(eps)?;
    let r = outer_radius;
    let ri = eps * r;
    if m == 0 {
        let s = Matrix2::new(-r * r.ln(), -ri * r.ln(), -r * r.ln(), -ri * ri.ln());
        let n = Matrix2::new(1.0, 0.0, 2.0, -1.0);
        return Ok((s, n));
    }
    let mf = m as f64;
    let q = eps.powi(m as i32);
    let s = Matrix2::new(
        r / (2.0 * mf),
        (ri / (2.0 * mf)) * q,
        (r / (2.0 * mf)) * q,
        ri / (2.0 * mf),
    );
    let n = Matrix2::new(0.0, q, q, 0.0);
    Ok((s, n))
}

/// Disk eigenvalue `n` with eigenfunction `r^n cos(nθ + α)` and nodal length `2n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiskEigenpair {
    pub n: usize,
    pub eigenvalue: f64,
    pub nodal_length: f64,
}

pub fn disk_eigenpair(n: usize) -> DiskEigenpair {
    DiskEigenpair { n, eigenvalue: n as f64, nodal_length: 2.0 * n as f64 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn half_annulus_mode_one() {
        // p_1(σ) = σ² - 5σ + 2 at ε = 1/2.
        let r = annulus_eigenvalues(0.5, 1).unwrap();
        assert_relative_eq!(r.minus, (5.0 - 17f64.sqrt()) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(r.plus, (5.0 + 17f64.sqrt()) / 2.0, epsilon = 1e-14);
        assert_relative_eq!(r.minus, 0.438_447_187_191_169_7, epsilon = 1e-13);
        assert_relative_eq!(r.plus, 4.561_552_812_808_830, epsilon = 1e-13);
    }

    #[test]
    fn radial_eigenvalue() {
        let [z, s] = annulus_radial_eigenvalues(0.5).unwrap();
        assert_eq!(z, 0.0);
        assert_relative_eq!(s, 1.5 / (0.5 * 2f64.ln()), epsilon = 1e-15);
    }

    #[test]
    fn large_mode_underflow() {
        let r = annulus_eigenvalues(0.5, 20).unwrap();
        assert!(!r.underflow);
        assert_relative_eq!(r.minus, 20.0, max_relative = 1e-10);
        assert_relative_eq!(r.plus, 40.0, max_relative = 1e-10);
        let r = annulus_eigenvalues(0.5, 2000).unwrap();
        assert!(r.underflow);
        assert_eq!((r.minus, r.plus), (2000.0, 4000.0));
    }

    #[test]
    fn rejects_bad_ratio() {
        assert!(annulus_eigenvalues(1.0, 1).is_err());
        assert!(annulus_eigenvalues(0.0, 1).is_err());
        assert!(annulus_eigenvalues(0.5, 0).is_err());
    }

    #[test]
    fn eigenfunction_satisfies_steklov_condition() {
        for branch in [Branch::Minus, Branch::Plus] {
            for k in 1..6 {
                let p = annulus_eigenpair(0.4, k, branch).unwrap();
                let (vo, dvo) = p.radial(1.0);
                let (vi, dvi) = p.radial(0.4);
                assert_relative_eq!(dvo, p.sigma * vo, max_relative = 1e-12);
                assert_relative_eq!(-dvi, p.sigma * vi, max_relative = 1e-10, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dtn_matrix_eigenvalues_are_roots() {
        for m in 1..8 {
            let d = annulus_mode_dtn(0.5, m).unwrap();
            let tr = d.trace();
            let det = d.determinant();
            let disc = (tr * tr - 4.0 * det).sqrt();
            let r = annulus_eigenvalues(0.5, m).unwrap();
            assert_relative_eq!(0.5 * (tr - disc), r.minus, max_relative = 1e-10);
            assert_relative_eq!(0.5 * (tr + disc), r.plus, max_relative = 1e-12);
        }
        let d0 = annulus_mode_dtn(0.5, 0).unwrap();
        let [_, s] = annulus_radial_eigenvalues(0.5).unwrap();
        assert_relative_eq!(d0.trace(), s, max_relative = 1e-14);
        assert!(d0.determinant().abs() < 1e-14);
    }

    #[test]
    fn layer_matrices_reproduce_dtn() {
        // A = ½(I - N), B = S; the DtN map is S⁻¹A in each mode.
        for m in 0..6 {
            let (s, n) = annulus_mode_layers(0.5, 0.5, m).unwrap();
            let a = (Matrix2::identity() - n) * 0.5;
            let dtn = s.try_inverse().unwrap() * a;
            let exact = annulus_mode_dtn(0.5, m).unwrap() / 0.5;
            assert!((dtn - exact).abs().max() < 1e-12, "mode {m}");
        }
    }

    #[test]
    fn nodal_length_of_mode_one() {
        let p = annulus_eigenpair(0.5, 1, Branch::Minus).unwrap();
        assert!(p.beta > 0.0);
        assert_relative_eq!(p.nodal_length(), 1.0);
        let p = annulus_eigenpair(0.5, 1, Branch::Plus).unwrap();
        let r0 = p.nodal_radius().unwrap();
        assert_relative_eq!(p.radial(r0).0, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.nodal_length(), 1.0 + 2.0 * PI * r0, epsilon = 1e-14);
    }

    #[test]
    fn disk_oracle() {
        let d = disk_eigenpair(7);
        assert_eq!(d.eigenvalue, 7.0);
        assert_eq!(d.nodal_length, 14.0);
    }

    proptest! {
        #[test]
        fn roots_are_roots(eps in 0.05f64..0.95, k in 1usize..60) {
            let r = annulus_eigenvalues(eps, k).unwrap();
            let kf = k as f64;
            prop_assert!(r.minus <= r.plus);
            prop_assert!(r.minus > 0.0);
            let scale = (kf / eps).powi(2);
            prop_assert!(characteristic_polynomial(eps, k, r.minus).abs() <= 1e-10 * scale);
            prop_assert!(characteristic_polynomial(eps, k, r.plus).abs() <= 1e-10 * scale);
            prop_assert!((r.minus * r.plus - kf * kf / eps).abs() <= 1e-12 * kf * kf / eps);
        }

        #[test]
        fn eigenfunctions_have_unit_norm(eps in 0.1f64..0.9, k in 1usize..25, plus in any::<bool>()) {
            let branch = if plus { Branch::Plus } else { Branch::Minus };
            let p = annulus_eigenpair(eps, k, branch).unwrap();
            let (o, i) = p.traces();
            let n2 = PI * (o * o + eps * i * i);
            prop_assert!((n2 - 1.0).abs() < 1e-12);
        }
    }
}
