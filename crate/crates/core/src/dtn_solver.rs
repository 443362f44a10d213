//! The discrete Steklov eigenproblem and its comparison spectrum.
//!
//! Writing `v = Sl σ` for the harmonic extension, the Steklov condition
//! becomes `A φ = λ B φ` with `A = ½(I - N)` and `B = S·G`, where `G` is
//! multiplication by the conformal weight. The solver reduces this to a
//! symmetric-definite problem: `P = S⁻¹A` is symmetric in the boundary `L²`
//! inner product (Gram matrix `W`), and `W G` is positive definite.
//!
//! Eigenfunctions are orthonormal in `L²(∂D, g dq)`, the arclength measure of
//! the weighted problem, which reduces to `L²(∂D, dq)` when `g ≡ 1`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::ValidDomain;
use crate::layer_ops::{
    assemble_double_layer, assemble_single_layer, assemble_weight, gram_diagonal, BoundaryDensity,
    BoundaryOperatorMatrix,
};
use crate::rates::{fit_exponential_outcome, FitOutcome};

/// Eigenvalues closer than this are treated as one multiple eigenvalue.
pub const MULTIPLICITY_TOL: f64 = 1e-8;

/// The assembled generalized problem on the scaled geometry.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub s: BoundaryOperatorMatrix,
    pub n: BoundaryOperatorMatrix,
    pub g: BoundaryOperatorMatrix,
    /// `L²(dq)` Gram diagonal on the scaled circles.
    pub gram: DVector<f64>,
    pub scale: f64,
    pub m_max: usize,
    pub components: usize,
    pub domain_hash: String,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// `‖v‖_W` in the scaled boundary `L²(dq)` norm.
    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        v.iter().zip(self.gram.iter()).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
    }
}

/// Assemble `A = ½(I - N)` and `B = S G` on the scaled geometry.
pub fn assemble_eigensystem(domain: &ValidDomain, m_max: usize) -> Result<EigenSystem> {
    let s = assemble_single_layer(domain, m_max)?;
    let n = assemble_double_layer(domain, m_max)?;
    let g = assemble_weight(domain, m_max);
    let dim = s.matrix.nrows();
    let a = (DMatrix::identity(dim, dim) - &n.matrix) * 0.5;
    let b = &s.matrix * &g.matrix;
    let radii: Vec<f64> = domain.scaled_circles().iter().map(|c| c.radius).collect();
    Ok(EigenSystem {
        a,
        b,
        gram: gram_diagonal(&radii, m_max),
        s,
        n,
        g,
        scale: domain.scale_factor(),
        m_max,
        components: domain.num_components(),
        domain_hash: domain.hash(),
    })
}

/// Conditioning and consistency figures from one solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    /// 2-norm condition number of `S` in the `W` inner product.
    pub cond_s: f64,
    /// 2-norm condition number of `G` in the `W` inner product.
    pub cond_g: f64,
    /// Upper bound `cond_s · cond_g` on the condition number of `B`.
    pub cond_b_bound: f64,
    /// `‖WP - (WP)ᵀ‖ / ‖WP‖` in the max norm before symmetrization.
    pub asymmetry: f64,
    /// Eigenvalues above `π M / max L_j` are unresolved and dropped.
    pub reliable_limit: f64,
    /// How many requested eigenpairs were dropped by the reliability limit.
    pub truncated: usize,
    /// Indices whose residual exceeds `1e-8 (1 + λ)`.
    pub flagged: Vec<usize>,
    /// Largest entry change seen at the last node doubling of any cross block.
    pub quadrature_change: f64,
}

/// Sorted Steklov eigenvalues with boundary eigenfunctions.
#[derive(Debug, Clone)]
pub struct SteklovSpectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenfunctions: Vec<BoundaryDensity>,
    /// `‖Aφ - λBφ‖ / ‖Bφ‖`, in eigenvalue units.
    pub residuals: Vec<f64>,
    pub domain_hash: String,
    pub m_max: usize,
    /// Unscaled circle radii, outer first.
    pub radii: Vec<f64>,
    /// Unscaled conformal lengths `L_j`.
    pub lengths: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

impl SteklovSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn components(&self) -> usize {
        self.radii.len()
    }

    /// Tag per eigenvalue: `simple`, `double`, or `xN` for higher multiplicity.
    pub fn multiplicity_tags(&self) -> Vec<String> {
        let lam = &self.eigenvalues;
        let mut tags = vec![String::new(); lam.len()];
        let mut start = 0;
        while start < lam.len() {
            let mut end = start + 1;
            while end < lam.len() && lam[end] - lam[end - 1] < MULTIPLICITY_TOL {
                end += 1;
            }
            let tag = match end - start {
                1 => "simple".to_string(),
                2 => "double".to_string(),
                k => format!("x{k}"),
            };
            for t in &mut tags[start..end] {
                t.clone_from(&tag);
            }
            start = end;
        }
        tags
    }

    /// `‖φ_n‖_{L²(∂D_j, dq)}` for every component.
    pub fn component_norms(&self, n: usize) -> Vec<f64> {
        (0..self.components()).map(|j| self.eigenfunctions[n].component_l2(j, self.radii[j])).collect()
    }

    /// Whether any eigenpair was flagged or dropped.
    pub fn has_spurious(&self) -> bool {
        !self.diagnostics.flagged.is_empty() || self.diagnostics.truncated > 0
    }
}

fn symmetric_condition(mat: &DMatrix<f64>, gram: &DVector<f64>) -> f64 {
    let n = mat.nrows();
    let sq: Vec<f64> = gram.iter().map(|w| w.sqrt()).collect();
    let mut m = DMatrix::from_fn(n, n, |r, c| sq[r] * mat[(r, c)] / sq[c]);
    let mt = m.transpose();
    m = (m + mt) * 0.5;
    let ev = m.symmetric_eigenvalues();
    let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
    hi / lo
}

/// The `n_max + 1` smallest Steklov eigenpairs of the domain.
///
/// Requires `n_max + 1 ≤ dim / 4` with `dim = K (2 M + 1)`.
pub fn solve_spectrum(domain: &ValidDomain, m_max: usize, n_max: usize) -> Result<SteklovSpectrum> {
    let sys = assemble_eigensystem(domain, m_max)?;
    solve_system(domain, &sys, n_max)
}

/// [`solve_spectrum`] on an already assembled system.
pub fn solve_system(domain: &ValidDomain, sys: &EigenSystem, n_max: usize) -> Result<SteklovSpectrum> {
    let dim = sys.dim();
    if (n_max + 1) * 4 > dim {
        return Err(Error::InvalidParameter(format!(
            "n_max = {n_max} is too large for a system of dimension {dim} (need n_max + 1 ≤ {})",
            dim / 4
        )));
    }
    let w = &sys.gram;
    let p = sys
        .s
        .matrix
        .clone()
        .lu()
        .solve(&sys.a)
        .ok_or_else(|| Error::EigenSolveFailed("single-layer matrix is singular".into()))?;
    let mut wp = p;
    for (r, wr) in w.iter().enumerate() {
        wp.row_mut(r).scale_mut(*wr);
    }
    let wpt = wp.transpose();
    let asymmetry = (&wp - &wpt).amax() / wp.amax();
    let h = (wp + wpt) * 0.5;

    let mut wg = sys.g.matrix.clone();
    for (r, wr) in w.iter().enumerate() {
        wg.row_mut(r).scale_mut(*wr);
    }
    let wg = (&wg + wg.transpose()) * 0.5;
    let chol = wg
        .clone()
        .cholesky()
        .ok_or_else(|| Error::EigenSolveFailed("weight Gram matrix is not positive definite".into()))?;
    let l = chol.l();
    let y = l
        .solve_lower_triangular(&h)
        .ok_or_else(|| Error::EigenSolveFailed("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| Error::EigenSolveFailed("triangular solve failed".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = c.symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::EigenSolveFailed("non-finite eigenvalue".into()));
    }
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let lengths = domain.lengths();
    let reliable_limit = PI * sys.m_max as f64 / lengths.iter().cloned().fold(0.0, f64::max);
    let lt = l.transpose();
    let scale = sys.scale;
    let mut eigenvalues = Vec::new();
    let mut eigenfunctions = Vec::new();
    let mut residuals = Vec::new();
    let mut flagged = Vec::new();
    for &i in order.iter().take(n_max + 1) {
        let lam_s = eig.eigenvalues[i];
        let lam = scale * lam_s;
        if lam > reliable_limit {
            break;
        }
        let z = eig.eigenvectors.column(i).into_owned();
        let mut x = lt
            .solve_upper_triangular(&z)
            .ok_or_else(|| Error::EigenSolveFailed("back substitution failed".into()))?;
        let imax = x.iamax();
        if x[imax] < 0.0 {
            x.neg_mut();
        }
        let bx = &sys.b * &x;
        let r = &sys.a * &x - &bx * lam_s;
        let res = scale * sys.norm(&r) / sys.norm(&bx).max(f64::MIN_POSITIVE);
        if res > 1e-8 * (1.0 + lam) {
            flagged.push(eigenvalues.len());
        }
        // Unit norm on the scaled circles becomes √c on the unscaled ones.
        x *= scale.sqrt();
        eigenfunctions.push(BoundaryDensity::from_real(sys.components, sys.m_max, x.as_slice()));
        eigenvalues.push(lam);
        residuals.push(res);
    }
    let truncated = n_max + 1 - eigenvalues.len();

    let cond_s = symmetric_condition(&sys.s.matrix, w);
    let cond_g = symmetric_condition(&sys.g.matrix, w);
    let quadrature_change = sys.s.max_quadrature_change().max(sys.n.max_quadrature_change());
    Ok(SteklovSpectrum {
        eigenvalues,
        eigenfunctions,
        residuals,
        domain_hash: sys.domain_hash.clone(),
        m_max: sys.m_max,
        radii: domain.circles().iter().map(|c| c.radius).collect(),
        lengths,
        diagnostics: SolveDiagnostics {
            cond_s,
            cond_g,
            cond_b_bound: cond_s * cond_g,
            asymmetry,
            reliable_limit,
            truncated,
            flagged,
            quadrature_change,
        },
    })
}

/// Trigonometric pattern of a comparison eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Parity {
    Constant,
    Cos,
    Sin,
}

/// One entry of the comparison sequence: `2π m / L_j` from component `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonEntry {
    pub value: f64,
    pub component: usize,
    pub mode: usize,
    pub parity: Parity,
}

/// Sorted merge of the progressions `{0, α_j, α_j, 2α_j, 2α_j, ...}`, `α_j = 2π/L_j`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonSequence {
    pub lengths: Vec<f64>,
    pub entries: Vec<ComparisonEntry>,
}

impl ComparisonSequence {
    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The first `count` comparison values.
pub fn comparison_sequence(lengths: &[f64], count: usize) -> Result<ComparisonSequence> {
    if lengths.is_empty() || lengths.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::InvalidParameter("comparison lengths must be positive".into()));
    }
    let mut entries = Vec::new();
    let per_component = count / 2 + 1;
    for (j, &l) in lengths.iter().enumerate() {
        entries.push(ComparisonEntry { value: 0.0, component: j, mode: 0, parity: Parity::Constant });
        for m in 1..=per_component {
            let value = 2.0 * PI * m as f64 / l;
            entries.push(ComparisonEntry { value, component: j, mode: m, parity: Parity::Cos });
            entries.push(ComparisonEntry { value, component: j, mode: m, parity: Parity::Sin });
        }
    }
    entries.sort_by(|a, b| {
        a.value
            .total_cmp(&b.value)
            .then(a.component.cmp(&b.component))
            .then((a.parity as u8).cmp(&(b.parity as u8)))
    });
    entries.truncate(count);
    Ok(ComparisonSequence { lengths: lengths.to_vec(), entries })
}

/// One row of the index-paired comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub n: usize,
    pub lambda: f64,
    pub mu: f64,
    pub gap: f64,
    pub residual: f64,
    pub multiplicity: String,
}

/// Gaps between eigenvalues and the comparison value of one progression.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgressionGap {
    pub component: usize,
    /// `(m, μ = 2πm/L_j, nearest λ, |λ - μ|)`.
    pub rows: Vec<(usize, f64, f64, f64)>,
    /// Fit of `ln|λ - μ|` against `m`.
    pub fit: FitOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    /// Per-row floor `100 · max(residual, ε_mach (1 + λ))`; the largest is reported.
    pub noise_floor: f64,
    /// Fit of `ln|λ_n - μ_n|` against `n` over rows above their floor.
    pub fit: FitOutcome,
    /// Smallest `n₀` with `|λ_n - μ_n| ≤ ½ min_j 2π/L_j` for all `n ≥ n₀`.
    pub weyl_n0: Option<usize>,
    /// Indices whose gap exceeds half the smallest progression step.
    pub mismatched: Vec<usize>,
    pub progressions: Vec<ProgressionGap>,
}

fn row_floor(residual: f64, lambda: f64) -> f64 {
    100.0 * residual.max(f64::EPSILON * (1.0 + lambda))
}

/// Compare the spectrum with the comparison sequence by sorted index and by progression.
pub fn spectrum_gap_report(spectrum: &SteklovSpectrum, comparison: &ComparisonSequence) -> Result<GapReport> {
    if spectrum.len() < 21 {
        return Err(Error::InvalidParameter(format!(
            "gap report needs at least 21 eigenvalues, got {}",
            spectrum.len()
        )));
    }
    let tags = spectrum.multiplicity_tags();
    let count = spectrum.len().min(comparison.len());
    let rows: Vec<GapRow> = (0..count)
        .map(|n| GapRow {
            n,
            lambda: spectrum.eigenvalues[n],
            mu: comparison.entries[n].value,
            gap: (spectrum.eigenvalues[n] - comparison.entries[n].value).abs(),
            residual: spectrum.residuals[n],
            multiplicity: tags[n].clone(),
        })
        .collect();
    let noise_floor = rows.iter().map(|r| row_floor(r.residual, r.lambda)).fold(0.0, f64::max);
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.gap > row_floor(r.residual, r.lambda))
        .map(|r| (r.n as f64, r.gap))
        .unzip();
    let fit = fit_exponential_outcome(&xs, &ys, 0.0);
    let fit = match fit {
        FitOutcome::BelowNoiseFloor { above_floor, .. } => FitOutcome::BelowNoiseFloor { above_floor, floor: noise_floor },
        f => f,
    };

    let half_step = 0.5 * comparison.lengths.iter().map(|l| 2.0 * PI / l).fold(f64::INFINITY, f64::min);
    let mismatched: Vec<usize> = rows.iter().filter(|r| r.gap > half_step).map(|r| r.n).collect();
    let weyl_n0 = match mismatched.last() {
        None => Some(0),
        Some(&n) if n + 1 < rows.len() => Some(n + 1),
        Some(_) => None,
    };

    let progressions = (0..comparison.lengths.len())
        .map(|j| progression_gap(spectrum, comparison.lengths[j], j))
        .collect();
    Ok(GapReport { rows, noise_floor, fit, weyl_n0, mismatched, progressions })
}

fn progression_gap(spectrum: &SteklovSpectrum, length: f64, component: usize) -> ProgressionGap {
    let lam = &spectrum.eigenvalues;
    let top = lam.last().copied().unwrap_or(0.0);
    let mut rows = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut m = 1;
    loop {
        let mu = 2.0 * PI * m as f64 / length;
        if mu > top {
            break;
        }
        let (idx, near) = lam
            .iter()
            .enumerate()
            .map(|(i, &l)| (i, l))
            .min_by(|a, b| (a.1 - mu).abs().total_cmp(&(b.1 - mu).abs()))
            .unwrap();
        let gap = (near - mu).abs();
        rows.push((m, mu, near, gap));
        if gap > row_floor(spectrum.residuals[idx], near) {
            xs.push(m as f64);
            ys.push(gap);
        }
        m += 1;
    }
    let fit = fit_exponential_outcome(&xs, &ys, 0.0);
    ProgressionGap { component, rows, fit }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annulus_oracle::annulus_eigenvalues;
    use crate::geometry::{validate_domain, Circle, KoebeDomain, WeightSeries};
    use approx::assert_relative_eq;

    #[test]
    fn disk_spectrum_is_integers() {
        let d = validate_domain(KoebeDomain::disk(1.0)).unwrap();
        let s = solve_spectrum(&d, 32, 12).unwrap();
        let want = [0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 5.0, 5.0, 6.0, 6.0];
        for (l, w) in s.eigenvalues.iter().zip(want) {
            assert!((l - w).abs() < 1e-10, "{l} vs {w}");
        }
        assert!(s.diagnostics.flagged.is_empty());
        let f0 = &s.eigenfunctions[0];
        let c = f0.value(0, 0.0);
        assert_relative_eq!(c, 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-12);
        for t in [0.5, 2.0, 4.0] {
            assert!((f0.value(0, t) - c).abs() < 1e-12);
        }
    }

    #[test]
    fn annulus_mode_one_pairs() {
        let d = validate_domain(KoebeDomain::annulus(0.5)).unwrap();
        let s = solve_spectrum(&d, 32, 12).unwrap();
        let r = annulus_eigenvalues(0.5, 1).unwrap();
        assert!(s.eigenvalues[0].abs() < 1e-10);
        assert_relative_eq!(s.eigenvalues[1], r.minus, max_relative = 1e-10);
        assert_relative_eq!(s.eigenvalues[2], r.minus, max_relative = 1e-10);
        let hits = s.eigenvalues.iter().filter(|l| (*l - r.plus).abs() < 1e-9).count();
        assert_eq!(hits, 2);
    }

    #[test]
    fn eigenfunctions_are_weighted_orthonormal() {
        let dom = KoebeDomain::new(
            Circle::new([0.0, 0.0], 1.0),
            vec![Circle::new([0.3, 0.1], 0.3)],
            vec![WeightSeries::cosine_bump(0.4), WeightSeries::unit()],
        );
        let d = validate_domain(dom).unwrap();
        let s = solve_spectrum(&d, 32, 15).unwrap();
        let radii = &s.radii;
        let w = gram_diagonal(radii, 32);
        let g = assemble_weight(&d, 32).matrix;
        for a in 0..s.len() {
            for b in 0..s.len() {
                let x = DVector::from_vec(s.eigenfunctions[a].to_real());
                let y = DVector::from_vec(s.eigenfunctions[b].to_real());
                let gy = &g * y;
                let ip: f64 = x.iter().zip(gy.iter()).zip(w.iter()).map(|((p, q), ww)| p * q * ww).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-9, "({a},{b}) = {ip}");
            }
        }
        assert!(s.diagnostics.flagged.is_empty(), "{:?}", s.residuals);
    }

    #[test]
    fn rejects_oversized_request() {
        let d = validate_domain(KoebeDomain::disk(1.0)).unwrap();
        assert!(matches!(solve_spectrum(&d, 8, 10), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn comparison_examples() {
        let c = comparison_sequence(&[2.0 * PI], 7).unwrap();
        let v: Vec<f64> = c.values().iter().map(|x| (x * 1e12).round() / 1e12).collect();
        assert_eq!(v, vec![0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let c = comparison_sequence(&[2.0 * PI, PI], 14).unwrap();
        let v: Vec<f64> = c.values().iter().map(|x| (x * 1e12).round() / 1e12).collect();
        assert_eq!(v, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 4.0, 4.0]);
        let c = comparison_sequence(&[2.0 * PI, 2.0 * PI], 10).unwrap();
        let v: Vec<f64> = c.values().iter().map(|x| (x * 1e12).round() / 1e12).collect();
        assert_eq!(v, vec![0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn multiplicity_tags() {
        let d = validate_domain(KoebeDomain::disk(1.0)).unwrap();
        let s = solve_spectrum(&d, 16, 4).unwrap();
        assert_eq!(s.multiplicity_tags(), vec!["simple", "double", "double", "double", "double"]);
    }
}
