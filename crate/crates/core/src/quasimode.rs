//! Boundary quasimodes and the cluster decomposition of eigenfunctions.
//!
//! The model operator on each circle is the Fourier multiplier in conformal
//! arclength `s_j`, with orthonormal eigenfunctions `ē_j` built from
//! `cos(2πm s_j/L_j)` and `sin(2πm s_j/L_j)`. Eigenvalues and model values are
//! grouped into intervals separated by gaps of at least `ε`; the part of an
//! eigenfunction spanned by model functions in its own interval is its
//! quasimode `ψ`, and the rest is the residual `f`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dtn_solver::{comparison_sequence, ComparisonEntry, ComparisonSequence, EigenSystem, Parity, SteklovSpectrum};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::fourier::{self, pow2_at_least};
use crate::geometry::{ArclengthMap, Circle, ComponentArclength, Point, ValidDomain};
use crate::layer_ops::BoundaryDensity;
use crate::rates::{fit_exponential_outcome, FitOutcome};

/// A closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Disjoint intervals grouping eigenvalues and model values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterPartition {
    pub eps: f64,
    pub intervals: Vec<Interval>,
    /// Cluster of each eigenvalue index.
    pub lambda_cluster: Vec<usize>,
    /// Cluster of each model-value index.
    pub mu_cluster: Vec<usize>,
    /// First index from which `|λ_n - μ_n| < ε/2` holds.
    pub tail_start: usize,
}

impl ClusterPartition {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn lambda_members(&self, i: usize) -> Vec<usize> {
        (0..self.lambda_cluster.len()).filter(|&n| self.lambda_cluster[n] == i).collect()
    }

    pub fn mu_members(&self, i: usize) -> Vec<usize> {
        (0..self.mu_cluster.len()).filter(|&j| self.mu_cluster[j] == i).collect()
    }

    /// Whether eigenvalue `n` and model value `j` share a cluster.
    pub fn equivalent(&self, n: usize, j: usize) -> bool {
        j < self.mu_cluster.len() && self.lambda_cluster[n] == self.mu_cluster[j]
    }
}

/// Largest admissible gap parameter scaled by `0.9`: `0.9 π / (2 k L)`.
pub fn default_cluster_eps(components: usize, max_length: f64) -> f64 {
    0.9 * PI / (2.0 * components as f64 * max_length)
}

fn check_cluster_eps(eps: f64, components: usize, max_length: f64) -> Result<()> {
    let bound = PI / (2.0 * components as f64 * max_length);
    if !(eps > 0.0 && eps < bound) {
        return Err(Error::InvalidParameter(format!("cluster gap ε = {eps} must lie in (0, {bound})")));
    }
    Ok(())
}

/// Greedy gap-scan partition of index-paired sorted sequences.
///
/// Requires `0 < ε < π/(2kL)` where `k` is the number of components and `L`
/// the largest boundary length.
pub fn cluster_spectrum(
    lambdas: &[f64],
    mus: &[f64],
    eps: f64,
    components: usize,
    max_length: f64,
) -> Result<ClusterPartition> {
    check_cluster_eps(eps, components, max_length)?;
    if lambdas.len() != mus.len() || lambdas.is_empty() {
        return Err(Error::InvalidParameter("eigenvalue and model sequences must be non-empty and paired".into()));
    }
    let sorted = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
    if !sorted(lambdas) || !sorted(mus) {
        return Err(Error::InvalidParameter("sequences must be sorted ascending".into()));
    }
    let len = mus.len();
    let tail_start = (0..len)
        .rev()
        .take_while(|&n| (lambdas[n] - mus[n]).abs() < eps / 2.0)
        .last()
        .unwrap_or(len);
    if tail_start == len {
        return Err(Error::GapScanFailed {
            value: mus[len - 1],
            reason: "last eigenvalue is not within ε/2 of its model value".into(),
        });
    }
    let window = PI / max_length;
    // A gap after index n means μ_{n+1} - μ_n ≥ 2ε; the end of the list counts as one.
    let gap_after = |n: usize| n + 1 >= len || mus[n + 1] - mus[n] >= 2.0 * eps;

    let mut intervals = Vec::new();
    let first = (tail_start + 1..=len).find(|&m| m == len || gap_after(m - 1));
    let Some(m2) = first else {
        return Err(Error::GapScanFailed { value: mus[tail_start], reason: "no initial gap".into() });
    };
    let top = lambdas[len - 1].max(mus[len - 1]) + eps / 2.0;
    if m2 == len {
        intervals.push(Interval { lo: 0.0f64.min(lambdas[0]), hi: top });
    } else {
        intervals.push(Interval { lo: 0.0f64.min(lambdas[0]), hi: mus[m2] - 1.5 * eps });
        let mut m = m2;
        while m < len {
            let n = (m..len).find(|&n| gap_after(n)).unwrap();
            if mus[n] - mus[m] > window {
                return Err(Error::GapScanFailed {
                    value: mus[m],
                    reason: format!("no gap of width {} within {window}", 2.0 * eps),
                });
            }
            intervals.push(Interval { lo: mus[m] - eps / 2.0, hi: mus[n] + eps / 2.0 });
            m = n + 1;
        }
    }

    let locate = |x: f64| intervals.iter().position(|iv| iv.contains(x));
    let mut lambda_cluster = Vec::with_capacity(len);
    for &l in lambdas {
        lambda_cluster.push(locate(l).ok_or_else(|| Error::GapScanFailed {
            value: l,
            reason: "eigenvalue outside every interval".into(),
        })?);
    }
    let mut mu_cluster = Vec::with_capacity(len);
    for &u in mus {
        mu_cluster.push(locate(u).ok_or_else(|| Error::GapScanFailed {
            value: u,
            reason: "model value outside every interval".into(),
        })?);
    }
    for i in 0..intervals.len() {
        if !lambda_cluster.contains(&i) || !mu_cluster.contains(&i) {
            return Err(Error::GapScanFailed {
                value: intervals[i].lo,
                reason: format!("interval {i} lacks an eigenvalue or a model value"),
            });
        }
    }
    Ok(ClusterPartition { eps, intervals, lambda_cluster, mu_cluster, tail_start })
}

/// Partition a computed spectrum, cutting both sequences at the last genuine
/// model gap so that no cluster straddles the end of the computed range.
pub fn cluster_computed_spectrum(
    spectrum: &SteklovSpectrum,
    eps: Option<f64>,
) -> Result<(ClusterPartition, ComparisonSequence)> {
    let k = spectrum.components();
    let lmax = spectrum.lengths.iter().cloned().fold(0.0, f64::max);
    let eps = eps.unwrap_or_else(|| default_cluster_eps(k, lmax));
    check_cluster_eps(eps, k, lmax)?;
    let count = spectrum.len();
    let comparison = comparison_sequence(&spectrum.lengths, count + 1)?;
    let mus = comparison.values();
    let cut = (1..=count)
        .rev()
        .find(|&t| mus[t] - mus[t - 1] >= 2.0 * eps)
        .ok_or_else(|| Error::GapScanFailed { value: mus[count], reason: "no gap in model values".into() })?;
    let part = cluster_spectrum(&spectrum.eigenvalues[..cut], &mus[..cut], eps, k, lmax)?;
    let mut trimmed = comparison;
    trimmed.entries.truncate(cut);
    Ok((part, trimmed))
}

/// Model eigenfunction `ē` at polar angle `θ`, orthonormal in `L²(ds)`.
pub fn model_function(arc: &ComponentArclength, entry: &ComparisonEntry, theta: f64) -> f64 {
    let l = arc.length;
    let phase = 2.0 * PI * entry.mode as f64 * arc.s(theta) / l;
    match entry.parity {
        Parity::Constant => 1.0 / l.sqrt(),
        Parity::Cos => (2.0 / l).sqrt() * phase.cos(),
        Parity::Sin => (2.0 / l).sqrt() * phase.sin(),
    }
}

/// `a_{n,j} = ⟨φ_n, ē_j⟩` in `L²(∂D, g dq)`.
#[derive(Debug, Clone)]
pub struct CoefficientMatrix {
    /// Rows index eigenfunctions, columns index retained model functions.
    pub a: DMatrix<f64>,
    pub basis: ComparisonSequence,
    /// `1 - Σ_j a²_{n,j}` per row: mass beyond the retained columns.
    pub tails: Vec<f64>,
    /// Fraction of each model function's `L²` mass outside the `M`-band.
    pub basis_truncation: Vec<f64>,
    /// Model functions projected onto the `M`-band, one per column.
    pub basis_coeffs: Vec<Vec<Complex64>>,
}

/// Coefficients against model functions with `μ_j ≤ 2 λ_max`.
pub fn coefficient_matrix(spectrum: &SteklovSpectrum, domain: &ValidDomain) -> Result<CoefficientMatrix> {
    let lam_max = spectrum.eigenvalues.last().copied().unwrap_or(0.0);
    let arc = domain.arclength();
    let k = domain.num_components();
    let mut count = spectrum.len();
    let basis = loop {
        let c = comparison_sequence(&spectrum.lengths, count)?;
        if c.entries.last().map_or(true, |e| e.value > 2.0 * lam_max) {
            let mut c = c;
            c.entries.retain(|e| e.value <= 2.0 * lam_max.max(f64::MIN_POSITIVE));
            break c;
        }
        count *= 2;
    };
    let m_max = spectrum.m_max;
    let q = pow2_at_least(4 * (2 * m_max + 1));
    let h = 2.0 * PI / q as f64;
    let thetas: Vec<f64> = (0..q).map(|a| a as f64 * h).collect();
    let gw: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            let w = domain.weight(j);
            let rho = domain.circle(j).radius;
            thetas.iter().map(|&t| w.value(t) * rho * h).collect()
        })
        .collect();

    let basis_samples: Vec<Vec<f64>> = basis
        .entries
        .par_iter()
        .map(|e| thetas.iter().map(|&t| model_function(&arc.components[e.component], e, t)).collect())
        .collect();
    let (basis_coeffs, basis_truncation): (Vec<Vec<Complex64>>, Vec<f64>) = basis
        .entries
        .par_iter()
        .zip(&basis_samples)
        .map(|(e, s)| {
            let c = fourier::analyze(s, m_max);
            let rho = domain.circle(e.component).radius;
            // ‖ē‖² in L²(dq) from samples and from the retained modes.
            let full: f64 = s.iter().map(|v| v * v).sum::<f64>() * rho * h;
            let kept: f64 = c.iter().map(|z| z.norm_sqr()).sum::<f64>() * 2.0 * PI * rho;
            (c, ((full - kept) / full).max(0.0))
        })
        .unzip();

    let phi_samples: Vec<Vec<Vec<f64>>> = spectrum
        .eigenfunctions
        .par_iter()
        .map(|f| (0..k).map(|j| f.samples(j, q)).collect())
        .collect();
    let rows = spectrum.len();
    let cols = basis.len();
    let entries: Vec<Vec<f64>> = phi_samples
        .par_iter()
        .map(|phi| {
            basis
                .entries
                .iter()
                .zip(&basis_samples)
                .map(|(e, s)| {
                    let j = e.component;
                    phi[j].iter().zip(s).zip(&gw[j]).map(|((p, b), w)| p * b * w).sum()
                })
                .collect()
        })
        .collect();
    let a = DMatrix::from_fn(rows, cols, |r, c| entries[r][c]);
    let tails = (0..rows).map(|r| 1.0 - a.row(r).norm_squared()).collect();
    Ok(CoefficientMatrix { a, basis, tails, basis_truncation, basis_coeffs })
}

/// One trigonometric term `b₊ cos(2πm s/L) + b₋ sin(2πm s/L)` on a component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrigTerm {
    pub mode: usize,
    pub b_plus: f64,
    pub b_minus: f64,
}

/// `φ_n = ψ_n + f_n` with `ψ_n` in the span of same-cluster model functions.
#[derive(Debug, Clone)]
pub struct QuasimodeDecomposition {
    pub n: usize,
    pub lambda: f64,
    pub cluster: usize,
    /// Trigonometric terms per component; empty when `ψ` vanishes there.
    pub terms: Vec<Vec<TrigTerm>>,
    pub psi: BoundaryDensity,
    pub residual: BoundaryDensity,
    pub psi_norm: f64,
    pub residual_norm: f64,
    /// `‖ψ_n‖_{L²(∂D_j, g dq)}` per component.
    pub psi_component_norms: Vec<f64>,
    pub lengths: Vec<f64>,
}

impl QuasimodeDecomposition {
    /// Terms violating `|λ - 2πm/L_j| ≤ 2π/L`, as `(component, mode)`.
    pub fn frequency_violations(&self) -> Vec<(usize, usize)> {
        let lmax = self.lengths.iter().cloned().fold(0.0, f64::max);
        let mut out = Vec::new();
        for (j, terms) in self.terms.iter().enumerate() {
            for t in terms {
                let mu = 2.0 * PI * t.mode as f64 / self.lengths[j];
                if (self.lambda - mu).abs() > 2.0 * PI / lmax {
                    out.push((j, t.mode));
                }
            }
        }
        out
    }
}

/// `L²(∂D, g dq)` norm of a density.
pub fn weighted_norm(domain: &ValidDomain, f: &BoundaryDensity) -> f64 {
    let q = pow2_at_least(4 * (2 * f.m_max() + 1 + domain.raw().weights.iter().map(|w| w.bandwidth()).max().unwrap_or(0)));
    let h = 2.0 * PI / q as f64;
    let mut acc = 0.0;
    for j in 0..f.num_components() {
        let w = domain.weight(j);
        let rho = domain.circle(j).radius;
        let s = f.samples(j, q);
        acc += s.iter().enumerate().map(|(a, v)| v * v * w.value(a as f64 * h)).sum::<f64>() * rho * h;
    }
    acc.sqrt()
}

fn component_weighted_norm(domain: &ValidDomain, f: &BoundaryDensity, j: usize) -> f64 {
    let mut g = BoundaryDensity::zeros(f.num_components(), f.m_max());
    g.component_mut(j).copy_from_slice(f.component(j));
    weighted_norm(domain, &g)
}

/// Split eigenfunction `n` into its cluster quasimode and residual.
pub fn decompose_eigenfunction(
    spectrum: &SteklovSpectrum,
    domain: &ValidDomain,
    partition: &ClusterPartition,
    coeffs: &CoefficientMatrix,
    n: usize,
) -> Result<QuasimodeDecomposition> {
    if n >= partition.lambda_cluster.len() {
        return Err(Error::InvalidParameter(format!(
            "eigen index {n} is outside the clustered range 0..{}",
            partition.lambda_cluster.len()
        )));
    }
    let k = domain.num_components();
    let m_max = spectrum.m_max;
    let cluster = partition.lambda_cluster[n];
    let mut psi = vec![vec![Complex64::new(0.0, 0.0); 2 * m_max + 1]; k];
    let mut terms: Vec<Vec<TrigTerm>> = vec![Vec::new(); k];
    for (col, e) in coeffs.basis.entries.iter().enumerate() {
        if !partition.equivalent(n, col) {
            continue;
        }
        let a = coeffs.a[(n, col)];
        for (p, b) in psi[e.component].iter_mut().zip(&coeffs.basis_coeffs[col]) {
            *p += b * a;
        }
        let l = spectrum.lengths[e.component];
        let list = &mut terms[e.component];
        let idx = match list.iter().position(|t| t.mode == e.mode) {
            Some(i) => i,
            None => {
                list.push(TrigTerm { mode: e.mode, b_plus: 0.0, b_minus: 0.0 });
                list.len() - 1
            }
        };
        match e.parity {
            Parity::Constant => list[idx].b_plus += a / l.sqrt(),
            Parity::Cos => list[idx].b_plus += a * (2.0 / l).sqrt(),
            Parity::Sin => list[idx].b_minus += a * (2.0 / l).sqrt(),
        }
    }
    if cluster > 0 {
        if let Some(j) = terms.iter().position(|t| t.len() > 1) {
            return Err(Error::ClusterUnderResolved { cluster, component: j });
        }
    }
    for list in &mut terms {
        list.sort_by_key(|t| t.mode);
    }
    let psi = BoundaryDensity::from_complex(m_max, psi);
    let phi = &spectrum.eigenfunctions[n];
    let residual = phi.sub(&psi);
    let psi_component_norms = (0..k).map(|j| component_weighted_norm(domain, &psi, j)).collect();
    Ok(QuasimodeDecomposition {
        n,
        lambda: spectrum.eigenvalues[n],
        cluster,
        terms,
        psi_norm: weighted_norm(domain, &psi),
        residual_norm: weighted_norm(domain, &residual),
        psi,
        residual,
        psi_component_norms,
        lengths: spectrum.lengths.clone(),
    })
}

/// Deviation of one cluster block from an isometry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterDeviation {
    pub cluster: usize,
    pub rows: usize,
    pub cols: usize,
    /// `‖MᵀM - I‖_∞`.
    pub gram_cols: f64,
    /// `‖MMᵀ - I‖_∞`.
    pub gram_rows: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NearOrthogonalityReport {
    pub clusters: Vec<ClusterDeviation>,
    /// Fit of `ln‖MᵀM - I‖_∞` against the cluster index.
    pub fit_cols: FitOutcome,
    pub fit_rows: FitOutcome,
    pub floor: f64,
}

fn inf_norm_minus_identity(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| (m[(r, c)] - if r == c { 1.0 } else { 0.0 }).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Per-cluster isometry defects of the coefficient blocks.
pub fn near_orthogonality_report(coeffs: &CoefficientMatrix, partition: &ClusterPartition) -> NearOrthogonalityReport {
    let floor = 1e-13;
    let clusters: Vec<ClusterDeviation> = (0..partition.len())
        .map(|i| {
            let rows = partition.lambda_members(i);
            let cols: Vec<usize> = partition.mu_members(i).into_iter().filter(|&c| c < coeffs.a.ncols()).collect();
            let m = DMatrix::from_fn(rows.len(), cols.len(), |r, c| coeffs.a[(rows[r], cols[c])]);
            ClusterDeviation {
                cluster: i,
                rows: rows.len(),
                cols: cols.len(),
                gram_cols: inf_norm_minus_identity(&(m.transpose() * &m)),
                gram_rows: inf_norm_minus_identity(&(&m * m.transpose())),
            }
        })
        .collect();
    let xs: Vec<f64> = clusters.iter().map(|c| c.cluster as f64).collect();
    let yc: Vec<f64> = clusters.iter().map(|c| c.gram_cols).collect();
    let yr: Vec<f64> = clusters.iter().map(|c| c.gram_rows).collect();
    NearOrthogonalityReport {
        fit_cols: fit_exponential_outcome(&xs, &yc, floor),
        fit_rows: fit_exponential_outcome(&xs, &yr, floor),
        clusters,
        floor,
    }
}

/// One decomposed eigenfunction in a residual sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub n: usize,
    pub lambda: f64,
    pub cluster: usize,
    pub residual_norm: f64,
    /// Component carrying the largest share of `ψ_n`.
    pub dominant: usize,
}

/// Decay of `‖f_n‖` over the clustered tail of a spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualDecay {
    pub rows: Vec<ResidualRow>,
    /// `100 ·` the largest eigen-solve residual among the rows.
    pub floor: f64,
    /// Fit of `ln‖f_n‖` against `λ_n` over all rows.
    pub pooled: FitOutcome,
    /// Fit of the tail supremum `sup_{n' ≥ n} ‖f_{n'}‖` against `λ_n`.
    pub envelope: FitOutcome,
    /// Fits restricted to rows whose dominant component is `j`.
    pub families: Vec<FitOutcome>,
    /// Terms breaking `|λ - 2πm/L_j| ≤ 2π/L`, as `(n, component, mode)`.
    pub frequency_violations: Vec<(usize, usize, usize)>,
}

/// Decompose every eigenfunction outside the initial cluster and fit the decay
/// of the residual norms.
///
/// The initial cluster collects the low part of the spectrum where the
/// single-mode structure does not yet hold, so it is left out.
pub fn residual_decay(
    spectrum: &SteklovSpectrum,
    domain: &ValidDomain,
    partition: &ClusterPartition,
    coeffs: &CoefficientMatrix,
) -> Result<ResidualDecay> {
    let k = domain.num_components();
    let decs: Vec<QuasimodeDecomposition> = (0..partition.lambda_cluster.len())
        .into_par_iter()
        .filter(|&n| partition.lambda_cluster[n] > 0)
        .map(|n| decompose_eigenfunction(spectrum, domain, partition, coeffs, n))
        .collect::<Result<_>>()?;
    let mut frequency_violations = Vec::new();
    let rows: Vec<ResidualRow> = decs
        .iter()
        .map(|d| {
            frequency_violations.extend(d.frequency_violations().into_iter().map(|(j, m)| (d.n, j, m)));
            let dominant = (0..k)
                .max_by(|&a, &b| d.psi_component_norms[a].total_cmp(&d.psi_component_norms[b]))
                .unwrap_or(0);
            ResidualRow { n: d.n, lambda: d.lambda, cluster: d.cluster, residual_norm: d.residual_norm, dominant }
        })
        .collect();
    let floor = 100.0 * rows.iter().map(|r| spectrum.residuals[r.n]).fold(0.0, f64::max);
    let xs: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.residual_norm).collect();
    let mut env = ys.clone();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let families = (0..k)
        .map(|j| {
            let (fx, fy): (Vec<f64>, Vec<f64>) =
                rows.iter().filter(|r| r.dominant == j).map(|r| (r.lambda, r.residual_norm)).unzip();
            fit_exponential_outcome(&fx, &fy, floor)
        })
        .collect();
    Ok(ResidualDecay {
        pooled: fit_exponential_outcome(&xs, &ys, floor),
        envelope: fit_exponential_outcome(&xs, &env, floor),
        families,
        rows,
        floor,
        frequency_violations,
    })
}

/// Defect `‖A e - μ B e‖ / ‖B e‖` of the model mode `e = e^{2πims_j/L_j}` on
/// component `j`, with `μ = 2πm/L_j`, in eigenvalue units.
pub fn quasimode_defect(system: &EigenSystem, domain: &ValidDomain, m: usize, j: usize) -> Result<f64> {
    if 2 * m > system.m_max {
        return Err(Error::ModeOutOfRange { mode: m, limit: system.m_max / 2 });
    }
    if j >= system.components {
        return Err(Error::InvalidParameter(format!("component {j} does not exist")));
    }
    let arc = ComponentArclength::new(domain.circle(j).radius, domain.weight(j).clone());
    let mu_s = 2.0 * PI * m as f64 / arc.length / system.scale;
    let parts: Vec<Parity> = if m == 0 { vec![Parity::Constant] } else { vec![Parity::Cos, Parity::Sin] };
    let mut num = 0.0;
    let mut den = 0.0;
    for parity in parts {
        let entry = ComparisonEntry { value: 0.0, component: j, mode: m, parity };
        let e = BoundaryDensity::from_fn(system.components, system.m_max, |c, t| {
            if c == j {
                model_function(&arc, &entry, t)
            } else {
                0.0
            }
        });
        let x = DVector::from_vec(e.to_real());
        let bx = &system.b * &x;
        let r = &system.a * &x - &bx * mu_s;
        num += system.norm(&r).powi(2);
        den += system.norm(&bx).powi(2);
    }
    Ok(system.scale * (num / den).sqrt())
}

/// Defects for several modes on one component.
pub fn defect_scan(system: &EigenSystem, domain: &ValidDomain, j: usize, modes: &[usize]) -> Result<Vec<(usize, f64)>> {
    modes.par_iter().map(|&m| quasimode_defect(system, domain, m, j).map(|d| (m, d))).collect()
}

/// Constants entering the dominance threshold `e^{-δλ/3}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateConstants {
    pub tau: f64,
    /// `Γ_j = min_θ s_j'(θ)`.
    pub gamma: Vec<f64>,
    /// `N_j = max over the strip |Im τ| < τ of |∂_θ³ Im s_j(θ + iξ)|`.
    pub cubic: Vec<f64>,
    /// `min_j {Γ_j τ/2 - N_j τ³, τ/2}`.
    pub delta: f64,
    /// True when `τ` was halved from the requested value to make `δ` positive.
    pub tau_reduced: bool,
    /// Residual decay rate fitted from a decomposition sweep, when available.
    pub fitted_residual_rate: Option<f64>,
}

/// Default collar width: `min(0.2, half the minimal gap)`.
pub fn default_collar_width(domain: &ValidDomain) -> f64 {
    0.2f64.min(0.5 * domain.minimal_gap())
}

/// Compute `δ(τ)`, halving `τ` until it is positive.
pub fn rate_constants(domain: &ValidDomain, tau: f64) -> Result<RateConstants> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter("τ must be positive".into()));
    }
    let arc = domain.arclength();
    let gamma: Vec<f64> = arc.components.iter().map(|c| c.gamma()).collect();
    let mut t = tau;
    for _ in 0..60 {
        let cubic: Vec<f64> = (0..domain.num_components())
            .map(|j| strip_cubic_bound(domain.circle(j).radius, domain.weight(j), t))
            .collect();
        let delta = gamma
            .iter()
            .zip(&cubic)
            .map(|(g, n)| g * t / 2.0 - n * t.powi(3))
            .fold(t / 2.0, f64::min);
        if delta > 0.0 {
            return Ok(RateConstants {
                tau: t,
                gamma,
                cubic,
                delta,
                tau_reduced: t < tau,
                fitted_residual_rate: None,
            });
        }
        t /= 2.0;
    }
    Err(Error::InvalidParameter("no τ gives a positive δ".into()))
}

fn strip_cubic_bound(rho: f64, w: &crate::geometry::WeightSeries, tau: f64) -> f64 {
    if w.bandwidth() == 0 {
        return 0.0;
    }
    let nt = (64 * w.bandwidth()).max(256);
    let nx = 17;
    let mut best: f64 = 0.0;
    for a in 0..nt {
        let th = 2.0 * PI * a as f64 / nt as f64;
        for b in 0..nx {
            let xi = -tau + 2.0 * tau * b as f64 / (nx - 1) as f64;
            let g2 = w.complex_derivatives(Complex64::new(th, xi))[2];
            best = best.max((rho * g2.im).abs());
        }
    }
    best
}

/// Quintic smoothstep cutoff: 1 for `d ≤ w/2`, 0 for `d ≥ w`. Returns value and derivative.
pub fn collar_cutoff(d: f64, width: f64) -> (f64, f64) {
    let half = width / 2.0;
    if d <= half {
        return (1.0, 0.0);
    }
    if d >= width {
        return (0.0, 0.0);
    }
    let t = (d - half) / half;
    let s = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let ds = 30.0 * t * t * (1.0 - t) * (1.0 - t) / half;
    (1.0 - s, -ds)
}

/// Interior extension `ū_n = Σ_j χ_j ū_{n,j}` of a boundary quasimode.
#[derive(Debug, Clone)]
pub struct InteriorQuasimode {
    circles: Vec<Circle>,
    orientation: Vec<f64>,
    arc: ArclengthMap,
    terms: Vec<Vec<TrigTerm>>,
    width: f64,
}

impl InteriorQuasimode {
    pub fn new(domain: &ValidDomain, decomposition: &QuasimodeDecomposition, collar_width: f64) -> Self {
        Self::from_terms(domain, decomposition.terms.clone(), collar_width)
    }

    pub fn from_terms(domain: &ValidDomain, terms: Vec<Vec<TrigTerm>>, collar_width: f64) -> Self {
        Self {
            circles: domain.circles(),
            orientation: (0..domain.num_components()).map(|j| domain.orientation(j)).collect(),
            arc: domain.arclength(),
            terms,
            width: collar_width,
        }
    }

    pub fn collar_width(&self) -> f64 {
        self.width
    }

    /// `ū_{n,j}` and its gradient at `p`, which must lie in the collar of component `j`.
    pub fn component_eval(&self, j: usize, p: Point) -> Result<(f64, [f64; 2])> {
        let c = &self.circles[j];
        let dx = p[0] - c.center[0];
        let dy = p[1] - c.center[1];
        let r = dx.hypot(dy);
        let d = (r - c.radius).abs();
        if d > self.width {
            return Err(Error::OutsideCollar { component: j, distance: d, width: self.width });
        }
        let (chi, dchi) = collar_cutoff(d, self.width);
        if chi == 0.0 {
            return Ok((0.0, [0.0, 0.0]));
        }
        let arc = &self.arc.components[j];
        let z = Complex64::new(dy.atan2(dx), (c.radius / r).ln());
        let s = arc.s_complex(z);
        let ds = arc.weight.complex_derivatives(z)[0] * c.radius;
        // dz/dx for z = -i log((x - c)/ρ), as a complex derivative.
        let dz = Complex64::new(0.0, -1.0) / Complex64::new(dx, dy);
        let sign = if self.orientation[j] > 0.0 { 1.0 } else { -1.0 };
        let mut val = 0.0;
        let mut grad = [0.0, 0.0];
        for t in &self.terms[j] {
            let kappa = 2.0 * PI * t.mode as f64 / arc.length;
            let e = (Complex64::new(0.0, sign * kappa) * s).exp();
            let de = e * Complex64::new(0.0, sign * kappa) * ds * dz;
            let bm = sign * t.b_minus;
            val += t.b_plus * e.re + bm * e.im;
            // For holomorphic F: ∇Re F = (Re F', -Im F'), ∇Im F = (Im F', Re F').
            grad[0] += t.b_plus * de.re + bm * de.im;
            grad[1] += -t.b_plus * de.im + bm * de.re;
        }
        let sd = if r >= c.radius { 1.0 } else { -1.0 };
        let dd = [sd * dx / r, sd * dy / r];
        Ok((chi * val, [chi * grad[0] + dchi * dd[0] * val, chi * grad[1] + dchi * dd[1] * val]))
    }

    /// Sum over the collars containing `p`; zero outside every collar.
    pub fn eval(&self, p: Point) -> (f64, [f64; 2]) {
        let mut v = 0.0;
        let mut g = [0.0, 0.0];
        for j in 0..self.circles.len() {
            if let Ok((a, b)) = self.component_eval(j, p) {
                v += a;
                g[0] += b[0];
                g[1] += b[1];
            }
        }
        (v, g)
    }
}

impl ScalarField for InteriorQuasimode {
    fn value(&self, p: Point) -> Result<f64> {
        Ok(self.eval(p).0)
    }

    fn gradient(&self, p: Point) -> Result<[f64; 2]> {
        Ok(self.eval(p).1)
    }
}

/// `ū_{n,j}(x)` for a point in the collar of component `j`.
pub fn interior_quasimode_eval(
    decomposition: &QuasimodeDecomposition,
    domain: &ValidDomain,
    collar_width: f64,
    j: usize,
    p: Point,
) -> Result<f64> {
    Ok(InteriorQuasimode::new(domain, decomposition, collar_width).component_eval(j, p)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dtn_solver::{assemble_eigensystem, solve_spectrum};
    use crate::geometry::{validate_domain, KoebeDomain, WeightSeries};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn isolated_points() {
        let v = [0.0, 1.0, 1.0, 2.0, 2.0];
        let p = cluster_spectrum(&v, &v, 0.1, 1, 2.0 * PI).unwrap();
        assert_eq!(p.len(), 3);
        assert_eq!(p.lambda_cluster, vec![0, 1, 1, 2, 2]);
    }

    #[test]
    fn perturbed_points() {
        let l = [0.0, 0.999, 1.001, 1.998];
        let m = [0.0, 1.0, 1.0, 2.0];
        let p = cluster_spectrum(&l, &m, 0.1, 1, 2.0 * PI).unwrap();
        assert_eq!(p.lambda_cluster, vec![0, 1, 1, 2]);
        assert_eq!(p.mu_cluster, vec![0, 1, 1, 2]);
    }

    #[test]
    fn rejects_large_eps() {
        let v = [0.0, 1.0, 1.0];
        assert!(cluster_spectrum(&v, &v, 0.3, 1, 2.0 * PI).is_err());
    }

    #[test]
    fn cutoff_is_smooth_bump() {
        assert_eq!(collar_cutoff(0.05, 0.2).0, 1.0);
        assert_eq!(collar_cutoff(0.25, 0.2).0, 0.0);
        let (v, _) = collar_cutoff(0.15, 0.2);
        assert_relative_eq!(v, 0.5, epsilon = 1e-15);
        let h = 1e-7;
        let fd = (collar_cutoff(0.13 + h, 0.2).0 - collar_cutoff(0.13 - h, 0.2).0) / (2.0 * h);
        assert_relative_eq!(collar_cutoff(0.13, 0.2).1, fd, epsilon = 1e-6);
    }

    #[test]
    fn disk_quasimode_is_harmonic_polynomial() {
        let d = validate_domain(KoebeDomain::disk(1.0)).unwrap();
        let q = InteriorQuasimode::from_terms(&d, vec![vec![TrigTerm { mode: 3, b_plus: 0.7, b_minus: -0.2 }]], 0.2);
        let (r, t) = (0.93f64, 1.1f64);
        let v = q.component_eval(0, [r * t.cos(), r * t.sin()]).unwrap().0;
        let want = r.powi(3) * (0.7 * (3.0 * t).cos() - 0.2 * (3.0 * t).sin());
        assert_relative_eq!(v, want, epsilon = 1e-14);
        assert!(matches!(q.component_eval(0, [0.5, 0.0]), Err(Error::OutsideCollar { .. })));
    }

    #[test]
    fn annulus_quasimode_depth_decay() {
        let d = validate_domain(KoebeDomain::annulus(0.5)).unwrap();
        let q = InteriorQuasimode::from_terms(
            &d,
            vec![vec![TrigTerm { mode: 6, b_plus: 1.0, b_minus: 0.0 }], vec![]],
            0.2,
        );
        // Depth ξ = 0.1 in the strip coordinate is radius e^{-0.1}.
        let v = q.component_eval(0, [(-0.1f64).exp(), 0.0]).unwrap().0;
        assert!((v / (-0.6f64).exp() - 1.0).abs() < 0.2);
        let inner = InteriorQuasimode::from_terms(
            &d,
            vec![vec![], vec![TrigTerm { mode: 2, b_plus: 0.0, b_minus: 1.0 }]],
            0.2,
        );
        let (r, t) = (0.55f64, 0.4f64);
        let v = inner.component_eval(1, [r * t.cos(), r * t.sin()]).unwrap().0;
        assert_relative_eq!(v, (0.5 / r).powi(2) * (2.0 * t).sin(), epsilon = 1e-14);
    }

    #[test]
    fn quasimode_gradient_matches_differences() {
        let dom = KoebeDomain::disk(1.0).with_weights(vec![WeightSeries::cosine_bump(0.4)]);
        let d = validate_domain(dom).unwrap();
        let q = InteriorQuasimode::from_terms(&d, vec![vec![TrigTerm { mode: 4, b_plus: 0.3, b_minus: 0.8 }]], 0.2);
        let h = 1e-6;
        for p in [[0.85, 0.1], [-0.3, 0.8], [0.0, -0.88]] {
            let (_, g) = q.eval(p);
            let fx = (q.eval([p[0] + h, p[1]]).0 - q.eval([p[0] - h, p[1]]).0) / (2.0 * h);
            let fy = (q.eval([p[0], p[1] + h]).0 - q.eval([p[0], p[1] - h]).0) / (2.0 * h);
            assert!((g[0] - fx).abs() < 1e-6 * (1.0 + fx.abs()), "{g:?} {fx}");
            assert!((g[1] - fy).abs() < 1e-6 * (1.0 + fy.abs()), "{g:?} {fy}");
        }
    }

    #[test]
    fn disk_decomposition_is_exact() {
        let d = validate_domain(KoebeDomain::disk(1.0)).unwrap();
        let s = solve_spectrum(&d, 64, 20).unwrap();
        let (p, _) = cluster_computed_spectrum(&s, None).unwrap();
        let c = coefficient_matrix(&s, &d).unwrap();
        for n in 0..p.lambda_cluster.len() {
            let dec = decompose_eigenfunction(&s, &d, &p, &c, n).unwrap();
            assert!(dec.residual_norm < 1e-8);
            assert!((dec.psi_norm.powi(2) + dec.residual_norm.powi(2) - 1.0).abs() < 1e-10);
            assert!(dec.frequency_violations().is_empty());
        }
        let r = near_orthogonality_report(&c, &p);
        assert!(r.clusters.iter().all(|c| c.gram_cols < 1e-8 && c.gram_rows < 1e-8));
    }

    #[test]
    fn annulus_defect_matches_mode_oracle() {
        use crate::annulus_oracle::annulus_mode_layers;
        use nalgebra::{Matrix2, Vector2};
        let d = validate_domain(KoebeDomain::annulus(0.5)).unwrap();
        let sys = assemble_eigensystem(&d, 32).unwrap();
        for m in [1usize, 4, 8] {
            let got = quasimode_defect(&sys, &d, m, 0).unwrap();
            let (s, n) = annulus_mode_layers(0.5, 0.5, m).unwrap();
            let a = (Matrix2::identity() - n) * 0.5;
            let e = Vector2::new(1.0, 0.0);
            let mu = m as f64 / 0.5;
            let r = a * e - s * e * mu;
            let b = s * e;
            let w = Vector2::new(PI * 0.5, PI * 0.25);
            let nr = (w[0] * r[0] * r[0] + w[1] * r[1] * r[1]).sqrt();
            let nb = (w[0] * b[0] * b[0] + w[1] * b[1] * b[1]).sqrt();
            assert_relative_eq!(got, 0.5 * nr / nb, max_relative = 1e-9);
        }
    }

    proptest! {
        #[test]
        fn partition_properties(gaps in proptest::collection::vec(0.0f64..0.4, 3..40), noise in proptest::collection::vec(-0.02f64..0.02, 40)) {
            let mut mus = vec![0.0];
            for g in &gaps {
                let last = *mus.last().unwrap();
                mus.push(last + g);
            }
            let lambdas: Vec<f64> = mus.iter().zip(&noise).map(|(m, e)| if *m == 0.0 { 0.0 } else { m + e }).collect();
            let mut lambdas = lambdas;
            lambdas.sort_by(f64::total_cmp);
            let eps = 0.9 * PI / (2.0 * 2.0 * PI);
            if let Ok(p) = cluster_spectrum(&lambdas, &mus, eps, 1, PI) {
                for w in p.intervals.windows(2) {
                    prop_assert!(w[1].lo >= w[0].hi + eps - 1e-12);
                }
                for (n, &i) in p.lambda_cluster.iter().enumerate() {
                    prop_assert!(p.intervals[i].contains(lambdas[n]));
                }
                for i in 0..p.len() {
                    prop_assert!(!p.lambda_members(i).is_empty());
                    prop_assert!(!p.mu_members(i).is_empty());
                }
            }
        }
    }
}
