//! Single- and double-layer operators on unions of circles.
//!
//! With `G(x, y) = -(1/2π) ln|x - y|` and `ν` the outward normal of the
//! domain (pointing into each hole on inner circles):
//!
//! * `S f(x) = ∫ G(x, q) f(q) dq`
//! * `N f(x) = -2 ∫ ∂_ν' G(x, q) f(q) dq`
//! * `Sl f(x)` and `Dl f(x) = -∫ ∂_ν' G(x, q) f(q) dq` are the potentials off the boundary.
//!
//! Operators act on Fourier coefficients per circle. Self-interaction blocks
//! are diagonal in closed form; cross blocks are smooth and computed by a
//! two-dimensional FFT of kernel samples, doubling the node count until the
//! retained entries stop changing.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourier::{self, pow2_at_least};
use crate::geometry::{Circle, Point, ValidDomain};

/// Largest node count tried for a cross block before giving up.
pub const MAX_BLOCK_NODES: usize = 16384;
/// Entry change tolerated between successive node doublings.
pub const BLOCK_TOLERANCE: f64 = 1e-10;

/// A boundary function stored as complex Fourier modes `-M..=M` per circle.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryDensity {
    m_max: usize,
    coeffs: Vec<Vec<Complex64>>,
}

impl BoundaryDensity {
    pub fn zeros(components: usize, m_max: usize) -> Self {
        Self { m_max, coeffs: vec![vec![Complex64::new(0.0, 0.0); 2 * m_max + 1]; components] }
    }

    /// Build from the stacked real cos/sin layout (see [`crate::fourier`]).
    pub fn from_real(components: usize, m_max: usize, real: &[f64]) -> Self {
        let b = 2 * m_max + 1;
        assert_eq!(real.len(), components * b);
        let coeffs = (0..components).map(|j| fourier::real_to_complex(&real[j * b..(j + 1) * b])).collect();
        Self { m_max, coeffs }
    }

    /// Project `f(j, θ)` onto modes `-M..=M` of each circle.
    pub fn from_fn(components: usize, m_max: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let q = pow2_at_least(4 * (2 * m_max + 1));
        let coeffs = (0..components)
            .map(|j| {
                let s: Vec<f64> = (0..q).map(|a| f(j, 2.0 * PI * a as f64 / q as f64)).collect();
                fourier::analyze(&s, m_max)
            })
            .collect();
        Self { m_max, coeffs }
    }

    pub fn from_complex(m_max: usize, coeffs: Vec<Vec<Complex64>>) -> Self {
        assert!(coeffs.iter().all(|c| c.len() == 2 * m_max + 1));
        Self { m_max, coeffs }
    }

    pub fn to_real(&self) -> Vec<f64> {
        self.coeffs.iter().flat_map(|c| fourier::complex_to_real(c)).collect()
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn num_components(&self) -> usize {
        self.coeffs.len()
    }

    pub fn component(&self, j: usize) -> &[Complex64] {
        &self.coeffs[j]
    }

    pub fn component_mut(&mut self, j: usize) -> &mut [Complex64] {
        &mut self.coeffs[j]
    }

    /// Complex mode `m` on circle `j`.
    pub fn mode(&self, j: usize, m: i64) -> Complex64 {
        self.coeffs[j][(m + self.m_max as i64) as usize]
    }

    pub fn value(&self, j: usize, theta: f64) -> f64 {
        let m = self.m_max as i64;
        let mut acc = 0.0;
        for (idx, c) in self.coeffs[j].iter().enumerate() {
            let k = idx as i64 - m;
            let (s, co) = (k as f64 * theta).sin_cos();
            acc += c.re * co - c.im * s;
        }
        acc
    }

    /// Values on `q` equispaced nodes of circle `j`, starting at `θ = 0`.
    pub fn samples(&self, j: usize, q: usize) -> Vec<f64> {
        fourier::synthesize(&self.coeffs[j], q)
    }

    /// Same function on a different band, truncating or zero-padding.
    pub fn with_m_max(&self, m_max: usize) -> BoundaryDensity {
        let old = self.m_max as i64;
        let coeffs = self
            .coeffs
            .iter()
            .map(|c| {
                (-(m_max as i64)..=m_max as i64)
                    .map(|m| if m.abs() <= old { c[(m + old) as usize] } else { Complex64::new(0.0, 0.0) })
                    .collect()
            })
            .collect();
        BoundaryDensity { m_max, coeffs }
    }

    pub fn scaled(&self, factor: f64) -> BoundaryDensity {
        BoundaryDensity {
            m_max: self.m_max,
            coeffs: self.coeffs.iter().map(|c| c.iter().map(|z| z * factor).collect()).collect(),
        }
    }

    pub fn sub(&self, other: &BoundaryDensity) -> BoundaryDensity {
        assert_eq!(self.m_max, other.m_max);
        BoundaryDensity {
            m_max: self.m_max,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
                .collect(),
        }
    }

    /// `(∫_{∂D_j} f² dq)^{1/2}` on circle `j` of the given radius.
    pub fn component_l2(&self, j: usize, radius: f64) -> f64 {
        let s: f64 = self.coeffs[j].iter().map(|c| c.norm_sqr()).sum();
        (2.0 * PI * radius * s).sqrt()
    }
}

/// Which operator a matrix represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OperatorKind {
    SingleLayer,
    DoubleLayer,
    Weight,
}

/// Node count used for one block and the entry change seen at the last doubling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockQuadrature {
    pub row: usize,
    pub col: usize,
    pub nodes: usize,
    pub change: f64,
}

/// A boundary operator in the stacked real cos/sin basis.
#[derive(Debug, Clone)]
pub struct BoundaryOperatorMatrix {
    pub kind: OperatorKind,
    pub m_max: usize,
    pub components: usize,
    pub domain_hash: String,
    pub matrix: DMatrix<f64>,
    pub quadrature: Vec<BlockQuadrature>,
}

impl BoundaryOperatorMatrix {
    pub fn apply(&self, f: &BoundaryDensity) -> BoundaryDensity {
        assert_eq!(f.m_max(), self.m_max);
        let v = &self.matrix * DVector::from_vec(f.to_real());
        BoundaryDensity::from_real(self.components, self.m_max, v.as_slice())
    }

    /// Largest entry change among the cross blocks.
    pub fn max_quadrature_change(&self) -> f64 {
        self.quadrature.iter().map(|q| q.change).fold(0.0, f64::max)
    }
}

/// Diagonal of the `L²(dq)` Gram matrix of the real basis on circles of the given radii:
/// `2πρ` for constants and `πρ` for each cosine or sine.
pub fn gram_diagonal(radii: &[f64], m_max: usize) -> DVector<f64> {
    let b = 2 * m_max + 1;
    DVector::from_fn(radii.len() * b, |i, _| {
        let rho = radii[i / b];
        if i % b == 0 {
            2.0 * PI * rho
        } else {
            PI * rho
        }
    })
}

/// Real-layout matrix of a complex mode-to-mode operator between two circles.
pub(crate) fn complex_block_to_real(t: &DMatrix<Complex64>, m_max: usize) -> DMatrix<f64> {
    let b = 2 * m_max + 1;
    let mut out = DMatrix::zeros(b, b);
    let col = |n: i64| t.column((n + m_max as i64) as usize).into_owned();
    let half = Complex64::new(0.5, 0.0);
    let ihalf = Complex64::new(0.0, 0.5);
    for c in 0..b {
        let d: DVector<Complex64> = if c == 0 {
            col(0)
        } else {
            let n = c.div_ceil(2) as i64;
            if c % 2 == 1 {
                (col(n) + col(-n)) * half
            } else {
                (col(-n) - col(n)) * ihalf
            }
        };
        let real = fourier::complex_to_real(d.as_slice());
        out.column_mut(c).copy_from_slice(&real);
    }
    out
}

/// Multiplier of the logarithmic single layer on a circle of perimeter `L`
/// acting on mode `m`: `L/(4π|m|)`, and 0 on constants.
pub fn circle_log_multiplier(m: i64, perimeter: f64) -> f64 {
    if m == 0 {
        0.0
    } else {
        perimeter / (4.0 * PI * m.unsigned_abs() as f64)
    }
}

fn diagonal_single_layer(rho: f64, m_max: usize) -> DMatrix<f64> {
    let b = 2 * m_max + 1;
    let perimeter = 2.0 * PI * rho;
    DMatrix::from_fn(b, b, |r, c| {
        if r != c {
            0.0
        } else if r == 0 {
            -rho * rho.ln()
        } else {
            circle_log_multiplier(r.div_ceil(2) as i64, perimeter)
        }
    })
}

fn diagonal_double_layer(orientation: f64, m_max: usize) -> DMatrix<f64> {
    let b = 2 * m_max + 1;
    let mut out = DMatrix::zeros(b, b);
    out[(0, 0)] = orientation;
    out
}

/// Retained modes `-M..=M` of the cross block with `q` nodes per circle.
fn fft_block(kernel: &(dyn Fn(f64, f64) -> f64 + Sync), m_max: usize, q: usize) -> DMatrix<Complex64> {
    let b = 2 * m_max + 1;
    let h = 2.0 * PI / q as f64;
    let fwd = fourier::forward_plan(q);
    // Row transforms over θ', keeping e^{+inθ'} for n = -M..=M.
    let rows: Vec<Vec<Complex64>> = (0..q)
        .into_par_iter()
        .map(|a| {
            let th = a as f64 * h;
            let mut buf: Vec<Complex64> =
                (0..q).map(|bb| Complex64::new(kernel(th, bb as f64 * h), 0.0)).collect();
            fwd.process(&mut buf);
            (-(m_max as i64)..=m_max as i64)
                .map(|n| buf[(-n).rem_euclid(q as i64) as usize])
                .collect()
        })
        .collect();
    let cols: Vec<Vec<Complex64>> = (0..b)
        .into_par_iter()
        .map(|ni| {
            let mut buf: Vec<Complex64> = rows.iter().map(|r| r[ni]).collect();
            fwd.process(&mut buf);
            let scale = 2.0 * PI / (q as f64 * q as f64);
            (-(m_max as i64)..=m_max as i64)
                .map(|m| buf[m.rem_euclid(q as i64) as usize] * scale)
                .collect()
        })
        .collect();
    DMatrix::from_fn(b, b, |r, c| cols[c][r])
}

fn converged_block(
    kernel: &(dyn Fn(f64, f64) -> f64 + Sync),
    m_max: usize,
    row: usize,
    col: usize,
) -> Result<(DMatrix<Complex64>, BlockQuadrature)> {
    let mut q = pow2_at_least((4 * m_max).max(64));
    let mut prev = fft_block(kernel, m_max, q);
    loop {
        let next_q = 2 * q;
        let next = fft_block(kernel, m_max, next_q);
        let change = (&next - &prev).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if change <= BLOCK_TOLERANCE {
            return Ok((next, BlockQuadrature { row, col, nodes: next_q, change }));
        }
        if next_q >= MAX_BLOCK_NODES {
            return Err(Error::QuadratureNotConverged { row, col, change });
        }
        q = next_q;
        prev = next;
    }
}

fn single_layer_kernel(target: Circle, source: Circle) -> impl Fn(f64, f64) -> f64 + Sync {
    move |t, tp| {
        let x = target.point(t);
        let y = source.point(tp);
        -(0.5 / PI) * (x[0] - y[0]).hypot(x[1] - y[1]).ln() * source.radius
    }
}

fn double_layer_kernel(target: Circle, source: Circle, orientation: f64) -> impl Fn(f64, f64) -> f64 + Sync {
    move |t, tp| {
        let x = target.point(t);
        let (s, c) = tp.sin_cos();
        let y = [source.center[0] + source.radius * c, source.center[1] + source.radius * s];
        let d = [y[0] - x[0], y[1] - x[1]];
        let dot = orientation * (d[0] * c + d[1] * s);
        (1.0 / PI) * dot / (d[0] * d[0] + d[1] * d[1]) * source.radius
    }
}

fn assemble(
    domain: &ValidDomain,
    m_max: usize,
    kind: OperatorKind,
) -> Result<BoundaryOperatorMatrix> {
    if m_max == 0 {
        return Err(Error::InvalidParameter("mode cutoff must be positive".into()));
    }
    let circles = domain.scaled_circles();
    let k = circles.len();
    let b = 2 * m_max + 1;
    let mut matrix = DMatrix::zeros(k * b, k * b);
    let mut quadrature = Vec::new();
    for i in 0..k {
        for j in 0..k {
            let block = if i == j {
                match kind {
                    OperatorKind::SingleLayer => diagonal_single_layer(circles[i].radius, m_max),
                    _ => diagonal_double_layer(domain.orientation(i), m_max),
                }
            } else {
                let (t, info) = match kind {
                    OperatorKind::SingleLayer => {
                        converged_block(&single_layer_kernel(circles[i], circles[j]), m_max, i, j)?
                    }
                    _ => converged_block(
                        &double_layer_kernel(circles[i], circles[j], domain.orientation(j)),
                        m_max,
                        i,
                        j,
                    )?,
                };
                quadrature.push(info);
                complex_block_to_real(&t, m_max)
            };
            matrix.view_mut((i * b, j * b), (b, b)).copy_from(&block);
        }
    }
    Ok(BoundaryOperatorMatrix { kind, m_max, components: k, domain_hash: domain.hash(), matrix, quadrature })
}

/// `S` on the scaled geometry.
pub fn assemble_single_layer(domain: &ValidDomain, m_max: usize) -> Result<BoundaryOperatorMatrix> {
    assemble(domain, m_max, OperatorKind::SingleLayer)
}

/// `N` on the scaled geometry.
pub fn assemble_double_layer(domain: &ValidDomain, m_max: usize) -> Result<BoundaryOperatorMatrix> {
    assemble(domain, m_max, OperatorKind::DoubleLayer)
}

/// Multiplication by the conformal weight, block diagonal.
pub fn assemble_weight(domain: &ValidDomain, m_max: usize) -> BoundaryOperatorMatrix {
    let k = domain.num_components();
    let b = 2 * m_max + 1;
    let mut matrix = DMatrix::zeros(k * b, k * b);
    for j in 0..k {
        let w = domain.weight(j);
        let t = DMatrix::from_fn(b, b, |r, c| w.complex_mode(r as i64 - c as i64));
        let block = complex_block_to_real(&t, m_max);
        matrix.view_mut((j * b, j * b), (b, b)).copy_from(&block);
    }
    BoundaryOperatorMatrix {
        kind: OperatorKind::Weight,
        m_max,
        components: k,
        domain_hash: domain.hash(),
        matrix,
        quadrature: vec![],
    }
}

/// Which potential to evaluate off the boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    Single,
    Double,
}

/// Evaluates `Sl f` and `Dl f` on the unscaled geometry by the periodic
/// trapezoid rule, with the node count chosen from the distance to the boundary.
#[derive(Debug, Clone)]
pub struct LayerEvaluator {
    circles: Vec<Circle>,
    orientation: Vec<f64>,
    density: BoundaryDensity,
    floor: f64,
    /// Node counts and per-circle samples, coarsest first.
    levels: Vec<(usize, Vec<Vec<f64>>)>,
}

impl LayerEvaluator {
    /// Default floor is `1e-3` times the outer radius.
    pub fn new(domain: &ValidDomain, density: &BoundaryDensity) -> Self {
        Self::with_floor(domain, density, 1e-3 * domain.circle(0).radius)
    }

    pub fn with_floor(domain: &ValidDomain, density: &BoundaryDensity, floor: f64) -> Self {
        let circles = domain.circles();
        let orientation = (0..circles.len()).map(|j| domain.orientation(j)).collect();
        let rho_max = circles.iter().map(|c| c.radius).fold(0.0, f64::max);
        let base = pow2_at_least((4 * density.m_max() + 4).max(64));
        let top = pow2_at_least(nodes_for(rho_max, floor, density.m_max())).max(base);
        let mut levels = Vec::new();
        let mut q = base;
        while q <= top {
            let samples = (0..circles.len()).map(|j| density.samples(j, q)).collect();
            levels.push((q, samples));
            q *= 2;
        }
        Self { circles, orientation, density: density.clone(), floor, levels }
    }

    pub fn density(&self) -> &BoundaryDensity {
        &self.density
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    fn level(&self, rho: f64, d: f64) -> &(usize, Vec<Vec<f64>>) {
        let need = nodes_for(rho, d, self.density.m_max());
        self.levels.iter().find(|(q, _)| *q >= need).unwrap_or_else(|| self.levels.last().unwrap())
    }

    fn check(&self, p: Point) -> Result<()> {
        let d = self
            .circles
            .iter()
            .map(|c| ((p[0] - c.center[0]).hypot(p[1] - c.center[1]) - c.radius).abs())
            .fold(f64::INFINITY, f64::min);
        if d < self.floor {
            Err(Error::TooCloseToBoundary { distance: d, floor: self.floor })
        } else {
            Ok(())
        }
    }

    /// Potential value and gradient at `p`.
    pub fn evaluate(&self, kind: PotentialKind, p: Point) -> Result<(f64, [f64; 2])> {
        self.check(p)?;
        let mut val = 0.0;
        let mut grad = [0.0, 0.0];
        for (j, c) in self.circles.iter().enumerate() {
            let d = ((p[0] - c.center[0]).hypot(p[1] - c.center[1]) - c.radius).abs();
            let (q, samples) = self.level(c.radius, d);
            let h = 2.0 * PI / *q as f64;
            let w = c.radius * h / (2.0 * PI);
            let sig = self.orientation[j];
            for (a, &f) in samples[j].iter().enumerate() {
                let (s, co) = (a as f64 * h).sin_cos();
                let r = [p[0] - c.center[0] - c.radius * co, p[1] - c.center[1] - c.radius * s];
                let r2 = r[0] * r[0] + r[1] * r[1];
                match kind {
                    PotentialKind::Single => {
                        val += -0.5 * r2.ln() * f * w;
                        grad[0] += -r[0] / r2 * f * w;
                        grad[1] += -r[1] / r2 * f * w;
                    }
                    PotentialKind::Double => {
                        let nu = [sig * co, sig * s];
                        let rn = r[0] * nu[0] + r[1] * nu[1];
                        val += -rn / r2 * f * w;
                        grad[0] += -(nu[0] / r2 - 2.0 * rn * r[0] / (r2 * r2)) * f * w;
                        grad[1] += -(nu[1] / r2 - 2.0 * rn * r[1] / (r2 * r2)) * f * w;
                    }
                }
            }
        }
        Ok((val, grad))
    }
}

fn nodes_for(rho: f64, d: f64, m_max: usize) -> usize {
    let geometric = if d > 0.0 { (40.0 * rho / d).ceil() as usize } else { usize::MAX / 4 };
    (2 * m_max + 8).max(geometric.min(1 << 20))
}

/// One-shot potential evaluation at a point off the boundary.
pub fn evaluate_layer(
    domain: &ValidDomain,
    density: &BoundaryDensity,
    kind: PotentialKind,
    p: Point,
) -> Result<f64> {
    Ok(LayerEvaluator::new(domain, density).evaluate(kind, p)?.0)
}
