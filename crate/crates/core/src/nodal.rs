//! Interior evaluation, nodal-set tracing and interior diagnostics.
//!
//! Interior values come from one of three sources. Concentric domains (the
//! disk and annulus presets) use the exact harmonic extension of the boundary
//! Fourier data. Elsewhere the Green representation `u = Dl φ + λ Sl(gφ)` is
//! used at distance at least [`GREEN_SWITCH`] (relative to the outer radius)
//! from the boundary, and the interior quasimode inside dominant collars.
//!
//! Nodal sets are traced by marching squares: a polar grid in each boundary
//! collar and a Cartesian grid in the bulk, with crossings refined to zeros of
//! the field along grid edges.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::dtn_solver::SteklovSpectrum;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::geometry::{Point, ValidDomain};
use crate::layer_ops::{BoundaryDensity, LayerEvaluator, PotentialKind};
use crate::quadrature::gauss_legendre;
use crate::quasimode::{default_collar_width, InteriorQuasimode};
use crate::rates::{fit_exponential, RateFit};

/// Distance to the boundary, in units of the outer radius, below which layer
/// potentials are not evaluated.
pub const GREEN_SWITCH: f64 = 0.01;

/// Relative change of the nodal length under grid refinement that marks a
/// trace as unresolved.
pub const REFINEMENT_TOLERANCE: f64 = 0.01;

/// Refinement factor and margin (in coarse cells) of the bulk patches around saddle cells.
const PATCH_FACTOR: usize = 8;
const PATCH_MARGIN: i64 = 6;

const OFFSET_X: f64 = 0.618_033_988_749_894_8;
const OFFSET_Y: f64 = 0.414_213_562_373_095_1;
const OFFSET_THETA: f64 = 0.707_106_781_186_547_5;

/// How a point of the domain is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    FourierExtension,
    Green,
    Quasimode,
}

/// Relative size below which Fourier-extension coefficients are dropped.
pub const CHOP: f64 = 1e-12;

/// Exact harmonic extension of Fourier boundary data on a disk or a
/// concentric annulus.
#[derive(Debug, Clone)]
struct FourierExtension {
    center: Point,
    outer: f64,
    inner: Option<f64>,
    a0: f64,
    b0: f64,
    /// `α_m` multiplies `(z/R)^m`, `β_m` multiplies `(ρ/z̄)^m`; index 0 unused.
    alpha: Vec<Complex64>,
    beta: Vec<Complex64>,
}

impl FourierExtension {
    fn new(domain: &ValidDomain, density: &BoundaryDensity) -> Self {
        let c0 = domain.circle(0);
        let m_max = density.m_max();
        let inner = (domain.num_components() == 2).then(|| domain.circle(1).radius);
        let mut alpha = vec![Complex64::new(0.0, 0.0); m_max + 1];
        let mut beta = alpha.clone();
        let (a0, b0) = match inner {
            None => {
                for m in 1..=m_max {
                    alpha[m] = density.mode(0, m as i64);
                }
                (density.mode(0, 0).re, 0.0)
            }
            Some(rho) => {
                let eps = rho / c0.radius;
                for m in 1..=m_max {
                    let (co, ci) = (density.mode(0, m as i64), density.mode(1, m as i64));
                    let e = eps.powi(m as i32);
                    let det = 1.0 - e * e;
                    alpha[m] = (co - ci * e) / det;
                    beta[m] = (ci - co * e) / det;
                }
                let (co, ci) = (density.mode(0, 0).re, density.mode(1, 0).re);
                (co, (ci - co) / eps.ln())
            }
        };
        // coefficients below the chop level are not resolved by the eigen-solve
        let big = alpha.iter().chain(&beta).map(|c| c.norm()).fold(a0.abs(), f64::max);
        let chop = CHOP * big;
        let mut a0 = a0;
        let mut b0 = b0;
        if a0.abs() < chop {
            a0 = 0.0;
        }
        if b0.abs() < chop {
            b0 = 0.0;
        }
        for c in alpha.iter_mut().chain(beta.iter_mut()) {
            if c.norm() < chop {
                *c = Complex64::new(0.0, 0.0);
            }
        }
        let top = (1..=m_max).rev().find(|&m| alpha[m].norm() + beta[m].norm() > 0.0).unwrap_or(0);
        alpha.truncate(top + 1);
        beta.truncate(top + 1);
        Self { center: c0.center, outer: c0.radius, inner, a0, b0, alpha, beta }
    }

    fn eval(&self, p: Point) -> (f64, [f64; 2]) {
        let x = p[0] - self.center[0];
        let y = p[1] - self.center[1];
        let z = Complex64::new(x, y);
        let w = z / self.outer;
        let mut val = self.a0;
        let mut df = Complex64::new(0.0, 0.0);
        let mut dg = Complex64::new(0.0, 0.0);
        let mut wp = Complex64::new(1.0, 0.0);
        for m in 1..self.alpha.len() {
            df += self.alpha[m] * wp * (m as f64 / self.outer);
            wp *= w;
            val += 2.0 * (self.alpha[m] * wp).re;
        }
        let mut grad = [2.0 * df.re, -2.0 * df.im];
        if let Some(rho) = self.inner {
            let r2 = x * x + y * y;
            val += self.b0 * 0.5 * (r2 / (self.outer * self.outer)).ln();
            let zb = z.conj();
            let v = rho / zb;
            let mut vp = Complex64::new(1.0, 0.0);
            for m in 1..self.beta.len() {
                vp *= v;
                let t = self.beta[m] * vp;
                val += 2.0 * t.re;
                dg -= t * (m as f64) / zb;
            }
            grad[0] += 2.0 * dg.re + self.b0 * x / r2;
            grad[1] += 2.0 * dg.im + self.b0 * y / r2;
        }
        (val, grad)
    }
}

/// Interior extension of one eigenfunction.
#[derive(Debug, Clone)]
pub struct InteriorField {
    n: usize,
    lambda: f64,
    domain: ValidDomain,
    fourier: Option<FourierExtension>,
    double: LayerEvaluator,
    single: LayerEvaluator,
    switch: f64,
    quasimode: Option<(InteriorQuasimode, Vec<bool>)>,
}

impl InteriorField {
    /// Field of eigenpair `n`; concentric domains use the exact Fourier extension.
    pub fn new(domain: &ValidDomain, spectrum: &SteklovSpectrum, n: usize) -> Result<Self> {
        if n >= spectrum.len() {
            return Err(Error::ModeOutOfRange { mode: n, limit: spectrum.len().saturating_sub(1) });
        }
        if spectrum.domain_hash != domain.hash() {
            return Err(Error::InvalidParameter("spectrum was computed on a different domain".into()));
        }
        Ok(Self::from_density(domain, &spectrum.eigenfunctions[n], spectrum.eigenvalues[n], n))
    }

    /// Field with boundary trace `density` and eigenvalue `lambda`.
    pub fn from_density(domain: &ValidDomain, density: &BoundaryDensity, lambda: f64, n: usize) -> Self {
        let switch = GREEN_SWITCH * domain.circle(0).radius;
        let k = domain.num_components();
        let band = (0..k).map(|j| domain.weight(j).bandwidth()).max().unwrap_or(0);
        let m = density.m_max() + band;
        let flux = BoundaryDensity::from_fn(k, m, |j, t| domain.weight(j).value(t) * density.value(j, t));
        let fourier = (domain.is_concentric() && k <= 2).then(|| FourierExtension::new(domain, density));
        Self {
            n,
            lambda,
            domain: domain.clone(),
            fourier,
            double: LayerEvaluator::with_floor(domain, density, 0.5 * switch),
            single: LayerEvaluator::with_floor(domain, &flux, 0.5 * switch),
            switch,
            quasimode: None,
        }
    }

    /// Drop the Fourier extension so that only the general strategies remain.
    pub fn without_oracle(mut self) -> Self {
        self.fourier = None;
        self
    }

    /// Use `quasimode` within the switch distance of the components tagged dominant.
    pub fn with_quasimode(mut self, quasimode: InteriorQuasimode, dominant: Vec<bool>) -> Self {
        self.quasimode = Some((quasimode, dominant));
        self
    }

    pub fn index(&self) -> usize {
        self.n
    }

    pub fn eigenvalue(&self) -> f64 {
        self.lambda
    }

    pub fn domain(&self) -> &ValidDomain {
        &self.domain
    }

    /// Distance from the boundary below which the Green representation is not used.
    pub fn switch_distance(&self) -> f64 {
        self.switch
    }

    pub fn has_oracle(&self) -> bool {
        self.fourier.is_some()
    }

    /// The strategy [`InteriorField::evaluate`] uses at `p`.
    pub fn strategy_at(&self, p: Point) -> Result<Strategy> {
        let (j, d) = self.domain.boundary_distance(p);
        let tol = 1e-12 * self.domain.circle(0).radius;
        if !self.domain.contains(p) && d > tol {
            return Err(Error::InvalidParameter(format!("point ({}, {}) is outside the domain", p[0], p[1])));
        }
        if self.fourier.is_some() {
            return Ok(Strategy::FourierExtension);
        }
        if d >= self.switch * (1.0 - 1e-9) {
            return Ok(Strategy::Green);
        }
        match &self.quasimode {
            Some((_, dominant)) if dominant.get(j).copied().unwrap_or(false) => Ok(Strategy::Quasimode),
            _ => Err(Error::NoStrategy { x: p[0], y: p[1] }),
        }
    }

    /// Value and gradient at `p` with an explicit strategy.
    pub fn evaluate_with(&self, strategy: Strategy, p: Point) -> Result<(f64, [f64; 2])> {
        match strategy {
            Strategy::FourierExtension => match &self.fourier {
                Some(f) => Ok(f.eval(p)),
                None => Err(Error::NoStrategy { x: p[0], y: p[1] }),
            },
            Strategy::Green => {
                let (dv, dg) = self.double.evaluate(PotentialKind::Double, p)?;
                let (sv, sg) = self.single.evaluate(PotentialKind::Single, p)?;
                let l = self.lambda;
                Ok((dv + l * sv, [dg[0] + l * sg[0], dg[1] + l * sg[1]]))
            }
            Strategy::Quasimode => match &self.quasimode {
                Some((q, _)) => q.component_eval(self.domain.boundary_distance(p).0, p),
                None => Err(Error::NoStrategy { x: p[0], y: p[1] }),
            },
        }
    }

    pub fn evaluate(&self, p: Point) -> Result<(f64, [f64; 2])> {
        self.evaluate_with(self.strategy_at(p)?, p)
    }

    /// Default tracing grid. Without the Fourier extension the collar grids stop
    /// at the switch distance; arcs are extrapolated to dominant components.
    pub fn grid_spec(&self, dominant: &[bool]) -> GridSpec {
        let grid = GridSpec::new(&self.domain, self.lambda);
        if self.fourier.is_some() {
            grid
        } else {
            grid.with_boundary_floor(self.switch, dominant.to_vec())
        }
    }
}

impl ScalarField for InteriorField {
    fn value(&self, p: Point) -> Result<f64> {
        Ok(self.evaluate(p)?.0)
    }

    fn gradient(&self, p: Point) -> Result<[f64; 2]> {
        Ok(self.evaluate(p)?.1)
    }

    fn value_gradient(&self, p: Point) -> Result<(f64, [f64; 2])> {
        self.evaluate(p)
    }
}

/// Values and gradients of eigenfunction `n` at `points`.
pub fn evaluate_interior(
    domain: &ValidDomain,
    spectrum: &SteklovSpectrum,
    n: usize,
    points: &[Point],
) -> Result<Vec<(f64, [f64; 2])>> {
    let field = InteriorField::new(domain, spectrum, n)?;
    points.par_iter().map(|&p| field.evaluate(p)).collect()
}

/// Polar grid in the collar of one boundary component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollarGrid {
    pub n_theta: usize,
    pub n_r: usize,
    /// Distance from the boundary of the innermost grid row.
    pub inner_distance: f64,
    /// Extend arcs ending on the innermost row to the boundary circle.
    pub extrapolate: bool,
}

/// Tracing grid parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSpec {
    pub collar_width: f64,
    pub collars: Vec<CollarGrid>,
    /// Cartesian cells across the outer diameter.
    pub bulk_cells: usize,
}

impl GridSpec {
    /// At least 16 cells per expected oscillation along every boundary circle.
    pub fn new(domain: &ValidDomain, lambda: f64) -> Self {
        let w = default_collar_width(domain);
        let lengths = domain.lengths();
        let mut h_min = f64::INFINITY;
        let collars = (0..domain.num_components())
            .map(|j| {
                let rho = domain.circle(j).radius;
                let n_theta = 512usize.max((16.0 * lambda * lengths[j] / (2.0 * PI)).ceil() as usize);
                let n_theta = n_theta.div_ceil(8) * 8;
                let h = 2.0 * PI * rho / n_theta as f64;
                h_min = h_min.min(h);
                CollarGrid { n_theta, n_r: 8usize.max((w / h).ceil() as usize), inner_distance: 0.0, extrapolate: false }
            })
            .collect();
        let diameter = 2.0 * domain.circle(0).radius;
        let bulk_cells = 256usize.max((diameter / h_min).ceil() as usize);
        Self { collar_width: w, collars, bulk_cells }
    }

    /// Start the collar grids at distance `floor` from the boundary.
    pub fn with_boundary_floor(mut self, floor: f64, extrapolate: Vec<bool>) -> Self {
        let w = self.collar_width;
        for (j, c) in self.collars.iter_mut().enumerate() {
            c.inner_distance = floor;
            c.extrapolate = extrapolate.get(j).copied().unwrap_or(false);
            if floor >= w {
                c.n_r = 0;
            } else {
                c.n_r = ((c.n_r as f64 * (w - floor) / w).ceil() as usize).max(4);
            }
        }
        self
    }

    /// Every cell halved.
    pub fn refined(&self) -> Self {
        let mut g = self.clone();
        g.bulk_cells *= 2;
        for c in &mut g.collars {
            c.n_theta *= 2;
            c.n_r *= 2;
        }
        g
    }
}

/// How a traced polyline ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ArcKind {
    /// Closed loop.
    Closed,
    /// Both ends on the boundary.
    Boundary,
    /// At least one end at an excluded band or a skipped cell.
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Polyline {
    pub points: Vec<Point>,
    pub kind: ArcKind,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }
}

/// Traced zero set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodalSet {
    pub polylines: Vec<Polyline>,
    /// Length in the bulk followed by the length in each collar.
    pub region_lengths: Vec<f64>,
    pub grid: GridSpec,
    /// Largest `|u|` over the grid samples.
    pub scale: f64,
    /// Largest `|u|/scale` over traced vertices, extrapolated endpoints excluded.
    pub max_vertex_residual: f64,
    /// Largest `|u|/scale` over segment midpoints that can be evaluated.
    pub max_midpoint_residual: f64,
    /// Cells not traced because a corner could not be evaluated.
    pub skipped_cells: usize,
    /// Number of arcs reaching each boundary component.
    pub boundary_hits: Vec<usize>,
}

/// Total length of a nodal set.
pub fn nodal_length(set: &NodalSet) -> f64 {
    set.polylines.iter().map(Polyline::length).fold(0.0, |a, b| a + b)
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Tag {
    Interior,
    Boundary(usize),
    Floor(usize),
    Seam(usize),
    Extrapolated(usize),
}

/// Structured grid of field samples; `x` may be periodic.
struct Grid<'a> {
    id: usize,
    cols: usize,
    rows: usize,
    periodic: bool,
    map: Box<dyn Fn(f64, f64) -> Point + Sync + 'a>,
    values: Vec<f64>,
}

impl Grid<'_> {
    fn node_cols(&self) -> usize {
        if self.periodic {
            self.cols
        } else {
            self.cols + 1
        }
    }

    fn v(&self, i: usize, j: usize) -> f64 {
        let nc = self.node_cols();
        self.values[j * nc + i % nc]
    }

    fn hkey(&self, i: usize, j: usize) -> u64 {
        2 * (j * self.node_cols() + i % self.node_cols()) as u64
    }

    fn vkey(&self, i: usize, j: usize) -> u64 {
        self.hkey(i, j) + 1
    }

    fn edge(&self, key: u64) -> (usize, usize, bool) {
        let node = (key / 2) as usize;
        let nc = self.node_cols();
        (node % nc, node / nc, key % 2 == 0)
    }

    fn fill<F: ScalarField + ?Sized>(&mut self, field: &F, needed: Option<&[bool]>) {
        let nc = self.node_cols();
        let map = &self.map;
        self.values = (0..nc * (self.rows + 1))
            .into_par_iter()
            .map(|k| {
                if needed.is_some_and(|m| !m[k]) {
                    return f64::NAN;
                }
                field.value(map((k % nc) as f64, (k / nc) as f64)).unwrap_or(f64::NAN)
            })
            .collect();
    }
}

fn positive(v: f64) -> bool {
    v > 0.0
}

/// Zero of the field on the edge `t ↦ along(t)`, `t ∈ [0, 1]`, by the Illinois method.
/// `tol` is relative to the larger end value.
fn edge_root<F: ScalarField + ?Sized>(
    field: &F,
    along: impl Fn(f64) -> Point,
    va: f64,
    vb: f64,
    tol: f64,
) -> Point {
    let tol = tol * va.abs().max(vb.abs());
    let (mut t0, mut f0, mut t1, mut f1) = (0.0, va, 1.0, vb);
    let mut t = f0 / (f0 - f1);
    let mut side = 0;
    for _ in 0..60 {
        t = (f1 * t0 - f0 * t1) / (f1 - f0);
        let ft = match field.value(along(t)) {
            Ok(v) if v.is_finite() => v,
            _ => break,
        };
        if ft.abs() <= tol || (t1 - t0) < 1e-14 {
            break;
        }
        if positive(ft) == positive(f1) {
            t1 = t;
            f1 = ft;
            if side == -1 {
                f0 *= 0.5;
            }
            side = -1;
        } else {
            t0 = t;
            f0 = ft;
            if side == 1 {
                f1 *= 0.5;
            }
            side = 1;
        }
    }
    along(t)
}

/// Marching squares on one grid: crossing points by edge key and segments as key pairs.
struct Marched {
    points: BTreeMap<u64, Point>,
    /// Segments as edge-key pairs with the index of their cell.
    segments: Vec<(u64, u64, usize)>,
    saddles: Vec<usize>,
    skipped: usize,
}

/// Marching squares on one grid.
fn march<F: ScalarField + ?Sized>(field: &F, grid: &Grid, tol: f64) -> Marched {
    let nc = grid.node_cols();
    let mut edges = Vec::new();
    for j in 0..=grid.rows {
        for i in 0..grid.cols {
            let (a, b) = (grid.v(i, j), grid.v(i + 1, j));
            if a.is_finite() && b.is_finite() && positive(a) != positive(b) {
                edges.push(grid.hkey(i, j));
            }
        }
    }
    for j in 0..grid.rows {
        for i in 0..nc {
            let (a, b) = (grid.v(i, j), grid.v(i, j + 1));
            if a.is_finite() && b.is_finite() && positive(a) != positive(b) {
                edges.push(grid.vkey(i, j));
            }
        }
    }
    let map = &grid.map;
    let points: BTreeMap<u64, Point> = edges
        .par_iter()
        .map(|&key| {
            let (i, j, horizontal) = grid.edge(key);
            let (x, y) = (i as f64, j as f64);
            let p = if horizontal {
                edge_root(field, |t| map(x + t, y), grid.v(i, j), grid.v(i + 1, j), tol)
            } else {
                edge_root(field, |t| map(x, y + t), grid.v(i, j), grid.v(i, j + 1), tol)
            };
            (key, p)
        })
        .collect();

    let mut segments = Vec::new();
    let mut saddles = Vec::new();
    let mut skipped = 0;
    for j in 0..grid.rows {
        for i in 0..grid.cols {
            let c = [grid.v(i, j), grid.v(i + 1, j), grid.v(i + 1, j + 1), grid.v(i, j + 1)];
            if c.iter().any(|v| !v.is_finite()) {
                if c.iter().any(|v| v.is_finite()) {
                    skipped += 1;
                }
                continue;
            }
            let s = c.map(positive);
            // bottom, right, top, left
            let keys = [grid.hkey(i, j), grid.vkey(i + 1, j), grid.hkey(i, j + 1), grid.vkey(i, j)];
            let cross = [s[0] != s[1], s[1] != s[2], s[3] != s[2], s[0] != s[3]];
            let hits: Vec<u64> = (0..4).filter(|&e| cross[e]).map(|e| keys[e]).collect();
            let cell = j * grid.cols + i;
            match hits.len() {
                2 => segments.push((hits[0], hits[1], cell)),
                4 => saddles.push((i, j, keys, s[0])),
                _ => {}
            }
        }
    }
    let centres: Vec<f64> = saddles
        .par_iter()
        .map(|&(i, j, _, _)| field.value(map(i as f64 + 0.5, j as f64 + 0.5)).unwrap_or(0.0))
        .collect();
    let mut saddle_cells = Vec::with_capacity(saddles.len());
    for ((i, j, k, s0), centre) in saddles.into_iter().zip(centres) {
        let cell = j * grid.cols + i;
        saddle_cells.push(cell);
        if positive(centre) == s0 {
            // corners 0 and 2 connected through the centre: cut off corners 1 and 3
            segments.push((k[0], k[1], cell));
            segments.push((k[2], k[3], cell));
        } else {
            segments.push((k[0], k[3], cell));
            segments.push((k[1], k[2], cell));
        }
    }
    Marched { points, segments, saddles: saddle_cells, skipped }
}

struct Registry {
    ids: HashMap<(usize, u64), usize>,
    pos: Vec<Point>,
    tag: Vec<Tag>,
}

impl Registry {
    fn key(&mut self, grid: usize, key: u64, p: Point, tag: Tag) -> usize {
        *self.ids.entry((grid, key)).or_insert_with(|| {
            self.pos.push(p);
            self.tag.push(tag);
            self.pos.len() - 1
        })
    }

    fn free(&mut self, p: Point, tag: Tag) -> usize {
        self.pos.push(p);
        self.tag.push(tag);
        self.pos.len() - 1
    }
}

/// Parameters `t ∈ (0, 1)` where the segment `p → q` meets the circle `(c, r)`.
fn circle_crossings(p: Point, q: Point, c: Point, r: f64) -> Vec<f64> {
    let d = [q[0] - p[0], q[1] - p[1]];
    let f = [p[0] - c[0], p[1] - c[1]];
    let a = d[0] * d[0] + d[1] * d[1];
    let b = 2.0 * (f[0] * d[0] + f[1] * d[1]);
    let cc = f[0] * f[0] + f[1] * f[1] - r * r;
    let disc = b * b - 4.0 * a * cc;
    if a == 0.0 || disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)].into_iter().filter(|t| *t > 0.0 && *t < 1.0).collect()
}

/// Trace the zero set of `field` over `domain` on the grid `grid`.
pub fn trace_nodal_set<F: ScalarField + ?Sized>(field: &F, domain: &ValidDomain, grid: &GridSpec) -> Result<NodalSet> {
    let k = domain.num_components();
    if grid.collars.len() != k {
        return Err(Error::InvalidParameter(format!("grid has {} collars for {k} components", grid.collars.len())));
    }
    let w = grid.collar_width;
    let circles = domain.circles();
    let c0 = circles[0];

    // collar grids, id 1 + j
    let mut grids: Vec<Grid> = Vec::new();
    for (j, cg) in grid.collars.iter().enumerate() {
        if cg.n_r == 0 {
            continue;
        }
        let c = circles[j];
        let inward = if j == 0 { -1.0 } else { 1.0 };
        let (nt, nr, d0) = (cg.n_theta as f64, cg.n_r as f64, cg.inner_distance);
        let t0 = OFFSET_THETA * 2.0 * PI / nt;
        let map = move |x: f64, y: f64| {
            let theta = t0 + 2.0 * PI * x / nt;
            let r = c.radius + inward * (d0 + (w - d0) * y / nr);
            [c.center[0] + r * theta.cos(), c.center[1] + r * theta.sin()]
        };
        let mut g = Grid { id: 1 + j, cols: cg.n_theta, rows: cg.n_r, periodic: true, map: Box::new(map), values: vec![] };
        g.fill(field, None);
        grids.push(g);
    }

    // Cartesian bulk grid, id 0
    let h = 2.0 * c0.radius / grid.bulk_cells as f64;
    let cells = grid.bulk_cells + 2;
    let origin = [c0.center[0] - c0.radius - h * (1.0 - OFFSET_X), c0.center[1] - c0.radius - h * (1.0 - OFFSET_Y)];
    let violation = |p: Point| -> f64 {
        let mut v = dist(p, c0.center) - (c0.radius - w);
        for c in &circles[1..] {
            v = v.max(c.radius + w - dist(p, c.center));
        }
        v
    };
    let in_bulk = |p: Point| violation(p) <= 0.0;
    let node = |x: f64, y: f64| [origin[0] + h * x, origin[1] + h * y];
    let mut needed = vec![false; (cells + 1) * (cells + 1)];
    for j in 0..cells {
        for i in 0..cells {
            if violation(node(i as f64 + 0.5, j as f64 + 0.5)) <= 0.75 * h {
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    needed[(j + dj) * (cells + 1) + i + di] = true;
                }
            }
        }
    }
    let mut bulk = Grid { id: 0, cols: cells, rows: cells, periodic: false, map: Box::new(node), values: vec![] };
    bulk.fill(field, Some(&needed));

    let scale = grids
        .iter()
        .chain(std::iter::once(&bulk))
        .flat_map(|g| g.values.iter())
        .filter(|v| v.is_finite())
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-12;

    let mut reg = Registry { ids: HashMap::new(), pos: Vec::new(), tag: Vec::new() };
    let mut segments: Vec<(usize, usize, usize)> = Vec::new();
    let mut skipped = 0;
    let mut seam_vertices: Vec<Vec<usize>> = vec![Vec::new(); k];
    let mut seam_spacing = vec![0.0; k];

    for g in &grids {
        let j = g.id - 1;
        let cg = &grid.collars[j];
        let Marched { points, segments: segs, skipped: sk, .. } = march(field, g, tol);
        skipped += sk;
        seam_spacing[j] = 2.0 * PI * (circles[j].radius + if j == 0 { -w } else { w }) / cg.n_theta as f64;
        let mut ids = HashMap::new();
        for (&key, &p) in &points {
            let (_, row, horizontal) = g.edge(key);
            let tag = if horizontal && row == 0 {
                if cg.inner_distance == 0.0 {
                    Tag::Boundary(j)
                } else {
                    Tag::Floor(j)
                }
            } else if horizontal && row == g.rows {
                Tag::Seam(j)
            } else {
                Tag::Interior
            };
            let id = reg.key(g.id, key, p, tag);
            if tag == Tag::Seam(j) {
                seam_vertices[j].push(id);
            }
            ids.insert(key, id);
        }
        for (a, b, _) in segs {
            segments.push((ids[&a], ids[&b], g.id));
        }
    }

    let coarse = march(field, &bulk, tol);
    skipped += coarse.skipped;

    // refinement patches around saddle cells
    let mut marked = vec![false; cells * cells];
    for &c in &coarse.saddles {
        let (ci, cj) = ((c % cells) as i64, (c / cells) as i64);
        for dj in -PATCH_MARGIN..=PATCH_MARGIN {
            for di in -PATCH_MARGIN..=PATCH_MARGIN {
                let (i, j) = (ci + di, cj + dj);
                if i >= 0 && j >= 0 && (i as usize) < cells && (j as usize) < cells {
                    marked[j as usize * cells + i as usize] = true;
                }
            }
        }
    }
    let fine_id = k + 1;
    let f = PATCH_FACTOR;
    let fine = marked.iter().any(|&m| m).then(|| {
        let fcells = cells * f;
        let mut need = vec![false; (fcells + 1) * (fcells + 1)];
        for (c, _) in marked.iter().enumerate().filter(|(_, m)| **m) {
            let (ci, cj) = (c % cells, c / cells);
            for j in cj * f..=(cj + 1) * f {
                for i in ci * f..=(ci + 1) * f {
                    need[j * (fcells + 1) + i] = true;
                }
            }
        }
        let hf = h / f as f64;
        let fine_node = move |x: f64, y: f64| [origin[0] + hf * x, origin[1] + hf * y];
        let mut g = Grid { id: fine_id, cols: fcells, rows: fcells, periodic: false, map: Box::new(fine_node), values: vec![] };
        g.fill(field, Some(&need));
        let m = march(field, &g, tol);
        (g, m)
    });

    // Vertex references as (grid id, edge key, position); fine crossings on a
    // patch boundary become the coarse crossing of the same edge.
    let mut bulk_segments: Vec<[(usize, u64, Point); 2]> = coarse
        .segments
        .iter()
        .filter(|(_, _, c)| !marked[*c])
        .map(|&(a, b, _)| [(0, a, coarse.points[&a]), (0, b, coarse.points[&b])])
        .collect();
    if let Some((g, m)) = &fine {
        let coarse_key = |key: u64| -> Option<u64> {
            let (i, j, horizontal) = g.edge(key);
            if horizontal && j % f == 0 {
                Some(bulk.hkey(i / f, j / f))
            } else if !horizontal && i % f == 0 {
                Some(bulk.vkey(i / f, j / f))
            } else {
                None
            }
        };
        let mut count: HashMap<u64, usize> = HashMap::new();
        for &key in m.points.keys() {
            if let Some(ck) = coarse_key(key) {
                *count.entry(ck).or_default() += 1;
            }
        }
        let translate = |key: u64| -> (usize, u64, Point) {
            match coarse_key(key) {
                Some(ck) if count[&ck] == 1 && coarse.points.contains_key(&ck) => (0, ck, coarse.points[&ck]),
                _ => (fine_id, key, m.points[&key]),
            }
        };
        bulk_segments.extend(m.segments.iter().map(|&(a, b, _)| [translate(a), translate(b)]));
    }

    let snap_tol: Vec<f64> = seam_spacing.iter().map(|s| 3.0 * s.max(h)).collect();
    let endpoint = |reg: &mut Registry, t: f64, ends: &[(usize, u64, Point); 2], p: Point, seam: Option<usize>| -> usize {
        if t == 0.0 || t == 1.0 {
            let (g, key, pos) = ends[usize::from(t == 1.0)];
            reg.key(g, key, pos, Tag::Interior)
        } else {
            let j = seam.unwrap_or(0);
            let best = seam_vertices[j]
                .iter()
                .map(|&v| (v, dist(reg.pos[v], p)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .filter(|(_, d)| *d <= snap_tol[j]);
            match best {
                Some((v, _)) => v,
                None => reg.free(p, Tag::Seam(j)),
            }
        }
    };
    let seam_circles: Vec<(Point, f64)> = std::iter::once((c0.center, c0.radius - w))
        .chain(circles[1..].iter().map(|c| (c.center, c.radius + w)))
        .collect();
    for ends in &bulk_segments {
        let (p, q) = (ends[0].2, ends[1].2);
        let mut cuts: Vec<(f64, Option<usize>)> = vec![(0.0, None), (1.0, None)];
        for (j, &(c, r)) in seam_circles.iter().enumerate() {
            cuts.extend(circle_crossings(p, q, c, r).into_iter().map(|t| (t, Some(j))));
        }
        cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in cuts.windows(2) {
            let ((ta, sa), (tb, sb)) = (pair[0], pair[1]);
            if tb - ta <= 1e-12 {
                continue;
            }
            let at = |t: f64| [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
            if !in_bulk(at(0.5 * (ta + tb))) {
                continue;
            }
            let a = endpoint(&mut reg, ta, ends, at(ta), sa);
            let b = endpoint(&mut reg, tb, ends, at(tb), sb);
            if a != b {
                segments.push((a, b, 0));
            }
        }
    }

    // extrapolate arcs that end on a floor row
    let mut degree = vec![0usize; reg.pos.len()];
    let mut neighbour = vec![usize::MAX; reg.pos.len()];
    for &(a, b, _) in &segments {
        degree[a] += 1;
        degree[b] += 1;
        neighbour[a] = b;
        neighbour[b] = a;
    }
    let n_vertices = reg.pos.len();
    for v in 0..n_vertices {
        let Tag::Floor(j) = reg.tag[v] else { continue };
        if degree[v] != 1 || !grid.collars[j].extrapolate {
            continue;
        }
        let c = circles[j];
        let p = reg.pos[v];
        let q = reg.pos[neighbour[v]];
        let dir = [p[0] - q[0], p[1] - q[1]];
        let far = [p[0] + 1e6 * dir[0], p[1] + 1e6 * dir[1]];
        let d0 = grid.collars[j].inner_distance;
        let radial = {
            let r = dist(p, c.center);
            [c.center[0] + c.radius * (p[0] - c.center[0]) / r, c.center[1] + c.radius * (p[1] - c.center[1]) / r]
        };
        let hit = circle_crossings(p, far, c.center, c.radius)
            .into_iter()
            .map(|t| [p[0] + t * (far[0] - p[0]), p[1] + t * (far[1] - p[1])])
            .min_by(|a, b| dist(*a, p).total_cmp(&dist(*b, p)))
            .filter(|b| dist(*b, p) <= 5.0 * d0)
            .unwrap_or(radial);
        let b = reg.free(hit, Tag::Extrapolated(j));
        segments.push((v, b, 1 + j));
    }

    let mut region_lengths = vec![0.0; k + 1];
    for &(a, b, r) in &segments {
        region_lengths[r] += dist(reg.pos[a], reg.pos[b]);
    }

    let polylines = assemble_polylines(&reg, &segments);
    let mut boundary_hits = vec![0; k];
    for t in &reg.tag {
        if let Tag::Boundary(j) | Tag::Extrapolated(j) = t {
            boundary_hits[*j] += 1;
        }
    }

    let residual = |p: Point| field.value(p).ok().filter(|v| v.is_finite()).map(|v| v.abs());
    let max_vertex_residual = (0..reg.pos.len())
        .into_par_iter()
        .filter(|&v| !matches!(reg.tag[v], Tag::Extrapolated(_)))
        .filter_map(|v| residual(reg.pos[v]))
        .reduce(|| 0.0, f64::max)
        / scale.max(f64::MIN_POSITIVE);
    let max_midpoint_residual = segments
        .par_iter()
        .filter_map(|&(a, b, _)| {
            let (p, q) = (reg.pos[a], reg.pos[b]);
            residual([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])])
        })
        .reduce(|| 0.0, f64::max)
        / scale.max(f64::MIN_POSITIVE);

    Ok(NodalSet {
        polylines,
        region_lengths,
        grid: grid.clone(),
        scale,
        max_vertex_residual,
        max_midpoint_residual,
        skipped_cells: skipped,
        boundary_hits,
    })
}

fn assemble_polylines(reg: &Registry, segments: &[(usize, usize, usize)]) -> Vec<Polyline> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); reg.pos.len()];
    for (s, &(a, b, _)) in segments.iter().enumerate() {
        adj[a].push(s);
        adj[b].push(s);
    }
    let mut used = vec![false; segments.len()];
    let on_boundary = |v: usize| matches!(reg.tag[v], Tag::Boundary(_) | Tag::Extrapolated(_));
    let walk = |start: usize, used: &mut Vec<bool>| -> Option<Polyline> {
        let mut v = start;
        let mut path = vec![start];
        while let Some(&s) = adj[v].iter().find(|&&s| !used[s]) {
            used[s] = true;
            let (a, b, _) = segments[s];
            v = if a == v { b } else { a };
            path.push(v);
        }
        if path.len() < 2 {
            return None;
        }
        let closed = path.len() > 2 && path[0] == *path.last().unwrap();
        let kind = if closed {
            ArcKind::Closed
        } else if on_boundary(path[0]) && on_boundary(*path.last().unwrap()) {
            ArcKind::Boundary
        } else {
            ArcKind::Truncated
        };
        Some(Polyline { points: path.into_iter().map(|v| reg.pos[v]).collect(), kind })
    };
    let mut out = Vec::new();
    for v in 0..reg.pos.len() {
        if adj[v].len() % 2 == 1 {
            while adj[v].iter().any(|&s| !used[s]) {
                out.extend(walk(v, &mut used));
            }
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            out.extend(walk(segments[s].0, &mut used));
        }
    }
    out
}

/// Dominant/residual tag of one boundary component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentClass {
    pub component: usize,
    /// `‖u‖_{L²(∂D_j)}`.
    pub norm: f64,
    /// `e^{-δλ/3}`.
    pub threshold: f64,
    pub dominant: bool,
}

/// Tag each component dominant when its boundary norm is at least `e^{-δλ/3}`.
/// A single boundary component is always dominant.
pub fn classify_components(norms: &[f64], delta: f64, lambda: f64) -> Vec<ComponentClass> {
    let threshold = (-delta * lambda / 3.0).exp();
    norms
        .iter()
        .enumerate()
        .map(|(j, &norm)| ComponentClass {
            component: j,
            norm,
            threshold,
            dominant: norms.len() == 1 || norm >= threshold,
        })
        .collect()
}

/// A band next to a boundary component that was not traced.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedBand {
    pub component: usize,
    pub width: f64,
    /// `e^{-δλ/3}`, the size of the field allowed on a residual component.
    pub bound: f64,
}

/// Nodal-length measurement of one eigenfunction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodalReport {
    pub n: usize,
    pub lambda: f64,
    pub length: f64,
    /// `length / λ`; absent for `λ = 0`.
    pub ratio: Option<f64>,
    pub bulk_length: f64,
    pub collar_lengths: Vec<f64>,
    pub components: Vec<ComponentClass>,
    pub grid: GridSpec,
    /// Length on the grid with every cell halved.
    pub refined_length: f64,
    /// Whether the length changed by at most 1% under refinement.
    pub converged: bool,
    pub excluded: Vec<ExcludedBand>,
    pub set: NodalSet,
}

/// Trace at the default grid and at the refined grid and compare.
pub fn nodal_report(field: &InteriorField, spectrum: &SteklovSpectrum, delta: f64) -> Result<NodalReport> {
    nodal_report_with(field, spectrum, delta, 0)
}

/// [`nodal_report`] with the default grid halved `refinements` times first.
pub fn nodal_report_with(
    field: &InteriorField,
    spectrum: &SteklovSpectrum,
    delta: f64,
    refinements: usize,
) -> Result<NodalReport> {
    let n = field.index();
    let lambda = field.eigenvalue();
    let components = classify_components(&spectrum.component_norms(n), delta, lambda);
    let dominant: Vec<bool> = components.iter().map(|c| c.dominant).collect();
    let grid = (0..refinements).fold(field.grid_spec(&dominant), |g, _| g.refined());
    let set = trace_nodal_set(field, field.domain(), &grid)?;
    let fine = trace_nodal_set(field, field.domain(), &grid.refined())?;
    let length = nodal_length(&set);
    let refined_length = nodal_length(&fine);
    let excluded = if field.has_oracle() {
        Vec::new()
    } else {
        components
            .iter()
            .filter(|c| !c.dominant)
            .map(|c| ExcludedBand { component: c.component, width: field.switch_distance(), bound: c.threshold })
            .collect()
    };
    Ok(NodalReport {
        n,
        lambda,
        length,
        ratio: (lambda > 1e-12).then(|| length / lambda),
        bulk_length: set.region_lengths[0],
        collar_lengths: set.region_lengths[1..].to_vec(),
        components,
        grid,
        refined_length,
        converged: length_converged(length, refined_length),
        excluded,
        set,
    })
}

/// Whether two lengths agree to [`REFINEMENT_TOLERANCE`].
pub fn length_converged(coarse: f64, fine: f64) -> bool {
    (coarse - fine).abs() <= REFINEMENT_TOLERANCE * coarse.max(fine) || (coarse == 0.0 && fine == 0.0)
}

/// Sup of `|u|` over circles parallel to one boundary component.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayProfile {
    pub component: usize,
    pub lambda: f64,
    pub depths: Vec<f64>,
    pub sup: Vec<f64>,
    /// Fit of `ln sup` against `depth · λ`.
    pub fit: Option<RateFit>,
    pub non_decaying: bool,
}

/// Eight depths spread over the collar of the domain.
pub fn default_depths(domain: &ValidDomain) -> Vec<f64> {
    let w = default_collar_width(domain);
    (1..=8).map(|i| w * i as f64 / 8.0).collect()
}

pub fn decay_profile<F: ScalarField + ?Sized>(
    field: &F,
    domain: &ValidDomain,
    component: usize,
    lambda: f64,
    depths: &[f64],
    angles: usize,
) -> Result<DecayProfile> {
    if component >= domain.num_components() {
        return Err(Error::InvalidParameter(format!("no boundary component {component}")));
    }
    if angles < 8 {
        return Err(Error::InvalidParameter("need at least 8 angular samples".into()));
    }
    let c = *domain.circle(component);
    let inward = if component == 0 { -1.0 } else { 1.0 };
    let sup = depths
        .iter()
        .map(|&d| {
            let r = c.radius + inward * d;
            if d <= 0.0 || r <= 0.0 {
                return Err(Error::InvalidParameter(format!("depth {d} is not inside the domain")));
            }
            (0..angles)
                .into_par_iter()
                .map(|a| {
                    let t = 2.0 * PI * (a as f64 + OFFSET_THETA) / angles as f64;
                    field.value([c.center[0] + r * t.cos(), c.center[1] + r * t.sin()]).map(f64::abs)
                })
                .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (fit, non_decaying) = if lambda.abs() <= 1e-9 {
        (None, true)
    } else {
        let xs: Vec<f64> = depths.iter().map(|d| d * lambda).collect();
        let floor = 1e-14 * sup.iter().cloned().fold(0.0, f64::max);
        let fit = fit_exponential(&xs, &sup, floor).ok();
        let flat = fit.as_ref().is_none_or(|f| f.slope >= -1e-3);
        (fit, flat)
    };
    Ok(DecayProfile { component, lambda, depths: depths.to_vec(), sup, fit, non_decaying })
}

/// `2r ∫_{B_r} |∇u|² / ∫_{∂B_r} u²` with 64 × 64 nodes.
pub fn almgren_frequency<F: ScalarField + ?Sized>(field: &F, domain: &ValidDomain, center: Point, r: f64) -> Result<f64> {
    almgren_frequency_with(field, domain, center, r, 64, 64)
}

/// As [`almgren_frequency`] with Gauss–Legendre nodes in radius and trapezoid nodes
/// in angle; both counts are raised to at least 64.
pub fn almgren_frequency_with<F: ScalarField + ?Sized>(
    field: &F,
    domain: &ValidDomain,
    center: Point,
    r: f64,
    n_r: usize,
    n_theta: usize,
) -> Result<f64> {
    if !(r > 0.0) || !domain.contains_disk(center, r) {
        return Err(Error::DiskOutsideDomain { radius: r });
    }
    let (n_r, n_theta) = (n_r.max(64), n_theta.max(64));
    let (nodes, weights) = gauss_legendre(n_r, 0.0, r);
    let h = 2.0 * PI / n_theta as f64;
    let at = |rad: f64, a: usize| {
        let t = a as f64 * h;
        [center[0] + rad * t.cos(), center[1] + rad * t.sin()]
    };
    let energy = (0..n_r * n_theta)
        .into_par_iter()
        .map(|k| {
            let (i, a) = (k / n_theta, k % n_theta);
            let g = field.gradient(at(nodes[i], a))?;
            Ok(weights[i] * nodes[i] * h * (g[0] * g[0] + g[1] * g[1]))
        })
        .try_reduce(|| 0.0, |a, b| Ok(a + b))?;
    let mass = (0..n_theta)
        .into_par_iter()
        .map(|a| field.value(at(r, a)).map(|u| u * u * r * h))
        .try_reduce(|| 0.0, |a, b| Ok(a + b))?;
    if mass <= 0.0 {
        return Err(Error::InvalidParameter("field vanishes on the sphere of the frequency disk".into()));
    }
    Ok(2.0 * r * energy / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annulus_oracle::{annulus_eigenpair, Branch};
    use crate::field::HarmonicPolynomial;
    use crate::geometry::{validate_domain, KoebeDomain};
    use approx::assert_relative_eq;

    struct Constant;
    impl ScalarField for Constant {
        fn value(&self, _: Point) -> Result<f64> {
            Ok(1.5)
        }
        fn gradient(&self, _: Point) -> Result<[f64; 2]> {
            Ok([0.0, 0.0])
        }
    }

    fn disk() -> ValidDomain {
        validate_domain(KoebeDomain::disk(1.0)).unwrap()
    }

    fn annulus() -> ValidDomain {
        validate_domain(KoebeDomain::annulus(0.5)).unwrap()
    }

    fn annulus_density(k: usize, branch: Branch, phase: f64) -> (BoundaryDensity, f64, crate::annulus_oracle::AnnulusEigenfunction) {
        let pair = annulus_eigenpair(0.5, k, branch).unwrap();
        let (o, i) = pair.traces();
        let dens = BoundaryDensity::from_fn(2, k + 4, |j, t| if j == 0 { o } else { i } * (k as f64 * t + phase).cos());
        (dens, pair.sigma, pair.field(phase))
    }

    #[test]
    fn fourier_extension_reproduces_disk_polynomial() {
        let d = disk();
        let dens = BoundaryDensity::from_fn(1, 8, |_, t| (3.0 * t + 0.3).cos());
        let f = InteriorField::from_density(&d, &dens, 3.0, 0);
        let exact = HarmonicPolynomial { degree: 3, phase: 0.3 };
        for p in [[0.1, 0.2], [-0.5, 0.3], [0.0, 0.0], [0.7, -0.6]] {
            let (v, g) = f.evaluate(p).unwrap();
            assert_relative_eq!(v, exact.value(p).unwrap(), epsilon = 1e-13);
            let e = exact.gradient(p).unwrap();
            assert_relative_eq!(g[0], e[0], epsilon = 1e-12);
            assert_relative_eq!(g[1], e[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn fourier_and_green_agree_with_annulus_closed_form() {
        let d = annulus();
        let (dens, sigma, exact) = annulus_density(4, Branch::Plus, 0.4);
        let f = InteriorField::from_density(&d, &dens, sigma, 0);
        let green = f.clone().without_oracle();
        let scale = dens.component_l2(1, 0.5).max(dens.component_l2(0, 1.0));
        for p in [[0.75, 0.0], [0.0, -0.62], [0.55, 0.3], [-0.6, 0.6], [0.51, 0.0]] {
            let e = exact.value(p).unwrap();
            let (v, g) = f.evaluate(p).unwrap();
            assert_relative_eq!(v, e, epsilon = 1e-11 * scale);
            let eg = exact.gradient(p).unwrap();
            assert_relative_eq!(g[0], eg[0], epsilon = 1e-10 * scale);
            assert_relative_eq!(g[1], eg[1], epsilon = 1e-10 * scale);
            assert_eq!(green.strategy_at(p).unwrap(), Strategy::Green);
            assert!((green.value(p).unwrap() - e).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn green_gradient_matches_central_differences() {
        let d = validate_domain(KoebeDomain::new(
            crate::geometry::Circle::new([0.0, 0.0], 1.0),
            vec![crate::geometry::Circle::new([0.3, 0.1], 0.25)],
            vec![crate::geometry::WeightSeries::unit(); 2],
        ))
        .unwrap();
        let dens = BoundaryDensity::from_fn(2, 12, |j, t| (2.0 * t).cos() + 0.3 * (j as f64 + 1.0) * (5.0 * t).sin());
        let f = InteriorField::from_density(&d, &dens, 2.5, 0);
        let h = 1e-5;
        for p in [[-0.5, 0.2], [0.1, -0.6], [0.7, 0.3], [-0.2, -0.2]] {
            let (_, g) = f.evaluate(p).unwrap();
            let fx = (f.value([p[0] + h, p[1]]).unwrap() - f.value([p[0] - h, p[1]]).unwrap()) / (2.0 * h);
            let fy = (f.value([p[0], p[1] + h]).unwrap() - f.value([p[0], p[1] - h]).unwrap()) / (2.0 * h);
            let norm = g[0].hypot(g[1]).max(1e-3);
            assert!((fx - g[0]).abs() <= 1e-6 * norm && (fy - g[1]).abs() <= 1e-6 * norm);
        }
    }

    #[test]
    fn residual_collar_has_no_strategy() {
        let d = annulus();
        let (dens, sigma, _) = annulus_density(3, Branch::Minus, 0.0);
        let f = InteriorField::from_density(&d, &dens, sigma, 0).without_oracle();
        assert!(matches!(f.evaluate([0.505, 0.0]), Err(Error::NoStrategy { .. })));
    }

    #[test]
    fn disk_three_diameters() {
        let d = disk();
        let field = HarmonicPolynomial { degree: 3, phase: 0.2 };
        let set = trace_nodal_set(&field, &d, &GridSpec::new(&d, 3.0)).unwrap();
        let len = nodal_length(&set);
        assert!((len - 6.0).abs() <= 0.01 * 6.0, "{len}");
        assert_eq!(set.boundary_hits, vec![6]);
        assert!(set.max_vertex_residual <= 1e-4);
        let total: f64 = set.region_lengths.iter().sum();
        assert_relative_eq!(total, len, epsilon = 1e-9);
    }

    #[test]
    fn annulus_nodal_circle_is_traced() {
        let d = annulus();
        for (k, branch) in [(4, Branch::Plus), (5, Branch::Minus)] {
            let pair = annulus_eigenpair(0.5, k, branch).unwrap();
            let field = pair.field(0.1);
            let set = trace_nodal_set(&field, &d, &GridSpec::new(&d, pair.sigma)).unwrap();
            let len = nodal_length(&set);
            assert!((len - pair.nodal_length()).abs() <= 0.015 * pair.nodal_length(), "{k}: {len}");
            // the circle crosses the rays, so its presence shows in the length only
            let rays = 2.0 * k as f64 * 0.5;
            assert_eq!(len - rays > PI * 0.5, pair.nodal_radius().is_some());
            assert_eq!(set.boundary_hits[0], 2 * k);
        }
    }

    #[test]
    fn constant_field_has_empty_nodal_set() {
        let d = annulus();
        let set = trace_nodal_set(&Constant, &d, &GridSpec::new(&d, 0.0)).unwrap();
        assert!(set.polylines.is_empty());
        assert_eq!(nodal_length(&set), 0.0);
    }

    #[test]
    fn rotation_leaves_length_unchanged() {
        let d = annulus();
        let pair = annulus_eigenpair(0.5, 6, Branch::Plus).unwrap();
        let g = GridSpec::new(&d, pair.sigma);
        let a = nodal_length(&trace_nodal_set(&pair.field(0.0), &d, &g).unwrap());
        let b = nodal_length(&trace_nodal_set(&pair.field(0.77), &d, &g).unwrap());
        assert!((a - b).abs() <= 0.01 * a);
    }

    #[test]
    fn almgren_frequency_of_harmonic_polynomials() {
        let d = validate_domain(KoebeDomain::disk(2.0)).unwrap();
        for n in 1..=3u32 {
            let f = HarmonicPolynomial { degree: n, phase: 0.0 };
            let nf = almgren_frequency(&f, &d, [0.0, 0.0], 1.0).unwrap();
            assert_relative_eq!(nf, 2.0 * n as f64, epsilon = 1e-6);
        }
        assert_eq!(almgren_frequency(&Constant, &d, [0.0, 0.0], 1.0).unwrap(), 0.0);
        assert!(matches!(almgren_frequency(&Constant, &d, [1.5, 0.0], 1.0), Err(Error::DiskOutsideDomain { .. })));
    }

    #[test]
    fn disk_decay_profile_has_unit_slope() {
        let d = disk();
        let f = HarmonicPolynomial { degree: 10, phase: 0.0 };
        let p = decay_profile(&f, &d, 0, 10.0, &default_depths(&d), 256).unwrap();
        let s = p.fit.unwrap().slope;
        assert!((s + 1.0).abs() <= 0.2, "{s}");
        assert!(!p.non_decaying);
        let c = decay_profile(&Constant, &d, 0, 0.0, &default_depths(&d), 64).unwrap();
        assert!(c.non_decaying);
    }

    #[test]
    fn single_component_is_dominant() {
        let c = classify_components(&[1e-6], 0.05, 40.0);
        assert!(c[0].dominant);
        let c = classify_components(&[1.0, 1e-3], 0.05, 20.0);
        assert!(c[0].dominant && !c[1].dominant);
    }
}
