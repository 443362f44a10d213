//! Circular domains, conformal boundary weights and arclength coordinates.
//!
//! A domain is an outer circle containing disjoint inner circles. Component 0
//! is the outer circle and components `1..` are the inner circles in the order
//! given. Each component carries a positive weight `g` written as a real
//! Fourier series in the polar angle about that circle's centre.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A point in the plane.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point,
    pub radius: f64,
}

impl Circle {
    pub fn new(center: Point, radius: f64) -> Self {
        Self { center, radius }
    }

    /// Point at polar angle `theta` about the centre.
    pub fn point(&self, theta: f64) -> Point {
        let (s, c) = theta.sin_cos();
        [self.center[0] + self.radius * c, self.center[1] + self.radius * s]
    }

    /// Polar coordinates `(r, θ)` of `p` about the centre.
    pub fn polar(&self, p: Point) -> (f64, f64) {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        (dx.hypot(dy), dy.atan2(dx))
    }

    pub fn scaled(&self, factor: f64) -> Circle {
        Circle {
            center: [self.center[0] * factor, self.center[1] * factor],
            radius: self.radius * factor,
        }
    }
}

/// Conformal weight on one boundary circle,
/// `g(θ) = mean + Σ_k cos[k-1]·cos kθ + sin[k-1]·sin kθ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSeries {
    pub mean: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl WeightSeries {
    /// `g ≡ 1`.
    pub fn unit() -> Self {
        Self { mean: 1.0, cos: vec![], sin: vec![] }
    }

    /// `g = 1 + amplitude·cos θ`.
    pub fn cosine_bump(amplitude: f64) -> Self {
        Self { mean: 1.0, cos: vec![amplitude], sin: vec![] }
    }

    /// `g = 1 + amplitude·Σ_{k≥1} r^k cos kθ`, truncated once `r^k` drops below `1e-17`.
    pub fn poisson(amplitude: f64, r: f64) -> Self {
        let mut cos = Vec::new();
        let mut rk = r;
        while rk.abs() > 1e-17 && cos.len() < 4096 {
            cos.push(amplitude * rk);
            rk *= r;
        }
        Self { mean: 1.0, cos, sin: vec![] }
    }

    /// Highest mode present.
    pub fn bandwidth(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    fn a(&self, k: usize) -> f64 {
        self.cos.get(k - 1).copied().unwrap_or(0.0)
    }

    fn b(&self, k: usize) -> f64 {
        self.sin.get(k - 1).copied().unwrap_or(0.0)
    }

    pub fn value(&self, theta: f64) -> f64 {
        let mut acc = self.mean;
        for k in 1..=self.bandwidth() {
            let (s, c) = (k as f64 * theta).sin_cos();
            acc += self.a(k) * c + self.b(k) * s;
        }
        acc
    }

    /// Holomorphic continuation `g(z)` together with `g'(z)` and `g''(z)`.
    pub fn complex_derivatives(&self, z: Complex64) -> [Complex64; 3] {
        let mut g = Complex64::new(self.mean, 0.0);
        let mut g1 = Complex64::new(0.0, 0.0);
        let mut g2 = Complex64::new(0.0, 0.0);
        for k in 1..=self.bandwidth() {
            let kf = k as f64;
            let kz = z * kf;
            let (s, c) = (kz.sin(), kz.cos());
            let (a, b) = (self.a(k), self.b(k));
            g += c * a + s * b;
            g1 += (-s * a + c * b) * kf;
            g2 += (-c * a - s * b) * (kf * kf);
        }
        [g, g1, g2]
    }

    /// Complex mode `ĝ_k` of `g` for any integer `k`.
    pub fn complex_mode(&self, k: i64) -> Complex64 {
        if k == 0 {
            return Complex64::new(self.mean, 0.0);
        }
        let n = k.unsigned_abs() as usize;
        let (a, b) = (self.a(n), self.b(n));
        if k > 0 {
            Complex64::new(a / 2.0, -b / 2.0)
        } else {
            Complex64::new(a / 2.0, b / 2.0)
        }
    }

    /// `∫_0^z g(t) dt` continued to complex `z`.
    pub fn complex_antiderivative(&self, z: Complex64) -> Complex64 {
        let mut acc = z * self.mean;
        for k in 1..=self.bandwidth() {
            let kf = k as f64;
            let kz = z * kf;
            acc += (kz.sin() * self.a(k) - (kz.cos() - 1.0) * self.b(k)) / kf;
        }
        acc
    }

    pub fn antiderivative(&self, theta: f64) -> f64 {
        let mut acc = self.mean * theta;
        for k in 1..=self.bandwidth() {
            let kf = k as f64;
            let (s, c) = (kf * theta).sin_cos();
            acc += (self.a(k) * s - self.b(k) * (c - 1.0)) / kf;
        }
        acc
    }

    /// Minimum over a dense uniform sample.
    pub fn sampled_min(&self) -> f64 {
        let q = (16 * self.bandwidth()).max(512);
        (0..q).map(|a| self.value(2.0 * PI * a as f64 / q as f64)).fold(f64::INFINITY, f64::min)
    }

    pub fn sampled_max(&self) -> f64 {
        let q = (16 * self.bandwidth()).max(512);
        (0..q).map(|a| self.value(2.0 * PI * a as f64 / q as f64)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Weight for the same function after rotating the plane by `alpha`.
    pub fn rotated(&self, alpha: f64) -> WeightSeries {
        let n = self.bandwidth();
        let mut cos = vec![0.0; n];
        let mut sin = vec![0.0; n];
        for k in 1..=n {
            let (s, c) = (k as f64 * alpha).sin_cos();
            cos[k - 1] = self.a(k) * c - self.b(k) * s;
            sin[k - 1] = self.a(k) * s + self.b(k) * c;
        }
        WeightSeries { mean: self.mean, cos, sin }
    }
}

/// Unvalidated domain description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KoebeDomain {
    pub outer: Circle,
    #[serde(default)]
    pub inners: Vec<Circle>,
    /// One weight per component, outer first.
    pub weights: Vec<WeightSeries>,
    /// Geometry is multiplied by this factor before operator assembly.
    #[serde(default = "default_scale")]
    pub scale_factor: f64,
    /// Required clearance between circles. Defaults to `1e-3` times the outer radius.
    #[serde(default)]
    pub min_gap: Option<f64>,
}

fn default_scale() -> f64 {
    0.5
}

impl KoebeDomain {
    pub fn new(outer: Circle, inners: Vec<Circle>, weights: Vec<WeightSeries>) -> Self {
        Self { outer, inners, weights, scale_factor: default_scale(), min_gap: None }
    }

    /// Unit-weight disk centred at the origin.
    pub fn disk(radius: f64) -> Self {
        Self::new(Circle::new([0.0, 0.0], radius), vec![], vec![WeightSeries::unit()])
    }

    /// Unit-weight annulus `{eps < |x| < 1}`.
    pub fn annulus(eps: f64) -> Self {
        Self::new(
            Circle::new([0.0, 0.0], 1.0),
            vec![Circle::new([0.0, 0.0], eps)],
            vec![WeightSeries::unit(), WeightSeries::unit()],
        )
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale_factor = scale;
        self
    }

    pub fn with_weights(mut self, weights: Vec<WeightSeries>) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_min_gap(mut self, gap: f64) -> Self {
        self.min_gap = Some(gap);
        self
    }

    /// The same domain rotated by `alpha` about the origin.
    pub fn rotated(&self, alpha: f64) -> KoebeDomain {
        let (s, c) = alpha.sin_cos();
        let rot = |p: Point| [c * p[0] - s * p[1], s * p[0] + c * p[1]];
        let rc = |k: &Circle| Circle { center: rot(k.center), radius: k.radius };
        KoebeDomain {
            outer: rc(&self.outer),
            inners: self.inners.iter().map(rc).collect(),
            weights: self.weights.iter().map(|w| w.rotated(alpha)).collect(),
            scale_factor: self.scale_factor,
            min_gap: self.min_gap,
        }
    }
}

/// A domain that passed [`validate_domain`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidDomain {
    domain: KoebeDomain,
    minimal_gap: f64,
}

/// Check that every inner circle lies strictly inside the outer one, inner
/// circles are pairwise disjoint with at least the configured clearance, and
/// every weight is strictly positive. Returns the domain together with its
/// minimal clearance (`+∞` for a disk).
pub fn validate_domain(domain: KoebeDomain) -> Result<ValidDomain> {
    let finite = |c: &Circle| c.center.iter().all(|v| v.is_finite()) && c.radius.is_finite();
    if !finite(&domain.outer) || !(domain.outer.radius > 0.0) {
        return Err(Error::InvalidGeometry("outer circle must have a finite positive radius".into()));
    }
    for (i, c) in domain.inners.iter().enumerate() {
        if !finite(c) || !(c.radius > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "inner circle {} must have a finite positive radius",
                i + 1
            )));
        }
    }
    if !(domain.scale_factor > 0.0) || !domain.scale_factor.is_finite() {
        return Err(Error::InvalidGeometry("scale factor must be positive".into()));
    }
    let k = 1 + domain.inners.len();
    if domain.weights.len() != k {
        return Err(Error::InvalidGeometry(format!(
            "expected {k} weight series, got {}",
            domain.weights.len()
        )));
    }
    let min_gap = domain.min_gap.unwrap_or(1e-3 * domain.outer.radius);
    if !(min_gap > 0.0) {
        return Err(Error::InvalidGeometry("minimum gap must be positive".into()));
    }

    let mut minimal = f64::INFINITY;
    let r_out = domain.outer.radius;
    for (i, c) in domain.inners.iter().enumerate() {
        let d = dist(c.center, domain.outer.center);
        let gap = r_out - d - c.radius;
        if gap < min_gap {
            return Err(Error::OutsideOuter { index: i + 1, gap });
        }
        minimal = minimal.min(gap);
    }
    for i in 0..domain.inners.len() {
        for j in i + 1..domain.inners.len() {
            let (a, b) = (&domain.inners[i], &domain.inners[j]);
            let gap = dist(a.center, b.center) - a.radius - b.radius;
            if gap < min_gap {
                return Err(Error::Overlap { first: i + 1, second: j + 1, gap });
            }
            minimal = minimal.min(gap);
        }
    }
    for (j, w) in domain.weights.iter().enumerate() {
        let all_finite = w.mean.is_finite()
            && w.cos.iter().all(|v| v.is_finite())
            && w.sin.iter().all(|v| v.is_finite());
        let min = if all_finite { w.sampled_min() } else { f64::NAN };
        if !(min > 0.0) {
            return Err(Error::NonPositiveWeight { component: j, min });
        }
    }
    Ok(ValidDomain { domain, minimal_gap: minimal })
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

impl ValidDomain {
    pub fn raw(&self) -> &KoebeDomain {
        &self.domain
    }

    pub fn into_raw(self) -> KoebeDomain {
        self.domain
    }

    pub fn num_components(&self) -> usize {
        1 + self.domain.inners.len()
    }

    pub fn circle(&self, j: usize) -> &Circle {
        if j == 0 {
            &self.domain.outer
        } else {
            &self.domain.inners[j - 1]
        }
    }

    pub fn circles(&self) -> Vec<Circle> {
        (0..self.num_components()).map(|j| *self.circle(j)).collect()
    }

    /// Circles after applying the scale factor.
    pub fn scaled_circles(&self) -> Vec<Circle> {
        let f = self.domain.scale_factor;
        (0..self.num_components()).map(|j| self.circle(j).scaled(f)).collect()
    }

    /// `+1` on the outer circle and `-1` on inner circles: the sign relating the
    /// outward normal of the domain to the radial direction of the circle.
    pub fn orientation(&self, j: usize) -> f64 {
        if j == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn weight(&self, j: usize) -> &WeightSeries {
        &self.domain.weights[j]
    }

    pub fn scale_factor(&self) -> f64 {
        self.domain.scale_factor
    }

    pub fn minimal_gap(&self) -> f64 {
        self.minimal_gap
    }

    /// True when every circle shares the outer centre.
    pub fn is_concentric(&self) -> bool {
        let c = self.domain.outer.center;
        let tol = 1e-14 * self.domain.outer.radius.max(1.0);
        self.domain.inners.iter().all(|k| dist(k.center, c) <= tol)
    }

    /// True when every weight is identically one.
    pub fn has_unit_weights(&self) -> bool {
        self.domain
            .weights
            .iter()
            .all(|w| w.mean == 1.0 && w.cos.iter().chain(&w.sin).all(|&v| v == 0.0))
    }

    /// Nearest boundary component and the distance to it.
    pub fn boundary_distance(&self, p: Point) -> (usize, f64) {
        (0..self.num_components())
            .map(|j| {
                let c = self.circle(j);
                (j, (dist(p, c.center) - c.radius).abs())
            })
            .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
    }

    /// Open-domain membership.
    pub fn contains(&self, p: Point) -> bool {
        let o = &self.domain.outer;
        dist(p, o.center) < o.radius
            && self.domain.inners.iter().all(|c| dist(p, c.center) > c.radius)
    }

    /// Whether the closed disk `B(center, r)` lies in the open domain.
    pub fn contains_disk(&self, center: Point, r: f64) -> bool {
        let o = &self.domain.outer;
        dist(center, o.center) + r < o.radius
            && self.domain.inners.iter().all(|c| dist(center, c.center) - r > c.radius)
    }

    /// Hex SHA-256 of the exact bit patterns of every geometric parameter.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let mut put = |x: f64| h.update(x.to_bits().to_le_bytes());
        put(self.domain.scale_factor);
        for j in 0..self.num_components() {
            let c = self.circle(j);
            put(c.center[0]);
            put(c.center[1]);
            put(c.radius);
            let w = self.weight(j);
            put(w.mean);
            put(w.cos.len() as f64);
            w.cos.iter().for_each(|&v| put(v));
            put(w.sin.len() as f64);
            w.sin.iter().for_each(|&v| put(v));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn arclength(&self) -> ArclengthMap {
        ArclengthMap {
            components: (0..self.num_components())
                .map(|j| ComponentArclength::new(self.circle(j).radius, self.weight(j).clone()))
                .collect(),
        }
    }

    /// Conformal boundary lengths `L_j` of the unscaled domain.
    pub fn lengths(&self) -> Vec<f64> {
        self.arclength().components.iter().map(|c| c.length).collect()
    }
}

/// Arclength coordinate `s(θ) = ρ ∫_0^θ g` on one circle.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentArclength {
    pub radius: f64,
    pub weight: WeightSeries,
    /// Total conformal length `L_j`.
    pub length: f64,
}

impl ComponentArclength {
    pub fn new(radius: f64, weight: WeightSeries) -> Self {
        // Periodic trapezoid rule, exact for the band-limited weight.
        let q = (4 * weight.bandwidth() + 64).next_power_of_two();
        let sum: f64 = (0..q).map(|a| weight.value(2.0 * PI * a as f64 / q as f64)).sum();
        let length = radius * 2.0 * PI * sum / q as f64;
        Self { radius, weight, length }
    }

    /// Euclidean perimeter `2πρ`.
    pub fn euclidean_length(&self) -> f64 {
        2.0 * PI * self.radius
    }

    pub fn s(&self, theta: f64) -> f64 {
        self.radius * self.weight.antiderivative(theta)
    }

    pub fn s_complex(&self, z: Complex64) -> Complex64 {
        self.weight.complex_antiderivative(z) * self.radius
    }

    /// Inverse of [`Self::s`] on `[0, L]`, by safeguarded Newton iteration.
    pub fn theta(&self, s: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 2.0 * PI);
        let target = s.clamp(0.0, self.length);
        let mut t = 2.0 * PI * target / self.length;
        for _ in 0..100 {
            let f = self.s(t) - target;
            if f.abs() <= 1e-15 * self.length {
                break;
            }
            if f > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let step = f / (self.radius * self.weight.value(t));
            let next = t - step;
            t = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        }
        t
    }

    /// `Γ_j = ρ_j·min g_j`, the lower bound on `ds/dθ`.
    pub fn gamma(&self) -> f64 {
        self.radius * self.weight.sampled_min()
    }
}

/// Arclength maps for every component of a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ArclengthMap {
    pub components: Vec<ComponentArclength>,
}

impl ArclengthMap {
    pub fn lengths(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.length).collect()
    }

    pub fn max_length(&self) -> f64 {
        self.components.iter().map(|c| c.length).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn disk_has_infinite_gap() {
        let d = validate_domain(KoebeDomain::disk(1.0)).unwrap();
        assert_eq!(d.minimal_gap(), f64::INFINITY);
        assert_eq!(d.num_components(), 1);
    }

    #[test]
    fn overlapping_inners_rejected() {
        let dom = KoebeDomain::new(
            Circle::new([0.0, 0.0], 1.0),
            vec![Circle::new([0.3, 0.0], 0.2), Circle::new([-0.05, 0.0], 0.2)],
            vec![WeightSeries::unit(); 3],
        );
        assert!(matches!(validate_domain(dom), Err(Error::Overlap { first: 1, second: 2, .. })));
    }

    #[test]
    fn inner_outside_rejected() {
        let dom = KoebeDomain::new(
            Circle::new([0.0, 0.0], 1.0),
            vec![Circle::new([0.9, 0.0], 0.2)],
            vec![WeightSeries::unit(); 2],
        );
        assert!(matches!(validate_domain(dom), Err(Error::OutsideOuter { index: 1, .. })));
    }

    #[test]
    fn non_positive_weight_rejected() {
        let dom = KoebeDomain::disk(1.0).with_weights(vec![WeightSeries::cosine_bump(1.5)]);
        assert!(matches!(
            validate_domain(dom),
            Err(Error::NonPositiveWeight { component: 0, .. })
        ));
    }

    #[test]
    fn annulus_gap() {
        let d = validate_domain(KoebeDomain::annulus(0.5)).unwrap();
        assert_relative_eq!(d.minimal_gap(), 0.5);
    }

    #[test]
    fn cosine_bump_length_matches_mean() {
        let d = validate_domain(KoebeDomain::disk(1.0).with_weights(vec![WeightSeries::cosine_bump(0.5)]))
            .unwrap();
        assert_relative_eq!(d.lengths()[0], 2.0 * PI, epsilon = 1e-13);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = validate_domain(KoebeDomain::annulus(0.5)).unwrap();
        let b = validate_domain(KoebeDomain::annulus(0.5)).unwrap();
        let c = validate_domain(KoebeDomain::annulus(0.25)).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    proptest! {
        #[test]
        fn validation_is_idempotent(cx in -0.3f64..0.3, cy in -0.3f64..0.3, r in 0.05f64..0.5) {
            let dom = KoebeDomain::new(
                Circle::new([0.0, 0.0], 1.0),
                vec![Circle::new([cx, cy], r)],
                vec![WeightSeries::unit(), WeightSeries::cosine_bump(0.3)],
            );
            if let Ok(v) = validate_domain(dom) {
                let again = validate_domain(v.raw().clone()).unwrap();
                prop_assert_eq!(again, v);
            }
        }

        #[test]
        fn arclength_is_monotone_and_closes(a in -0.6f64..0.6, b in -0.3f64..0.3, r in 0.1f64..2.0) {
            let w = WeightSeries { mean: 1.0, cos: vec![a, 0.1], sin: vec![b] };
            prop_assume!(w.sampled_min() > 0.05);
            let arc = ComponentArclength::new(r, w);
            prop_assert!((arc.s(2.0 * PI) - arc.length).abs() <= 1e-12 * arc.length);
            let mut prev = arc.s(0.0);
            for i in 1..=200 {
                let s = arc.s(2.0 * PI * i as f64 / 200.0);
                prop_assert!(s > prev);
                prev = s;
            }
            for i in 0..20 {
                let t = 2.0 * PI * (i as f64 + 0.37) / 20.0;
                prop_assert!((arc.theta(arc.s(t)) - t).abs() < 1e-11);
            }
        }

        #[test]
        fn lengths_sum_to_total(r1 in 0.05f64..0.2, r2 in 0.05f64..0.2, a in -0.5f64..0.5) {
            let dom = KoebeDomain::new(
                Circle::new([0.0, 0.0], 1.0),
                vec![Circle::new([0.5, 0.0], r1), Circle::new([-0.5, 0.0], r2)],
                vec![WeightSeries::cosine_bump(a), WeightSeries::unit(), WeightSeries::cosine_bump(a)],
            );
            let v = validate_domain(dom).unwrap();
            let arc = v.arclength();
            let total: f64 = arc.components.iter().map(|c| c.s(2.0 * PI) - c.length).sum();
            prop_assert!(total.abs() < 1e-12);
        }
    }
}
