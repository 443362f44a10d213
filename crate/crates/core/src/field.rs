//! Scalar fields on the plane.

use crate::error::Result;
use crate::geometry::Point;

/// A smooth real function that can be sampled together with its gradient.
pub trait ScalarField: Sync {
    fn value(&self, p: Point) -> Result<f64>;
    fn gradient(&self, p: Point) -> Result<[f64; 2]>;

    fn value_gradient(&self, p: Point) -> Result<(f64, [f64; 2])> {
        Ok((self.value(p)?, self.gradient(p)?))
    }
}

/// `Re((x + iy)^n)` rotated by `phase`: the disk eigenfunction `r^n cos(nθ + phase)`.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicPolynomial {
    pub degree: u32,
    pub phase: f64,
}

impl ScalarField for HarmonicPolynomial {
    fn value(&self, p: Point) -> Result<f64> {
        let r = p[0].hypot(p[1]);
        let t = p[1].atan2(p[0]);
        Ok(r.powi(self.degree as i32) * (self.degree as f64 * t + self.phase).cos())
    }

    fn gradient(&self, p: Point) -> Result<[f64; 2]> {
        if self.degree == 0 {
            return Ok([0.0, 0.0]);
        }
        let n = self.degree as f64;
        let r = p[0].hypot(p[1]);
        let t = p[1].atan2(p[0]);
        // ∂_x Re(e^{iφ} z^n) - i ∂_y Re(...) = n e^{iφ} z^{n-1}
        let mag = n * r.powi(self.degree as i32 - 1);
        let arg = (n - 1.0) * t + self.phase;
        Ok([mag * arg.cos(), -mag * arg.sin()])
    }
}
