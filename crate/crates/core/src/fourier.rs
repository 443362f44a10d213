//! FFT helpers for periodic functions on circles.
//!
//! Coefficient vectors hold the complex modes `m = -M..=M` at index `m + M`.
//! The real layout for the same band is `[a_0, a_1, b_1, ..., a_M, b_M]` with
//! `f = a_0 + Σ a_m cos mθ + b_m sin mθ`.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn forward_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(n))
}

pub(crate) fn inverse_plan(n: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(n))
}

/// Smallest power of two that is at least `n`.
pub fn pow2_at_least(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Samples `f(2πa/q)` for `a = 0..q` of the band-limited function with the given modes.
///
/// Requires `q > 2M`.
pub fn synthesize(coeffs: &[Complex64], q: usize) -> Vec<f64> {
    let m_max = (coeffs.len() - 1) / 2;
    assert!(q > 2 * m_max, "synthesis grid too coarse");
    let mut buf = vec![Complex64::new(0.0, 0.0); q];
    for (idx, c) in coeffs.iter().enumerate() {
        let m = idx as i64 - m_max as i64;
        buf[m.rem_euclid(q as i64) as usize] += c;
    }
    inverse_plan(q).process(&mut buf);
    buf.into_iter().map(|z| z.re).collect()
}

/// Complex modes `-M..=M` of a real periodic sample vector by the trapezoid rule.
pub fn analyze(samples: &[f64], m_max: usize) -> Vec<Complex64> {
    let q = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    forward_plan(q).process(&mut buf);
    let inv = 1.0 / q as f64;
    (-(m_max as i64)..=m_max as i64)
        .map(|m| {
            if m.unsigned_abs() as usize * 2 >= q {
                Complex64::new(0.0, 0.0)
            } else {
                buf[m.rem_euclid(q as i64) as usize] * inv
            }
        })
        .collect()
}

/// Convert complex modes of a real function to the real cos/sin layout.
pub fn complex_to_real(coeffs: &[Complex64]) -> Vec<f64> {
    let m_max = (coeffs.len() - 1) / 2;
    let mut out = vec![0.0; 2 * m_max + 1];
    out[0] = coeffs[m_max].re;
    for m in 1..=m_max {
        let cp = coeffs[m_max + m];
        let cm = coeffs[m_max - m];
        out[2 * m - 1] = (cp + cm).re;
        out[2 * m] = -(cp - cm).im;
    }
    out
}

/// Convert the real cos/sin layout to complex modes.
pub fn real_to_complex(real: &[f64]) -> Vec<Complex64> {
    let m_max = (real.len() - 1) / 2;
    let mut out = vec![Complex64::new(0.0, 0.0); 2 * m_max + 1];
    out[m_max] = Complex64::new(real[0], 0.0);
    for m in 1..=m_max {
        let a = real[2 * m - 1];
        let b = real[2 * m];
        out[m_max + m] = Complex64::new(a / 2.0, -b / 2.0);
        out[m_max - m] = Complex64::new(a / 2.0, b / 2.0);
    }
    out
}

/// Index of `cos mθ` (or the constant when `m = 0`) in the real layout.
pub fn cos_index(m: usize) -> usize {
    if m == 0 {
        0
    } else {
        2 * m - 1
    }
}

/// Index of `sin mθ` in the real layout (`m ≥ 1`).
pub fn sin_index(m: usize) -> usize {
    2 * m
}

/// Evaluate a real-layout trigonometric polynomial at `θ`.
pub fn eval_real(real: &[f64], theta: f64) -> f64 {
    let m_max = (real.len() - 1) / 2;
    let mut acc = real[0];
    for m in 1..=m_max {
        let (s, c) = (m as f64 * theta).sin_cos();
        acc += real[2 * m - 1] * c + real[2 * m] * s;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthesis_and_analysis_round_trip() {
        let real = vec![0.3, 1.0, -0.5, 0.0, 0.25, 0.1, 0.0];
        let c = real_to_complex(&real);
        let samples = synthesize(&c, 16);
        for (a, s) in samples.iter().enumerate() {
            let theta = 2.0 * std::f64::consts::PI * a as f64 / 16.0;
            assert!((s - eval_real(&real, theta)).abs() < 1e-14);
        }
        let back = complex_to_real(&analyze(&samples, 3));
        for (x, y) in real.iter().zip(&back) {
            assert!((x - y).abs() < 1e-14);
        }
    }
}
