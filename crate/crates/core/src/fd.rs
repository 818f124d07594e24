//! Richardson-extrapolated central differences.
//!
//! Used only where a quantity is not available in closed form as a function
//! of the base point (the inverse of the conformal map, nested covariant
//! derivatives) and as an independent check of jet derivatives.

use crate::error::Result;

/// Default relative step for x-derivatives.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Fourth-order derivative of a vector-valued function of one variable:
/// `(8 (f(+h) - f(-h)) - (f(+2h) - f(-2h))) / (12 h)`.
pub fn derivative<F>(t0: f64, h: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    let p1 = f(t0 + h)?;
    let m1 = f(t0 - h)?;
    let p2 = f(t0 + 2.0 * h)?;
    let m2 = f(t0 - 2.0 * h)?;
    Ok((0..p1.len()).map(|k| (8.0 * (p1[k] - m1[k]) - (p2[k] - m2[k])) / (12.0 * h)).collect())
}

/// Step for coordinate `i`, scaled with the coordinate magnitude.
pub fn step_for(x: f64, step: f64) -> f64 {
    step * x.abs().max(1.0)
}

/// All first partials of `f` at `x`: `out[i][k] = d f_k / d x^i`.
pub fn gradient<F>(x: &[f64], step: f64, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    (0..x.len())
        .map(|i| {
            let h = step_for(x[i], step);
            derivative(x[i], h, |t| {
                let mut xs = x.to_vec();
                xs[i] = t;
                f(&xs)
            })
        })
        .collect()
}

/// Directional derivative `d/ds f(x + s v)` at `s = 0`.
pub fn directional<F>(x: &[f64], v: &[f64], step: f64, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    derivative(0.0, step, |s| {
        let xs: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + s * b).collect();
        f(&xs)
    })
}
