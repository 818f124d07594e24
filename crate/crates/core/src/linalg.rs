//! Small dense helpers shared by the geometric modules.
//!
//! Generic code works on [`Mat`] over any [`Scalar`]; numeric post-processing
//! uses `ndarray` arrays, with `nalgebra` for inverses, determinants and
//! eigenvalues.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};

use crate::error::{GeomError, Result};
use crate::jets::{Jet, Scalar};

/// Square row-major matrix over a scalar type.
#[derive(Clone, Debug)]
pub struct Mat<S> {
    pub n: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, |i, j| S::cst(if i == j { 1.0 } else { 0.0 }))
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &S {
        &self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.n + j] = v;
    }

    pub fn mul_vec(&self, v: &[S]) -> Vec<S> {
        (0..self.n).map(|i| dot(&self.data[i * self.n..(i + 1) * self.n], v)).collect()
    }

    /// `u^T M v`.
    pub fn quad(&self, u: &[S], v: &[S]) -> S {
        dot(u, &self.mul_vec(v))
    }

    pub fn values(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n, self.n), |(i, j)| self.at(i, j).value())
    }

    /// Gauss-Jordan inverse with partial pivoting on the values.
    pub fn inverse(&self) -> Result<Self> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = Self::identity(n);
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.value().abs())).max(1e-300);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&r, &s| a.at(r, col).value().abs().total_cmp(&a.at(s, col).value().abs()))
                .unwrap_or(col);
            if a.at(pivot, col).value().abs() < 1e-13 * scale {
                return Err(GeomError::Domain("singular matrix in inverse".into()));
            }
            if pivot != col {
                for k in 0..n {
                    a.data.swap(pivot * n + k, col * n + k);
                    inv.data.swap(pivot * n + k, col * n + k);
                }
            }
            let p = a.at(col, col).clone().recip();
            for k in 0..n {
                let v = a.at(col, k).clone() * p.clone();
                a.set(col, k, v);
                let w = inv.at(col, k).clone() * p.clone();
                inv.set(col, k, w);
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let f = a.at(r, col).clone();
                for k in 0..n {
                    let v = a.at(r, k).clone() - f.clone() * a.at(col, k).clone();
                    a.set(r, k, v);
                    let w = inv.at(r, k).clone() - f.clone() * inv.at(col, k).clone();
                    inv.set(r, k, w);
                }
            }
        }
        Ok(inv)
    }
}

pub fn dot<S: Scalar>(u: &[S], v: &[S]) -> S {
    let mut acc = u[0].clone() * v[0].clone();
    for k in 1..u.len() {
        acc = acc + u[k].clone() * v[k].clone();
    }
    acc
}

pub fn constants(v: &[f64]) -> Vec<Jet> {
    v.iter().map(|&x| Jet::constant(x)).collect()
}

pub fn values<S: Scalar>(v: &[S]) -> Vec<f64> {
    v.iter().map(Scalar::value).collect()
}

pub fn to_nalgebra(m: &Array2<f64>) -> DMatrix<f64> {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| m[[i, j]])
}

pub fn from_nalgebra(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

pub fn invert(m: &Array2<f64>) -> Option<Array2<f64>> {
    to_nalgebra(m).try_inverse().map(|inv| from_nalgebra(&inv))
}

pub fn determinant(m: &Array2<f64>) -> f64 {
    to_nalgebra(m).determinant()
}

pub fn symmetric_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = to_nalgebra(m).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn solve(m: &Array2<f64>, rhs: &Array1<f64>) -> Option<Array1<f64>> {
    let lu = to_nalgebra(m).lu();
    let b = nalgebra::DVector::from_iterator(rhs.len(), rhs.iter().copied());
    lu.solve(&b).map(|x| Array1::from_iter(x.iter().copied()))
}

/// Largest absolute entry of any array.
pub fn max_abs<'a>(it: impl IntoIterator<Item = &'a f64>) -> f64 {
    it.into_iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Discrepancy between two arrays of equal shape, scaled by
/// `max(1, |lhs|, |rhs|)`.
pub fn scaled_diff<'a>(
    lhs: impl IntoIterator<Item = &'a f64> + Clone,
    rhs: impl IntoIterator<Item = &'a f64> + Clone,
) -> f64 {
    let scale = 1.0f64.max(max_abs(lhs.clone())).max(max_abs(rhs.clone()));
    let diff = lhs.into_iter().zip(rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    diff / scale
}

/// Scaled magnitude of a quantity that should vanish, normalised by the
/// largest term that went into it.
pub fn scaled_residual<'a>(residual: impl IntoIterator<Item = &'a f64>, term_scale: f64) -> f64 {
    max_abs(residual) / term_scale.max(1.0)
}
