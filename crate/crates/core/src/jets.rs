//! Truncated Taylor arithmetic in several variables.
//!
//! A [`Jet`] carries a value together with its first, second and third
//! partial derivatives with respect to `n` seed variables. Every fiber
//! derivative in the crate (metric tensor, Cartan tensor, Jacobian of the
//! conformal map, connection derivatives) is obtained by pushing jets through
//! closed-form expressions, so no finite differencing in `y` is ever needed.
//!
//! Jets with `n == 0` are constants: they combine with jets of any size and
//! never lower the order of the result.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::GeomError;

/// Highest derivative order a jet can carry.
pub const MAX_ORDER: u8 = 3;

/// Relative tolerance for the symmetry of the second and third derivative
/// blocks.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Smallest magnitude accepted by the checked division and root.
pub const DOMAIN_EPS: f64 = 1e-14;

/// Scalar types the geometric formulas are generic over.
///
/// `f64` evaluates a formula; [`Jet`] evaluates it together with its
/// derivatives.
pub trait Scalar:
    Clone
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + Send
    + Sync
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan(self) -> Self;
    fn acos(self) -> Self;
    /// Four-quadrant arctangent of `self / x` with the value in `(-pi, pi]`.
    fn atan2(self, x: Self) -> Self;

    fn recip(self) -> Self {
        Self::cst(1.0) / self
    }
    fn square(self) -> Self {
        self.clone() * self
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn atan(self) -> Self {
        f64::atan(self)
    }
    fn acos(self) -> Self {
        f64::acos(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

/// Value plus partial derivatives up to order three in `n` variables.
///
/// Storage is dense: `d1[i]`, `d2[i*n + j]`, `d3[(i*n + j)*n + k]`, packed in
/// one buffer and truncated at `order`.
#[derive(Clone, PartialEq)]
pub struct Jet {
    n: usize,
    order: u8,
    value: f64,
    data: Vec<f64>,
}

fn block_len(n: usize, order: u8) -> usize {
    match order {
        0 => 0,
        1 => n,
        2 => n + n * n,
        _ => n + n * n + n * n * n,
    }
}

impl Jet {
    /// A constant: no seed variables, combines with any jet.
    pub fn constant(value: f64) -> Self {
        Self { n: 0, order: MAX_ORDER, value, data: Vec::new() }
    }

    /// Zero jet over `n` variables with the given order.
    pub fn zeros(n: usize, order: u8, value: f64) -> Self {
        let order = order.min(MAX_ORDER);
        Self { n, order, value, data: vec![0.0; block_len(n, order)] }
    }

    /// Build a jet from explicit derivative blocks; the blocks are checked
    /// for symmetry.
    pub fn from_parts(
        value: f64,
        d1: &[f64],
        d2: Option<&[f64]>,
        d3: Option<&[f64]>,
    ) -> Result<Self, GeomError> {
        let n = d1.len();
        let order = 1 + d2.is_some() as u8 + (d2.is_some() && d3.is_some()) as u8;
        let mut jet = Self::zeros(n, order, value);
        jet.data[..n].copy_from_slice(d1);
        if let Some(d2) = d2 {
            if d2.len() != n * n {
                return Err(GeomError::Domain(format!("second block has {} entries, expected {}", d2.len(), n * n)));
            }
            jet.data[n..n + n * n].copy_from_slice(d2);
        }
        if order == 3 {
            let d3 = d3.unwrap_or_default();
            if d3.len() != n * n * n {
                return Err(GeomError::Domain(format!("third block has {} entries, expected {}", d3.len(), n * n * n)));
            }
            jet.data[n + n * n..].copy_from_slice(d3);
        }
        jet.check_symmetry()?;
        Ok(jet)
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    /// Populated derivative order; constants report [`MAX_ORDER`].
    pub fn order(&self) -> u8 {
        if self.n == 0 {
            MAX_ORDER
        } else {
            self.order
        }
    }

    pub fn is_constant(&self) -> bool {
        self.n == 0
    }

    pub fn val(&self) -> f64 {
        self.value
    }

    pub fn d1(&self, i: usize) -> f64 {
        if self.n == 0 || self.order < 1 {
            0.0
        } else {
            self.data[i]
        }
    }

    pub fn d2(&self, i: usize, j: usize) -> f64 {
        if self.n == 0 || self.order < 2 {
            0.0
        } else {
            self.data[self.n + i * self.n + j]
        }
    }

    pub fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        if self.n == 0 || self.order < 3 {
            0.0
        } else {
            let n = self.n;
            self.data[n + n * n + (i * n + j) * n + k]
        }
    }

    pub fn gradient(&self, n: usize) -> Vec<f64> {
        (0..n).map(|i| self.d1(i)).collect()
    }

    /// Drop derivative levels above `order`.
    pub fn truncate(&self, order: u8) -> Self {
        if self.n == 0 || order >= self.order {
            return self.clone();
        }
        let len = block_len(self.n, order);
        Self { n: self.n, order, value: self.value, data: self.data[..len].to_vec() }
    }

    /// The partial derivative `d/dv_i` as a jet one order lower.
    pub fn partial(&self, i: usize) -> Self {
        if self.n == 0 {
            return Self::constant(0.0);
        }
        let n = self.n;
        let order = self.order.saturating_sub(1);
        let mut out = Self::zeros(n, order, self.d1(i));
        if order >= 1 {
            for j in 0..n {
                out.data[j] = self.d2(i, j);
            }
        }
        if order >= 2 {
            for j in 0..n {
                for k in 0..n {
                    out.data[n + j * n + k] = self.d3(i, j, k);
                }
            }
        }
        out
    }

    /// Verify that the second and third derivative blocks are symmetric.
    pub fn check_symmetry(&self) -> Result<(), GeomError> {
        let n = self.n;
        if n == 0 || self.order < 2 {
            return Ok(());
        }
        let scale = self.data.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let tol = SYMMETRY_TOL * scale;
        for i in 0..n {
            for j in 0..i {
                if (self.d2(i, j) - self.d2(j, i)).abs() > tol {
                    return Err(GeomError::Domain(format!("second derivative block not symmetric at ({i},{j})")));
                }
            }
        }
        if self.order >= 3 {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let v = self.d3(i, j, k);
                        if (v - self.d3(j, i, k)).abs() > tol || (v - self.d3(i, k, j)).abs() > tol {
                            return Err(GeomError::Domain(format!(
                                "third derivative block not symmetric at ({i},{j},{k})"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn debug_check(&self) {
        debug_assert!(self.value.is_nan() || self.check_symmetry().is_ok(), "jet symmetry violated: {self:?}");
    }

    /// Apply a univariate function given its value and first three
    /// derivatives at `self.value` (Faa di Bruno up to order three).
    pub fn compose(&self, f0: f64, f1: f64, f2: f64, f3: f64) -> Self {
        if self.n == 0 {
            return Self::constant(f0);
        }
        let n = self.n;
        let mut out = Self::zeros(n, self.order, f0);
        if self.order == 0 {
            return out;
        }
        let u = &self.data;
        for i in 0..n {
            out.data[i] = f1 * u[i];
        }
        if self.order >= 2 {
            let o2 = n;
            for i in 0..n {
                for j in 0..n {
                    out.data[o2 + i * n + j] = f1 * u[o2 + i * n + j] + f2 * u[i] * u[j];
                }
            }
        }
        if self.order >= 3 {
            let o2 = n;
            let o3 = n + n * n;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let idx = o3 + (i * n + j) * n + k;
                        out.data[idx] = f1 * u[idx]
                            + f2 * (u[o2 + i * n + j] * u[k] + u[o2 + i * n + k] * u[j] + u[o2 + j * n + k] * u[i])
                            + f3 * u[i] * u[j] * u[k];
                    }
                }
            }
        }
        out.debug_check();
        out
    }

    fn scaled(&self, s: f64) -> Self {
        Self { n: self.n, order: self.order, value: self.value * s, data: self.data.iter().map(|v| v * s).collect() }
    }

    fn shifted(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.value += s;
        out
    }

    fn combine_shape(a: &Self, b: &Self) -> (usize, u8) {
        match (a.n, b.n) {
            (0, 0) => (0, MAX_ORDER),
            (0, _) => (b.n, b.order),
            (_, 0) => (a.n, a.order),
            (na, nb) => {
                assert_eq!(na, nb, "jets over different variable counts");
                (na, a.order.min(b.order))
            }
        }
    }

    fn add_ref(&self, rhs: &Self, sign: f64) -> Self {
        let (n, order) = Self::combine_shape(self, rhs);
        if n == 0 {
            return Self::constant(self.value + sign * rhs.value);
        }
        let mut out = Self::zeros(n, order, self.value + sign * rhs.value);
        let len = out.data.len();
        if self.n != 0 {
            for (o, v) in out.data.iter_mut().zip(&self.data[..len]) {
                *o += v;
            }
        }
        if rhs.n != 0 {
            for (o, v) in out.data.iter_mut().zip(&rhs.data[..len]) {
                *o += sign * v;
            }
        }
        out
    }

    fn mul_ref(&self, rhs: &Self) -> Self {
        if self.n == 0 {
            return rhs.scaled(self.value);
        }
        if rhs.n == 0 {
            return self.scaled(rhs.value);
        }
        let (n, order) = Self::combine_shape(self, rhs);
        let (u0, v0) = (self.value, rhs.value);
        let (u, v) = (&self.data, &rhs.data);
        let mut out = Self::zeros(n, order, u0 * v0);
        if order == 0 {
            return out;
        }
        for i in 0..n {
            out.data[i] = u[i] * v0 + u0 * v[i];
        }
        if order >= 2 {
            let o2 = n;
            for i in 0..n {
                for j in 0..n {
                    let ij = o2 + i * n + j;
                    out.data[ij] = u[ij] * v0 + u[i] * v[j] + u[j] * v[i] + u0 * v[ij];
                }
            }
        }
        if order >= 3 {
            let o2 = n;
            let o3 = n + n * n;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let ijk = o3 + (i * n + j) * n + k;
                        let (ij, ik, jk) = (o2 + i * n + j, o2 + i * n + k, o2 + j * n + k);
                        out.data[ijk] = u[ijk] * v0
                            + u[ij] * v[k]
                            + u[ik] * v[j]
                            + u[jk] * v[i]
                            + u[i] * v[jk]
                            + u[j] * v[ik]
                            + u[k] * v[ij]
                            + u0 * v[ijk];
                    }
                }
            }
        }
        out.debug_check();
        out
    }

    fn recip_jet(&self) -> Self {
        let x = self.value;
        let r = 1.0 / x;
        self.compose(r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r)
    }

    /// Division that rejects divisors smaller than [`DOMAIN_EPS`].
    pub fn checked_div(&self, rhs: &Self) -> Result<Self, GeomError> {
        if rhs.value.abs() < DOMAIN_EPS || !rhs.value.is_finite() {
            return Err(GeomError::Domain(format!("division by {:e}", rhs.value)));
        }
        Ok(self.mul_ref(&rhs.recip_jet()))
    }

    /// Square root that rejects negative or vanishing arguments.
    pub fn checked_sqrt(&self) -> Result<Self, GeomError> {
        if self.value < DOMAIN_EPS || !self.value.is_finite() {
            return Err(GeomError::Domain(format!("square root of {:e}", self.value)));
        }
        Ok(Scalar::sqrt(self.clone()))
    }

    /// Arccosine that rejects arguments outside `(-1, 1)`.
    pub fn checked_acos(&self) -> Result<Self, GeomError> {
        if !(self.value > -1.0 && self.value < 1.0) {
            return Err(GeomError::Domain(format!("arccos of {:e}", self.value)));
        }
        Ok(Scalar::acos(self.clone()))
    }
}

/// Lift a point to coordinate jets seeded at `offset..offset + v.len()` out
/// of `nvars` variables. Used to carry base-point and fiber derivatives in
/// one jet.
pub fn lift_block(v: &[f64], offset: usize, nvars: usize, order: u8) -> Result<Vec<Jet>, GeomError> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(GeomError::InvalidOrder(order));
    }
    if offset + v.len() > nvars {
        return Err(GeomError::Domain(format!("seed block {offset}+{} exceeds {nvars} variables", v.len())));
    }
    Ok(v.iter()
        .enumerate()
        .map(|(k, &val)| {
            let mut j = Jet::zeros(nvars, order, val);
            j.data[offset + k] = 1.0;
            j
        })
        .collect())
}

/// Lift a point to coordinate jets.
///
/// With `seed = None` every coordinate is seeded (`d y^k / d y^i = delta`);
/// with `seed = Some(s)` only coordinate `s` varies and the jets are
/// univariate.
pub fn lift(v: &[f64], seed: Option<usize>, order: u8) -> Result<Vec<Jet>, GeomError> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(GeomError::InvalidOrder(order));
    }
    match seed {
        None => {
            let n = v.len();
            Ok(v.iter()
                .enumerate()
                .map(|(k, &val)| {
                    let mut j = Jet::zeros(n, order, val);
                    j.data[k] = 1.0;
                    j
                })
                .collect())
        }
        Some(s) => {
            if s >= v.len() {
                return Err(GeomError::Domain(format!("seed index {s} outside 0..{}", v.len())));
            }
            Ok(v.iter()
                .enumerate()
                .map(|(k, &val)| {
                    let mut j = Jet::zeros(1, order, val);
                    if k == s {
                        j.data[0] = 1.0;
                    }
                    j
                })
                .collect())
        }
    }
}

impl fmt::Debug for Jet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Jet")
            .field("n", &self.n)
            .field("order", &self.order)
            .field("value", &self.value)
            .field("d1", &(0..self.n).map(|i| self.d1(i)).collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, rhs: Jet) -> Jet {
        self.add_ref(&rhs, 1.0)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, rhs: Jet) -> Jet {
        self.add_ref(&rhs, -1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, rhs: Jet) -> Jet {
        self.mul_ref(&rhs)
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, rhs: Jet) -> Jet {
        if rhs.n == 0 {
            return self.scaled(1.0 / rhs.value);
        }
        self.mul_ref(&rhs.recip_jet())
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scaled(-1.0)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(self, rhs: f64) -> Jet {
        self.shifted(rhs)
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(self, rhs: f64) -> Jet {
        self.shifted(-rhs)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, rhs: f64) -> Jet {
        self.scaled(rhs)
    }
}

impl Div<f64> for Jet {
    type Output = Jet;
    fn div(self, rhs: f64) -> Jet {
        self.scaled(1.0 / rhs)
    }
}

impl Scalar for Jet {
    fn cst(v: f64) -> Self {
        Jet::constant(v)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        let r = 1.0 / s;
        self.compose(s, 0.5 * r, -0.25 * r * r * r, 0.375 * r * r * r * r * r)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.compose(e, e, e, e)
    }
    fn ln(self) -> Self {
        let x = self.value;
        let r = 1.0 / x;
        self.compose(x.ln(), r, -r * r, 2.0 * r * r * r)
    }
    fn powf(self, p: f64) -> Self {
        let x = self.value;
        if p == 1.0 {
            return self;
        }
        self.compose(
            x.powf(p),
            p * x.powf(p - 1.0),
            p * (p - 1.0) * x.powf(p - 2.0),
            p * (p - 1.0) * (p - 2.0) * x.powf(p - 3.0),
        )
    }
    fn sin(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.compose(s, c, -s, -c)
    }
    fn cos(self) -> Self {
        let (s, c) = self.value.sin_cos();
        self.compose(c, -s, -c, s)
    }
    fn atan(self) -> Self {
        let x = self.value;
        let d = 1.0 / (1.0 + x * x);
        self.compose(x.atan(), d, -2.0 * x * d * d, (6.0 * x * x - 2.0) * d * d * d)
    }
    fn acos(self) -> Self {
        let x = self.value;
        let w = 1.0 - x * x;
        let r = 1.0 / w.sqrt();
        self.compose(x.acos(), -r, -x * r * r * r, -(1.0 + 2.0 * x * x) * r * r * r * r * r)
    }
    fn atan2(self, x: Self) -> Self {
        let value = self.value.atan2(x.value);
        // Same derivatives as atan(y/x) or -atan(x/y), whichever is better
        // conditioned; only the constant differs.
        let mut out = if x.value.abs() >= self.value.abs() {
            Scalar::atan(self / x)
        } else {
            -Scalar::atan(x / self)
        };
        out.value = value;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fd;
    use proptest::prelude::*;

    /// Exercises every elementary function the formulas use.
    fn probe<S: Scalar>(x: &[S]) -> S {
        let n = x.len();
        let a = (x[0].clone() * 0.3).exp() * (x[1].clone() + x[2].clone().square()).sin() / (x[0].clone().cos() + 1.5);
        let b = (x[n - 1].clone().square() + 2.0).sqrt() + (x[1].clone() * x[0].clone()).atan();
        let c = (x[2].clone().sin() * 0.3).acos() + (x[1].clone().square() + 2.0).ln() * x[n - 1].clone();
        let d = (x[0].clone().square() + 1.0).powf(0.37) - x[2].clone().atan2(x[1].clone().square() + 2.0);
        a + b + c + d
    }

    const H: f64 = 1e-3;

    fn fd1(x: &[f64], i: usize) -> f64 {
        fd::derivative(x[i], H, |t| {
            let mut xs = x.to_vec();
            xs[i] = t;
            Ok(vec![probe(&xs)])
        })
        .unwrap()[0]
    }

    fn fd2(x: &[f64], i: usize, j: usize) -> f64 {
        fd::derivative(x[j], H, |t| {
            let mut xs = x.to_vec();
            xs[j] = t;
            Ok(vec![fd1(&xs, i)])
        })
        .unwrap()[0]
    }

    fn fd3(x: &[f64], i: usize, j: usize, k: usize) -> f64 {
        fd::derivative(x[k], H, |t| {
            let mut xs = x.to_vec();
            xs[k] = t;
            Ok(vec![fd2(&xs, i, j)])
        })
        .unwrap()[0]
    }

    fn point() -> impl Strategy<Value = Vec<f64>> {
        (3usize..=5).prop_flat_map(|n| proptest::collection::vec(-1.0f64..1.0, n))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn derivatives_match_differences(x in point()) {
            let n = x.len();
            let j = probe(&lift(&x, None, 3).unwrap());
            prop_assert!((j.val() - probe(&x)).abs() < 1e-14);
            j.check_symmetry().unwrap();
            for i in 0..n {
                prop_assert!((j.d1(i) - fd1(&x, i)).abs() < 1e-7);
                for k in 0..n {
                    prop_assert!((j.d2(i, k) - fd2(&x, i, k)).abs() < 1e-5);
                }
            }
            for (i, k, l) in [(0, 1, 2), (0, 0, 1), (2, 2, 2), (n - 1, 1, 0)] {
                prop_assert!((j.d3(i, k, l) - fd3(&x, i, k, l)).abs() < 1e-3);
            }
        }

        #[test]
        fn lower_orders_are_truncations(x in point()) {
            let full = probe(&lift(&x, None, 3).unwrap());
            let second = probe(&lift(&x, None, 2).unwrap());
            prop_assert_eq!(full.truncate(2), second);
        }

        #[test]
        fn univariate_seed_is_a_slice(x in point(), s in 0usize..3) {
            let full = probe(&lift(&x, None, 2).unwrap());
            let uni = probe(&lift(&x, Some(s), 2).unwrap());
            prop_assert!((uni.d1(0) - full.d1(s)).abs() < 1e-13);
            prop_assert!((uni.d2(0, 0) - full.d2(s, s)).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_mix_with_any_size() {
        let x = lift(&[0.5, -0.2, 0.1], None, 2).unwrap();
        let v = x[0].clone() * Jet::constant(3.0) + 1.0;
        assert_eq!(v.nvars(), 3);
        assert_eq!(v.d1(0), 3.0);
        assert!(Jet::constant(2.0).is_constant());
    }

    #[test]
    fn block_seeding() {
        let j = lift_block(&[1.0, 2.0], 3, 5, 1).unwrap();
        assert_eq!(j[1].gradient(5), vec![0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(lift_block(&[1.0, 2.0], 4, 5, 1).is_err());
    }

    #[test]
    fn invalid_orders_and_domains() {
        assert_eq!(lift(&[1.0], None, 4).unwrap_err(), GeomError::InvalidOrder(4));
        assert!(lift(&[1.0], None, 0).is_err());
        let z = lift(&[0.0, 1.0, 2.0], None, 1).unwrap();
        assert!(z[0].checked_sqrt().is_err());
        assert!(z[1].checked_div(&z[0]).is_err());
        assert!(z[1].checked_acos().is_err());
    }
}
