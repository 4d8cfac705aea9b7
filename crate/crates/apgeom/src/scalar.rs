//! Forward-mode automatic differentiation.
//!
//! Every field in this crate is evaluated generically over a [`Scalar`], so a
//! first derivative is obtained by instantiating the same code at
//! `Dual<f64>`, a second at `Dual<Dual<f64>>` and so on.  Curvature needs two
//! metric derivatives and divergences of curvature-level tensors need a
//! third; nothing in the crate nests deeper than three levels.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Arithmetic closed under the elementary functions the expression language
/// exposes, with exact derivative propagation when instantiated at [`Dual`].
pub trait Scalar:
    Copy
    + Clone
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;

    /// Underlying value with every derivative part stripped.
    fn value(self) -> f64;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn sinh(self) -> Self;
    fn cosh(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    /// Real exponent; derivative uses `e * x^(e-1)`.
    fn powf(self, e: f64) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn recip(self) -> Self {
        Self::one() / self
    }
    /// Integer exponent by repeated squaring; valid for negative bases.
    fn powi(self, e: i32) -> Self {
        if e < 0 {
            return self.powi(-e).recip();
        }
        let mut acc = Self::one();
        let mut base = self;
        let mut e = e as u32;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn tan(self) -> Self {
        f64::tan(self)
    }
    fn sinh(self) -> Self {
        f64::sinh(self)
    }
    fn cosh(self) -> Self {
        f64::cosh(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn powf(self, e: f64) -> Self {
        f64::powf(self, e)
    }
}

/// First-order jet `re + eps·d` over an arbitrary scalar `S`.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Dual<S: Scalar> {
    pub re: S,
    pub du: S,
}

impl<S: Scalar> Dual<S> {
    pub fn new(re: S, du: S) -> Self {
        Dual { re, du }
    }
    /// Constant lift: derivative part zero.
    pub fn constant(re: S) -> Self {
        Dual {
            re,
            du: S::zero(),
        }
    }
    /// Identity jet: derivative part one.
    pub fn variable(re: S) -> Self {
        Dual { re, du: S::one() }
    }
}

impl<S: Scalar> Add for Dual<S> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.du + o.du)
    }
}

impl<S: Scalar> Sub for Dual<S> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.du - o.du)
    }
}

impl<S: Scalar> Mul for Dual<S> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.du * o.re + self.re * o.du)
    }
}

impl<S: Scalar> Div for Dual<S> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = o.re.recip();
        Dual::new(
            self.re * inv,
            (self.du - self.re * inv * o.du) * inv,
        )
    }
}

impl<S: Scalar> Neg for Dual<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.du)
    }
}

impl<S: Scalar> Scalar for Dual<S> {
    fn from_f64(v: f64) -> Self {
        Dual::constant(S::from_f64(v))
    }
    fn value(self) -> f64 {
        self.re.value()
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.du * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.du / self.re)
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        Dual::new(r, self.du / (S::from_f64(2.0) * r))
    }
    fn sin(self) -> Self {
        Dual::new(self.re.sin(), self.du * self.re.cos())
    }
    fn cos(self) -> Self {
        Dual::new(self.re.cos(), -(self.du * self.re.sin()))
    }
    fn tan(self) -> Self {
        let c = self.re.cos();
        Dual::new(self.re.tan(), self.du / (c * c))
    }
    fn sinh(self) -> Self {
        Dual::new(self.re.sinh(), self.du * self.re.cosh())
    }
    fn cosh(self) -> Self {
        Dual::new(self.re.cosh(), self.du * self.re.sinh())
    }
    fn tanh(self) -> Self {
        let c = self.re.cosh();
        Dual::new(self.re.tanh(), self.du / (c * c))
    }
    fn abs(self) -> Self {
        if self.re.value() < 0.0 {
            -self
        } else {
            self
        }
    }
    fn powf(self, e: f64) -> Self {
        let sc = S::from_f64(e);
        Dual::new(
            self.re.powf(e),
            self.du * sc * self.re.powf(e - 1.0),
        )
    }
}

/// Lift a point to duals with all derivative parts zero.
pub fn lift<S: Scalar>(x: &[S]) -> Vec<Dual<S>> {
    x.iter().map(|&v| Dual::constant(v)).collect()
}

/// Lift a point, seeding coordinate `k` as the differentiation direction.
pub fn seed<S: Scalar>(x: &[S], k: usize) -> Vec<Dual<S>> {
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            if i == k {
                Dual::variable(v)
            } else {
                Dual::constant(v)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    type D1 = Dual<f64>;
    type D2 = Dual<Dual<f64>>;
    type D3 = Dual<Dual<Dual<f64>>>;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        // Central difference with one Richardson level.
        let d = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
        (4.0 * d(h / 2.0) - d(h)) / 3.0
    }

    #[test]
    fn first_derivatives_match_finite_differences() {
        let fs: Vec<(fn(D1) -> D1, fn(f64) -> f64)> = vec![
            (|x| x.exp(), |x| x.exp()),
            (|x| x.ln(), |x| x.ln()),
            (|x| x.sqrt(), |x| x.sqrt()),
            (|x| x.sin(), |x| x.sin()),
            (|x| x.tan(), |x| x.tan()),
            (|x| x.sinh(), |x| x.sinh()),
            (|x| x.tanh(), |x| x.tanh()),
            (|x| x.powf(2.5), |x| x.powf(2.5)),
            (|x| (x * x + x.sin()) / x.cosh(), |x| {
                (x * x + x.sin()) / x.cosh()
            }),
        ];
        for (fd1, ff) in fs {
            for &x in &[0.3, 0.7, 1.9] {
                let ad = fd1(Dual::variable(x)).du;
                let num = fd(ff, x, 1e-4);
                assert!(
                    (ad - num).abs() < 1e-7 * (1.0 + ad.abs()),
                    "ad={ad} fd={num}"
                );
            }
        }
    }

    #[test]
    fn nested_duals_give_exact_higher_derivatives() {
        // f(x) = sin(x): f'' = -sin, f''' = -cos.
        let x = D3::new(
            D2::new(D1::variable(0.4), D1::constant(1.0)),
            D2::constant(D1::constant(1.0)),
        );
        let y = x.sin();
        let d3 = y.du.du.du;
        assert!((y.re.re.re - 0.4f64.sin()).abs() < 1e-15);
        assert!((y.du.re.re - 0.4f64.cos()).abs() < 1e-15);
        assert!((y.re.du.du + 0.4f64.sin()).abs() < 1e-14);
        assert!((d3 + 0.4f64.cos()).abs() < 1e-14);
    }

    #[test]
    fn powi_handles_negative_bases_and_exponents() {
        let x = D1::variable(-1.5);
        let y = x.powi(3);
        assert!((y.re - (-3.375)).abs() < 1e-15);
        assert!((y.du - 3.0 * 2.25).abs() < 1e-14);
        let z = x.powi(-2);
        assert!((z.re - 1.0 / 2.25).abs() < 1e-15);
    }

    #[test]
    fn seeding_selects_one_direction() {
        let x = [1.0, 2.0];
        let s = seed(&x, 1);
        let f = s[0] * s[0] * s[1]; // d/dx1 = x0^2
        assert!((f.du - 1.0).abs() < 1e-15);
    }
}
