//! Quad-double arithmetic: an unevaluated sum of four `f64` values carrying
//! roughly 212 bits of significand.
//!
//! Every operation collects its partial results as floating-point terms,
//! sums them exactly into a non-overlapping expansion (Shewchuk's grow and
//! compress) and keeps the four leading components. This is slower than the
//! hand-scheduled renormalisations of dedicated libraries but simple to
//! verify. `exp` reduces by `ln 2` and `2^10` before a Taylor series; `ln`
//! and `sqrt` are Newton iterations.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use super::Real;

#[derive(Clone, Copy, Default, PartialEq)]
pub struct QuadDouble {
    /// Non-overlapping components, largest first.
    c: [f64; 4],
}

const LN2: QuadDouble = QuadDouble {
    c: [
        6.931_471_805_599_453e-1,
        2.319_046_813_846_299_6e-17,
        5.707_708_438_416_212e-34,
        -3.582_432_210_601_811_4e-50,
    ],
};

const MAX_TERMS: usize = 32;

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Fixed-capacity list of floating-point terms.
struct Terms {
    buf: [f64; MAX_TERMS],
    len: usize,
}

impl Terms {
    fn new() -> Self {
        Self {
            buf: [0.0; MAX_TERMS],
            len: 0,
        }
    }

    #[inline]
    fn push(&mut self, v: f64) {
        if v != 0.0 {
            self.buf[self.len] = v;
            self.len += 1;
        }
    }

    fn extend(&mut self, q: QuadDouble) {
        for v in q.c {
            self.push(v);
        }
    }

    /// Exact sum rounded to four components.
    fn collapse(&self) -> QuadDouble {
        let terms = &self.buf[..self.len];
        if terms.iter().any(|v| !v.is_finite()) {
            return QuadDouble::from(terms.iter().sum::<f64>());
        }
        // grow an exact expansion, smallest component first
        let mut e = [0.0f64; MAX_TERMS + 1];
        let mut m = 0;
        for &t in terms {
            let mut q = t;
            let mut out = 0;
            for i in 0..m {
                let (s, h) = two_sum(q, e[i]);
                q = s;
                if h != 0.0 {
                    e[out] = h;
                    out += 1;
                }
            }
            if q != 0.0 {
                e[out] = q;
                out += 1;
            }
            m = out;
        }
        if m == 0 {
            return QuadDouble::ZERO;
        }
        // compress: top-down then bottom-up fast_two_sum sweeps
        let mut g = [0.0f64; MAX_TERMS + 1];
        let mut bottom = m - 1;
        let mut q = e[m - 1];
        for i in (0..m - 1).rev() {
            let (s, small) = fast_two_sum(q, e[i]);
            if small != 0.0 {
                g[bottom] = s;
                bottom -= 1;
                q = small;
            } else {
                q = s;
            }
        }
        g[bottom] = q;
        let mut h = [0.0f64; MAX_TERMS + 1];
        let mut top = 0;
        for &gi in &g[bottom + 1..m] {
            let (s, small) = fast_two_sum(gi, q);
            q = s;
            if small != 0.0 {
                h[top] = small;
                top += 1;
            }
        }
        h[top] = q;
        let mut c = [0.0; 4];
        for (k, slot) in c.iter_mut().enumerate() {
            if k > top {
                break;
            }
            *slot = h[top - k];
        }
        QuadDouble { c }
    }
}

impl QuadDouble {
    pub const ZERO: Self = Self { c: [0.0; 4] };
    pub const ONE: Self = Self { c: [1.0, 0.0, 0.0, 0.0] };

    /// Builds a value from up to four parts, renormalising them.
    pub fn new(parts: [f64; 4]) -> Self {
        let mut t = Terms::new();
        for v in parts {
            t.push(v);
        }
        t.collapse()
    }

    pub fn components(self) -> [f64; 4] {
        self.c
    }

    fn scale_pow2(self, factor: f64) -> Self {
        Self {
            c: self.c.map(|v| v * factor),
        }
    }

    /// `self - b * q` for a scalar `q`, exactly up to the final rounding.
    fn sub_scaled(self, b: Self, q: f64) -> Self {
        let mut t = Terms::new();
        t.extend(self);
        for v in b.c {
            let (p, e) = two_prod(v, q);
            t.push(-p);
            t.push(-e);
        }
        t.collapse()
    }

    fn exp_impl(self) -> Self {
        let x = self.c[0];
        if x.is_nan() {
            return Self::from(f64::NAN);
        }
        if x > 709.78 {
            return Self::from(f64::INFINITY);
        }
        if x < -745.0 {
            return Self::ZERO;
        }
        if self == Self::ZERO {
            return Self::ONE;
        }
        let k = (x / LN2.c[0]).round();
        // |r| <= ln2 / 2^11 after both reductions
        let r = (self - LN2 * Self::from(k)).scale_pow2(1.0 / 1024.0);

        // expm1(r) by Taylor series
        let mut sum = r;
        let mut term = r;
        for n in 2..=40 {
            term = term * r / Self::from(n as f64);
            sum += term;
            if term.c[0].abs() < 1e-70 {
                break;
            }
        }
        // (1 + s)^2 - 1 = 2s + s^2, ten times
        for _ in 0..10 {
            sum = sum.scale_pow2(2.0) + sum * sum;
        }
        let result = sum + Self::ONE;
        let k = k as i32;
        let half = k / 2;
        result.scale_pow2(2f64.powi(half)).scale_pow2(2f64.powi(k - half))
    }

    fn ln_impl(self) -> Self {
        let a = self.c[0];
        if a <= 0.0 || a.is_nan() {
            return Self::from(f64::NAN);
        }
        if !a.is_finite() {
            return self;
        }
        // Newton on exp(x) = a; each step doubles the number of correct bits
        let mut x = Self::from(a.ln());
        for _ in 0..3 {
            x = x + self * (-x).exp_impl() - Self::ONE;
        }
        x
    }

    fn sqrt_impl(self) -> Self {
        let a = self.c[0];
        if a == 0.0 {
            return Self::ZERO;
        }
        if a < 0.0 || a.is_nan() {
            return Self::from(f64::NAN);
        }
        let mut x = Self::from(a.sqrt());
        for _ in 0..3 {
            x = (x + self / x).scale_pow2(0.5);
        }
        x
    }
}

impl From<f64> for QuadDouble {
    fn from(value: f64) -> Self {
        Self {
            c: [value, 0.0, 0.0, 0.0],
        }
    }
}

impl fmt::Debug for QuadDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}{:+e}{:+e}{:+e}", self.c[0], self.c[1], self.c[2], self.c[3])
    }
}

impl fmt::Display for QuadDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f64(), f)
    }
}

impl PartialOrd for QuadDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        (*self - *other).c[0].partial_cmp(&0.0)
    }
}

impl Neg for QuadDouble {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self { c: self.c.map(|v| -v) }
    }
}

impl Add for QuadDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        if b.c[1] == 0.0 && b.c[0] == 0.0 {
            return self;
        }
        let mut t = Terms::new();
        t.extend(self);
        t.extend(b);
        t.collapse()
    }
}

impl Sub for QuadDouble {
    type Output = Self;
    #[inline]
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for QuadDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (a, b) = (self.c, b.c);
        let mut t = Terms::new();
        for i in 0..4 {
            for j in 0..4 - i {
                let (p, e) = two_prod(a[i], b[j]);
                t.push(p);
                t.push(e);
            }
        }
        for i in 1..4 {
            t.push(a[i] * b[4 - i]);
        }
        t.collapse()
    }
}

impl Div for QuadDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        // long division, one f64 quotient digit at a time
        let mut q = [0.0; 5];
        let mut r = self;
        for digit in q.iter_mut() {
            *digit = r.c[0] / b.c[0];
            if !digit.is_finite() {
                return Self::from(self.c[0] / b.c[0]);
            }
            r = r.sub_scaled(b, *digit);
        }
        let mut t = Terms::new();
        for v in q {
            t.push(v);
        }
        t.collapse()
    }
}

macro_rules! assign_op {
    ($tr:ident, $method:ident, $op:tt) => {
        impl $tr for QuadDouble {
            #[inline]
            fn $method(&mut self, rhs: Self) {
                *self = *self $op rhs;
            }
        }
    };
}

assign_op!(AddAssign, add_assign, +);
assign_op!(SubAssign, sub_assign, -);
assign_op!(MulAssign, mul_assign, *);
assign_op!(DivAssign, div_assign, /);

impl Sum for QuadDouble {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::ZERO, |acc, v| acc + v)
    }
}

impl Real for QuadDouble {
    const EPSILON: f64 = 2.43e-63;
    const DEFAULT_RANK_TOL: f64 = 1e-40;

    fn from_f64(value: f64) -> Self {
        Self::from(value)
    }
    fn to_f64(self) -> f64 {
        self.c[0] + self.c[1]
    }
    fn exp(self) -> Self {
        self.exp_impl()
    }
    fn ln(self) -> Self {
        self.ln_impl()
    }
    fn sqrt(self) -> Self {
        self.sqrt_impl()
    }
    fn abs(self) -> Self {
        if self.c[0] < 0.0 {
            -self
        } else {
            self
        }
    }
    fn is_finite(self) -> bool {
        self.c.iter().all(|v| v.is_finite())
    }
}
