use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Real-like number the tape and the functionals are generic over.
pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(x: f64) -> Self;
    /// Leading real part.
    fn re(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    fn sqrt(self) -> Self;
    fn powf(self, p: f64) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }

    fn one() -> Self {
        Self::from_f64(1.0)
    }

    fn scale(self, c: f64) -> Self {
        self * Self::from_f64(c)
    }

    /// Row-major `C (+)= op(A)·op(B)` with explicit strides; `A` is m×k,
    /// `B` is k×n as seen after any transposition encoded in the strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: usize,
        csa: usize,
        b: &[Self],
        rsb: usize,
        csb: usize,
        c: &mut [Self],
        accumulate: bool,
    ) {
        for i in 0..m {
            for j in 0..n {
                let mut s = if accumulate { c[i * n + j] } else { Self::zero() };
                for p in 0..k {
                    s += a[i * rsa + p * csa] * b[p * rsb + j * csb];
                }
                c[i * n + j] = s;
            }
        }
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn re(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn powf(self, p: f64) -> Self {
        f64::powf(self, p)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: usize,
        csa: usize,
        b: &[f64],
        rsb: usize,
        csb: usize,
        c: &mut [f64],
        accumulate: bool,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        if k == 0 {
            if !accumulate {
                c[..m * n].iter_mut().for_each(|x| *x = 0.0);
            }
            return;
        }
        let beta = if accumulate { 1.0 } else { 0.0 };
        // SAFETY: strides describe in-bounds m×k, k×n and m×n views of the
        // given slices, which the callers size accordingly.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.as_ptr(),
                rsa as isize,
                csa as isize,
                b.as_ptr(),
                rsb as isize,
                csb as isize,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
}

/// Forward-mode dual number `re + du·ε`, nestable.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual<T> {
    pub re: T,
    pub du: T,
}

impl<T: Scalar> Dual<T> {
    pub fn new(re: T, du: T) -> Self {
        Dual { re, du }
    }

    pub fn constant(re: T) -> Self {
        Dual { re, du: T::zero() }
    }

    pub fn variable(re: T) -> Self {
        Dual { re, du: T::one() }
    }
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual::new(self.re + o.re, self.du + o.du)
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual::new(self.re - o.re, self.du - o.du)
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual::new(self.re * o.re, self.du * o.re + self.re * o.du)
    }
}

impl<T: Scalar> Div for Dual<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let q = self.re / o.re;
        Dual::new(q, (self.du - q * o.du) / o.re)
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual::new(-self.re, -self.du)
    }
}

impl<T: Scalar> AddAssign for Dual<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Scalar> SubAssign for Dual<T> {
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Scalar> MulAssign for Dual<T> {
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn from_f64(x: f64) -> Self {
        Dual::constant(T::from_f64(x))
    }
    fn re(self) -> f64 {
        self.re.re()
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual::new(e, self.du * e)
    }
    fn ln(self) -> Self {
        Dual::new(self.re.ln(), self.du / self.re)
    }
    fn ln_1p(self) -> Self {
        Dual::new(self.re.ln_1p(), self.du / (T::one() + self.re))
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        Dual::new(s, self.du / (s + s))
    }
    fn powf(self, p: f64) -> Self {
        Dual::new(self.re.powf(p), self.du * self.re.powf(p - 1.0).scale(p))
    }
    fn is_finite(self) -> bool {
        self.re.is_finite() && self.du.is_finite()
    }
}
