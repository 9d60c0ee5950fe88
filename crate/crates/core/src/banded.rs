//! Square band matrices with equal lower/upper bandwidth and an
//! unpivoted LU factorization.
//!
//! Every system solved here is either symmetric positive definite or has a
//! positive definite real part (Crank-Nicolson), so elimination without
//! pivoting is stable.

use std::ops::{Add, Div, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Div<Output = Self>
{
    fn zero() -> Self;
    fn magnitude(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix<T> {
    n: usize,
    bw: usize,
    /// Row-major: entry (i, i + k - bw) lives at `data[i * width + k]`.
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![T::zero(); n * (2 * bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn width(&self) -> usize {
        2 * self.bw + 1
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if i >= self.n || j >= self.n || i.abs_diff(j) > self.bw {
            return None;
        }
        Some(i * self.width() + (j + self.bw - i))
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.slot(i, j).map_or(T::zero(), |s| self.data[s])
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: T) {
        let s = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("({i}, {j}) outside band {}", self.bw));
        self.data[s] = self.data[s] + v;
    }

    pub fn add_diagonal(&mut self, diag: &[T]) {
        assert_eq!(diag.len(), self.n);
        let (w, b) = (self.width(), self.bw);
        for (i, &d) in diag.iter().enumerate() {
            self.data[i * w + b] = self.data[i * w + b] + d;
        }
    }

    /// Applies `f` entry-wise, keeping the band structure.
    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> BandMatrix<U> {
        BandMatrix {
            n: self.n,
            bw: self.bw,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mul_vec<V>(&self, x: &[V]) -> Vec<V>
    where
        V: Scalar,
        T: Mul<V, Output = V>,
    {
        assert_eq!(x.len(), self.n);
        let (w, b) = (self.width(), self.bw);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(b);
                let hi = (i + b).min(self.n - 1);
                (lo..=hi).fold(V::zero(), |acc, j| {
                    acc + self.data[i * w + (j + b - i)] * x[j]
                })
            })
            .collect()
    }

    pub fn factor(mut self) -> Result<BandLu<T>> {
        let (n, w, b) = (self.n, self.width(), self.bw);
        let scale = self
            .data
            .iter()
            .map(|v| v.magnitude())
            .fold(0.0_f64, f64::max);
        for i in 0..n {
            let pivot = self.data[i * w + b];
            if !(pivot.magnitude() > 1e-300 * scale.max(1e-300)) {
                return Err(Error::LinearSolve { row: i });
            }
            let last = (i + b).min(n - 1);
            for r in i + 1..=last {
                let ri = r * w + (i + b - r);
                let factor = self.data[ri] / pivot;
                self.data[ri] = factor;
                for c in i + 1..=last {
                    let rc = r * w + (c + b - r);
                    let ic = i * w + (c + b - i);
                    self.data[rc] = self.data[rc] - factor * self.data[ic];
                }
            }
        }
        Ok(BandLu { lu: self })
    }
}

/// Error-free transformations for compensated dot products.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl BandMatrix<f64> {
    /// `b - A x` with each row accumulated in twice the working precision.
    pub fn residual_compensated(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        assert_eq!(b.len(), self.n);
        let (w, bw) = (self.width(), self.bw);
        (0..self.n)
            .map(|i| {
                let (mut s, mut c) = (b[i], 0.0);
                let lo = i.saturating_sub(bw);
                let hi = (i + bw).min(self.n - 1);
                for j in lo..=hi {
                    let (p, e) = two_prod(-self.data[i * w + (j + bw - i)], x[j]);
                    let (t, f) = two_sum(s, p);
                    s = t;
                    c += e + f;
                }
                s + c
            })
            .collect()
    }

    /// `A x` accumulated in twice the working precision.
    pub fn mul_vec_compensated(&self, x: &[f64]) -> Vec<f64> {
        self.residual_compensated(x, &vec![0.0; self.n])
            .into_iter()
            .map(|v| -v)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct BandLu<T> {
    lu: BandMatrix<T>,
}

impl BandLu<f64> {
    /// Solve followed by `steps` rounds of iterative refinement against
    /// `a`, the matrix this factorization came from.
    pub fn solve_refined(&self, a: &BandMatrix<f64>, rhs: &[f64], steps: usize) -> Vec<f64> {
        let mut x = self.solve(rhs);
        for _ in 0..steps {
            let mut r = a.residual_compensated(&x, rhs);
            self.solve_in_place(&mut r);
            x.iter_mut().zip(&r).for_each(|(xi, ri)| *xi += ri);
        }
        x
    }
}

impl<T: Scalar> BandLu<T> {
    pub fn solve_in_place(&self, rhs: &mut [T]) {
        let m = &self.lu;
        let (n, w, b) = (m.n, m.width(), m.bw);
        assert_eq!(rhs.len(), n);
        for i in 0..n {
            let lo = i.saturating_sub(b);
            let mut acc = rhs[i];
            for j in lo..i {
                acc = acc - m.data[i * w + (j + b - i)] * rhs[j];
            }
            rhs[i] = acc;
        }
        for i in (0..n).rev() {
            let hi = (i + b).min(n - 1);
            let mut acc = rhs[i];
            for j in i + 1..=hi {
                acc = acc - m.data[i * w + (j + b - i)] * rhs[j];
            }
            rhs[i] = acc / m.data[i * w + b];
        }
    }

    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
