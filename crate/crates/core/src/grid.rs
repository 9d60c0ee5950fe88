//! Problem constants, the radial grid and sampled radial fields.
//!
//! Every field is radial, so all integrals over R^N reduce to
//! `sigma_N * int_0^R f(r) r^(N-1) dr`. The grid carries the quadrature
//! weights for that measure together with the discrete gradient form
//!
//! ```text
//!   Q(u) = sum_m  sigma_N r_m^(N-1) h |(D u)_m|^2 ,   r_m = (m + 1/2) h
//! ```
//!
//! where `D` is the fourth-order staggered difference evaluated at cell
//! midpoints with an even reflection at the origin and zero Dirichlet
//! values at and beyond `r_max`. The discrete Laplacian is defined as
//! `-W^{-1} grad Q`, so it is symmetric in the weighted inner product and
//! `Q` is exactly the kinetic form the time stepper conserves.
//!
//! For `N >= 2` the origin carries zero weight; its value is not an
//! unknown and is reconstructed from nodes 1..=3 by even polynomial
//! extrapolation.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::error::{Error, Result};

pub const DEFAULT_R_MAX: f64 = 12.0;
pub const DEFAULT_INTERVALS: usize = 2048;
pub const MIN_INTERVALS: usize = 16;

/// Right-end Gregory correction factors (exact for cubics).
const GREGORY: [f64; 3] = [3.0 / 8.0, 7.0 / 6.0, 23.0 / 24.0];

/// Even extrapolation `u(0) = (15 u1 - 6 u2 + u3) / 10`, exact for
/// `a + b r^2 + c r^4`.
const ORIGIN_EXTRAPOLATION: [f64; 3] = [1.5, -0.6, 0.1];

/// Problem constants `(N, p, omega)` with derived exponents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub dim: usize,
    pub p: f64,
    pub omega: f64,
    /// `alpha = N (p - 1) / 2`
    pub alpha: f64,
    /// `beta = alpha / 2`
    pub beta: f64,
    /// `2* - 1`, infinite for `N <= 2`.
    pub p_critical_upper: f64,
}

impl Params {
    pub fn new(dim: i64, p: f64, omega: f64) -> Result<Self> {
        if dim < 1 {
            return Err(Error::Dimension(dim));
        }
        let n = dim as f64;
        let lower = 1.0 + 4.0 / n;
        let upper = if dim >= 3 {
            2.0 * n / (n - 2.0) - 1.0
        } else {
            f64::INFINITY
        };
        if p.is_nan() || p <= lower {
            return Err(Error::Subcritical { p, bound: lower });
        }
        if p >= upper || p.is_infinite() {
            return Err(Error::Supercritical { p, bound: upper });
        }
        if !(omega > -n) || !omega.is_finite() {
            return Err(Error::Frequency { omega, bound: -n });
        }
        let alpha = n * (p - 1.0) / 2.0;
        Ok(Self {
            dim: dim as usize,
            p,
            omega,
            alpha,
            beta: alpha / 2.0,
            p_critical_upper: upper,
        })
    }

    /// Same `(N, p)` at another frequency.
    pub fn with_omega(&self, omega: f64) -> Result<Self> {
        Self::new(self.dim as i64, self.p, omega)
    }

    /// `alpha (alpha - 2) / (4 (p + 1))`
    pub fn ratio_threshold(&self) -> f64 {
        self.alpha * (self.alpha - 2.0) / (4.0 * (self.p + 1.0))
    }
}

pub fn make_params(dim: i64, p: f64, omega: f64) -> Result<Params> {
    Params::new(dim, p, omega)
}

/// Surface area of the unit sphere in R^N: `2 pi^(N/2) / Gamma(N/2)`.
pub fn sphere_area(dim: usize) -> f64 {
    // Gamma at half-integers by the recurrence Gamma(x + 1) = x Gamma(x).
    let mut x = if dim.is_multiple_of(2) { 1.0 } else { 0.5 };
    let mut gamma = if dim.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    while x < dim as f64 / 2.0 - 1e-9 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * PI.powf(dim as f64 / 2.0) / gamma
}

/// Uniform radial grid `r_j = j h`, `j = 0..=J`, with quadrature and the
/// discrete kinetic operator.
#[derive(Debug, Clone)]
pub struct RadialGrid {
    r_max: f64,
    intervals: usize,
    h: f64,
    dim: usize,
    sigma: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `sigma r_m^(N-1) h` at the midpoints `r_m = (m + 1/2) h`.
    midpoint_weights: Vec<f64>,
    /// `G^T S G` on the unknowns `first_active..J`.
    stiffness: BandMatrix<f64>,
}

impl PartialEq for RadialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.intervals == other.intervals && self.r_max == other.r_max
    }
}

pub fn make_grid(r_max: f64, intervals: usize, dim: usize) -> Result<Arc<RadialGrid>> {
    RadialGrid::new(r_max, intervals, dim).map(Arc::new)
}

impl RadialGrid {
    pub fn new(r_max: f64, intervals: usize, dim: usize) -> Result<Self> {
        if !(r_max > 0.0) || !r_max.is_finite() {
            return Err(Error::Grid(format!("r_max must be positive, got {r_max}")));
        }
        if intervals < MIN_INTERVALS {
            return Err(Error::Grid(format!(
                "need at least {MIN_INTERVALS} intervals, got {intervals}"
            )));
        }
        if dim < 1 {
            return Err(Error::Grid("dimension must be at least 1".into()));
        }
        let h = r_max / intervals as f64;
        let sigma = sphere_area(dim);
        let nodes: Vec<f64> = (0..=intervals).map(|j| j as f64 * h).collect();
        let density = |r: f64| sigma * r.powi(dim as i32 - 1);

        let mut weights: Vec<f64> = nodes.iter().map(|&r| h * density(r)).collect();
        weights[0] *= 0.5;
        for (k, c) in GREGORY.iter().enumerate() {
            weights[intervals - k] = h * density(nodes[intervals - k]) * c;
            if dim.is_multiple_of(2) {
                // odd integrands at the origin need the end correction too
                weights[k] = h * density(nodes[k]) * c;
            }
        }
        let midpoint_weights = (0..intervals)
            .map(|m| h * density((m as f64 + 0.5) * h))
            .collect();

        let mut grid = Self {
            r_max,
            intervals,
            h,
            dim,
            sigma,
            nodes,
            weights,
            midpoint_weights,
            stiffness: BandMatrix::zeros(1, 0),
        };
        grid.stiffness = grid.assemble_stiffness();
        Ok(grid)
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Number of intervals `J`.
    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the first unknown: 0 for `N = 1`, 1 otherwise.
    pub fn first_active(&self) -> usize {
        usize::from(self.dim != 1)
    }

    /// Unknowns are nodes `first_active..J`.
    pub fn active_len(&self) -> usize {
        self.intervals - self.first_active()
    }

    pub fn active_weights(&self) -> &[f64] {
        &self.weights[self.first_active()..self.intervals]
    }

    pub fn active_nodes(&self) -> &[f64] {
        &self.nodes[self.first_active()..self.intervals]
    }

    /// Symmetric kinetic matrix `G^T S G` on the unknowns (bandwidth 3).
    pub fn stiffness(&self) -> &BandMatrix<f64> {
        &self.stiffness
    }

    /// Sum of `weights * samples`.
    pub fn integrate(&self, samples: &[f64]) -> Result<f64> {
        if samples.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: samples.len(),
            });
        }
        Ok(self.weights.iter().zip(samples).map(|(w, s)| w * s).sum())
    }

    /// Expand unknowns into full node values `0..=J` (last node zero).
    pub fn expand<T>(&self, active: &[T]) -> Vec<T>
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
    {
        assert_eq!(active.len(), self.active_len());
        let mut full = vec![T::default(); self.len()];
        let a0 = self.first_active();
        full[a0..self.intervals].copy_from_slice(active);
        if a0 == 1 {
            let c = ORIGIN_EXTRAPOLATION;
            full[0] = full[1] * c[0] + full[2] * c[1] + full[3] * c[2];
        }
        full
    }

    /// Value of a node index in `-1..=J+1` in terms of full node values.
    fn ghost<T: Copy + Default>(&self, full: &[T], idx: isize) -> T {
        if idx < 0 {
            full[(-idx) as usize]
        } else if idx as usize >= self.intervals {
            T::default()
        } else {
            full[idx as usize]
        }
    }

    /// Staggered fourth-order derivative at midpoint `m + 1/2`.
    fn midpoint_derivative(&self, full: &[Complex64], m: usize) -> Complex64 {
        let m = m as isize;
        let g = |k| self.ghost(full, k);
        (g(m - 1) - g(m) * 27.0 + g(m + 1) * 27.0 - g(m + 2)) / (24.0 * self.h)
    }

    /// `Q(u)`, the discrete `||grad u||^2`. For `N >= 2` the value at the
    /// origin is reconstructed, not read.
    pub fn gradient_norm_sq(&self, values: &[Complex64]) -> f64 {
        let mut full = values.to_vec();
        if self.first_active() == 1 {
            let c = ORIGIN_EXTRAPOLATION;
            full[0] = full[1] * c[0] + full[2] * c[1] + full[3] * c[2];
        }
        (0..self.intervals)
            .map(|m| self.midpoint_weights[m] * self.midpoint_derivative(&full, m).norm_sqr())
            .sum()
    }

    fn assemble_stiffness(&self) -> BandMatrix<f64> {
        let a0 = self.first_active() as isize;
        let n = self.active_len();
        let mut k = BandMatrix::zeros(n, 3);
        let taps = [1.0, -27.0, 27.0, -1.0];
        for m in 0..self.intervals {
            // Row of D at midpoint m in terms of unknowns.
            let mut row: Vec<(usize, f64)> = Vec::with_capacity(6);
            let mut push = |idx: usize, c: f64| {
                if let Some(e) = row.iter_mut().find(|(i, _)| *i == idx) {
                    e.1 += c;
                } else {
                    row.push((idx, c));
                }
            };
            for (t, &tap) in taps.iter().enumerate() {
                let mut node = m as isize - 1 + t as isize;
                if node < 0 {
                    node = -node;
                }
                if node as usize >= self.intervals {
                    continue;
                }
                let c = tap / (24.0 * self.h);
                if node < a0 {
                    for (q, e) in ORIGIN_EXTRAPOLATION.iter().enumerate() {
                        push(q, c * e);
                    }
                } else {
                    push((node - a0) as usize, c);
                }
            }
            let s = self.midpoint_weights[m];
            for (a, &(i, ci)) in row.iter().enumerate() {
                k.add_to(i, i, s * ci * ci);
                for &(j, cj) in &row[a + 1..] {
                    let v = s * ci * cj;
                    k.add_to(i, j, v);
                    k.add_to(j, i, v);
                }
            }
        }
        k
    }

    /// Discrete `-Delta u` on the unknowns: `W^{-1} K u`.
    pub fn neg_laplacian_active(&self, active: &[f64]) -> Vec<f64> {
        let ku = self.stiffness.mul_vec(active);
        ku.iter()
            .zip(self.active_weights())
            .map(|(k, w)| k / w)
            .collect()
    }
}

/// Complex samples of a radial function on a grid. `values[J] == 0`.
#[derive(Debug, Clone)]
pub struct Field {
    grid: Arc<RadialGrid>,
    values: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: Arc<RadialGrid>, mut values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(j) = values
            .iter()
            .position(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(Error::NonFiniteSample { r: grid.nodes[j] });
        }
        let last = values.len() - 1;
        values[last] = Complex64::new(0.0, 0.0);
        Ok(Self { grid, values })
    }

    pub fn from_real(grid: Arc<RadialGrid>, values: &[f64]) -> Result<Self> {
        Self::new(
            grid,
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    /// Samples `sampler(r_j)`; the last node is forced to zero.
    pub fn from_fn(grid: Arc<RadialGrid>, sampler: impl Fn(f64) -> Complex64) -> Result<Self> {
        let values = grid.nodes.iter().map(|&r| sampler(r)).collect();
        Self::new(grid, values)
    }

    pub fn from_real_fn(grid: Arc<RadialGrid>, sampler: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(grid, |r| Complex64::new(sampler(r), 0.0))
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn scaled_amplitude(&self, a: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v * a).collect(),
        }
    }

    /// Unknown values `first_active..J`.
    pub fn active(&self) -> &[Complex64] {
        &self.values[self.grid.first_active()..self.grid.intervals]
    }

    /// Even-extended value at a signed node index, zero past the boundary.
    pub(crate) fn sample_index(&self, idx: isize) -> Complex64 {
        let i = idx.unsigned_abs();
        if i > self.grid.intervals {
            Complex64::new(0.0, 0.0)
        } else {
            self.values[i]
        }
    }
}

pub fn make_field_from(sampler: impl Fn(f64) -> Complex64, grid: Arc<RadialGrid>) -> Result<Field> {
    Field::from_fn(grid, sampler)
}

/// Fourth-order centered derivative with even reflection at the origin
/// (zero there) and zero samples beyond `r_max`.
pub fn radial_derivative(field: &Field) -> Field {
    let h = field.grid.h;
    let u = |k: isize| field.sample_index(k);
    let mut values: Vec<Complex64> = (0..field.grid.len() as isize)
        .map(|j| (u(j - 2) - u(j - 1) * 8.0 + u(j + 1) * 8.0 - u(j + 2)) / (12.0 * h))
        .collect();
    values[0] = Complex64::new(0.0, 0.0);
    let last = values.len() - 1;
    values[last] = Complex64::new(0.0, 0.0);
    Field {
        grid: field.grid.clone(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(r: f64) -> Complex64 {
        Complex64::new((-r * r).exp(), 0.0)
    }

    #[test]
    fn params_derived_exponents() {
        let p = make_params(1, 7.0, 1.0).unwrap();
        assert_eq!(p.alpha, 3.0);
        assert_eq!(p.beta, 1.5);
        assert!(p.p_critical_upper.is_infinite());
        let q = make_params(3, 3.0, 0.0).unwrap();
        assert_eq!(q.alpha, 3.0);
        assert_eq!(q.p_critical_upper, 5.0);
        assert_eq!(p.ratio_threshold(), 3.0 / 32.0);
    }

    #[test]
    fn params_rejections() {
        assert!(matches!(make_params(0, 7.0, 1.0), Err(Error::Dimension(0))));
        assert!(matches!(
            make_params(1, 5.0, 1.0),
            Err(Error::Subcritical { .. })
        ));
        assert!(matches!(
            make_params(3, 5.0, 1.0),
            Err(Error::Supercritical { .. })
        ));
        assert!(matches!(
            make_params(1, 7.0, -1.0),
            Err(Error::Frequency { .. })
        ));
        assert!(matches!(
            make_params(1, 7.0, -2.0),
            Err(Error::Frequency { .. })
        ));
        assert!(matches!(
            make_params(1, f64::NAN, 0.0),
            Err(Error::Subcritical { .. })
        ));
        assert!(make_params(2, 3.5, -1.9).is_ok());
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(1) - 2.0).abs() < 1e-15);
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn grid_spacing_and_errors() {
        let g = make_grid(12.0, 2048, 1).unwrap();
        assert_eq!(g.spacing(), 12.0 / 2048.0);
        assert_eq!(g.len(), 2049);
        assert!(matches!(make_grid(-1.0, 2048, 1), Err(Error::Grid(_))));
        assert!(matches!(make_grid(1.0, 8, 1), Err(Error::Grid(_))));
    }

    #[test]
    fn ball_volume() {
        for dim in 1..=3 {
            for &(r_max, j) in &[(2.0, 16usize), (2.0, 100), (12.0, 2048)] {
                let g = make_grid(r_max, j, dim).unwrap();
                let vol = g.integrate(&vec![1.0; g.len()]).unwrap();
                let exact = sphere_area(dim) * r_max.powi(dim as i32) / dim as f64;
                assert!(((vol - exact) / exact).abs() < 1e-10, "N={dim} J={j}");
            }
        }
    }

    #[test]
    fn gaussian_integrals() {
        let g = make_grid(12.0, 4096, 1).unwrap();
        let f = Field::from_fn(g.clone(), gauss).unwrap();
        let s = g.integrate(&f.real_parts()).unwrap();
        assert!((s - PI.sqrt()).abs() < 1e-10);
        let g3 = make_grid(12.0, 4096, 3).unwrap();
        let f3 = Field::from_fn(g3.clone(), gauss).unwrap();
        let s3 = g3.integrate(&f3.real_parts()).unwrap();
        assert!((s3 - PI.powf(1.5)).abs() < 1e-8);
        assert_eq!(g.integrate(&vec![0.0; g.len()]).unwrap(), 0.0);
        assert!(matches!(
            g.integrate(&[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn at_least_second_order_convergence() {
        // Quadrature error for e^{-r^2} on a short domain where the
        // truncation edge matters, measured against Richardson-free
        // reference values from a much finer grid.
        for dim in 1..=3 {
            let integral = |j| {
                let g = make_grid(2.5, j, dim).unwrap();
                let s: Vec<f64> = g.nodes().iter().map(|&r| (-r * r).exp()).collect();
                g.integrate(&s).unwrap()
            };
            let reference = integral(1 << 14);
            let e1 = (integral(32) - reference).abs();
            let e2 = (integral(64) - reference).abs();
            assert!(e2 <= e1 / 3.0 || e2 < 1e-13, "N={dim}: {e1:e} {e2:e}");
        }
    }

    #[test]
    fn field_construction() {
        let g = make_grid(12.0, 256, 1).unwrap();
        let f = make_field_from(|r| Complex64::new((-r * r / 2.0).exp(), 0.0), g.clone()).unwrap();
        assert_eq!(f.values()[0], Complex64::new(1.0, 0.0));
        assert_eq!(f.values()[256], Complex64::new(0.0, 0.0));
        let z = make_field_from(|_| Complex64::new(0.0, 0.0), g.clone()).unwrap();
        assert_eq!(z.max_abs(), 0.0);
        let bad = make_field_from(|_| Complex64::new(f64::NAN, 0.0), g);
        assert!(matches!(bad, Err(Error::NonFiniteSample { .. })));
    }

    #[test]
    fn derivative_of_gaussian() {
        let g = make_grid(12.0, 2048, 1).unwrap();
        let f = Field::from_real_fn(g.clone(), |r| (-r * r / 2.0).exp()).unwrap();
        let d = radial_derivative(&f);
        assert_eq!(d.values()[0], Complex64::new(0.0, 0.0));
        let h = g.spacing();
        for (r, v) in g.nodes().iter().zip(d.values()) {
            assert!((v.re + r * (-r * r / 2.0).exp()).abs() < 10.0 * h * h);
        }
        let c = Field::from_real_fn(g, |_| 1.0).unwrap();
        let dc = radial_derivative(&c);
        // interior nodes away from the truncation edge
        assert!(dc.values()[..2040].iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn stiffness_is_symmetric() {
        for dim in 1..=3 {
            let g = make_grid(4.0, 32, dim).unwrap();
            let k = g.stiffness();
            for i in 0..k.dim() {
                for j in 0..k.dim() {
                    assert_eq!(k.get(i, j), k.get(j, i));
                }
            }
        }
    }

    #[test]
    fn gradient_form_matches_stiffness() {
        for dim in 1..=3 {
            let g = make_grid(8.0, 128, dim).unwrap();
            let f = Field::from_real_fn(g.clone(), |r| (-r * r / 2.0).exp() * (1.0 + r)).unwrap();
            let act: Vec<f64> = f.active().iter().map(|v| v.re).collect();
            let ku = g.stiffness().mul_vec(&act);
            let quad: f64 = ku.iter().zip(&act).map(|(a, b)| a * b).sum();
            let q = g.gradient_norm_sq(f.values());
            assert!((quad - q).abs() < 1e-12 * q, "N={dim}: {quad} vs {q}");
        }
    }

    #[test]
    fn harmonic_oscillator_spectrum_bottom() {
        // -Delta + r^2 has radial ground energy N with eigenfunction e^{-r^2/2}.
        for dim in 1..=3 {
            let g = make_grid(10.0, 1024, dim).unwrap();
            let f = Field::from_real_fn(g.clone(), |r| (-r * r / 2.0).exp()).unwrap();
            let act: Vec<f64> = f.active().iter().map(|v| v.re).collect();
            let lap = g.neg_laplacian_active(&act);
            let rq: f64 = lap
                .iter()
                .zip(&act)
                .zip(g.active_weights().iter().zip(g.active_nodes()))
                .map(|((l, u), (w, r))| w * u * (l + r * r * u))
                .sum::<f64>()
                / act
                    .iter()
                    .zip(g.active_weights())
                    .map(|(u, w)| w * u * u)
                    .sum::<f64>();
            assert!((rq - dim as f64).abs() < 1e-8, "N={dim}: {rq}");
        }
    }
}
