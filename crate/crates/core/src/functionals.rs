//! Mass, energy, action, virial functional `P`, second variation `R`, and
//! the L2-invariant scaling `v^lambda(x) = lambda^(N/2) v(lambda x)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Params};

/// The four quadratures every functional is assembled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    /// `||v||_2^2`
    pub mass: f64,
    /// `||grad v||_2^2`
    pub grad_sq: f64,
    /// `||x v||_2^2`
    pub xvar: f64,
    /// `||v||_{p+1}^{p+1}`
    pub lp1: f64,
}

impl Norms {
    pub fn measure(p: f64, field: &Field) -> Self {
        let grid = field.grid();
        let mut mass = 0.0;
        let mut xvar = 0.0;
        let mut lp1 = 0.0;
        for ((w, r), v) in grid.weights().iter().zip(grid.nodes()).zip(field.values()) {
            if *w == 0.0 {
                continue;
            }
            let m = v.norm_sqr();
            mass += w * m;
            xvar += w * r * r * m;
            lp1 += w * m.powf((p + 1.0) / 2.0);
        }
        Self {
            mass,
            grad_sq: grid.gradient_norm_sq(field.values()),
            xvar,
            lp1,
        }
    }

    /// `max(||grad v||^2, ||x v||^2)`, the scale used for Pohozaev defects
    /// and relative comparisons.
    pub fn energy_scale(&self) -> f64 {
        self.grad_sq.max(self.xvar)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalReport {
    pub mass: f64,
    pub grad_sq: f64,
    pub xvar: f64,
    pub lp1: f64,
    pub energy: f64,
    pub action: f64,
    pub virial: f64,
    pub second_var: f64,
    pub ratio: f64,
    pub ratio_threshold: f64,
}

pub const REPORT_CSV_HEADER: &str =
    "mass,grad_sq,xvar,lp1,energy,action,virial,second_var,ratio,ratio_threshold";

impl FunctionalReport {
    pub fn from_norms(params: &Params, n: Norms) -> Self {
        Self::from_norms_with_coupling(params, n, 1.0)
    }

    /// Functionals of `i u_t = -Delta u + |x|^2 u - g |u|^(p-1) u`.
    pub fn from_norms_with_coupling(params: &Params, n: Norms, coupling: f64) -> Self {
        let (p, a) = (params.p, params.alpha);
        let l = coupling * n.lp1;
        let energy = n.grad_sq / 2.0 + n.xvar / 2.0 - l / (p + 1.0);
        Self {
            mass: n.mass,
            grad_sq: n.grad_sq,
            xvar: n.xvar,
            lp1: n.lp1,
            energy,
            action: energy + params.omega / 2.0 * n.mass,
            virial: n.grad_sq / 2.0 - n.xvar / 2.0 - a / (2.0 * (p + 1.0)) * l,
            second_var: n.grad_sq + 3.0 * n.xvar - a * (a - 1.0) / (p + 1.0) * l,
            ratio: n.xvar / n.lp1,
            ratio_threshold: params.ratio_threshold(),
        }
    }

    pub fn norms(&self) -> Norms {
        Norms {
            mass: self.mass,
            grad_sq: self.grad_sq,
            xvar: self.xvar,
            lp1: self.lp1,
        }
    }

    pub fn energy_scale(&self) -> f64 {
        self.norms().energy_scale()
    }

    pub fn csv_row(&self) -> String {
        [
            self.mass,
            self.grad_sq,
            self.xvar,
            self.lp1,
            self.energy,
            self.action,
            self.virial,
            self.second_var,
            self.ratio,
            self.ratio_threshold,
        ]
        .iter()
        .map(|v| format_f64(*v))
        .collect::<Vec<_>>()
        .join(",")
    }
}

/// 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_dim(params: &Params, field: &Field) -> Result<()> {
    if params.dim != field.grid().dim() {
        return Err(Error::DimensionMismatch {
            grid: field.grid().dim(),
            params: params.dim,
        });
    }
    Ok(())
}

pub fn report(params: &Params, field: &Field) -> Result<FunctionalReport> {
    check_dim(params, field)?;
    Ok(FunctionalReport::from_norms(
        params,
        Norms::measure(params.p, field),
    ))
}

/// Cubic Lagrange weights for offset `t` in `[0, 1)` on nodes `-1, 0, 1, 2`.
fn cubic_weights(t: f64) -> [f64; 4] {
    [
        -t * (t - 1.0) * (t - 2.0) / 6.0,
        (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0,
        -(t + 1.0) * t * (t - 2.0) / 2.0,
        (t + 1.0) * t * (t - 1.0) / 6.0,
    ]
}

/// Cubic interpolation of the even extension of `field` at radius `r`;
/// zero beyond `r_max`.
pub fn interpolate(field: &Field, r: f64) -> Complex64 {
    let grid = field.grid();
    if r >= grid.r_max() {
        return Complex64::new(0.0, 0.0);
    }
    let x = r / grid.spacing();
    let i = x.floor();
    let t = x - i;
    let i = i as isize;
    if t == 0.0 {
        return field.sample_index(i);
    }
    cubic_weights(t)
        .iter()
        .enumerate()
        .map(|(k, w)| field.sample_index(i - 1 + k as isize) * *w)
        .sum()
}

/// `v^lambda(r) = lambda^(N/2) v(lambda r)` sampled back onto the grid.
pub fn scale(field: &Field, lambda: f64) -> Result<Field> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Scale(lambda));
    }
    let grid = field.grid();
    let amp = lambda.powf(grid.dim() as f64 / 2.0);
    let values = grid
        .nodes()
        .iter()
        .map(|&r| interpolate(field, lambda * r) * amp)
        .collect();
    Field::new(grid.clone(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub lambda: f64,
    pub energy: f64,
    pub virial: f64,
}

/// Norms of `v^lambda` from those of `v`.
pub fn scaled_norms(params: &Params, n: &Norms, lambda: f64) -> Norms {
    Norms {
        mass: n.mass,
        grad_sq: lambda * lambda * n.grad_sq,
        xvar: n.xvar / (lambda * lambda),
        lp1: lambda.powf(params.alpha) * n.lp1,
    }
}

/// `E(v^lambda)` and `P(v^lambda)` in closed form from the base norms.
pub fn profile_point(params: &Params, n: &Norms, lambda: f64) -> ProfilePoint {
    let r = FunctionalReport::from_norms(params, scaled_norms(params, n, lambda));
    ProfilePoint {
        lambda,
        energy: r.energy,
        virial: r.virial,
    }
}

pub fn scaled_energy_profile(
    params: &Params,
    field: &Field,
    lambdas: &[f64],
) -> Result<Vec<ProfilePoint>> {
    check_dim(params, field)?;
    if let Some(&bad) = lambdas.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
        return Err(Error::Scale(bad));
    }
    let n = Norms::measure(params.p, field);
    Ok(lambdas
        .iter()
        .map(|&l| profile_point(params, &n, l))
        .collect())
}

#[derive(Debug, Clone)]
pub struct Normalized {
    pub field: Field,
    pub amplitude: f64,
    pub lambda: f64,
}

/// Returns `a v^lambda` with `||.||_2^2 = target_mass` and
/// `||.||_{p+1}^{p+1} = target_lp1`.
///
/// The closed-form solve is only exact in the continuum, so `(a, lambda)`
/// are refined against re-measured grid norms until both constraints hold
/// to near machine precision.
pub fn normalize_to_constraints(
    params: &Params,
    field: &Field,
    target_mass: f64,
    target_lp1: f64,
) -> Result<Normalized> {
    check_dim(params, field)?;
    if !(target_mass > 0.0 && target_lp1 > 0.0) {
        return Err(Error::Normalization(format!(
            "targets must be positive (mass {target_mass}, lp1 {target_lp1})"
        )));
    }
    let p = params.p;
    let base = Norms::measure(p, field);
    if !(base.mass > 0.0) || !(base.lp1 > 0.0) {
        return Err(Error::DegenerateField);
    }
    let amp_for = |n: &Norms| (target_mass / n.mass).sqrt();
    let a0 = amp_for(&base);
    let mut lambda = (target_lp1 / (a0.powf(p + 1.0) * base.lp1)).powf(1.0 / params.alpha);

    let mut best = None;
    for _ in 0..60 {
        let w = if lambda == 1.0 {
            field.clone()
        } else {
            scale(field, lambda)?
        };
        let n = Norms::measure(p, &w);
        if !(n.mass > 0.0) {
            return Err(Error::Normalization(format!(
                "scaled field vanished at lambda = {lambda}"
            )));
        }
        let a = amp_for(&n);
        let lp1 = a.powf(p + 1.0) * n.lp1;
        let defect = lp1 / target_lp1 - 1.0;
        best = Some((w, a, lambda));
        if defect.abs() < 1e-14 {
            break;
        }
        lambda *= (target_lp1 / lp1).powf(1.0 / params.alpha);
    }
    let (w, a, lambda) = best.expect("at least one iteration");
    let out = w.scaled_amplitude(a);
    let n = Norms::measure(p, &out);
    let (em, el) = (n.mass / target_mass - 1.0, n.lp1 / target_lp1 - 1.0);
    if em.abs() > 1e-6 || el.abs() > 1e-6 {
        return Err(Error::Normalization(format!(
            "constraints missed: mass {em:e}, lp1 {el:e}"
        )));
    }
    Ok(Normalized {
        field: out,
        amplitude: a,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, make_params};
    use std::f64::consts::PI;

    fn gaussian_setup() -> (Params, Field) {
        let params = make_params(1, 7.0, 1.0).unwrap();
        let grid = make_grid(12.0, 4096, 1).unwrap();
        let f = Field::from_real_fn(grid, |r| (-r * r / 2.0).exp()).unwrap();
        (params, f)
    }

    #[test]
    fn gaussian_closed_forms() {
        let (params, f) = gaussian_setup();
        let r = report(&params, &f).unwrap();
        let sp = PI.sqrt();
        assert!((r.mass - sp).abs() < 1e-6);
        assert!((r.energy - 7.0 / 16.0 * sp).abs() < 1e-6);
        assert!((r.virial + 3.0 / 32.0 * sp).abs() < 1e-6);
        assert!((r.second_var - 13.0 / 8.0 * sp).abs() < 1e-6);
        assert_eq!(r.ratio_threshold, 0.09375);
        assert_eq!(r.action, r.energy + 0.5 * r.mass);
    }

    #[test]
    fn scale_identity_is_exact() {
        let (_, f) = gaussian_setup();
        let s = scale(&f, 1.0).unwrap();
        assert_eq!(s.values(), f.values());
    }

    #[test]
    fn scale_gaussian_closed_form() {
        let grid = make_grid(12.0, 2048, 1).unwrap();
        let f = Field::from_real_fn(grid.clone(), |r| (-r * r / 2.0).exp()).unwrap();
        let s = scale(&f, 2.0).unwrap();
        for (r, v) in grid.nodes().iter().zip(s.values()) {
            let exact = 2f64.sqrt() * (-2.0 * r * r).exp();
            assert!((v.re - exact).abs() < 1e-8, "r = {r}");
        }
        assert!(matches!(scale(&f, 0.0), Err(Error::Scale(_))));
        assert!(matches!(scale(&f, -1.0), Err(Error::Scale(_))));
    }

    #[test]
    fn scale_preserves_mass() {
        for dim in 1..=3 {
            let params = match dim {
                1 => make_params(1, 7.0, 1.0),
                2 => make_params(2, 4.0, 1.0),
                _ => make_params(3, 3.0, 1.0),
            }
            .unwrap();
            let grid = make_grid(12.0, 2048, dim).unwrap();
            let f =
                Field::from_real_fn(grid, |r| (-r * r / 2.0).exp() * (1.0 + 0.3 * r * r)).unwrap();
            let m0 = report(&params, &f).unwrap().mass;
            for lambda in [0.5, 1.3, 2.0] {
                let m = report(&params, &scale(&f, lambda).unwrap()).unwrap().mass;
                assert!(((m - m0) / m0).abs() < 1e-6, "N={dim} lambda={lambda}");
            }
        }
    }

    #[test]
    fn profile_matches_closed_form() {
        let (params, f) = gaussian_setup();
        let lambdas = [0.7, 1.0, 1.4];
        let prof = scaled_energy_profile(&params, &f, &lambdas).unwrap();
        let r = report(&params, &f).unwrap();
        assert_eq!(prof[1].energy, r.energy);
        assert_eq!(prof[1].virial, r.virial);
        let sp = PI.sqrt();
        for pt in &prof {
            let l = pt.lambda;
            let exact = sp / 2.0 * (l * l / 2.0 + 1.0 / (2.0 * l * l) - l.powi(3) / 8.0);
            assert!((pt.energy - exact).abs() < 1e-6);
        }
        assert!(matches!(
            scaled_energy_profile(&params, &f, &[1.0, 0.0]),
            Err(Error::Scale(_))
        ));
    }

    #[test]
    fn profile_derivative_is_twice_virial_over_lambda() {
        let (params, f) = gaussian_setup();
        let eps = 1e-4;
        for lambda in [0.8, 1.0, 1.7] {
            let pts =
                scaled_energy_profile(&params, &f, &[lambda - eps, lambda, lambda + eps]).unwrap();
            let fd = (pts[2].energy - pts[0].energy) / (2.0 * eps);
            assert!((fd - 2.0 * pts[1].virial / lambda).abs() < 1e-6);
        }
    }

    #[test]
    fn profile_agrees_with_regridded_scaling() {
        let (params, f) = gaussian_setup();
        for lambda in [0.8, 1.1, 1.5] {
            let closed = scaled_energy_profile(&params, &f, &[lambda]).unwrap()[0];
            let direct = report(&params, &scale(&f, lambda).unwrap()).unwrap();
            assert!(((closed.energy - direct.energy) / direct.energy).abs() < 1e-5);
            assert!(((closed.virial - direct.virial) / direct.virial).abs() < 1e-5);
        }
    }

    #[test]
    fn normalization_fixed_point() {
        let (params, f) = gaussian_setup();
        let r = report(&params, &f).unwrap();
        let out = normalize_to_constraints(&params, &f, r.mass, r.lp1).unwrap();
        assert!((out.amplitude - 1.0).abs() < 1e-12);
        assert!((out.lambda - 1.0).abs() < 1e-12);
        for (a, b) in out.field.values().iter().zip(f.values()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn normalization_amplitude_doubling() {
        let (params, f) = gaussian_setup();
        let r = report(&params, &f).unwrap();
        // Doubling the amplitude multiplies lp1 by 2^8; asking for
        // 4x mass and 2^8 x lp1 is met by a = 2, lambda = 1.
        let out = normalize_to_constraints(&params, &f, 4.0 * r.mass, 256.0 * r.lp1).unwrap();
        assert!((out.amplitude - 2.0).abs() < 1e-9);
        assert!((out.lambda - 1.0).abs() < 1e-9);
        // A further factor 1.5^3 in lp1 is absorbed by lambda = 1.5.
        let target = 256.0 * 3.375 * r.lp1;
        let out = normalize_to_constraints(&params, &f, 4.0 * r.mass, target).unwrap();
        assert!((out.lambda - 1.5).abs() < 1e-6);
        assert!((out.amplitude - 2.0).abs() < 1e-6);
        let n = Norms::measure(params.p, &out.field);
        assert!((n.mass / (4.0 * r.mass) - 1.0).abs() < 1e-12);
        assert!((n.lp1 / target - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_rejects_zero_field() {
        let (params, f) = gaussian_setup();
        let z = Field::zeros(f.grid().clone());
        assert!(matches!(
            normalize_to_constraints(&params, &z, 1.0, 1.0),
            Err(Error::DegenerateField)
        ));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let params = make_params(3, 3.0, 0.0).unwrap();
        let (_, f) = gaussian_setup();
        assert!(matches!(
            report(&params, &f),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn csv_row_has_ten_columns() {
        let (params, f) = gaussian_setup();
        let row = report(&params, &f).unwrap().csv_row();
        assert_eq!(row.split(',').count(), 10);
        assert_eq!(REPORT_CSV_HEADER.split(',').count(), 10);
        let first: f64 = row.split(',').next().unwrap().parse().unwrap();
        assert_eq!(first, report(&params, &f).unwrap().mass);
    }
}
