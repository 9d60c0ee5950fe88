//! Time integration of `i u_t = -Delta u + |x|^2 u - g |u|^(p-1) u`.
//!
//! Crank-Nicolson on the full linear operator with the nonlinearity
//! frozen at half steps through a relaxation variable
//!
//! ```text
//!   Phi^(n+1/2) = |u^n|^(p-1) + (dt_n / dt_(n-1)) (|u^n|^(p-1) - Phi^(n-1/2))
//! ```
//!
//! Every step solves a system whose Hermitian part is the mass matrix, so
//! the discrete mass is conserved to roundoff.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::functionals::{format_f64, FunctionalReport, Norms};
use crate::grid::{Field, Params};
use crate::groundstate::GroundStateRecord;

/// Classification tolerance for the strict set-membership margins.
pub const MARGIN_TOL: f64 = 1e-9;
/// Relative tolerance for the mass constraint `||v||^2 = ||phi||^2`.
pub const MASS_TOL: f64 = 1e-6;
/// Samples that must show monotone amplitude growth for a step collapse
/// to count as blowup.
pub const MONOTONE_WINDOW: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveOpts {
    pub dt0: f64,
    pub t_end: f64,
    pub dt_min: f64,
    pub blowup_amp_factor: f64,
    pub blowup_grad_cap: f64,
    pub record_every: usize,
    /// Coefficient `g` of the focusing term; 0 gives the linear oscillator.
    pub nonlinear_coeff: f64,
}

impl Default for EvolveOpts {
    fn default() -> Self {
        Self {
            dt0: 1e-4,
            t_end: 1.0,
            dt_min: 1e-7,
            blowup_amp_factor: 1e3,
            blowup_grad_cap: 1e8,
            record_every: 10,
            nonlinear_coeff: 1.0,
        }
    }
}

impl EvolveOpts {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dt0.is_finite()
            && self.dt_min > 0.0
            && self.dt0 > self.dt_min
            && self.t_end > 0.0
            && self.t_end.is_finite()
            && self.blowup_amp_factor > 1.0
            && self.blowup_grad_cap > 0.0
            && self.record_every > 0
            && self.nonlinear_coeff.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::EvolveOpts(format!(
                "need dt0 > dt_min > 0, t_end > 0, amplitude factor > 1, \
                 positive gradient cap and record stride (got {self:?})"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Completed,
    BlowupDetected,
    Aborted,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Completed => "completed",
            Status::BlowupDetected => "blowup_detected",
            Status::Aborted => "aborted",
        })
    }
}

/// Which clause of the composite blowup criterion fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupClause {
    Amplitude,
    Gradient,
    StepCollapse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Yes,
    No,
    Indeterminate,
}

impl Verdict {
    pub fn is_yes(self) -> bool {
        self == Verdict::Yes
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Yes => "true",
            Verdict::No => "false",
            Verdict::Indeterminate => "indeterminate",
        })
    }
}

fn strict(margins: &[f64]) -> Verdict {
    if margins.iter().any(|m| !(*m >= -MARGIN_TOL)) {
        Verdict::No
    } else if margins.iter().any(|m| *m <= MARGIN_TOL) {
        Verdict::Indeterminate
    } else {
        Verdict::Yes
    }
}

/// Signed margins for `A = {E(v) < E(phi), ||v||^2 = ||phi||^2,
/// ||v||_{p+1}^{p+1} > ||phi||_{p+1}^{p+1}}` and `B = {v in A : P(v) < 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMembership {
    /// `E(phi) - E(v)`
    pub margin_energy: f64,
    /// `| ||v||^2 - ||phi||^2 |`
    pub mass_deviation: f64,
    /// `||v||^{p+1} - ||phi||^{p+1}`
    pub margin_lp1: f64,
    /// `-P(v)`
    pub margin_virial: f64,
    pub in_a: Verdict,
    pub in_b: Verdict,
}

impl SetMembership {
    pub fn from_reports(reference: &FunctionalReport, v: &FunctionalReport) -> Self {
        let margin_energy = reference.energy - v.energy;
        let mass_deviation = (v.mass - reference.mass).abs();
        let margin_lp1 = v.lp1 - reference.lp1;
        let margin_virial = -v.virial;
        let mass_ok = mass_deviation <= MASS_TOL * reference.mass;
        let in_a = match strict(&[margin_energy, margin_lp1]) {
            _ if !mass_ok => Verdict::No,
            s => s,
        };
        let in_b = match (in_a, strict(&[margin_virial])) {
            (Verdict::No, _) | (_, Verdict::No) => Verdict::No,
            (Verdict::Yes, Verdict::Yes) => Verdict::Yes,
            _ => Verdict::Indeterminate,
        };
        Self {
            margin_energy,
            mass_deviation,
            margin_lp1,
            margin_virial,
            in_a,
            in_b,
        }
    }

    /// Smallest of the three strict `B` margins.
    pub fn min_b_margin(&self) -> f64 {
        self.margin_energy
            .min(self.margin_lp1)
            .min(self.margin_virial)
    }
}

pub fn membership(params: &Params, reference: &GroundStateRecord, field: &Field) -> SetMembership {
    let v = FunctionalReport::from_norms(params, Norms::measure(params.p, field));
    SetMembership::from_reports(&reference.report, &v)
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolutionTrace {
    pub times: Vec<f64>,
    pub dt_history: Vec<f64>,
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    pub virial_p: Vec<f64>,
    pub variance: Vec<f64>,
    pub grad_sq: Vec<f64>,
    pub max_abs: Vec<f64>,
    pub membership: Vec<Option<SetMembership>>,
    pub status: Status,
    pub blowup_clause: Option<BlowupClause>,
    /// Time of the sample at which blowup was declared.
    pub blowup_time: Option<f64>,
    pub steps: usize,
    #[serde(skip)]
    pub final_state: Option<Field>,
}

pub const TRACE_CSV_HEADER: &str =
    "t,dt,mass,energy,P,V,grad_sq,max_abs,inA,inB,marginE,marginLp1,marginP,status";

impl EvolutionTrace {
    fn new() -> Self {
        Self {
            times: Vec::new(),
            dt_history: Vec::new(),
            mass: Vec::new(),
            energy: Vec::new(),
            virial_p: Vec::new(),
            variance: Vec::new(),
            grad_sq: Vec::new(),
            max_abs: Vec::new(),
            membership: Vec::new(),
            status: Status::Completed,
            blowup_clause: None,
            blowup_time: None,
            steps: 0,
            final_state: None,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Samples with `t_lo <= t <= t_hi`.
    pub fn window(&self, t_lo: f64, t_hi: f64) -> Self {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.times[i] >= t_lo && self.times[i] <= t_hi)
            .collect();
        let pick = |v: &Vec<f64>| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            times: pick(&self.times),
            dt_history: pick(&self.dt_history),
            mass: pick(&self.mass),
            energy: pick(&self.energy),
            virial_p: pick(&self.virial_p),
            variance: pick(&self.variance),
            grad_sq: pick(&self.grad_sq),
            max_abs: pick(&self.max_abs),
            membership: keep.iter().map(|&i| self.membership[i]).collect(),
            status: self.status,
            blowup_clause: self.blowup_clause,
            blowup_time: self.blowup_time,
            steps: self.steps,
            final_state: None,
        }
    }

    /// `max_i |q_i - q_0| / |q_0|` divided by the elapsed time.
    pub fn drift_rate(series: &[f64], times: &[f64]) -> f64 {
        let (Some(&q0), Some(&t_last)) = (series.first(), times.last()) else {
            return 0.0;
        };
        let span = t_last - times[0];
        if span <= 0.0 {
            return 0.0;
        }
        series
            .iter()
            .map(|q| ((q - q0) / q0).abs())
            .fold(0.0, f64::max)
            / span.max(1.0)
    }

    pub fn mass_drift(&self) -> f64 {
        Self::drift_rate(&self.mass, &self.times)
    }

    pub fn energy_drift(&self) -> f64 {
        Self::drift_rate(&self.energy, &self.times)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        let n = self.len();
        for i in 0..n {
            let status = if i + 1 == n {
                self.status.to_string()
            } else {
                "running".to_string()
            };
            let (in_a, in_b, me, ml, mp) = match &self.membership[i] {
                Some(m) => (
                    m.in_a.to_string(),
                    m.in_b.to_string(),
                    format_f64(m.margin_energy),
                    format_f64(m.margin_lp1),
                    format_f64(m.margin_virial),
                ),
                None => (
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                ),
            };
            let nums = [
                self.times[i],
                self.dt_history[i],
                self.mass[i],
                self.energy[i],
                self.virial_p[i],
                self.variance[i],
                self.grad_sq[i],
                self.max_abs[i],
            ]
            .iter()
            .map(|v| format_f64(*v))
            .collect::<Vec<_>>()
            .join(",");
            out.push_str(&format!("{nums},{in_a},{in_b},{me},{ml},{mp},{status}\n"));
        }
        out
    }
}

struct Sampler<'a> {
    params: &'a Params,
    coupling: f64,
    reference: Option<&'a GroundStateRecord>,
}

impl Sampler<'_> {
    fn record(&self, trace: &mut EvolutionTrace, t: f64, dt: f64, u: &Field) {
        let r = FunctionalReport::from_norms_with_coupling(
            self.params,
            Norms::measure(self.params.p, u),
            self.coupling,
        );
        trace.times.push(t);
        trace.dt_history.push(dt);
        trace.mass.push(r.mass);
        trace.energy.push(r.energy);
        trace.virial_p.push(r.virial);
        trace.variance.push(r.xvar);
        trace.grad_sq.push(r.grad_sq);
        trace.max_abs.push(u.max_abs());
        trace.membership.push(
            self.reference
                .map(|g| SetMembership::from_reports(&g.report, &r)),
        );
    }
}

fn abs_pow(v: Complex64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else {
        v.norm().powf(e)
    }
}

fn monotone_tail(max_abs: &[f64]) -> bool {
    max_abs.len() >= MONOTONE_WINDOW
        && max_abs[max_abs.len() - MONOTONE_WINDOW..]
            .windows(2)
            .all(|w| w[1] > w[0])
}

/// Integrates from `u0` until `t_end`, blowup, or step collapse.
pub fn evolve(
    params: &Params,
    u0: &Field,
    opts: &EvolveOpts,
    reference: Option<&GroundStateRecord>,
) -> Result<EvolutionTrace> {
    opts.validate()?;
    let grid = u0.grid().clone();
    if grid.dim() != params.dim {
        return Err(Error::DimensionMismatch {
            grid: grid.dim(),
            params: params.dim,
        });
    }
    if let Some(g) = reference {
        let rg = g.grid();
        if rg.dim() != grid.dim()
            || rg.r_max() != grid.r_max()
            || rg.intervals() != grid.intervals()
        {
            return Err(Error::EvolveOpts(
                "reference ground state lives on a different grid".into(),
            ));
        }
    }
    let p = params.p;
    let g = opts.nonlinear_coeff;
    let sampler = Sampler {
        params,
        coupling: g,
        reference,
    };
    let n = grid.active_len();
    let weights = grid.active_weights();
    let nodes = grid.active_nodes();
    let stiffness = grid.stiffness();
    let mut u: Vec<Complex64> = u0.active().to_vec();
    let a0 = u0.max_abs();
    if !(a0 > 0.0) {
        return Err(Error::DegenerateField);
    }

    let mut trace = EvolutionTrace::new();
    let dt_law = |amp: f64| opts.dt0 / (1.0 + (amp / a0).powf(p - 1.0));
    let mut t = 0.0;
    let mut dt = dt_law(a0).min(opts.t_end);
    sampler.record(&mut trace, t, dt, u0);

    let mut phi_half: Vec<f64> = u.iter().map(|v| abs_pow(*v, p - 1.0)).collect();
    let mut dt_prev = dt;
    let mut state = u0.clone();
    let mut since_record = 0;
    let i_unit = Complex64::new(0.0, 1.0);

    loop {
        let amp = state.max_abs();
        let dt_target = dt_law(amp);
        if dt_target < opts.dt_min {
            if trace.times.last() != Some(&t) {
                sampler.record(&mut trace, t, dt_target, &state);
            }
            if monotone_tail(&trace.max_abs) {
                trace.status = Status::BlowupDetected;
                trace.blowup_clause = Some(BlowupClause::StepCollapse);
                trace.blowup_time = Some(t);
            } else {
                trace.status = Status::Aborted;
            }
            break;
        }
        dt = dt_target.min(opts.t_end - t);
        if trace.steps > 0 {
            let ratio = dt / dt_prev;
            for (ph, v) in phi_half.iter_mut().zip(&u) {
                let cur = abs_pow(*v, p - 1.0);
                *ph = cur + ratio * (cur - *ph);
            }
        }

        // (W + i dt/2 H) u+ = (W - i dt/2 H) u,  H = K + W (r^2 - g Phi)
        let potential: Vec<f64> = weights
            .iter()
            .zip(nodes)
            .zip(&phi_half)
            .map(|((w, r), ph)| w * (r * r - g * ph))
            .collect();
        let mut h = stiffness.clone();
        h.add_diagonal(&potential);
        let half = i_unit * (0.5 * dt);
        let hu = h.mul_vec(&u);
        let mut rhs: Vec<Complex64> = u
            .iter()
            .zip(weights)
            .zip(&hu)
            .map(|((v, w), hv)| v * *w - half * hv)
            .collect();
        let mut a: BandMatrix<Complex64> = h.map(|v| half * v);
        a.add_diagonal(
            &weights
                .iter()
                .map(|w| Complex64::new(*w, 0.0))
                .collect::<Vec<_>>(),
        );
        a.factor()?.solve_in_place(&mut rhs);
        u = rhs;
        t = if opts.t_end - t <= dt {
            opts.t_end
        } else {
            t + dt
        };
        dt_prev = dt;
        trace.steps += 1;
        since_record += 1;

        let full = grid.expand(&u);
        if full.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            trace.status = Status::Aborted;
            trace.final_state = Some(state);
            return Err(Error::NonFiniteState {
                t,
                trace: Box::new(trace),
            });
        }
        state = Field::new(grid.clone(), full)?;
        debug_assert_eq!(u.len(), n);

        let done = t >= opts.t_end;
        let amp = state.max_abs();
        let clause = if amp >= opts.blowup_amp_factor * a0 {
            Some(BlowupClause::Amplitude)
        } else if grid.gradient_norm_sq(state.values()) >= opts.blowup_grad_cap {
            Some(BlowupClause::Gradient)
        } else {
            None
        };
        if done || clause.is_some() || since_record >= opts.record_every {
            sampler.record(&mut trace, t, dt, &state);
            since_record = 0;
        }
        if let Some(c) = clause {
            trace.status = Status::BlowupDetected;
            trace.blowup_clause = Some(c);
            trace.blowup_time = Some(t);
            break;
        }
        if done {
            trace.status = Status::Completed;
            break;
        }
    }
    trace.final_state = Some(state);
    Ok(trace)
}

#[derive(Debug, Clone, Serialize)]
pub struct VirialCheck {
    /// Over interior samples with `|P| > 1e-8`; zero if there are none.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub compared: usize,
    pub times: Vec<f64>,
    /// Five-point second difference of the variance.
    pub second_difference: Vec<f64>,
    /// `16 P(u(t))`.
    pub sixteen_p: Vec<f64>,
}

/// Cubic Lagrange interpolation of `(xs, ys)` at `x`.
fn lagrange4(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    let k = xs.partition_point(|&v| v <= x).clamp(2, n - 2) - 2;
    let k = k.min(n - 4);
    let (xn, yn) = (&xs[k..k + 4], &ys[k..k + 4]);
    (0..4)
        .map(|i| {
            let li: f64 = (0..4)
                .filter(|&j| j != i)
                .map(|j| (x - xn[j]) / (xn[i] - xn[j]))
                .product();
            li * yn[i]
        })
        .sum()
}

/// Compares `d^2/dt^2 ||x u||^2` with `16 P(u)` on a uniform resampling of
/// the trace.
pub fn virial_check(trace: &EvolutionTrace) -> Result<VirialCheck> {
    let n = trace.len();
    if n < 5 {
        return Err(Error::InsufficientSamples(n));
    }
    let (t0, t1) = (trace.times[0], trace.times[n - 1]);
    let tau = (t1 - t0) / (n - 1) as f64;
    let ts: Vec<f64> = (0..n).map(|k| t0 + k as f64 * tau).collect();
    let (v, pv): (Vec<f64>, Vec<f64>) = ts
        .iter()
        .map(|&s| {
            (
                lagrange4(&trace.times, &trace.variance, s),
                lagrange4(&trace.times, &trace.virial_p, s),
            )
        })
        .unzip();
    let mut out = VirialCheck {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
        compared: 0,
        times: Vec::new(),
        second_difference: Vec::new(),
        sixteen_p: Vec::new(),
    };
    for k in 2..n - 2 {
        let d2 = (-v[k - 2] + 16.0 * v[k - 1] - 30.0 * v[k] + 16.0 * v[k + 1] - v[k + 2])
            / (12.0 * tau * tau);
        let rhs = 16.0 * pv[k];
        let err = (d2 - rhs).abs();
        out.max_abs_err = out.max_abs_err.max(err);
        if pv[k].abs() > 1e-8 {
            out.max_rel_err = out.max_rel_err.max(err / rhs.abs());
            out.compared += 1;
        }
        out.times.push(ts[k]);
        out.second_difference.push(d2);
        out.sixteen_p.push(rhs);
    }
    Ok(out)
}
