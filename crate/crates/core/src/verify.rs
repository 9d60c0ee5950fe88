//! Numerical witnesses for the instability criterion and the lemma chain
//! behind it, plus the threshold frequency search.
//!
//! Every check is a falsification attempt: it evaluates the claimed
//! inequality on many inputs and records the smallest slack.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{
    normalize_to_constraints, profile_point, report, scale, FunctionalReport, Norms,
};
use crate::grid::{make_params, Field, Params, RadialGrid};
use crate::groundstate::{solve_petviashvili, GroundStateRecord, SolverOpts};

/// Identity checks are pure algebra on shared quadratures.
pub const IDENTITY_TOL: f64 = 1e-12;
/// Lemma slacks are limited by quadrature and interpolation error.
pub const LEMMA_TOL: f64 = 1e-8;
/// Agreement of the three second-derivative evaluations.
pub const CRITERION_TOL: f64 = 1e-4;
/// Floor for the g-scan and the equivalent polynomial inequality.
pub const G_SCAN_TOL: f64 = 1e-10;
/// Hypothesis tolerance on `R(phi) <= 0`.
pub const HYPOTHESIS_TOL: f64 = 1e-9;
/// Step for the finite-difference second derivative in `lambda`.
pub const PROFILE_EPS: f64 = 1e-3;
pub const MAX_WITNESSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    Bom,
    Varcha,
    Key,
    GScan,
    Identities,
    CriterionEquiv,
}

impl LemmaId {
    pub const ALL: [LemmaId; 6] = [
        LemmaId::Identities,
        LemmaId::CriterionEquiv,
        LemmaId::Bom,
        LemmaId::Varcha,
        LemmaId::Key,
        LemmaId::GScan,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LemmaId::Bom => "bom",
            LemmaId::Varcha => "varcha",
            LemmaId::Key => "key",
            LemmaId::GScan => "g_scan",
            LemmaId::Identities => "identities",
            LemmaId::CriterionEquiv => "criterion_equiv",
        }
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LemmaId {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        LemmaId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = LemmaId::ALL.iter().map(|i| i.as_str()).collect();
                format!(
                    "unknown lemma id {s:?} (expected one of {})",
                    names.join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub margin: f64,
    pub inputs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma_id: LemmaId,
    pub cases_run: usize,
    /// Smallest slack observed (negative means violated).
    pub worst_margin: f64,
    pub tol: f64,
    /// Up to [`MAX_WITNESSES`] cases with the smallest margins.
    pub witnesses: Vec<Witness>,
    pub passed: bool,
    pub details: BTreeMap<String, f64>,
    /// Set when the check could not run (violated hypothesis, too few
    /// admissible samples, ...); such a report never passes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Accumulates margins in input order.
struct Tally {
    cases: Vec<Witness>,
}

impl Tally {
    fn new() -> Self {
        Self { cases: Vec::new() }
    }

    fn push(&mut self, margin: f64, inputs: &[(&str, f64)]) {
        self.cases.push(Witness {
            margin,
            inputs: inputs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        });
    }

    fn finish(self, lemma_id: LemmaId, tol: f64, details: BTreeMap<String, f64>) -> LemmaReport {
        let cases_run = self.cases.len();
        let mut cases = self.cases;
        // NaN margins sort first so they surface as the worst witnesses
        cases.sort_by(|a, b| {
            let key = |m: f64| if m.is_nan() { f64::NEG_INFINITY } else { m };
            key(a.margin).total_cmp(&key(b.margin))
        });
        let worst_margin = cases.first().map_or(f64::INFINITY, |w| {
            if w.margin.is_nan() {
                f64::NEG_INFINITY
            } else {
                w.margin
            }
        });
        cases.truncate(MAX_WITNESSES);
        LemmaReport {
            lemma_id,
            cases_run,
            worst_margin,
            tol,
            witnesses: cases,
            passed: worst_margin >= -tol,
            details,
            error: None,
        }
    }
}

impl LemmaReport {
    pub fn errored(lemma_id: LemmaId, tol: f64, err: &Error) -> Self {
        Self {
            lemma_id,
            cases_run: 0,
            worst_margin: f64::NEG_INFINITY,
            tol,
            witnesses: Vec::new(),
            passed: false,
            details: BTreeMap::new(),
            error: Some(err.to_string()),
        }
    }

    pub fn tol_for(lemma_id: LemmaId) -> f64 {
        match lemma_id {
            LemmaId::Identities => IDENTITY_TOL,
            LemmaId::CriterionEquiv => CRITERION_TOL,
            LemmaId::GScan => G_SCAN_TOL,
            LemmaId::Bom | LemmaId::Varcha | LemmaId::Key => LEMMA_TOL,
        }
    }

    /// One-line human summary with 6 significant digits.
    pub fn summary_line(&self) -> String {
        format!(
            "{:<16} {:<6} cases={:<8} worst_margin={:<13.6e} tol={:.1e}",
            self.lemma_id.as_str(),
            if self.passed { "PASS" } else { "FAIL" },
            self.cases_run,
            self.worst_margin,
            self.tol
        )
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn require_pohozaev(gs: &GroundStateRecord) -> Result<()> {
    if !gs.pohozaev_ok() {
        return Err(Error::Precondition(format!(
            "Pohozaev defect {:e} exceeds 1e-6 of the energy scale {:e}",
            gs.pohozaev_defect,
            gs.report.energy_scale()
        )));
    }
    Ok(())
}

fn require_unstable(gs: &GroundStateRecord) -> Result<()> {
    if gs.report.second_var > HYPOTHESIS_TOL {
        return Err(Error::Hypothesis(format!(
            "R(phi) = {:e} > 0: the ground state is not past the threshold",
            gs.report.second_var
        )));
    }
    Ok(())
}

/// The three evaluations of `d^2/dlambda^2 E(phi^lambda)` at `lambda = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionValues {
    pub closed_form: f64,
    pub finite_difference: f64,
    pub identity_form: f64,
}

pub fn criterion_values(params: &Params, r: &FunctionalReport) -> CriterionValues {
    let n = r.norms();
    let e = |l: f64| profile_point(params, &n, l).energy;
    let h = PROFILE_EPS;
    let (a, p1) = (params.alpha, params.p + 1.0);
    CriterionValues {
        closed_form: r.second_var,
        finite_difference: (e(1.0 + h) - 2.0 * e(1.0) + e(1.0 - h)) / (h * h),
        identity_form: 4.0 * r.xvar - a * (a - 2.0) / p1 * r.lp1 + 2.0 * r.virial,
    }
}

pub fn check_criterion_equivalence(gs: &GroundStateRecord) -> Result<LemmaReport> {
    require_pohozaev(gs)?;
    let params = &gs.params;
    let r = &gs.report;
    let v = criterion_values(params, r);
    let mut t = Tally::new();
    let inputs = [
        ("closed_form", v.closed_form),
        ("finite_difference", v.finite_difference),
        ("identity_form", v.identity_form),
    ];
    t.push(-rel_err(v.closed_form, v.finite_difference), &inputs);
    t.push(-rel_err(v.closed_form, v.identity_form), &inputs);
    t.push(-rel_err(v.finite_difference, v.identity_form), &inputs);
    let gap = r.ratio - r.ratio_threshold;
    let agree = (r.second_var > 0.0) == (gap > 0.0);
    t.push(
        if agree { 0.0 } else { -r.second_var.abs() },
        &[("second_var", r.second_var), ("ratio_minus_threshold", gap)],
    );
    let mut details = BTreeMap::new();
    details.insert("closed_form".into(), v.closed_form);
    details.insert("finite_difference".into(), v.finite_difference);
    details.insert("identity_form".into(), v.identity_form);
    details.insert("ratio".into(), r.ratio);
    details.insert("ratio_threshold".into(), r.ratio_threshold);
    details.insert("sign_agreement".into(), f64::from(u8::from(agree)));
    Ok(t.finish(LemmaId::CriterionEquiv, CRITERION_TOL, details))
}

/// Margins of `phi^lambda` in `B` against `phi`, from the three-norm profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BomMargins {
    pub lambda: f64,
    /// `E(phi) - E(phi^lambda)`
    pub energy: f64,
    /// `-P(phi^lambda)`
    pub virial: f64,
    /// `||phi^lambda||^{p+1} - ||phi||^{p+1}`
    pub lp1: f64,
}

impl BomMargins {
    pub fn min(&self) -> f64 {
        self.energy.min(self.virial).min(self.lp1)
    }
}

pub fn bom_margins(params: &Params, gs: &GroundStateRecord, lambda: f64) -> BomMargins {
    let n = gs.report.norms();
    let pt = profile_point(params, &n, lambda);
    BomMargins {
        lambda,
        energy: gs.report.energy - pt.energy,
        virial: -pt.virial,
        lp1: (lambda.powf(params.alpha) - 1.0) * n.lp1,
    }
}

pub fn check_lem_bom(gs: &GroundStateRecord, lambdas: &[f64]) -> Result<LemmaReport> {
    require_unstable(gs)?;
    if let Some(&bad) = lambdas.iter().find(|l| !(**l >= 1.0) || !l.is_finite()) {
        return Err(Error::Range(format!(
            "lambda must be at least 1, got {bad}"
        )));
    }
    let mut t = Tally::new();
    let mut details = BTreeMap::new();
    for &l in lambdas {
        let m = bom_margins(&gs.params, gs, l);
        t.push(
            m.min(),
            &[
                ("lambda", l),
                ("margin_energy", m.energy),
                ("margin_virial", m.virial),
                ("margin_lp1", m.lp1),
            ],
        );
        details.insert(format!("lambda={l}:energy"), m.energy);
        details.insert(format!("lambda={l}:virial"), m.virial);
        details.insert(format!("lambda={l}:lp1"), m.lp1);
    }
    details.insert("second_var".into(), gs.report.second_var);
    Ok(t.finish(LemmaId::Bom, LEMMA_TOL, details))
}

/// A smooth even perturbation: sum of mirrored Gaussian bumps.
#[derive(Debug, Clone, PartialEq)]
struct Bumps {
    bumps: Vec<(f64, f64, f64)>,
}

impl Bumps {
    fn draw(rng: &mut ChaCha8Rng, amp_scale: f64, reach: f64) -> Self {
        let k = rng.gen_range(1..=3);
        let bumps = (0..k)
            .map(|_| {
                let amp = rng.gen_range(-0.3..=0.3) * amp_scale;
                let center = rng.gen_range(0.0..reach);
                let width = rng.gen_range(0.1..1.0) * reach / 2.0;
                (amp, center, width)
            })
            .collect();
        Self { bumps }
    }

    fn apply(&self, base: &Field) -> Result<Field> {
        let grid = base.grid();
        let values = grid
            .nodes()
            .iter()
            .zip(base.values())
            .map(|(&r, v)| {
                let d: f64 = self
                    .bumps
                    .iter()
                    .map(|&(a, c, w)| {
                        let g = |x: f64| (-(x * x) / (2.0 * w * w)).exp();
                        a * (g(r - c) + g(r + c))
                    })
                    .sum();
                v + d
            })
            .collect();
        Field::new(grid.clone(), values)
    }

    fn max_amplitude(&self) -> f64 {
        self.bumps.iter().map(|b| b.0.abs()).fold(0.0, f64::max)
    }
}

/// Radius beyond which `phi` is below `1e-3` of its maximum.
fn support_radius(gs: &GroundStateRecord) -> f64 {
    let vals = gs.field.real_parts();
    let top = vals.iter().cloned().fold(0.0, f64::max);
    let idx = vals
        .iter()
        .rposition(|v| *v > 1e-3 * top)
        .unwrap_or(vals.len() - 1);
    gs.grid().nodes()[idx].max(gs.grid().spacing())
}

pub fn check_varcha(
    params: &Params,
    gs: &GroundStateRecord,
    n_samples: usize,
    seed: u64,
) -> Result<LemmaReport> {
    let base = &gs.report;
    let amp_scale = gs.field.max_abs();
    let reach = support_radius(gs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Bumps> = (0..n_samples)
        .map(|_| Bumps::draw(&mut rng, amp_scale, reach))
        .collect();
    let outcomes: Vec<Result<(f64, FunctionalReport, f64)>> = draws
        .par_iter()
        .map(|b| {
            let v = b.apply(&gs.field)?;
            let nv = normalize_to_constraints(params, &v, base.mass, base.lp1)?;
            let r = report(params, &nv.field)?;
            Ok((r.energy - base.energy, r, nv.lambda))
        })
        .collect();
    let mut t = Tally::new();
    let mut rejected = 0usize;
    for (b, o) in draws.iter().zip(outcomes) {
        match o {
            Ok((margin, r, lambda)) => t.push(
                margin,
                &[
                    ("bump_amplitude", b.max_amplitude()),
                    ("bumps", b.bumps.len() as f64),
                    ("lambda", lambda),
                    ("energy", r.energy),
                    ("mass_defect", r.mass / base.mass - 1.0),
                    ("lp1_defect", r.lp1 / base.lp1 - 1.0),
                ],
            ),
            Err(Error::Normalization(_)) | Err(Error::DegenerateField) => rejected += 1,
            Err(e) => return Err(e),
        }
    }
    let mut details = BTreeMap::new();
    details.insert("energy_phi".into(), base.energy);
    details.insert("rejected".into(), rejected as f64);
    Ok(t.finish(LemmaId::Varcha, LEMMA_TOL, details))
}

/// Internal quantities of the key-lemma argument for one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyQuantities {
    /// `E(v) - P(v) - E(phi)`
    pub slack: f64,
    /// `(||phi||^{p+1} / ||v||^{p+1})^(1/alpha)`
    pub lambda0: f64,
    /// `f(lambda0)` with `f(lambda) = E(v^lambda) - lambda^2 P(v)`
    pub f_lambda0: f64,
    pub f_one: f64,
    /// `||x v||^2 <= ||x phi||^2`: the branch in which `f(lambda0) <= f(1)`
    /// is part of the argument.
    pub narrow_branch: bool,
}

pub fn lambda0(lp1_phi: f64, lp1_v: f64, alpha: f64) -> f64 {
    (lp1_phi / lp1_v).powf(1.0 / alpha)
}

pub fn key_quantities(
    params: &Params,
    phi: &FunctionalReport,
    v: &FunctionalReport,
) -> KeyQuantities {
    let n = v.norms();
    let l0 = lambda0(phi.lp1, v.lp1, params.alpha);
    let f = |l: f64| profile_point(params, &n, l).energy - l * l * v.virial;
    KeyQuantities {
        slack: v.energy - v.virial - phi.energy,
        lambda0: l0,
        f_lambda0: f(l0),
        f_one: f(1.0),
        narrow_branch: v.xvar <= phi.xvar,
    }
}

/// Admissible for the key lemma: `P(v) <= 0`, equal mass, larger
/// `L^{p+1}` norm.
fn key_admissible(phi: &FunctionalReport, v: &FunctionalReport) -> bool {
    v.virial <= 0.0 && v.lp1 > phi.lp1 && (v.mass / phi.mass - 1.0).abs() <= 1e-12
}

pub const KEY_MIN_ADMISSIBLE: usize = 10;
/// Draws per requested sample before giving up.
pub const KEY_DRAW_FACTOR: usize = 20;

struct KeyDraw {
    bumps: Bumps,
    lambda: f64,
}

pub fn check_key_inequality(
    params: &Params,
    gs: &GroundStateRecord,
    n_samples: usize,
    seed: u64,
) -> Result<LemmaReport> {
    require_unstable(gs)?;
    let base = &gs.report;
    let amp_scale = gs.field.max_abs();
    let reach = support_radius(gs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_draws = n_samples.max(1) * KEY_DRAW_FACTOR;
    let batch = n_samples.max(64);

    let evaluate = |d: &KeyDraw| -> Result<Option<(FunctionalReport, KeyQuantities)>> {
        let v = scale(&d.bumps.apply(&gs.field)?, d.lambda)?;
        let m = Norms::measure(params.p, &v).mass;
        if !(m > 0.0) {
            return Ok(None);
        }
        let v = v.scaled_amplitude((base.mass / m).sqrt());
        let r = report(params, &v)?;
        if !key_admissible(base, &r) {
            return Ok(None);
        }
        Ok(Some((r, key_quantities(params, base, &r))))
    };

    let mut t = Tally::new();
    let (mut drawn, mut admissible) = (0usize, 0usize);
    let (mut wide, mut wide_fail) = (0usize, 0usize);
    while admissible < n_samples && drawn < max_draws {
        let take = batch.min(max_draws - drawn);
        let draws: Vec<KeyDraw> = (0..take)
            .map(|_| KeyDraw {
                bumps: Bumps::draw(&mut rng, amp_scale, reach),
                lambda: rng.gen_range(1.0..1.6),
            })
            .collect();
        drawn += take;
        let results: Vec<_> = draws.par_iter().map(evaluate).collect::<Result<_>>()?;
        for (d, res) in draws.iter().zip(results) {
            let Some((r, q)) = res else { continue };
            if admissible == n_samples {
                break;
            }
            admissible += 1;
            let branch = if q.narrow_branch {
                q.f_one - q.f_lambda0
            } else {
                wide += 1;
                if q.f_lambda0 > q.f_one + LEMMA_TOL {
                    wide_fail += 1;
                }
                f64::INFINITY
            };
            t.push(
                q.slack.min(branch),
                &[
                    ("lambda", d.lambda),
                    ("bump_amplitude", d.bumps.max_amplitude()),
                    ("slack", q.slack),
                    ("lambda0", q.lambda0),
                    ("f_lambda0", q.f_lambda0),
                    ("f_one", q.f_one),
                    ("virial", r.virial),
                    ("xvar", r.xvar),
                ],
            );
        }
    }
    if admissible < KEY_MIN_ADMISSIBLE || admissible < n_samples.min(KEY_MIN_ADMISSIBLE) {
        return Err(Error::TooFewAdmissible { admissible, drawn });
    }
    let mut details = BTreeMap::new();
    details.insert("drawn".into(), drawn as f64);
    details.insert("admissible".into(), admissible as f64);
    details.insert("wide_branch".into(), wide as f64);
    details.insert("wide_branch_f_increase".into(), wide_fail as f64);
    Ok(t.finish(LemmaId::Key, LEMMA_TOL, details))
}

/// `g(s) = s^b - 1 - b (s - 1) - b (b - 1) / 2 (s - 1)^2 s^(b - 1)`
pub fn g_function(beta: f64, s: f64) -> f64 {
    s.powf(beta)
        - 1.0
        - beta * (s - 1.0)
        - beta * (beta - 1.0) / 2.0 * (s - 1.0).powi(2) * s.powf(beta - 1.0)
}

/// `4 (2 l^a - a l^2 + a - 2) - a (a - 2) (l - 1/l)^2 l^a` with `a = 2 beta`,
/// `l = sqrt(s)`.
pub fn key5_slack(beta: f64, s: f64) -> f64 {
    let a = 2.0 * beta;
    let l = s.sqrt();
    let la = l.powf(a);
    4.0 * (2.0 * la - a * l * l + a - 2.0) - a * (a - 2.0) * (l - 1.0 / l).powi(2) * la
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

pub fn scan_g(
    beta_range: (f64, f64),
    s_range: (f64, f64),
    resolution: usize,
) -> Result<LemmaReport> {
    let (b_lo, b_hi) = beta_range;
    let (s_lo, s_hi) = s_range;
    if !(b_lo > 1.0 && b_hi >= b_lo && b_hi.is_finite()) {
        return Err(Error::Range(format!(
            "beta range must lie in (1, inf), got {beta_range:?}"
        )));
    }
    if !(s_lo > 0.0 && s_hi >= s_lo && s_hi < 1.0) {
        return Err(Error::Range(format!(
            "s range must lie in (0, 1), got {s_range:?}"
        )));
    }
    if resolution == 0 {
        return Err(Error::Range("resolution must be positive".into()));
    }
    let betas = linspace(b_lo, b_hi, resolution);
    let ss = linspace(s_lo, s_hi, resolution);
    // (min g, beta, s, min key5, beta, s) per row
    let rows: Vec<(f64, f64, f64, f64, f64, f64)> = betas
        .par_iter()
        .map(|&b| {
            let mut out = (f64::INFINITY, b, 0.0, f64::INFINITY, b, 0.0);
            for &s in &ss {
                let g = g_function(b, s);
                if !(g >= out.0) {
                    out.0 = g;
                    out.2 = s;
                }
                let k = key5_slack(b, s);
                if !(k >= out.3) {
                    out.3 = k;
                    out.5 = s;
                }
            }
            out
        })
        .collect();
    let mut t = Tally::new();
    let mut details = BTreeMap::new();
    let g_min = rows
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .copied()
        .unwrap();
    let k_min = rows
        .iter()
        .min_by(|a, b| a.3.total_cmp(&b.3))
        .copied()
        .unwrap();
    for row in &rows {
        t.push(row.0, &[("check", 0.0), ("beta", row.1), ("s", row.2)]);
        t.push(row.3, &[("check", 1.0), ("beta", row.4), ("s", row.5)]);
    }
    details.insert("min_g".into(), g_min.0);
    details.insert("min_g_beta".into(), g_min.1);
    details.insert("min_g_s".into(), g_min.2);
    details.insert("min_key5".into(), k_min.3);
    details.insert("min_key5_beta".into(), k_min.4);
    details.insert("min_key5_s".into(), k_min.5);
    let mut rep = t.finish(LemmaId::GScan, G_SCAN_TOL, details);
    rep.cases_run = 2 * resolution * resolution;
    Ok(rep)
}

/// Moves the report away from the algebraic identities; used to exercise
/// the failure path.
pub type ReportTamper = fn(&mut FunctionalReport);

pub fn check_identities(params: &Params, fields: &[Field]) -> Result<LemmaReport> {
    check_identities_with(params, fields, None)
}

pub fn check_identities_with(
    params: &Params,
    fields: &[Field],
    tamper: Option<ReportTamper>,
) -> Result<LemmaReport> {
    let (a, p1) = (params.alpha, params.p + 1.0);
    let mut t = Tally::new();
    for (i, f) in fields.iter().enumerate() {
        let mut r = report(params, f)?;
        if let Some(tamper) = tamper {
            tamper(&mut r);
        }
        let ep_lhs = r.energy - r.virial;
        let ep_rhs = r.xvar + (a - 2.0) / (2.0 * p1) * r.lp1;
        let rp_lhs = r.second_var - 2.0 * r.virial;
        let rp_rhs = 4.0 * r.xvar - a * (a - 2.0) / p1 * r.lp1;
        t.push(
            -rel_err(ep_lhs, ep_rhs),
            &[
                ("field", i as f64),
                ("identity", 0.0),
                ("lhs", ep_lhs),
                ("rhs", ep_rhs),
            ],
        );
        t.push(
            -rel_err(rp_lhs, rp_rhs),
            &[
                ("field", i as f64),
                ("identity", 1.0),
                ("lhs", rp_lhs),
                ("rhs", rp_rhs),
            ],
        );
    }
    Ok(t.finish(LemmaId::Identities, IDENTITY_TOL, BTreeMap::new()))
}

// ---------------------------------------------------------------------------
// Threshold search

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub omega_lo: f64,
    pub omega_hi: f64,
    /// Bisected crossing.
    pub omega: f64,
    pub bisections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub dim: usize,
    pub p: f64,
    pub omega_grid: Vec<f64>,
    pub ratios: Vec<f64>,
    pub threshold: f64,
    pub crossings: Vec<Crossing>,
    pub omega0: Option<f64>,
    pub monotone: bool,
    pub verdict: String,
    /// Grid intervals used by each ground state of the scan.
    pub intervals: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanOpts {
    pub points: usize,
    /// Bisection stops when the bracket is this narrow relative to `omega + N`.
    pub rel_width: f64,
    pub solver: SolverOpts,
}

impl Default for ScanOpts {
    fn default() -> Self {
        Self {
            points: 12,
            rel_width: 1e-3,
            solver: SolverOpts::default(),
        }
    }
}

fn ratio_at(params: &Params, grid: &Arc<RadialGrid>, opts: &SolverOpts) -> Result<(f64, usize)> {
    let rec = solve_petviashvili(params, grid, opts)?;
    Ok((rec.report.ratio, rec.grid().intervals()))
}

pub fn find_omega0(
    dim: i64,
    p: f64,
    omega_lo: f64,
    omega_hi: f64,
    grid: &Arc<RadialGrid>,
) -> Result<ThresholdReport> {
    find_omega0_with(dim, p, omega_lo, omega_hi, grid, &ScanOpts::default())
}

pub fn find_omega0_with(
    dim: i64,
    p: f64,
    omega_lo: f64,
    omega_hi: f64,
    grid: &Arc<RadialGrid>,
    opts: &ScanOpts,
) -> Result<ThresholdReport> {
    let base = make_params(dim, p, omega_lo)?;
    let n = base.dim as f64;
    if !(omega_hi > omega_lo) || !omega_hi.is_finite() {
        return Err(Error::Range(format!(
            "need omega_hi > omega_lo, got [{omega_lo}, {omega_hi}]"
        )));
    }
    if opts.points < 2 || !(opts.rel_width > 0.0) {
        return Err(Error::Range(format!(
            "scan needs at least 2 points and a positive width, got {opts:?}"
        )));
    }
    let threshold = base.ratio_threshold();
    let (log_lo, log_hi) = ((omega_lo + n).ln(), (omega_hi + n).ln());
    let omega_at = |x: f64| x.exp() - n;
    let mut omega_grid: Vec<f64> = linspace(log_lo, log_hi, opts.points)
        .into_iter()
        .map(omega_at)
        .collect();
    omega_grid[0] = omega_lo;
    omega_grid[opts.points - 1] = omega_hi;

    let solved: Vec<(f64, usize)> = omega_grid
        .par_iter()
        .map(|&w| ratio_at(&base.with_omega(w)?, grid, &opts.solver))
        .collect::<Result<_>>()?;
    let (ratios, intervals): (Vec<f64>, Vec<usize>) = solved.into_iter().unzip();
    let sign = |r: f64| r > threshold;

    let brackets: Vec<(usize, f64, f64)> = (0..opts.points - 1)
        .filter(|&i| sign(ratios[i]) != sign(ratios[i + 1]))
        .map(|i| (i, omega_grid[i], omega_grid[i + 1]))
        .collect();
    let crossings: Vec<Crossing> = brackets
        .par_iter()
        .map(|&(i, lo, hi)| {
            let lo_sign = sign(ratios[i]);
            let (mut a, mut b) = ((lo + n).ln(), (hi + n).ln());
            let mut bisections = 0;
            while (b - a).exp() - 1.0 > opts.rel_width {
                let mid = 0.5 * (a + b);
                let (r, _) = ratio_at(&base.with_omega(omega_at(mid))?, grid, &opts.solver)?;
                if sign(r) == lo_sign {
                    a = mid;
                } else {
                    b = mid;
                }
                bisections += 1;
            }
            Ok(Crossing {
                omega_lo: lo,
                omega_hi: hi,
                omega: omega_at(0.5 * (a + b)),
                bisections,
            })
        })
        .collect::<Result<_>>()?;

    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    let increasing = ratios.windows(2).all(|w| w[1] > w[0]);
    let omega0 = if crossings.len() == 1 {
        Some(crossings[0].omega)
    } else {
        None
    };
    let verdict = match crossings.len() {
        0 if ratios[0] > threshold => {
            "criterion not met anywhere in the scan (ratio above threshold)".to_string()
        }
        0 => "criterion met over the whole scan (ratio at or below threshold)".to_string(),
        1 => format!("single crossing at omega0 = {:.6}", crossings[0].omega),
        k => format!("{k} crossings"),
    };
    let rep = ThresholdReport {
        dim: base.dim,
        p,
        omega_grid,
        ratios,
        threshold,
        crossings,
        omega0,
        monotone: decreasing || increasing,
        verdict,
        intervals,
    };
    if rep.crossings.is_empty() {
        return Err(Error::NoCrossing {
            verdict: rep.verdict.clone(),
            report: Box::new(rep),
        });
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn gs(omega: f64, intervals: usize) -> GroundStateRecord {
        let params = make_params(1, 7.0, omega).unwrap();
        let grid = make_grid(12.0, intervals, 1).unwrap();
        solve_petviashvili(&params, &grid, &SolverOpts::default()).unwrap()
    }

    #[test]
    fn lemma_ids_round_trip() {
        for id in LemmaId::ALL {
            assert_eq!(id.as_str().parse::<LemmaId>().unwrap(), id);
            let json = serde_json::to_string(&id).unwrap();
            assert_eq!(json, format!("\"{}\"", id.as_str()));
        }
        assert!("nope".parse::<LemmaId>().is_err());
    }

    #[test]
    fn g_closed_forms() {
        for beta in [1.01, 1.5, 2.0, 7.3] {
            assert_eq!(g_function(beta, 1.0), 0.0);
        }
        assert!((g_function(2.0, 0.5) - 0.125).abs() < 1e-15);
        for (b, s) in [(1.5, 0.3), (3.0, 0.01), (9.0, 0.9)] {
            assert!((key5_slack(b, s) - 8.0 * g_function(b, s)).abs() < 1e-10);
        }
    }

    #[test]
    fn g_scan_small() {
        let r = scan_g((1.01, 10.0), (0.001, 0.999), 200).unwrap();
        assert!(r.passed);
        assert_eq!(r.cases_run, 80000);
        assert!(r.details["min_g"] >= -1e-10);
        assert!(matches!(
            scan_g((0.5, 2.0), (0.1, 0.5), 10),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            scan_g((1.5, 2.0), (0.1, 1.5), 10),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn lambda0_arithmetic() {
        assert!((lambda0(1.0, 8.0, 3.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn criterion_agrees_on_ground_state() {
        let rec = gs(1.0, 2048);
        let r = check_criterion_equivalence(&rec).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.details["sign_agreement"], 1.0);
    }

    #[test]
    fn criterion_requires_pohozaev() {
        let rec = gs(1.0, 512);
        let mut bad = rec.clone();
        bad.field = scale(&rec.field, 1.2).unwrap();
        bad.report = report(&bad.params, &bad.field).unwrap();
        bad.pohozaev_defect = bad.report.virial.abs();
        assert!(matches!(
            check_criterion_equivalence(&bad),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn bom_margins_shrink_towards_one() {
        let rec = gs(2.0, 4096);
        let r = check_lem_bom(&rec, &[1.001, 1.05, 1.3, 2.0]).unwrap();
        assert!(r.passed);
        let m = |l: f64| bom_margins(&rec.params, &rec, l);
        assert!(m(1.001).min() < m(1.05).min());
        assert!(m(1.05).min() > 0.0);
        let one = m(1.0);
        assert!(one.energy.abs() < 1e-8 && one.virial.abs() < 1e-8 && one.lp1 == 0.0);
        assert!(matches!(
            check_lem_bom(&gs(1.0, 512), &[1.1]),
            Err(Error::Hypothesis(_))
        ));
    }

    #[test]
    fn varcha_small_sample() {
        let rec = gs(2.0, 1024);
        let r = check_varcha(&rec.params, &rec, 50, 7).unwrap();
        assert!(r.passed, "{:?}", r.witnesses.first());
        assert_eq!(r.cases_run, 50);
        let again = check_varcha(&rec.params, &rec, 50, 7).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn key_small_sample() {
        let rec = gs(2.0, 1024);
        let r = check_key_inequality(&rec.params, &rec, 50, 3).unwrap();
        assert!(r.passed, "{:?}", r.witnesses.first());
        assert_eq!(r.cases_run, 50);
    }

    #[test]
    fn key_scaled_ground_state_margin() {
        let rec = gs(2.0, 2048);
        let v = scale(&rec.field, 1.3).unwrap();
        let rv = report(&rec.params, &v).unwrap();
        let q = key_quantities(&rec.params, &rec.report, &rv);
        let expected = -rv.virial + (rv.energy - rec.report.energy);
        assert!((q.slack - expected).abs() < 1e-12);
        assert!(q.slack > 0.0);
    }

    #[test]
    fn identities_gaussian_and_zero() {
        let params = make_params(1, 7.0, 1.0).unwrap();
        let grid = make_grid(12.0, 4096, 1).unwrap();
        let g = Field::from_real_fn(grid.clone(), |r| (-r * r / 2.0).exp()).unwrap();
        let z = Field::zeros(grid);
        let r = check_identities(&params, &[g.clone(), z]).unwrap();
        assert!(r.passed);
        let rep = report(&params, &g).unwrap();
        let half = std::f64::consts::PI.sqrt() / 2.0;
        assert!((rep.energy - rep.virial - 17.0 / 16.0 * half).abs() < 1e-6);
        assert!((rep.second_var - 2.0 * rep.virial - 29.0 / 8.0 * half).abs() < 1e-6);
        let bad = check_identities_with(&params, &[g], Some(|r| r.energy += 1e-3)).unwrap();
        assert!(!bad.passed);
    }

    #[test]
    fn omega0_small_scan() {
        let grid = make_grid(12.0, 1024, 1).unwrap();
        let opts = ScanOpts {
            points: 6,
            ..ScanOpts::default()
        };
        let r = find_omega0_with(1, 7.0, -0.5, 10.0, &grid, &opts).unwrap();
        let w0 = r.omega0.unwrap();
        assert!(w0 > 1.0 && w0 < 2.0, "{w0}");
        assert!(r.monotone);
        assert_eq!(r.threshold, 0.09375);
        match find_omega0_with(1, 7.0, 3.0, 10.0, &grid, &opts) {
            Err(Error::NoCrossing { report, .. }) => assert!(report.crossings.is_empty()),
            other => panic!("expected NoCrossing, got {other:?}"),
        }
    }
}
