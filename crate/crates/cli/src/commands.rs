use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use serde::Serialize;
use trapnls::dynamics::{
    evolve, membership, virial_check, BlowupClause, EvolveOpts, SetMembership, Status, Verdict,
    VirialCheck,
};
use trapnls::functionals::{format_f64, REPORT_CSV_HEADER};
use trapnls::groundstate::{solve_cached, write_atomic, GroundStateRecord, Method};
use trapnls::verify::{
    check_criterion_equivalence, check_identities_with, check_key_inequality, check_lem_bom,
    check_varcha, find_omega0_with, scan_g, LemmaId, LemmaReport, ReportTamper, ScanOpts,
    ThresholdReport, HYPOTHESIS_TOL,
};
use trapnls::{make_grid, scale, Error, Field, FunctionalReport, Params, RadialGrid};

use crate::config::RunConfig;
use crate::plot::ratio_plot;

/// Overrides the ground-state cache directory (default `<output>/cache`).
pub const CACHE_ENV: &str = "TRAPNLS_CACHE_DIR";

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Solver(String),
    Membership(String),
    Lemmas(Vec<LemmaId>),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Membership(_) => 3,
            CliError::Lemmas(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Solver(m) => write!(f, "solver failure: {m}"),
            CliError::Membership(m) => write!(f, "membership contradiction: {m}"),
            CliError::Lemmas(ids) => {
                let names: Vec<_> = ids.iter().map(|i| i.as_str()).collect();
                write!(f, "failed lemma checks: {}", names.join(", "))
            }
        }
    }
}

/// Parameter and grid problems are configuration errors; everything else
/// raised while computing is a solver failure.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Dimension(_)
            | Error::Subcritical { .. }
            | Error::Supercritical { .. }
            | Error::Frequency { .. }
            | Error::Grid(_)
            | Error::EvolveOpts(_)
            | Error::Range(_) => CliError::Config(e.to_string()),
            other => CliError::Solver(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub struct Context {
    pub config: RunConfig,
    pub params: Params,
    pub output: PathBuf,
    pub cache: PathBuf,
    pub quiet: bool,
}

impl Context {
    pub fn new(config: RunConfig, output: Option<PathBuf>, quiet: bool) -> CliResult<Self> {
        config.validate().map_err(CliError::Config)?;
        let params = config.params().map_err(CliError::Config)?;
        let output = output
            .or_else(|| config.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("trapnls-out"));
        let cache = std::env::var_os(CACHE_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from)
            .unwrap_or_else(|| output.join("cache"));
        fs::create_dir_all(&output)
            .map_err(|e| CliError::Config(format!("cannot create {}: {e}", output.display())))?;
        Ok(Self {
            config,
            params,
            output,
            cache,
            quiet,
        })
    }

    fn say(&self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }

    fn grid(&self) -> CliResult<Arc<RadialGrid>> {
        Ok(make_grid(
            self.config.grid.r_max,
            self.config.grid.j,
            self.params.dim,
        )?)
    }

    fn write(&self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.output.join(name);
        write_atomic(&path, contents.as_bytes())
            .map_err(|e| CliError::Solver(format!("cannot write {}: {e}", path.display())))
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Solver(format!("cannot serialize {name}: {e}")))?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Cache-aware ground state; a cache entry that fails re-verification
    /// is replaced by a fresh solve.
    fn ground_state(&self) -> CliResult<GroundStateRecord> {
        let grid = self.grid()?;
        fs::create_dir_all(&self.cache).map_err(|e| {
            CliError::Solver(format!("cannot create cache {}: {e}", self.cache.display()))
        })?;
        let solved = match solve_cached(&self.params, &grid, &self.config.solver, Some(&self.cache))
        {
            Err(Error::CorruptCache { path, reason }) => {
                warn!("discarding cache entry {}: {reason}", path.display());
                fs::remove_file(&path).map_err(|e| {
                    CliError::Solver(format!("cannot remove {}: {e}", path.display()))
                })?;
                solve_cached(&self.params, &grid, &self.config.solver, Some(&self.cache))
            }
            other => other,
        };
        let (rec, hit) = solved?;
        if hit {
            info!("cache hit in {}", self.cache.display());
        } else {
            info!(
                "solved ground state in {} iterations on J = {}",
                rec.iterations,
                rec.grid().intervals()
            );
        }
        Ok(rec)
    }
}

fn criterion_tag(r: f64) -> &'static str {
    if r <= 0.0 {
        "unstable-candidate"
    } else {
        "criterion-not-met"
    }
}

#[derive(Serialize)]
struct GroundStateSummary<'a> {
    params: &'a Params,
    r_max: f64,
    intervals: usize,
    method: Method,
    iterations: usize,
    amplitude: f64,
    residual: f64,
    residual_scale: f64,
    residual_ok: bool,
    pohozaev_defect: f64,
    pohozaev_ok: bool,
    report: &'a FunctionalReport,
    criterion: &'static str,
}

fn profile_csv(field: &Field) -> String {
    let mut out = String::from("r,phi\n");
    for (r, v) in field.grid().nodes().iter().zip(field.values()) {
        out.push_str(&format!("{},{}\n", format_f64(*r), format_f64(v.re)));
    }
    out
}

pub fn cmd_ground_state(ctx: &Context) -> CliResult<()> {
    let rec = ctx.ground_state()?;
    ctx.write("ground_state.csv", &profile_csv(&rec.field))?;
    ctx.write(
        "functionals.csv",
        &format!("{REPORT_CSV_HEADER}\n{}\n", rec.report.csv_row()),
    )?;
    let r = rec.report.second_var;
    ctx.write_json(
        "ground_state.json",
        &GroundStateSummary {
            params: &rec.params,
            r_max: rec.grid().r_max(),
            intervals: rec.grid().intervals(),
            method: rec.method,
            iterations: rec.iterations,
            amplitude: rec.amplitude(),
            residual: rec.residual,
            residual_scale: rec.residual_scale(),
            residual_ok: rec.residual_ok(),
            pohozaev_defect: rec.pohozaev_defect,
            pohozaev_ok: rec.pohozaev_ok(),
            report: &rec.report,
            criterion: criterion_tag(r),
        },
    )?;
    ctx.say(&format!(
        "R(phi) = {}  [{}]",
        format_f64(r),
        criterion_tag(r)
    ));
    Ok(())
}

#[derive(Serialize)]
struct EvolveSummary {
    lambda: f64,
    status: Status,
    blowup_time: Option<f64>,
    blowup_clause: Option<BlowupClause>,
    steps: usize,
    final_time: f64,
    /// Samples at `t <= 0.9 T` (or the whole run without blowup).
    virial_window_end: f64,
    virial_max_rel_err: Option<f64>,
    virial_compared: usize,
    mass_drift: f64,
    energy_drift: f64,
    initial_membership: SetMembership,
    ground_state_second_var: f64,
    opts: EvolveOpts,
}

/// Perturbation of `u0` used by the fault-injection hook.
pub type FieldFault = fn(&Field) -> trapnls::Result<Field>;

/// Inflates the mass by 1% so that `u0` leaves the constraint set.
fn inflate_mass(u: &Field) -> trapnls::Result<Field> {
    u.map(|v| v * 1.01f64.sqrt())
}

pub fn field_fault_for(name: &str) -> CliResult<FieldFault> {
    match name {
        "mass" => Ok(inflate_mass),
        other => Err(CliError::Config(format!(
            "unknown fault {other:?} (expected mass)"
        ))),
    }
}

pub fn cmd_evolve(ctx: &Context, lambda: f64, fault: Option<FieldFault>) -> CliResult<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(CliError::Config(format!(
            "--lambda must be positive, got {lambda}"
        )));
    }
    let rec = ctx.ground_state()?;
    let mut u0 = scale(&rec.field, lambda)?;
    if let Some(fault) = fault {
        u0 = fault(&u0)?;
    }
    let initial = membership(&ctx.params, &rec, &u0);
    let r = rec.report.second_var;
    ctx.say(&format!(
        "u0 = phi^{lambda}: in A = {}, in B = {} (min B margin {:.6e})",
        initial.in_a,
        initial.in_b,
        initial.min_b_margin()
    ));
    if lambda > 1.0 && r <= HYPOTHESIS_TOL {
        match initial.in_b {
            Verdict::No => {
                return Err(CliError::Membership(format!(
                    "lambda = {lambda} > 1 with R(phi) = {r:e} <= 0 but u0 is not in B \
                     (margins: energy {:e}, lp1 {:e}, virial {:e}, mass deviation {:e})",
                    initial.margin_energy,
                    initial.margin_lp1,
                    initial.margin_virial,
                    initial.mass_deviation
                )))
            }
            Verdict::Indeterminate => {
                warn!("membership of u0 in B is within tolerance of the boundary")
            }
            Verdict::Yes => {}
        }
    }
    let opts = ctx.config.evolve;
    let trace = match evolve(&ctx.params, &u0, &opts, Some(&rec)) {
        Ok(t) => t,
        Err(Error::NonFiniteState { t, trace }) => {
            ctx.write("trace.csv", &trace.to_csv())?;
            return Err(CliError::Solver(format!("non-finite state at t = {t}")));
        }
        Err(e) => return Err(e.into()),
    };
    ctx.write("trace.csv", &trace.to_csv())?;
    let final_time = trace.times.last().copied().unwrap_or(0.0);
    let window_end = match trace.blowup_time {
        Some(t) => 0.9 * t,
        None => final_time,
    };
    let virial: Option<VirialCheck> = virial_check(&trace.window(0.0, window_end)).ok();
    let summary = EvolveSummary {
        lambda,
        status: trace.status,
        blowup_time: trace.blowup_time,
        blowup_clause: trace.blowup_clause,
        steps: trace.steps,
        final_time,
        virial_window_end: window_end,
        virial_max_rel_err: virial.as_ref().map(|v| v.max_rel_err),
        virial_compared: virial.as_ref().map_or(0, |v| v.compared),
        mass_drift: trace.mass_drift(),
        energy_drift: trace.energy_drift(),
        initial_membership: initial,
        ground_state_second_var: r,
        opts,
    };
    ctx.write_json("evolve_summary.json", &summary)?;
    let when = summary
        .blowup_time
        .map_or(String::new(), |t| format!(" at T = {t:.6e}"));
    ctx.say(&format!(
        "status = {}{when}, steps = {}, virial max_rel_err = {}",
        summary.status,
        summary.steps,
        summary
            .virial_max_rel_err
            .map_or("n/a".to_string(), |v| format!("{v:.6e}"))
    ));
    Ok(())
}

pub fn cmd_sweep(ctx: &Context) -> CliResult<()> {
    let grid = ctx.grid()?;
    let sweep = &ctx.config.sweep;
    let opts = ScanOpts {
        points: sweep.points,
        rel_width: sweep.rel_width,
        solver: ctx.config.solver,
    };
    let report: ThresholdReport = match find_omega0_with(
        ctx.config.problem.n,
        ctx.params.p,
        sweep.omega_lo,
        sweep.omega_hi,
        &grid,
        &opts,
    ) {
        Ok(r) => r,
        Err(Error::NoCrossing { report, .. }) => *report,
        Err(e) => return Err(e.into()),
    };
    ctx.write_json("threshold.json", &report)?;
    let mut rows: Vec<(f64, f64)> = report
        .omega_grid
        .iter()
        .copied()
        .zip(report.ratios.iter().copied())
        .collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut csv = String::from("omega,ratio\n");
    for (w, q) in &rows {
        csv.push_str(&format!("{},{}\n", format_f64(*w), format_f64(*q)));
    }
    ctx.write("ratios.csv", &csv)?;
    let (ws, qs): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
    ctx.write(
        "ratios.svg",
        &ratio_plot(&ws, &qs, report.threshold, report.dim as f64),
    )?;
    match report.omega0 {
        Some(w0) => ctx.say(&format!(
            "omega0 = {w0:.6e} (threshold {:.6}, {})",
            report.threshold, report.verdict
        )),
        None => ctx.say(&format!("no crossing: {}", report.verdict)),
    }
    Ok(())
}

/// Deliberate corruption of the energy used by the fault-injection hook.
fn corrupt_energy(r: &mut FunctionalReport) {
    r.energy += 1e-3 * r.energy_scale().max(1.0);
}

pub fn tamper_for(name: &str) -> CliResult<ReportTamper> {
    match name {
        "energy" => Ok(corrupt_energy),
        other => Err(CliError::Config(format!(
            "unknown fault {other:?} (expected energy)"
        ))),
    }
}

fn identity_fields(gs: &GroundStateRecord) -> trapnls::Result<Vec<Field>> {
    let phi = &gs.field;
    let grid = phi.grid().clone();
    Ok(vec![
        phi.clone(),
        scale(phi, 1.3)?,
        scale(phi, 0.8)?,
        Field::from_real_fn(grid.clone(), |r| 0.7 * (-r * r / 2.0).exp())?,
        Field::zeros(grid),
    ])
}

/// `gs` may be `None` only for the g-scan, which needs no ground state.
fn run_lemma(
    ctx: &Context,
    id: LemmaId,
    gs: Option<&GroundStateRecord>,
    tamper: Option<ReportTamper>,
) -> trapnls::Result<LemmaReport> {
    let v = &ctx.config.verify;
    if id == LemmaId::GScan {
        return scan_g(v.beta_range, v.s_range, v.resolution);
    }
    let gs = gs.expect("ground state required");
    match id {
        LemmaId::Identities => check_identities_with(&ctx.params, &identity_fields(gs)?, tamper),
        LemmaId::CriterionEquiv => check_criterion_equivalence(gs),
        LemmaId::Bom => check_lem_bom(gs, &v.lambdas),
        LemmaId::Varcha => check_varcha(&ctx.params, gs, v.n_samples, v.seed),
        LemmaId::Key => check_key_inequality(&ctx.params, gs, v.n_samples, v.seed),
        LemmaId::GScan => unreachable!(),
    }
}

pub fn cmd_verify(
    ctx: &Context,
    only: Option<LemmaId>,
    tamper: Option<ReportTamper>,
) -> CliResult<()> {
    let ids: Vec<LemmaId> = match only {
        Some(id) => vec![id],
        None => LemmaId::ALL.to_vec(),
    };
    let needs_gs = ids.iter().any(|id| *id != LemmaId::GScan);
    let gs = if needs_gs {
        Some(ctx.ground_state()?)
    } else {
        None
    };
    let mut failed = Vec::new();
    for id in ids {
        let report = match run_lemma(ctx, id, gs.as_ref(), tamper) {
            Ok(r) => r,
            Err(
                e @ (Error::Hypothesis(_)
                | Error::Precondition(_)
                | Error::TooFewAdmissible { .. }
                | Error::Range(_)),
            ) => LemmaReport::errored(id, LemmaReport::tol_for(id), &e),
            Err(e) => return Err(e.into()),
        };
        ctx.write_json(&format!("lemma_{}.json", id.as_str()), &report)?;
        ctx.say(&report.summary_line());
        if let Some(err) = &report.error {
            ctx.say(&format!("  {err}"));
        }
        if !report.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Lemmas(failed))
    }
}

pub fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).map_err(CliError::Config),
        None => Ok(RunConfig::default()),
    }
}
