//! Positive radial solutions of
//!
//! ```text
//!   -Delta phi + |x|^2 phi + omega phi - |phi|^(p-1) phi = 0
//! ```
//!
//! by Petviashvili iteration on the discrete operator, with an
//! independent shooting solver used as an oracle.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::functionals::{format_f64, report, FunctionalReport};
use crate::grid::{make_grid, Field, Params, RadialGrid};

/// Largest grid the solver refines to.
pub const MAX_INTERVALS: usize = 16384;
/// `|P(phi)| <= POHOZAEV_TOL * max(||grad phi||^2, ||x phi||^2)`.
pub const POHOZAEV_TOL: f64 = 1e-6;
/// `residual <= RESIDUAL_TOL * sup |phi|^p`.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Negative overshoots above `-CLAMP_TOL * max phi` are roundoff.
const CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Petviashvili,
    Shooting,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Petviashvili => "petviashvili",
            Method::Shooting => "shooting",
        })
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "petviashvili" => Ok(Method::Petviashvili),
            "shooting" => Ok(Method::Shooting),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOpts {
    pub tol: f64,
    pub max_iter: usize,
    pub initial_width: f64,
    /// Double the grid until the Pohozaev defect is within tolerance.
    pub refine: bool,
}

impl Default for SolverOpts {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 20000,
            initial_width: 1.0,
            refine: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundStateRecord {
    pub params: Params,
    pub field: Field,
    pub residual: f64,
    pub pohozaev_defect: f64,
    pub iterations: usize,
    pub method: Method,
    pub report: FunctionalReport,
}

impl GroundStateRecord {
    fn assemble(params: Params, field: Field, iterations: usize, method: Method) -> Result<Self> {
        let report = report(&params, &field)?;
        Ok(Self {
            residual: residual(&params, &field),
            pohozaev_defect: report.virial.abs(),
            params,
            field,
            iterations,
            method,
            report,
        })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.field.grid()
    }

    pub fn residual_scale(&self) -> f64 {
        nonlinear_scale(&self.params, &self.field)
    }

    pub fn residual_ok(&self) -> bool {
        self.residual <= RESIDUAL_TOL * self.residual_scale()
    }

    pub fn pohozaev_ok(&self) -> bool {
        self.pohozaev_defect <= POHOZAEV_TOL * self.report.energy_scale()
    }

    pub fn amplitude(&self) -> f64 {
        self.field.values()[0].re
    }
}

fn power(v: f64, p: f64) -> f64 {
    v.abs().powf(p - 1.0) * v
}

fn nonlinear_scale(params: &Params, field: &Field) -> f64 {
    field
        .values()
        .iter()
        .map(|v| v.norm().powf(params.p))
        .fold(0.0, f64::max)
}

/// Sup-norm of the discrete stationary operator over the unknowns.
pub fn residual(params: &Params, field: &Field) -> f64 {
    let grid = field.grid();
    let u: Vec<f64> = field.active().iter().map(|v| v.re).collect();
    let lap = grid.neg_laplacian_active(&u);
    lap.iter()
        .zip(&u)
        .zip(grid.active_nodes())
        .map(|((l, &v), r)| (l + (r * r + params.omega) * v - power(v, params.p)).abs())
        .fold(0.0, f64::max)
}

/// `K + W (r^2 + omega)` on the unknowns.
fn stationary_operator(params: &Params, grid: &RadialGrid) -> BandMatrix<f64> {
    let mut l = grid.stiffness().clone();
    let diag: Vec<f64> = grid
        .active_weights()
        .iter()
        .zip(grid.active_nodes())
        .map(|(w, r)| w * (r * r + params.omega))
        .collect();
    l.add_diagonal(&diag);
    l
}

/// Stabilizing factor `<L u, u> / <u^p, u>`, with `L u` accumulated in
/// extended precision so the fixed point of the refined solve has
/// `gamma = 1` to roundoff.
fn petviashvili_gamma(params: &Params, grid: &RadialGrid, l: &BandMatrix<f64>, u: &[f64]) -> f64 {
    let lu: f64 = l
        .mul_vec_compensated(u)
        .iter()
        .zip(u)
        .map(|(a, b)| a * b)
        .sum();
    let nonlinear: f64 = grid
        .active_weights()
        .iter()
        .zip(u)
        .map(|(w, v)| w * v.abs().powf(params.p + 1.0))
        .sum();
    lu / nonlinear
}

fn check_grid(params: &Params, grid: &RadialGrid) -> Result<()> {
    if grid.dim() != params.dim {
        return Err(Error::DimensionMismatch {
            grid: grid.dim(),
            params: params.dim,
        });
    }
    Ok(())
}

/// Petviashvili iteration on the given grid, without refinement.
pub fn petviashvili_on_grid(
    params: &Params,
    grid: &Arc<RadialGrid>,
    opts: &SolverOpts,
) -> Result<GroundStateRecord> {
    check_grid(params, grid)?;
    if !(opts.initial_width > 0.0) || !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Precondition(format!(
            "solver options need tol > 0, max_iter > 0, initial_width > 0 (got {opts:?})"
        )));
    }
    let p = params.p;
    let op = stationary_operator(params, grid);
    let lu = op.clone().factor()?;
    let w2 = opts.initial_width * opts.initial_width;
    let mut u: Vec<f64> = grid
        .active_nodes()
        .iter()
        .map(|r| (-r * r / (2.0 * w2)).exp())
        .collect();
    let c = petviashvili_gamma(params, grid, &op, &u).powf(1.0 / (p - 1.0));
    u.iter_mut().for_each(|v| *v *= c);

    let exponent = p / (p - 1.0);
    let (mut gamma_defect, mut step) = (f64::INFINITY, f64::INFINITY);
    for it in 1..=opts.max_iter {
        let gamma = petviashvili_gamma(params, grid, &op, &u);
        let rhs: Vec<f64> = u
            .iter()
            .zip(grid.active_weights())
            .map(|(v, w)| w * power(*v, p))
            .collect();
        let mut next = lu.solve_refined(&op, &rhs, 2);
        let g = gamma.powf(exponent);
        next.iter_mut().for_each(|v| *v *= g);

        let top = next.iter().cloned().fold(0.0, f64::max);
        let low = next.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(top > 0.0) || !top.is_finite() || low < -CLAMP_TOL * top {
            return Err(Error::NonPositive {
                ratio: if top > 0.0 { low / top } else { f64::NAN },
            });
        }
        next.iter_mut().for_each(|v| *v = v.max(0.0));

        step = next
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / top;
        gamma_defect = (gamma - 1.0).abs();
        u = next;
        if gamma_defect < opts.tol && step < opts.tol {
            let field = Field::from_real(grid.clone(), &grid.expand(&u))?;
            return GroundStateRecord::assemble(*params, field, it, Method::Petviashvili);
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        gamma_defect,
        step,
    })
}

/// Ground state by Petviashvili iteration. With `opts.refine`, the grid is
/// doubled (up to [`MAX_INTERVALS`]) until the record is certified; the
/// returned field lives on the grid actually used.
pub fn solve_petviashvili(
    params: &Params,
    grid: &Arc<RadialGrid>,
    opts: &SolverOpts,
) -> Result<GroundStateRecord> {
    let mut grid = grid.clone();
    loop {
        let rec = petviashvili_on_grid(params, &grid, opts)?;
        let certified = rec.pohozaev_ok() && rec.residual_ok();
        if certified || !opts.refine || grid.intervals() * 2 > MAX_INTERVALS {
            return Ok(rec);
        }
        grid = make_grid(grid.r_max(), grid.intervals() * 2, grid.dim())?;
    }
}

// ---------------------------------------------------------------------------
// Shooting oracle

/// Dormand-Prince 5(4) coefficients.
mod dopri {
    pub const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    pub const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [
            19372.0 / 6561.0,
            -25360.0 / 2187.0,
            64448.0 / 6561.0,
            -212.0 / 729.0,
            0.0,
            0.0,
        ],
        [
            9017.0 / 3168.0,
            -355.0 / 33.0,
            46732.0 / 5247.0,
            49.0 / 176.0,
            -5103.0 / 18656.0,
            0.0,
        ],
        [
            35.0 / 384.0,
            0.0,
            500.0 / 1113.0,
            125.0 / 192.0,
            -2187.0 / 6784.0,
            11.0 / 84.0,
        ],
    ];
    pub const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
}

type State = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    /// Crossed zero: amplitude too large.
    Over,
    /// Turned upward while positive: amplitude too small.
    Under,
    /// Reached `r_max` without deciding.
    Undecided,
}

struct Shot {
    outcome: Outcome,
    /// Solution at grid nodes up to the decision point.
    values: Vec<f64>,
    /// Index of the last node sampled before the decision.
    decided_at: usize,
}

const ODE_RTOL: f64 = 1e-13;
const ODE_ATOL: f64 = 1e-15;

fn shoot(params: &Params, grid: &RadialGrid, a: f64) -> Shot {
    let (n, p, omega) = (params.dim as f64, params.p, params.omega);
    let rhs = |r: f64, y: &State| -> State {
        let source = (r * r + omega) * y[0] - power(y[0], p);
        if r == 0.0 {
            [y[1], source / n]
        } else {
            [y[1], source - (n - 1.0) / r * y[1]]
        }
    };
    let scale = a.abs().max(1e-300);
    let nodes = grid.nodes();
    let mut values = Vec::with_capacity(nodes.len());
    values.push(a);
    let mut y: State = [a, 0.0];
    let mut h = grid.spacing() / 4.0;
    let mut k = [[0.0; 2]; 7];
    for j in 1..nodes.len() {
        let (mut r, target) = (nodes[j - 1], nodes[j]);
        while r < target {
            let hs = h.min(target - r);
            k[0] = rhs(r, &y);
            let mut trial = y;
            for s in 1..7 {
                let mut ys = y;
                for (i, ki) in k.iter().enumerate().take(s) {
                    let c = dopri::A[s][i] * hs;
                    ys[0] += c * ki[0];
                    ys[1] += c * ki[1];
                }
                if s == 6 {
                    trial = ys;
                }
                k[s] = rhs(r + dopri::C[s] * hs, &ys);
            }
            let mut err: f64 = 0.0;
            for c in 0..2 {
                let e: f64 = (0..7).map(|s| dopri::E[s] * k[s][c]).sum::<f64>() * hs;
                let tol = ODE_ATOL * scale + ODE_RTOL * y[c].abs().max(trial[c].abs());
                err = err.max((e / tol).abs());
            }
            if !(trial[0].is_finite() && trial[1].is_finite()) || err.is_nan() {
                err = f64::INFINITY;
            }
            if !err.is_finite() {
                h = (0.2 * hs).max(1e-12 * grid.spacing());
                if hs > h {
                    continue;
                }
                // cannot resolve any further: the trajectory escaped
                return Shot {
                    outcome: Outcome::Over,
                    values,
                    decided_at: j - 1,
                };
            }
            if err <= 1.0 {
                r = if hs == target - r { target } else { r + hs };
                y = trial;
                if y[0] < 0.0 {
                    return Shot {
                        outcome: Outcome::Over,
                        values,
                        decided_at: j - 1,
                    };
                }
            } else if hs <= 1e-12 * grid.spacing() {
                // unresolvable at the step floor: only steep overshoots get here
                return Shot {
                    outcome: Outcome::Over,
                    values,
                    decided_at: j - 1,
                };
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (hs * factor).max(1e-12 * grid.spacing());
        }
        if y[0] < 0.0 {
            return Shot {
                outcome: Outcome::Over,
                values,
                decided_at: j - 1,
            };
        }
        values.push(y[0]);
        if y[1] > 0.0 {
            return Shot {
                outcome: Outcome::Under,
                decided_at: j,
                values,
            };
        }
    }
    let decided_at = values.len() - 1;
    Shot {
        outcome: Outcome::Undecided,
        values,
        decided_at,
    }
}

/// Bracketed shooting amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingAmplitude {
    /// Largest amplitude classified as undershooting.
    pub lo: f64,
    /// Smallest amplitude classified as overshooting.
    pub hi: f64,
    pub bisections: usize,
}

impl ShootingAmplitude {
    pub fn value(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn relative_width(&self) -> f64 {
        (self.hi - self.lo) / self.hi
    }
}

pub const BRACKET_SCAN: (f64, f64) = (1e-6, 1e6);

/// Bisects the shooting amplitude. With `bracket = None` the interval
/// [`BRACKET_SCAN`] is searched by doubling from its lower end.
pub fn shooting_amplitude(
    params: &Params,
    grid: &RadialGrid,
    tol: f64,
    bracket: Option<(f64, f64)>,
) -> Result<ShootingAmplitude> {
    check_grid(params, grid)?;
    let classify = |a: f64| shoot(params, grid, a).outcome;
    let (mut lo, mut hi) = match bracket {
        Some((lo, hi)) => {
            if !(lo > 0.0 && hi > lo)
                || classify(lo) != Outcome::Under
                || classify(hi) != Outcome::Over
            {
                return Err(Error::Bracket { lo, hi });
            }
            (lo, hi)
        }
        None => {
            let (start, stop) = BRACKET_SCAN;
            let mut a = start;
            if classify(a) != Outcome::Under {
                return Err(Error::Bracket {
                    lo: start,
                    hi: stop,
                });
            }
            loop {
                let next = 2.0 * a;
                if next > stop {
                    return Err(Error::Bracket {
                        lo: start,
                        hi: stop,
                    });
                }
                match classify(next) {
                    Outcome::Under => a = next,
                    Outcome::Over => break (a, next),
                    Outcome::Undecided => {
                        return Ok(ShootingAmplitude {
                            lo: next,
                            hi: next,
                            bisections: 0,
                        })
                    }
                }
            }
        }
    };
    let mut bisections = 0;
    while bisections < 200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        bisections += 1;
        match classify(mid) {
            Outcome::Under => lo = mid,
            Outcome::Over => hi = mid,
            Outcome::Undecided => {
                lo = mid;
                hi = mid;
                break;
            }
        }
    }
    let out = ShootingAmplitude { lo, hi, bisections };
    if out.relative_width() > tol {
        return Err(Error::Tolerance {
            achieved: out.relative_width(),
            requested: tol,
        });
    }
    Ok(out)
}

/// Ground state by shooting on the radial ODE, resampled onto `grid`.
/// Beyond the point where the undershooting trajectory turns upward the
/// profile is set to zero.
pub fn solve_shooting(
    params: &Params,
    grid: &Arc<RadialGrid>,
    tol: f64,
) -> Result<GroundStateRecord> {
    let amp = shooting_amplitude(params, grid, tol, None)?;
    let shot = shoot(params, grid, amp.lo);
    let mut values = vec![0.0; grid.len()];
    let keep = shot.decided_at.min(shot.values.len() - 1);
    // drop the node where the trajectory already turned upward
    let keep = if shot.outcome == Outcome::Under {
        keep.saturating_sub(1)
    } else {
        keep
    };
    values[..=keep].copy_from_slice(&shot.values[..=keep]);
    let field = Field::from_real(grid.clone(), &values)?;
    GroundStateRecord::assemble(*params, field, amp.bisections, Method::Shooting)
}

/// True if `values` decrease from the maximum onward.
pub fn has_monotone_tail(field: &Field) -> bool {
    let v = field.real_parts();
    let top = v
        .iter()
        .enumerate()
        .fold(
            (0, f64::MIN),
            |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc },
        )
        .0;
    v[top..].windows(2).all(|w| w[1] <= w[0])
}

// ---------------------------------------------------------------------------
// Cache

pub const CACHE_EXTENSION: &str = "csv";

fn cache_file_name(params: &Params, grid: &RadialGrid) -> String {
    format!(
        "gs_N{}_p{}_omega{}_rmax{}_J{}.{CACHE_EXTENSION}",
        params.dim,
        params.p,
        params.omega,
        grid.r_max(),
        grid.intervals()
    )
}

pub fn cache_path(dir: &Path, params: &Params, grid: &RadialGrid) -> PathBuf {
    dir.join(cache_file_name(params, grid))
}

/// Writes `path` atomically through a sibling temporary file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.{}.tmp",
        path.file_name().and_then(|s| s.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Stores `record` under the key of the requested grid `key_grid` (which
/// may be coarser than the grid the record was refined to).
pub fn cache_store(
    dir: &Path,
    key_grid: &RadialGrid,
    record: &GroundStateRecord,
) -> Result<PathBuf> {
    let path = cache_path(dir, &record.params, key_grid);
    let grid = record.grid();
    let mut out = String::new();
    let pr = &record.params;
    out.push_str(&format!(
        "# key: {} {} {} {} {} {}\n",
        pr.dim,
        pr.p,
        pr.omega,
        key_grid.r_max(),
        key_grid.intervals(),
        record.method
    ));
    out.push_str(&format!("# grid: {}\n", grid.intervals()));
    out.push_str(&format!("# residual: {}\n", format_f64(record.residual)));
    out.push_str(&format!(
        "# pohozaev: {}\n",
        format_f64(record.pohozaev_defect)
    ));
    out.push_str(&format!("# iterations: {}\n", record.iterations));
    out.push_str("r,phi\n");
    for (r, v) in grid.nodes().iter().zip(record.field.values()) {
        out.push_str(&format!("{},{}\n", format_f64(*r), format_f64(v.re)));
    }
    write_atomic(&path, out.as_bytes())?;
    Ok(path)
}

/// Loads a cached record for `(params, grid)`. Returns `Ok(None)` on a miss;
/// a file that fails to parse or to re-verify is [`Error::CorruptCache`].
pub fn cache_load(
    dir: &Path,
    params: &Params,
    grid: &RadialGrid,
) -> Result<Option<GroundStateRecord>> {
    let path = cache_path(dir, params, grid);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let corrupt = |reason: String| Error::CorruptCache {
        path: path.clone(),
        reason,
    };
    let mut key = None;
    let mut actual = None;
    let mut iterations = 0;
    let mut values = Vec::new();
    for line in text.lines() {
        if let Some(rest) = line.strip_prefix("# key:") {
            key = Some(
                rest.split_whitespace()
                    .map(str::to_owned)
                    .collect::<Vec<_>>(),
            );
        } else if let Some(rest) = line.strip_prefix("# grid:") {
            actual = Some(
                rest.trim()
                    .parse::<usize>()
                    .map_err(|e| corrupt(format!("grid header: {e}")))?,
            );
        } else if let Some(rest) = line.strip_prefix("# iterations:") {
            iterations = rest
                .trim()
                .parse()
                .map_err(|e| corrupt(format!("iterations header: {e}")))?;
        } else if line.starts_with('#') || line == "r,phi" || line.trim().is_empty() {
            continue;
        } else {
            let (_, phi) = line
                .split_once(',')
                .ok_or_else(|| corrupt(format!("malformed row {line:?}")))?;
            values.push(
                phi.trim()
                    .parse::<f64>()
                    .map_err(|e| corrupt(format!("row {line:?}: {e}")))?,
            );
        }
    }
    let key = key.ok_or_else(|| corrupt("missing key header".into()))?;
    if key.len() != 6 {
        return Err(corrupt(format!("key header has {} fields", key.len())));
    }
    let num = |i: usize| -> Result<f64> {
        key[i]
            .parse::<f64>()
            .map_err(|e| corrupt(format!("key field {i}: {e}")))
    };
    let matches = num(0)? == params.dim as f64
        && num(1)? == params.p
        && num(2)? == params.omega
        && num(3)? == grid.r_max()
        && num(4)? == grid.intervals() as f64;
    if !matches {
        return Ok(None);
    }
    let method: Method = key[5].parse().map_err(corrupt)?;
    let field_grid = match actual {
        Some(j) if j != grid.intervals() => make_grid(grid.r_max(), j, grid.dim())?,
        _ => Arc::new(grid.clone()),
    };
    if values.len() != field_grid.len() {
        return Err(corrupt(format!(
            "expected {} rows, found {}",
            field_grid.len(),
            values.len()
        )));
    }
    let field = Field::from_real(field_grid, &values).map_err(|e| corrupt(e.to_string()))?;
    let rec = GroundStateRecord::assemble(*params, field, iterations, method)?;
    if !rec.residual_ok() {
        return Err(corrupt(format!(
            "residual {:e} exceeds {:e}",
            rec.residual,
            RESIDUAL_TOL * rec.residual_scale()
        )));
    }
    if !rec.pohozaev_ok() {
        return Err(corrupt(format!(
            "Pohozaev defect {:e}",
            rec.pohozaev_defect
        )));
    }
    Ok(Some(rec))
}

/// Petviashvili solve through an optional cache directory. The flag is
/// true on a cache hit.
pub fn solve_cached(
    params: &Params,
    grid: &Arc<RadialGrid>,
    opts: &SolverOpts,
    cache_dir: Option<&Path>,
) -> Result<(GroundStateRecord, bool)> {
    if let Some(dir) = cache_dir {
        if let Some(rec) = cache_load(dir, params, grid)? {
            return Ok((rec, true));
        }
    }
    let rec = solve_petviashvili(params, grid, opts)?;
    if let Some(dir) = cache_dir {
        cache_store(dir, grid, &rec)?;
    }
    Ok((rec, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_params, DEFAULT_INTERVALS, DEFAULT_R_MAX};

    fn default_grid(dim: usize) -> Arc<RadialGrid> {
        make_grid(DEFAULT_R_MAX, DEFAULT_INTERVALS, dim).unwrap()
    }

    #[test]
    fn residual_of_zero_field_is_zero() {
        let params = make_params(1, 7.0, 1.0).unwrap();
        let f = Field::zeros(default_grid(1));
        assert_eq!(residual(&params, &f), 0.0);
    }

    #[test]
    fn gaussian_is_not_a_ground_state() {
        let params = make_params(1, 7.0, 1.0).unwrap();
        let f = Field::from_real_fn(default_grid(1), |r| (-r * r / 2.0).exp()).unwrap();
        assert!(residual(&params, &f) > 0.1);
    }

    #[test]
    fn petviashvili_one_dimensional() {
        let params = make_params(1, 7.0, 1.0).unwrap();
        let rec = solve_petviashvili(&params, &default_grid(1), &SolverOpts::default()).unwrap();
        assert!(rec.residual_ok(), "residual {}", rec.residual);
        assert!(rec.pohozaev_ok(), "pohozaev {}", rec.pohozaev_defect);
        assert_eq!(rec.grid().intervals(), DEFAULT_INTERVALS);
        assert!(rec.field.real_parts()[..2000].iter().all(|&v| v > 0.0));
        assert!(has_monotone_tail(&rec.field));
    }

    #[test]
    fn shooting_matches_petviashvili() {
        let params = make_params(1, 7.0, 1.0).unwrap();
        let grid = default_grid(1);
        let pv = solve_petviashvili(&params, &grid, &SolverOpts::default()).unwrap();
        let sh = solve_shooting(&params, &grid, 1e-12).unwrap();
        let diff = pv
            .field
            .values()
            .iter()
            .zip(sh.field.values())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-5, "sup difference {diff:e}");
        assert!(has_monotone_tail(&sh.field));
    }

    #[test]
    fn shooting_bracket_independence() {
        let params = make_params(1, 7.0, 1.0).unwrap();
        let grid = default_grid(1);
        let a = shooting_amplitude(&params, &grid, 1e-12, None)
            .unwrap()
            .value();
        for (lo, hi) in [(1e-3, 1e3), (0.5 * a, 2.0 * a), (0.9 * a, 10.0)] {
            let b = shooting_amplitude(&params, &grid, 1e-12, Some((lo, hi)))
                .unwrap()
                .value();
            assert!(((a - b) / a).abs() < 1e-10);
        }
        assert!(matches!(
            shooting_amplitude(&params, &grid, 1e-12, Some((2.0 * a, 3.0 * a))),
            Err(Error::Bracket { .. })
        ));
    }

    #[test]
    fn cache_round_trip_and_tamper() {
        let dir = tempfile::tempdir().unwrap();
        let params = make_params(1, 7.0, 1.0).unwrap();
        let grid = make_grid(DEFAULT_R_MAX, 1024, 1).unwrap();
        let opts = SolverOpts {
            refine: false,
            ..SolverOpts::default()
        };
        let (rec, hit) = solve_cached(&params, &grid, &opts, Some(dir.path())).unwrap();
        assert!(!hit);
        let (again, hit) = solve_cached(&params, &grid, &opts, Some(dir.path())).unwrap();
        assert!(hit);
        assert_eq!(rec.field.values(), again.field.values());

        let other = make_grid(DEFAULT_R_MAX, 2048, 1).unwrap();
        assert!(cache_load(dir.path(), &params, &other).unwrap().is_none());

        let path = cache_path(dir.path(), &params, &grid);
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        let row = lines.len() / 2;
        let (r, _) = lines[row].split_once(',').unwrap();
        lines[row] = format!("{r},0.5");
        fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(
            cache_load(dir.path(), &params, &grid),
            Err(Error::CorruptCache { .. })
        ));
    }

    #[test]
    fn method_round_trips_through_text() {
        for m in [Method::Petviashvili, Method::Shooting] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
    }
}
