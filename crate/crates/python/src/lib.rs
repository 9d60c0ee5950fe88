//! Python bindings: plain lists and dicts in, plain lists and dicts out.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;
use trapnls::dynamics::{evolve as run_evolve, virial_check, EvolveOpts};
use trapnls::grid::{DEFAULT_INTERVALS, DEFAULT_R_MAX};
use trapnls::groundstate::{solve_petviashvili, solve_shooting, SolverOpts};
use trapnls::verify::{
    check_criterion_equivalence, check_identities, check_key_inequality, check_lem_bom,
    check_varcha, find_omega0_with, scan_g, LemmaId, ScanOpts,
};
use trapnls::{make_grid, make_params, Error, Field, Params, RadialGrid};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Dimension(_)
        | Error::Subcritical { .. }
        | Error::Supercritical { .. }
        | Error::Frequency { .. }
        | Error::Grid(_)
        | Error::LengthMismatch { .. }
        | Error::NonFiniteSample { .. }
        | Error::Scale(_)
        | Error::EvolveOpts(_)
        | Error::Range(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Converts any serializable value through the stdlib `json` module.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn setup(
    dim: i64,
    p: f64,
    omega: f64,
    r_max: f64,
    intervals: usize,
) -> PyResult<(Params, Arc<RadialGrid>)> {
    let params = make_params(dim, p, omega).map_err(py_err)?;
    let grid = make_grid(r_max, intervals, params.dim).map_err(py_err)?;
    Ok((params, grid))
}

fn field_on(values: &[f64], dim: usize, r_max: f64) -> PyResult<Field> {
    if values.len() < 2 {
        return Err(PyValueError::new_err("need at least two samples"));
    }
    let grid = make_grid(r_max, values.len() - 1, dim).map_err(py_err)?;
    Field::from_real(grid, values).map_err(py_err)
}

/// Problem constants `alpha`, `beta` and the ratio threshold.
#[pyfunction]
fn params<'py>(py: Python<'py>, dim: i64, p: f64, omega: f64) -> PyResult<Bound<'py, PyAny>> {
    let prm = make_params(dim, p, omega).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("params", to_py(py, &prm)?)?;
    d.set_item("ratio_threshold", prm.ratio_threshold())?;
    Ok(d.into_any())
}

/// Ground state on `[0, r_max]` with `intervals` cells; `method` is
/// `"petviashvili"` or `"shooting"`.
#[pyfunction]
#[pyo3(signature = (dim, p, omega, r_max = DEFAULT_R_MAX, intervals = DEFAULT_INTERVALS, method = "petviashvili"))]
fn ground_state<'py>(
    py: Python<'py>,
    dim: i64,
    p: f64,
    omega: f64,
    r_max: f64,
    intervals: usize,
    method: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let (prm, grid) = setup(dim, p, omega, r_max, intervals)?;
    let rec = match method {
        "petviashvili" => solve_petviashvili(&prm, &grid, &SolverOpts::default()),
        "shooting" => solve_shooting(&prm, &grid, 1e-12),
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    }
    .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("r", rec.grid().nodes().to_vec())?;
    d.set_item("phi", rec.field.real_parts())?;
    d.set_item("amplitude", rec.amplitude())?;
    d.set_item("residual", rec.residual)?;
    d.set_item("pohozaev_defect", rec.pohozaev_defect)?;
    d.set_item("iterations", rec.iterations)?;
    d.set_item("report", to_py(py, &rec.report)?)?;
    Ok(d.into_any())
}

/// Functional report of a real radial profile sampled on a uniform grid
/// over `[0, r_max]`.
#[pyfunction]
#[pyo3(signature = (dim, p, omega, values, r_max = DEFAULT_R_MAX))]
fn report<'py>(
    py: Python<'py>,
    dim: i64,
    p: f64,
    omega: f64,
    values: Vec<f64>,
    r_max: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let prm = make_params(dim, p, omega).map_err(py_err)?;
    let field = field_on(&values, prm.dim, r_max)?;
    to_py(py, &trapnls::report(&prm, &field).map_err(py_err)?)
}

/// Mass-preserving dilation `lambda^{N/2} v(lambda r)`.
#[pyfunction]
#[pyo3(signature = (dim, values, lam, r_max = DEFAULT_R_MAX))]
fn scale(dim: usize, values: Vec<f64>, lam: f64, r_max: f64) -> PyResult<Vec<f64>> {
    let field = field_on(&values, dim, r_max)?;
    Ok(trapnls::scale(&field, lam).map_err(py_err)?.real_parts())
}

/// Evolves `phi^lam` and returns the trace with the virial comparison.
#[pyfunction]
#[pyo3(signature = (dim, p, omega, lam, t_end = 1.0, dt0 = 1e-4, r_max = DEFAULT_R_MAX, intervals = DEFAULT_INTERVALS))]
#[allow(clippy::too_many_arguments)]
fn evolve<'py>(
    py: Python<'py>,
    dim: i64,
    p: f64,
    omega: f64,
    lam: f64,
    t_end: f64,
    dt0: f64,
    r_max: f64,
    intervals: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let (prm, grid) = setup(dim, p, omega, r_max, intervals)?;
    let rec = solve_petviashvili(&prm, &grid, &SolverOpts::default()).map_err(py_err)?;
    let u0 = trapnls::scale(&rec.field, lam).map_err(py_err)?;
    let opts = EvolveOpts {
        t_end,
        dt0,
        dt_min: dt0 * 1e-3,
        ..EvolveOpts::default()
    };
    let trace = run_evolve(&prm, &u0, &opts, Some(&rec)).map_err(py_err)?;
    let window_end = trace.blowup_time.map_or(f64::INFINITY, |t| 0.9 * t);
    let virial = virial_check(&trace.window(0.0, window_end)).ok();
    let d = PyDict::new(py);
    d.set_item("trace", to_py(py, &trace)?)?;
    d.set_item("virial_max_rel_err", virial.map(|v| v.max_rel_err))?;
    Ok(d.into_any())
}

/// Runs one lemma check and returns its report.
#[pyfunction]
#[pyo3(signature = (lemma, dim = 1, p = 7.0, omega = 2.0, n_samples = 1000, seed = 42))]
fn verify<'py>(
    py: Python<'py>,
    lemma: &str,
    dim: i64,
    p: f64,
    omega: f64,
    n_samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let id: LemmaId = lemma.parse().map_err(PyValueError::new_err)?;
    if id == LemmaId::GScan {
        return to_py(
            py,
            &scan_g((1.01, 10.0), (0.001, 0.999), 2000).map_err(py_err)?,
        );
    }
    let (prm, grid) = setup(dim, p, omega, DEFAULT_R_MAX, DEFAULT_INTERVALS)?;
    let gs = solve_petviashvili(&prm, &grid, &SolverOpts::default()).map_err(py_err)?;
    let rep = match id {
        LemmaId::Identities => check_identities(&prm, std::slice::from_ref(&gs.field)),
        LemmaId::CriterionEquiv => check_criterion_equivalence(&gs),
        LemmaId::Bom => check_lem_bom(&gs, &[1.05, 1.3, 2.0]),
        LemmaId::Varcha => check_varcha(&prm, &gs, n_samples, seed),
        LemmaId::Key => check_key_inequality(&prm, &gs, n_samples, seed),
        LemmaId::GScan => unreachable!(),
    }
    .map_err(py_err)?;
    to_py(py, &rep)
}

/// Threshold search over `[omega_lo, omega_hi]`.
#[pyfunction]
#[pyo3(signature = (dim, p, omega_lo, omega_hi, points = 12, intervals = DEFAULT_INTERVALS))]
fn find_omega0<'py>(
    py: Python<'py>,
    dim: i64,
    p: f64,
    omega_lo: f64,
    omega_hi: f64,
    points: usize,
    intervals: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let prm = make_params(dim, p, omega_lo).map_err(py_err)?;
    let grid = make_grid(DEFAULT_R_MAX, intervals, prm.dim).map_err(py_err)?;
    let opts = ScanOpts {
        points,
        ..ScanOpts::default()
    };
    match find_omega0_with(dim, p, omega_lo, omega_hi, &grid, &opts) {
        Ok(r) => to_py(py, &r),
        Err(Error::NoCrossing { report, .. }) => to_py(py, &*report),
        Err(e) => Err(py_err(e)),
    }
}

#[pymodule]
fn trapnls_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(params, m)?)?;
    m.add_function(wrap_pyfunction!(ground_state, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(scale, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(find_omega0, m)?)?;
    Ok(())
}
