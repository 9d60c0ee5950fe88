use std::path::PathBuf;

use thiserror::Error;

use crate::dynamics::EvolutionTrace;
use crate::verify::ThresholdReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spatial dimension must be at least 1, got {0}")]
    Dimension(i64),
    #[error("nonlinearity p = {p} is not L2-supercritical: need p > 1 + 4/N = {bound}")]
    Subcritical { p: f64, bound: f64 },
    #[error("nonlinearity p = {p} is not energy-subcritical: need p < 2*-1 = {bound}")]
    Supercritical { p: f64, bound: f64 },
    #[error("frequency omega = {omega} must exceed -N = {bound}")]
    Frequency { omega: f64, bound: f64 },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("length mismatch: expected {expected} samples, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("sampler returned a non-finite value at r = {r}")]
    NonFiniteSample { r: f64 },
    #[error("scaling parameter must be positive, got {0}")]
    Scale(f64),
    #[error("field is identically zero")]
    DegenerateField,
    #[error("constraint normalization failed: {0}")]
    Normalization(String),
    #[error("grid dimension {grid} does not match problem dimension {params}")]
    DimensionMismatch { grid: usize, params: usize },
    #[error("Petviashvili iteration did not converge after {iterations} iterations (|gamma-1| = {gamma_defect:e}, step = {step:e})")]
    NoConvergence {
        iterations: usize,
        gamma_defect: f64,
        step: f64,
    },
    #[error("iterate lost positivity: min/max = {ratio:e}")]
    NonPositive { ratio: f64 },
    #[error("no shooting bracket found for amplitude in [{lo:e}, {hi:e}]")]
    Bracket { lo: f64, hi: f64 },
    #[error("shooting bracket width {achieved:e} exceeds requested tolerance {requested:e}")]
    Tolerance { achieved: f64, requested: f64 },
    #[error("cached ground state {path:?} failed re-verification: {reason}")]
    CorruptCache { path: PathBuf, reason: String },
    #[error("linear solve failed: zero pivot at row {row}")]
    LinearSolve { row: usize },
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64, trace: Box<EvolutionTrace> },
    #[error("invalid evolution options: {0}")]
    EvolveOpts(String),
    #[error("need at least 5 samples for the virial check, got {0}")]
    InsufficientSamples(usize),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("lemma hypothesis violated: {0}")]
    Hypothesis(String),
    #[error("only {admissible} admissible samples out of {drawn} drawn")]
    TooFewAdmissible { admissible: usize, drawn: usize },
    #[error("invalid range: {0}")]
    Range(String),
    #[error("no threshold crossing in scan: {verdict}")]
    NoCrossing {
        verdict: String,
        report: Box<ThresholdReport>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
