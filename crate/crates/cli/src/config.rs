use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use trapnls::dynamics::EvolveOpts;
use trapnls::grid::{DEFAULT_INTERVALS, DEFAULT_R_MAX};
use trapnls::groundstate::SolverOpts;
use trapnls::{make_grid, make_params, Params};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    #[serde(rename = "N")]
    pub n: i64,
    pub p: f64,
    pub omega: f64,
}

impl Default for Problem {
    fn default() -> Self {
        Self {
            n: 1,
            p: 7.0,
            omega: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub r_max: f64,
    #[serde(rename = "J")]
    pub j: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            r_max: DEFAULT_R_MAX,
            j: DEFAULT_INTERVALS,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub beta_range: (f64, f64),
    pub s_range: (f64, f64),
    pub resolution: usize,
    pub lambdas: Vec<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            seed: 42,
            beta_range: (1.01, 10.0),
            s_range: (0.001, 0.999),
            resolution: 2000,
            lambdas: vec![1.01, 1.05, 1.1, 1.2, 1.3, 2.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub points: usize,
    pub rel_width: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            omega_lo: -0.5,
            omega_hi: 100.0,
            points: 12,
            rel_width: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: Problem,
    pub grid: GridConfig,
    pub solver: SolverOpts,
    pub evolve: EvolveOpts,
    pub verify: VerifyConfig,
    pub sweep: SweepConfig,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text =
            fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| format!("invalid config {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn params(&self) -> Result<Params, String> {
        make_params(self.problem.n, self.problem.p, self.problem.omega).map_err(|e| e.to_string())
    }

    /// Re-validates every section against the constraints of the library types.
    pub fn validate(&self) -> Result<(), String> {
        let params = self.params()?;
        make_grid(self.grid.r_max, self.grid.j, params.dim).map_err(|e| e.to_string())?;
        let s = &self.solver;
        if !(s.tol > 0.0) || s.max_iter == 0 || !(s.initial_width > 0.0) {
            return Err(format!(
                "solver needs tol > 0, max_iter > 0, initial_width > 0 (got {s:?})"
            ));
        }
        self.evolve.validate().map_err(|e| e.to_string())?;
        let v = &self.verify;
        if !(v.beta_range.0 > 1.0 && v.beta_range.1 >= v.beta_range.0) {
            return Err(format!(
                "verify.beta_range must lie in (1, inf), got {:?}",
                v.beta_range
            ));
        }
        if !(v.s_range.0 > 0.0 && v.s_range.1 >= v.s_range.0 && v.s_range.1 < 1.0) {
            return Err(format!(
                "verify.s_range must lie in (0, 1), got {:?}",
                v.s_range
            ));
        }
        if v.resolution == 0 || v.n_samples == 0 {
            return Err("verify.resolution and verify.n_samples must be positive".into());
        }
        if v.lambdas.iter().any(|l| !(*l >= 1.0)) {
            return Err(format!(
                "verify.lambdas must all be >= 1, got {:?}",
                v.lambdas
            ));
        }
        let w = &self.sweep;
        let n = params.dim as f64;
        if !(w.omega_lo > -n && w.omega_hi > w.omega_lo && w.omega_hi.is_finite()) {
            return Err(format!(
                "sweep range must satisfy -N < omega_lo < omega_hi, got [{}, {}]",
                w.omega_lo, w.omega_hi
            ));
        }
        if w.points < 2 || !(w.rel_width > 0.0) {
            return Err("sweep needs at least 2 points and rel_width > 0".into());
        }
        Ok(())
    }
}
