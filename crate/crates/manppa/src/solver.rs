//! Outer loop: reweight, solve the tangent subproblem, retract.
//!
//! Each iteration forms the weights `u^k = phi'_+(|Y^T x^k|)`, solves the
//! weighted-l1 proximal subproblem in the tangent space at `x^k` with a
//! fixed stepsize `t` taken strictly inside `(0, 2/L)` (`L` the Lipschitz
//! modulus of the objective), and retracts `x^{k+1} = (x^k + d^k)/||x^k + d^k||`.
//! With exact inner solves the objective decreases by at least
//! `(1/t - L/2) ||d^k||^2` per step; the inner solves here are inexact with
//! a tolerance tied to the previous step length, and the realized slack in
//! that inequality is recorded per iteration instead of being assumed zero.
//!
//! Termination: `||d^k|| <= tol_d` stops the loop; if the step is zero to
//! machine precision (`||d^k|| <= finite_tol`) the run is classified as
//! finitely convergent.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::potential_tilde;
use crate::geometry::{
    default_tau_zero, lipschitz_modulus, retract, stationarity_report, SpherePoint,
};
use crate::penalty::{Extended, Penalty};
use crate::subproblem::{solve_subproblem, SubproblemError, SubproblemSpec};

/// Inner tolerance schedule: `min(1e-8, 0.1 ||d^{k-1}||^2)`, floored at 1e-12.
pub const INNER_TOL_INITIAL: f64 = 1e-8;
pub const INNER_TOL_FLOOR: f64 = 1e-12;

/// Default stopping tolerance of the stationarity-measure inner solve; the
/// solver tightens it to resolve final stationarity values of order
/// `tol_d / t`, which the box-constrained least-squares solve would
/// otherwise drown in its own tolerance.
const STATIONARITY_TOL: f64 = 1e-9;

fn stationarity_tol(cfg: &SolverConfig, t: f64) -> f64 {
    STATIONARITY_TOL.min(0.01 * cfg.tol_d / t)
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("subproblem failed at outer iteration {k}: {source}")]
    Subproblem {
        k: usize,
        #[source]
        source: SubproblemError,
        /// Iterations completed before the failure.
        trace: Vec<TraceRecord>,
    },
}

/// The problem datum: an `n x p` matrix and a penalty.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub y: DMatrix<f64>,
    pub penalty: Penalty,
}

impl ProblemInstance {
    pub fn new(y: DMatrix<f64>, penalty: Penalty) -> Result<Self, SolveError> {
        if y.nrows() == 0 || y.ncols() == 0 {
            return Err(SolveError::Config(format!(
                "matrix must be nonempty, got {}x{}",
                y.nrows(),
                y.ncols()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::Config("matrix has non-finite entries".into()));
        }
        penalty
            .validate()
            .map_err(|e| SolveError::Config(e.to_string()))?;
        Ok(ProblemInstance { y, penalty })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }
}

/// Outer-loop parameters.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Stepsize as a fraction of `2/L`; must lie strictly in `(0, 1)`.
    pub t_fraction: f64,
    pub max_iter: usize,
    /// Stop when `||d^k|| <= tol_d`.
    pub tol_d: f64,
    /// Classify as finite convergence when `||d^k|| <= finite_tol`.
    pub finite_tol: f64,
    /// Seeds the default starting point when `x0` is absent.
    pub seed: u64,
    pub x0: Option<SpherePoint>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            t_fraction: 0.5,
            max_iter: 2000,
            tol_d: 1e-12,
            finite_tol: 1e-13,
            seed: 0,
            x0: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, inst: &ProblemInstance) -> Result<(), SolveError> {
        if !(self.t_fraction > 0.0 && self.t_fraction < 1.0) {
            return Err(SolveError::Config(format!(
                "t_fraction must lie strictly in (0, 1), got {}",
                self.t_fraction
            )));
        }
        if self.max_iter == 0 {
            return Err(SolveError::Config("max_iter must be positive".into()));
        }
        if !(self.tol_d > 0.0) || !(self.finite_tol > 0.0) {
            return Err(SolveError::Config(
                "tol_d and finite_tol must be positive".into(),
            ));
        }
        if let Some(x0) = &self.x0 {
            if x0.dim() != inst.n() {
                return Err(SolveError::Config(format!(
                    "x0 has dimension {}, instance needs {}",
                    x0.dim(),
                    inst.n()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    FiniteConvergence,
    MaxIter,
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolverStatus::Converged => write!(f, "converged"),
            SolverStatus::FiniteConvergence => write!(f, "finite_convergence"),
            SolverStatus::MaxIter => write!(f, "max_iter"),
        }
    }
}

/// Per-iteration log. Record `k` describes iteration `k`: the step `d^k`
/// taken from `x^k`, and the post-step iterate `x^{k+1}` with its objective
/// value, auxiliary potential `F~(x^{k+1}, u^k)`, multiplier, stationarity
/// measure and realized descent slack.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub k: usize,
    /// The iterate after this step, `x^{k+1}`.
    pub x: SpherePoint,
    pub d_norm: f64,
    pub f_value: f64,
    pub f_tilde_value: Extended,
    pub lambda: f64,
    pub stationarity: f64,
    /// `F(x^{k+1}) - F(x^k) + (1/t - L/2)||d^k||^2`; nonpositive when the
    /// descent inequality holds exactly.
    pub descent_slack: f64,
    /// Inner KKT tolerance used for this step's subproblem.
    pub inner_tol: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x_initial: SpherePoint,
    pub x_final: SpherePoint,
    pub status: SolverStatus,
    pub trace: Vec<TraceRecord>,
    pub f_initial: f64,
    /// Actual stepsize `t = t_fraction * 2 / L`.
    pub t: f64,
    /// Lipschitz modulus `L = ell * sqrt(p) * ||Y||_2`.
    pub lipschitz: f64,
    /// Set when some `|[Y^T x^k]_i|` fell within a factor 10 of the
    /// zero-classification threshold, making the stationarity measure's
    /// sign-pattern split numerically ambiguous.
    pub zero_set_warning: bool,
}

impl SolveResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn f_final(&self) -> f64 {
        self.trace.last().map(|r| r.f_value).unwrap_or(self.f_initial)
    }
}

/// Objective `F(x) = sum_i phi(|[Y^T x]_i|)` on the sphere.
pub fn objective_f(inst: &ProblemInstance, x: &SpherePoint) -> f64 {
    assert_eq!(x.dim(), inst.n(), "iterate dimension mismatch");
    let yx = inst.y.transpose() * x.coords();
    let mut f = 0.0;
    for i in 0..inst.p() {
        f += inst.penalty.phi(yx[i].abs()).expect("|.| is nonnegative");
    }
    f
}

/// Deterministic uniform-on-sphere start: normalized standard Gaussian
/// draw from a ChaCha8 stream seeded with `seed`.
pub fn default_x0(inst: &ProblemInstance, seed: u64) -> SpherePoint {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v = DVector::from_fn(inst.n(), |_, _| StandardNormal.sample(&mut rng));
        if let Ok(x) = SpherePoint::new(v) {
            return x;
        }
    }
}

pub(crate) fn inner_tolerance(prev_d_norm: Option<f64>) -> f64 {
    match prev_d_norm {
        None => INNER_TOL_INITIAL,
        Some(d) => (0.1 * d * d).clamp(INNER_TOL_FLOOR, INNER_TOL_INITIAL),
    }
}

/// Runs the reweighted manifold proximal point iteration.
pub fn manppa_rw(inst: &ProblemInstance, cfg: &SolverConfig) -> Result<SolveResult, SolveError> {
    cfg.validate(inst)?;
    let l_f = lipschitz_modulus(&inst.penalty, &inst.y);
    if !(l_f > 0.0) {
        return Err(SolveError::Config(
            "Lipschitz modulus is zero (zero data matrix)".into(),
        ));
    }
    let t = cfg.t_fraction * 2.0 / l_f;
    let decrease_coeff = 1.0 / t - l_f / 2.0;
    let tau_zero = default_tau_zero(&inst.y);

    let x_initial = match &cfg.x0 {
        Some(x) => x.clone(),
        None => default_x0(inst, cfg.seed),
    };
    let f_initial = objective_f(inst, &x_initial);

    let mut x = x_initial.clone();
    let mut f_prev = f_initial;
    let mut prev_d_norm: Option<f64> = None;
    let mut trace: Vec<TraceRecord> = Vec::new();
    let mut zero_set_warning = false;
    let mut status = SolverStatus::MaxIter;

    for k in 0..cfg.max_iter {
        let u = inst
            .penalty
            .weights(&(inst.y.transpose() * x.coords()).abs())
            .expect("|Y^T x| is nonnegative");
        let inner_tol = inner_tolerance(prev_d_norm);
        let spec = SubproblemSpec::new(x.clone(), u.clone(), t, inst.y.clone())
            .map_err(|e| SolveError::Config(e.to_string()))?;
        let cert = solve_subproblem(&spec, inner_tol).map_err(|source| SolveError::Subproblem {
            k,
            source,
            trace: trace.clone(),
        })?;

        let d_norm = cert.d.norm();
        let x_next = retract(&x, &cert.d);
        let f_next = objective_f(inst, &x_next);
        let f_tilde = potential_tilde(inst, &x_next, &u);
        let report = stationarity_report(inst, &x_next, tau_zero, stationarity_tol(cfg, t));
        zero_set_warning |= report.near_threshold > 0;

        trace.push(TraceRecord {
            k,
            x: x_next.clone(),
            d_norm,
            f_value: f_next,
            f_tilde_value: f_tilde,
            lambda: cert.lambda,
            stationarity: report.measure,
            descent_slack: f_next - f_prev + decrease_coeff * d_norm * d_norm,
            inner_tol,
        });

        x = x_next;
        f_prev = f_next;
        prev_d_norm = Some(d_norm);

        if d_norm <= cfg.finite_tol {
            status = SolverStatus::FiniteConvergence;
            break;
        }
        if d_norm <= cfg.tol_d {
            status = SolverStatus::Converged;
            break;
        }
    }

    Ok(SolveResult {
        x_initial,
        x_final: x,
        status,
        trace,
        f_initial,
        t,
        lipschitz: l_f,
        zero_set_warning,
    })
}
