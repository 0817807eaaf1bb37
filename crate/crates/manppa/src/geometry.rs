//! Unit-sphere primitives: retraction, tangent projection, operator norms
//! and the stationarity measure `dist(0, dF(x))`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::penalty::Penalty;
use crate::solver::ProblemInstance;

/// Power iteration defaults; deterministic all-ones start for reproducibility.
pub const POWER_ITERATION_MAX: usize = 10_000;
pub const POWER_ITERATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("cannot normalize a (near-)zero vector, norm = {0:e}")]
    ZeroVector(f64),
    #[error("tangent vector not orthogonal to base point: <x,d> = {0:e}")]
    NotTangent(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A point on the unit sphere; renormalized on construction so that
/// `||x|| = 1` holds to machine precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoint {
    v: DVector<f64>,
}

impl SpherePoint {
    pub fn new(v: DVector<f64>) -> Result<Self, GeometryError> {
        let n = v.norm();
        if !n.is_finite() || n < 1e-150 {
            return Err(GeometryError::ZeroVector(n));
        }
        Ok(SpherePoint { v: v / n })
    }

    /// Standard basis vector `e_i` in dimension `n`.
    pub fn basis(n: usize, i: usize) -> Self {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        SpherePoint { v }
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn into_inner(self) -> DVector<f64> {
        self.v
    }
}

/// A tangent vector `d` at a base point, with `<x, d> = 0`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    pub base: SpherePoint,
    pub d: DVector<f64>,
}

impl TangentVector {
    /// Requires `<x, d>` to vanish within `1e-12 * ||d||`.
    pub fn new(base: SpherePoint, d: DVector<f64>) -> Result<Self, GeometryError> {
        if base.dim() != d.len() {
            return Err(GeometryError::DimensionMismatch {
                expected: base.dim(),
                got: d.len(),
            });
        }
        let ip = base.coords().dot(&d);
        if ip.abs() > 1e-12 * d.norm().max(1e-300) {
            return Err(GeometryError::NotTangent(ip));
        }
        Ok(TangentVector { base, d })
    }

    /// Projects `v` onto the tangent space at `base`.
    pub fn project(base: SpherePoint, v: &DVector<f64>) -> Self {
        let d = tangent_project(&base, v);
        TangentVector { base, d }
    }
}

/// `(I - x x^T) v`, the orthogonal projection onto the tangent space at `x`.
pub fn tangent_project(x: &SpherePoint, v: &DVector<f64>) -> DVector<f64> {
    let ip = x.coords().dot(v);
    v - x.coords() * ip
}

/// Retraction `(x + d) / ||x + d||`; expects `<x, d> = 0`, under which
/// `||x + d|| = sqrt(1 + ||d||^2) >= 1` so the quotient is well defined.
pub fn retract(x: &SpherePoint, d: &DVector<f64>) -> SpherePoint {
    SpherePoint::new(x.coords() + d).expect("||x + d|| >= 1 for tangent d")
}

/// Spectral norm `||Y||_2` by power iteration on `Y Y^T` with a
/// deterministic all-ones start; `tol` is relative on the dominant
/// eigenvalue. Returns 0 for the zero matrix.
pub fn operator_norm(y: &DMatrix<f64>, tol: f64) -> f64 {
    let n = y.nrows();
    let g = y * y.transpose();
    largest_eigenvalue_psd(&g, n, tol).sqrt()
}

/// Smallest singular value of `Y`, from the extreme eigenvalues of `Y Y^T`
/// (requires `nrows <= ncols` for this to be sigma_min of the full matrix).
pub fn smallest_singular_value(y: &DMatrix<f64>, tol: f64) -> f64 {
    let n = y.nrows();
    let g = y * y.transpose();
    let lam_max = largest_eigenvalue_psd(&g, n, tol);
    if lam_max == 0.0 {
        return 0.0;
    }
    // lambda_min(G) = lam_max - lambda_max(lam_max * I - G)
    let mut h = -g;
    for i in 0..n {
        h[(i, i)] += lam_max;
    }
    let shifted = largest_eigenvalue_psd(&h, n, tol);
    (lam_max - shifted).max(0.0).sqrt()
}

fn largest_eigenvalue_psd(g: &DMatrix<f64>, n: usize, tol: f64) -> f64 {
    let mut q = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lam_prev = 0.0;
    for _ in 0..POWER_ITERATION_MAX {
        let z = g * &q;
        let lam = q.dot(&z);
        let nz = z.norm();
        if nz == 0.0 {
            return 0.0;
        }
        q = z / nz;
        if (lam - lam_prev).abs() <= tol * lam.abs().max(1.0) {
            return lam.max(0.0);
        }
        lam_prev = lam;
    }
    lam_prev.max(0.0)
}

/// Lipschitz modulus `L = ell * sqrt(p) * ||Y||_2` of the objective
/// `x -> sum_i phi(|[Y^T x]_i|)`.
pub fn lipschitz_modulus(penalty: &Penalty, y: &DMatrix<f64>) -> f64 {
    let p = y.ncols() as f64;
    penalty.ell() * p.sqrt() * operator_norm(y, POWER_ITERATION_TOL)
}

/// Threshold below which an entry of `Y^T x` counts as zero when picking
/// the sign pattern: `1e-10 * max(1, ||Y||_2)`.
pub fn default_tau_zero(y: &DMatrix<f64>) -> f64 {
    1e-10 * operator_norm(y, POWER_ITERATION_TOL).max(1.0)
}

/// Outcome of a stationarity evaluation.
#[derive(Debug, Clone)]
pub struct StationarityReport {
    /// `dist(0, dF(x)) = min_xi ||(I - x x^T) Y (u o xi)||` over admissible
    /// l1 subgradients `xi`.
    pub measure: f64,
    /// Entries of `|Y^T x|` within a factor 10 of `tau_zero`; nonzero counts
    /// mean the zero-set classification is numerically ambiguous.
    pub near_threshold: usize,
    /// Iterations spent in the projected-gradient inner solve.
    pub pg_iterations: usize,
    /// Final scaled projected-gradient norm of the inner solve.
    pub pg_residual: f64,
}

/// Distance from 0 to the subdifferential of the objective-plus-sphere
/// function at `x`:
///
/// ```text
/// dist(0, dF(x)) = min { ||(I - x x^T) Y (u o xi)|| : xi_i in d|.|([Y^T x]_i) }
/// ```
///
/// with `u = phi'_+(|Y^T x|)`. Coordinates with `|[Y^T x]_i| > tau_zero`
/// force `xi_i = sign([Y^T x]_i)`; the remaining ones range over `[-1, 1]`
/// and the minimum is found by projected gradient with fixed step
/// `1 / lambda_max(M^T M)`, stopped at scaled projected-gradient norm
/// `<= tol`.
pub fn stationarity_report(
    inst: &ProblemInstance,
    x: &SpherePoint,
    tau_zero: f64,
    tol: f64,
) -> StationarityReport {
    let y = &inst.y;
    let p = y.ncols();
    let yx = y.transpose() * x.coords();
    let u = inst
        .penalty
        .weights(&yx.abs())
        .expect("|Y^T x| is nonnegative");

    let mut near_threshold = 0;
    for i in 0..p {
        let a = yx[i].abs();
        if a > tau_zero / 10.0 && a <= 10.0 * tau_zero {
            near_threshold += 1;
        }
    }

    // columns of (I - x x^T) Y scaled by u
    let mut fixed = DVector::zeros(x.dim());
    let mut free_cols: Vec<DVector<f64>> = Vec::new();
    for i in 0..p {
        let col = tangent_project(x, &DVector::from_column_slice(y.column(i).as_slice())) * u[i];
        if yx[i].abs() > tau_zero {
            fixed += col * yx[i].signum();
        } else {
            free_cols.push(col);
        }
    }

    if free_cols.is_empty() {
        return StationarityReport {
            measure: fixed.norm(),
            near_threshold,
            pg_iterations: 0,
            pg_residual: 0.0,
        };
    }

    let m = free_cols.len();
    let mat = DMatrix::from_columns(&free_cols);
    let gram_small = mat.transpose() * &mat;
    let lam_max = largest_eigenvalue_psd(&gram_small, m, POWER_ITERATION_TOL);
    if lam_max <= 1e-40 {
        return StationarityReport {
            measure: fixed.norm(),
            near_threshold,
            pg_iterations: 0,
            pg_residual: 0.0,
        };
    }

    let step = 1.0 / lam_max;
    let mut z = DVector::zeros(m);
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    const PG_MAX: usize = 200_000;
    while iterations < PG_MAX {
        let r = &fixed + &mat * &z;
        let grad = mat.transpose() * r;
        let z_new = (&z - &grad * step).map(|v| v.clamp(-1.0, 1.0));
        residual = (&z - &z_new).norm() / step;
        z = z_new;
        iterations += 1;
        if residual <= tol {
            break;
        }
    }

    StationarityReport {
        measure: (&fixed + &mat * &z).norm(),
        near_threshold,
        pg_iterations: iterations,
        pg_residual: residual,
    }
}

/// The stationarity measure alone; see [`stationarity_report`].
pub fn stationarity_measure(
    inst: &ProblemInstance,
    x: &SpherePoint,
    tau_zero: f64,
    tol: f64,
) -> f64 {
    stationarity_report(inst, x, tau_zero, tol).measure
}
