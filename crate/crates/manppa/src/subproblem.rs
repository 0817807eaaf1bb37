//! The per-iteration tangent-space subproblem
//!
//! ```text
//! min_d  sum_i u_i |[Y^T (x + d)]_i| + (1/2t) ||d||^2   s.t.  <x, d> = 0
//! ```
//!
//! solved by operator splitting on `z = Y^T (x + d)`, and certified through
//! the first-order condition
//!
//! ```text
//! 0 = (1/t) d + Y (u o xi) + lambda x,   xi in d||.||_1(Y^T (x + d)),
//! ```
//!
//! with `lambda = -<x, Y (u o xi)>`. Convergence is declared on this KKT
//! residual, never on splitting residuals, so certificates do not depend on
//! the solver that produced them. Once the splitting has identified a sign
//! pattern, the solution is polished by solving the pattern's
//! equality-constrained quadratic program exactly; this drives `d` to
//! machine zero at stationary points instead of stalling at the splitting
//! tolerance.
//!
//! A sign-pattern enumeration oracle ([`brute_force_subproblem`]) covers
//! small instances for testing.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{default_tau_zero, SpherePoint};

const ADMM_MAX_ITER: usize = 200_000;
const RHO_BALANCE_PERIOD: usize = 10;
const RHO_BALANCE_RATIO: f64 = 10.0;
const RHO_BALANCE_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SubproblemError {
    #[error(
        "splitting solver stalled: KKT residual {best_residual:e} > tol {tol:e} after {iterations} iterations"
    )]
    DidNotConverge {
        tol: f64,
        iterations: usize,
        best_residual: f64,
    },
    #[error("sign-pattern enumeration is limited to p <= {max}, got p = {got}")]
    TooManyColumns { max: usize, got: usize },
    #[error("invalid subproblem: {0}")]
    Invalid(String),
}

/// One inner problem: base point, weights, stepsize and data matrix.
#[derive(Debug, Clone)]
pub struct SubproblemSpec {
    pub x: SpherePoint,
    pub u: DVector<f64>,
    pub t: f64,
    pub y: DMatrix<f64>,
}

impl SubproblemSpec {
    pub fn new(
        x: SpherePoint,
        u: DVector<f64>,
        t: f64,
        y: DMatrix<f64>,
    ) -> Result<Self, SubproblemError> {
        if x.dim() != y.nrows() {
            return Err(SubproblemError::Invalid(format!(
                "x has dimension {} but Y has {} rows",
                x.dim(),
                y.nrows()
            )));
        }
        if u.len() != y.ncols() {
            return Err(SubproblemError::Invalid(format!(
                "u has length {} but Y has {} columns",
                u.len(),
                y.ncols()
            )));
        }
        if !(t > 0.0) || !t.is_finite() {
            return Err(SubproblemError::Invalid(format!("stepsize t = {t}")));
        }
        if u.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return Err(SubproblemError::Invalid(
                "weights must be finite and nonnegative".into(),
            ));
        }
        Ok(SubproblemSpec { x, u, t, y })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }
}

/// Proof object for one inner solve: the step `d`, the multiplier of the
/// sphere constraint and an l1 subgradient, with the achieved residual of
/// the first-order condition.
#[derive(Debug, Clone)]
pub struct SubproblemCertificate {
    pub d: DVector<f64>,
    pub lambda: f64,
    pub xi: DVector<f64>,
    pub kkt_residual: f64,
}

/// Weighted-l1 objective value `sum_i u_i |[Y^T(x+d)]_i| + ||d||^2 / (2t)`.
pub fn subproblem_objective(spec: &SubproblemSpec, d: &DVector<f64>) -> f64 {
    let yxd = spec.y.transpose() * (spec.x.coords() + d);
    let mut obj = d.norm_squared() / (2.0 * spec.t);
    for i in 0..spec.p() {
        obj += spec.u[i] * yxd[i].abs();
    }
    obj
}

/// Signed slack of the inner sufficient-decrease inequality
/// `sum u_i |[Y^T(x+d)]_i| <= sum u_i |[Y^T x]_i| - ||d||^2 / t`;
/// nonpositive when the inequality holds.
pub fn sufficient_decrease_slack(spec: &SubproblemSpec, cert: &SubproblemCertificate) -> f64 {
    let yx = spec.y.transpose() * spec.x.coords();
    let yxd = spec.y.transpose() * (spec.x.coords() + &cert.d);
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for i in 0..spec.p() {
        lhs += spec.u[i] * yxd[i].abs();
        rhs += spec.u[i] * yx[i].abs();
    }
    lhs - (rhs - cert.d.norm_squared() / spec.t)
}

fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

/// Subgradient extraction: forced signs on clearly nonzero entries of
/// `Y^T(x+d)`, dual-consistent values elsewhere.
fn extract_xi(
    yxd: &DVector<f64>,
    u: &DVector<f64>,
    scaled_dual: &DVector<f64>,
    rho: f64,
    tau_zero: f64,
) -> DVector<f64> {
    DVector::from_fn(yxd.len(), |i, _| {
        if yxd[i].abs() > tau_zero {
            yxd[i].signum()
        } else if u[i] > 0.0 {
            (rho * scaled_dual[i] / u[i]).clamp(-1.0, 1.0)
        } else {
            0.0
        }
    })
}

struct Candidate {
    d: DVector<f64>,
    lambda: f64,
    xi: DVector<f64>,
    residual: f64,
}

/// Builds the certificate quantities for a candidate step.
fn assess(spec: &SubproblemSpec, d: DVector<f64>, xi: DVector<f64>) -> Candidate {
    let yuxi = &spec.y * spec.u.component_mul(&xi);
    let lambda = -spec.x.coords().dot(&yuxi);
    let residual = (&d / spec.t + &yuxi + spec.x.coords() * lambda).norm();
    Candidate {
        d,
        lambda,
        xi,
        residual,
    }
}

/// Factorization wrapper for `K = I/t + rho Y Y^T` bordered by the sphere row.
struct DStep {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    k_inv_x: DVector<f64>,
    x_k_inv_x: f64,
}

impl DStep {
    fn new(gram: &DMatrix<f64>, x: &DVector<f64>, t: f64, rho: f64) -> Option<Self> {
        let n = gram.nrows();
        let mut k = gram * rho;
        for i in 0..n {
            k[(i, i)] += 1.0 / t;
        }
        let chol = nalgebra::Cholesky::new(k)?;
        let k_inv_x = chol.solve(x);
        let x_k_inv_x = x.dot(&k_inv_x);
        Some(DStep {
            chol,
            k_inv_x,
            x_k_inv_x,
        })
    }

    /// Minimizes `||d||^2/(2t) + rho/2 ||Y^T d + resid||^2` over `<x,d> = 0`,
    /// where the caller supplies `r = -rho * Y * resid`.
    fn solve(&self, r: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        let k_inv_r = self.chol.solve(r);
        let mu = x.dot(&k_inv_r) / self.x_k_inv_x;
        k_inv_r - &self.k_inv_x * mu
    }
}

/// Solution of one sign pattern's equality-constrained quadratic program.
struct PatternSolution {
    d: DVector<f64>,
    /// Multipliers of the pinned coordinates, in pattern order.
    pinned_multipliers: Vec<f64>,
}

/// Solves `min ||d||^2/(2t) + sum_{sigma_i != 0} u_i sigma_i y_i^T (x+d)`
/// subject to `<x,d> = 0` and `y_i^T (x+d) = 0` for pinned entries
/// (`sigma_i = 0`). Returns `None` when the KKT system is singular or the
/// constraints are inconsistent.
fn solve_pattern_qp(
    x: &DVector<f64>,
    y: &DMatrix<f64>,
    u: &DVector<f64>,
    t: f64,
    sigma: &[i8],
) -> Option<PatternSolution> {
    let n = y.nrows();
    let p = y.ncols();
    debug_assert_eq!(sigma.len(), p);
    let pinned: Vec<usize> = (0..p).filter(|&i| sigma[i] == 0).collect();
    let m = pinned.len();
    let dim = n + 1 + m;

    let mut kkt = DMatrix::zeros(dim, dim);
    for i in 0..n {
        kkt[(i, i)] = 1.0 / t;
    }
    for i in 0..n {
        kkt[(i, n)] = x[i];
        kkt[(n, i)] = x[i];
    }
    for (j, &col) in pinned.iter().enumerate() {
        for i in 0..n {
            kkt[(i, n + 1 + j)] = y[(i, col)];
            kkt[(n + 1 + j, i)] = y[(i, col)];
        }
    }

    let mut rhs = DVector::zeros(dim);
    for i in 0..p {
        if sigma[i] != 0 {
            let c = u[i] * f64::from(sigma[i]);
            for r in 0..n {
                rhs[r] -= c * y[(r, i)];
            }
        }
    }
    for (j, &col) in pinned.iter().enumerate() {
        let mut dot = 0.0;
        for r in 0..n {
            dot += y[(r, col)] * x[r];
        }
        rhs[n + 1 + j] = -dot;
    }

    let lu = kkt.clone().full_piv_lu();
    let sol = lu.solve(&rhs)?;
    // reject inconsistent / numerically singular systems
    let res = (&kkt * &sol - &rhs).norm();
    if !res.is_finite() || res > 1e-8 * (1.0 + rhs.norm()) {
        return None;
    }
    let d = DVector::from_fn(n, |i, _| sol[i]);
    let pinned_multipliers = (0..m).map(|j| sol[n + 1 + j]).collect();
    Some(PatternSolution {
        d,
        pinned_multipliers,
    })
}

/// Exact polish: fixes the sign pattern suggested by the splitting iterate,
/// solves the pattern QP and reads the subgradient off the multipliers.
fn polish(
    spec: &SubproblemSpec,
    z: &DVector<f64>,
    tau_zero: f64,
) -> Option<Candidate> {
    let p = spec.p();
    let mut sigma = vec![0_i8; p];
    for i in 0..p {
        if spec.u[i] == 0.0 {
            sigma[i] = 1; // no objective contribution; never pin
        } else if z[i] > 0.0 {
            sigma[i] = 1;
        } else if z[i] < 0.0 {
            sigma[i] = -1;
        }
    }
    let sol = solve_pattern_qp(spec.x.coords(), &spec.y, &spec.u, spec.t, &sigma)?;
    let yxd = spec.y.transpose() * (spec.x.coords() + &sol.d);

    let mut xi = DVector::zeros(p);
    let mut pin = 0;
    for i in 0..p {
        if sigma[i] == 0 {
            let mult = sol.pinned_multipliers[pin];
            pin += 1;
            let v = mult / spec.u[i];
            if v.abs() > 1.0 + 1e-9 {
                return None; // pattern not dual feasible
            }
            xi[i] = v.clamp(-1.0, 1.0);
        } else if yxd[i].abs() > tau_zero {
            xi[i] = yxd[i].signum();
        } else {
            xi[i] = f64::from(sigma[i]);
        }
    }
    Some(assess(spec, sol.d, xi))
}

/// Solves the subproblem to KKT residual `tol`.
///
/// Splitting on `z = Y^T (x + d)`: the `d`-update is an equality-constrained
/// ridge solve through a cached Cholesky factorization of
/// `I/t + rho Y Y^T`, the `z`-update a weighted soft-threshold with
/// thresholds `u_i / rho`, followed by the standard dual ascent. `rho`
/// starts at `1/t` and is rebalanced by factor 2 every 10 iterations when
/// the primal and dual residuals drift apart by more than 10x.
pub fn solve_subproblem(
    spec: &SubproblemSpec,
    tol: f64,
) -> Result<SubproblemCertificate, SubproblemError> {
    if !(tol > 0.0) {
        return Err(SubproblemError::Invalid(format!("tolerance {tol}")));
    }
    let n = spec.n();
    let x = spec.x.coords();
    let y = &spec.y;
    let y0 = y.transpose() * x;
    let tau_zero = default_tau_zero(y);
    let gram = y * y.transpose();

    let mut rho = 1.0 / spec.t;
    let mut dstep = DStep::new(&gram, x, spec.t, rho)
        .ok_or_else(|| SubproblemError::Invalid("ridge system not positive definite".into()))?;

    let mut d = DVector::zeros(n);
    let mut z = y0.clone();
    let mut w = DVector::zeros(spec.p());

    // candidate at d = 0 (covers the all-zero-weights case immediately)
    let xi0 = extract_xi(&y0, &spec.u, &w, rho, tau_zero);
    let mut best = assess(spec, d.clone(), xi0);
    if best.residual <= tol {
        return Ok(SubproblemCertificate {
            d: best.d,
            lambda: best.lambda,
            xi: best.xi,
            kkt_residual: best.residual,
        });
    }

    let mut polish_countdown = 0_usize;
    for iter in 0..ADMM_MAX_ITER {
        // d-update
        let resid = &y0 - &z + &w;
        let r = -(y * &resid) * rho;
        d = dstep.solve(&r, x);
        let yxd = &y0 + y.transpose() * &d;

        // z-update (weighted soft-threshold) and dual update
        let v = &yxd + &w;
        let z_prev = z;
        z = DVector::from_fn(spec.p(), |i, _| soft_threshold(v[i], spec.u[i] / rho));
        w += &yxd - &z;

        // certificate from the current iterate
        let xi = extract_xi(&yxd, &spec.u, &w, rho, tau_zero);
        let cand = assess(spec, d.clone(), xi);
        if cand.residual < best.residual {
            best = cand;
        }

        // pattern polish once the iterate looks settled
        if best.residual <= tol.max(1e-6) || polish_countdown == 0 {
            if let Some(pol) = polish(spec, &z, tau_zero) {
                if pol.residual < best.residual {
                    best = pol;
                }
            }
            polish_countdown = 50;
        } else {
            polish_countdown -= 1;
        }

        if best.residual <= tol {
            return Ok(SubproblemCertificate {
                d: best.d,
                lambda: best.lambda,
                xi: best.xi,
                kkt_residual: best.residual,
            });
        }

        if (iter + 1) % RHO_BALANCE_PERIOD == 0 {
            let primal = (&yxd - &z).norm();
            let dual = rho * (y * (&z - &z_prev)).norm();
            let mut changed = false;
            if primal > RHO_BALANCE_RATIO * dual {
                rho *= RHO_BALANCE_FACTOR;
                w /= RHO_BALANCE_FACTOR;
                changed = true;
            } else if dual > RHO_BALANCE_RATIO * primal {
                rho /= RHO_BALANCE_FACTOR;
                w *= RHO_BALANCE_FACTOR;
                changed = true;
            }
            if changed {
                dstep = DStep::new(&gram, x, spec.t, rho).ok_or_else(|| {
                    SubproblemError::Invalid("ridge system not positive definite".into())
                })?;
            }
        }
    }

    Err(SubproblemError::DidNotConverge {
        tol,
        iterations: ADMM_MAX_ITER,
        best_residual: best.residual,
    })
}

/// Enumeration oracle: tries every sign pattern of `Y^T (x + d)` in
/// `{-1, 0, +1}^p` (lexicographic order, `-1 < 0 < +1`), solves the
/// corresponding equality-constrained quadratic program, keeps candidates
/// consistent with their pattern and returns the consistent candidate with
/// the lowest objective. Ties go to the earliest pattern. Only for `p <= 10`.
pub fn brute_force_subproblem(
    spec: &SubproblemSpec,
) -> Result<(DVector<f64>, f64), SubproblemError> {
    const MAX_P: usize = 10;
    let p = spec.p();
    if p > MAX_P {
        return Err(SubproblemError::TooManyColumns { max: MAX_P, got: p });
    }
    let x = spec.x.coords();
    let mut sigma = vec![-1_i8; p];
    let mut best: Option<(DVector<f64>, f64)> = None;
    let total = 3_usize.pow(p as u32);
    for idx in 0..total {
        // base-3 digits, most significant first, so patterns ascend
        // lexicographically with idx (-1 < 0 < +1)
        let mut rem = idx;
        for i in (0..p).rev() {
            sigma[i] = (rem % 3) as i8 - 1;
            rem /= 3;
        }
        let candidate = solve_pattern_qp(x, &spec.y, &spec.u, spec.t, &sigma);
        if let Some(sol) = candidate {
            let yxd = spec.y.transpose() * (x + &sol.d);
            let consistent = (0..p).all(|i| match sigma[i] {
                0 => yxd[i].abs() <= 1e-7,
                s => f64::from(s) * yxd[i] >= -1e-9,
            });
            if consistent {
                let obj = subproblem_objective(spec, &sol.d);
                match &best {
                    Some((_, prev)) if obj >= *prev => {}
                    _ => best = Some((sol.d, obj)),
                }
            }
        }
    }
    best.ok_or_else(|| SubproblemError::Invalid("no consistent sign pattern found".into()))
}

/// Result of re-checking a certificate against its spec.
#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub valid: bool,
    pub violations: Vec<String>,
    pub recomputed_residual: f64,
}

/// Re-derives every certificate condition: tangency of `d`, box membership
/// and sign consistency of `xi`, the multiplier identity and the KKT
/// residual against `tol`.
pub fn verify_certificate(
    spec: &SubproblemSpec,
    cert: &SubproblemCertificate,
    tau_zero: f64,
    tol: f64,
) -> CertificateReport {
    let mut violations = Vec::new();
    let x = spec.x.coords();

    let ip = x.dot(&cert.d);
    if ip.abs() > 1e-9 * cert.d.norm().max(1.0) {
        violations.push(format!("d not tangent: <x,d> = {ip:e}"));
    }

    for i in 0..spec.p() {
        if cert.xi[i].abs() > 1.0 + 1e-12 {
            violations.push(format!("xi out of box at {i}: {}", cert.xi[i]));
        }
    }

    let yxd = spec.y.transpose() * (x + &cert.d);
    for i in 0..spec.p() {
        if yxd[i].abs() > tau_zero && (cert.xi[i] - yxd[i].signum()).abs() > 1e-8 {
            violations.push(format!(
                "xi sign mismatch at {i}: xi = {}, [Y^T(x+d)] = {:e}",
                cert.xi[i], yxd[i]
            ));
        }
    }

    let yuxi = &spec.y * spec.u.component_mul(&cert.xi);
    let lambda_expected = -x.dot(&yuxi);
    if (cert.lambda - lambda_expected).abs() > 1e-9 * lambda_expected.abs().max(1.0) {
        violations.push(format!(
            "lambda mismatch: stored {} vs -<x, Y(u o xi)> = {}",
            cert.lambda, lambda_expected
        ));
    }

    let recomputed = (&cert.d / spec.t + &yuxi + x * cert.lambda).norm();
    if (recomputed - cert.kkt_residual).abs() > 1e-9 * (1.0 + recomputed) {
        violations.push(format!(
            "stored residual {:e} differs from recomputed {:e}",
            cert.kkt_residual, recomputed
        ));
    }
    if recomputed > tol {
        violations.push(format!("KKT residual {recomputed:e} exceeds tol {tol:e}"));
    }

    CertificateReport {
        valid: violations.is_empty(),
        violations,
        recomputed_residual: recomputed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::Penalty;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn spec_from(x: Vec<f64>, u: Vec<f64>, t: f64, y: DMatrix<f64>) -> SubproblemSpec {
        SubproblemSpec::new(
            SpherePoint::new(DVector::from_vec(x)).unwrap(),
            DVector::from_vec(u),
            t,
            y,
        )
        .unwrap()
    }

    #[test]
    fn identity_instance_already_stationary() {
        let spec = spec_from(
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            0.5,
            DMatrix::identity(2, 2),
        );
        let cert = solve_subproblem(&spec, 1e-10).unwrap();
        assert!(cert.d.norm() < 1e-9, "d = {:?}", cert.d);
        let (d_oracle, _) = brute_force_subproblem(&spec).unwrap();
        assert!(d_oracle.norm() < 1e-9);
    }

    #[test]
    fn single_column_hand_kkt() {
        // p = 1, y = (1,1): optimum at d = (0,-1) with objective 1/2
        let y = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let spec = spec_from(vec![1.0, 0.0], vec![1.0], 1.0, y);
        let cert = solve_subproblem(&spec, 1e-10).unwrap();
        assert!((cert.d[0] - 0.0).abs() < 1e-8);
        assert!((cert.d[1] + 1.0).abs() < 1e-8);
        assert!((cert.lambda + 1.0).abs() < 1e-8);
        let obj = subproblem_objective(&spec, &cert.d);
        assert!((obj - 0.5).abs() < 1e-8);

        let (d_oracle, obj_oracle) = brute_force_subproblem(&spec).unwrap();
        assert!((&cert.d - &d_oracle).norm() < 1e-8);
        assert!((obj - obj_oracle).abs() < 1e-10);
    }

    #[test]
    fn zero_weights_give_zero_step() {
        let y = DMatrix::from_column_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        let spec = spec_from(vec![0.6, 0.8], vec![0.0, 0.0], 0.3, y);
        let cert = solve_subproblem(&spec, 1e-12).unwrap();
        assert_eq!(cert.d.norm(), 0.0);
        let (d_oracle, _) = brute_force_subproblem(&spec).unwrap();
        assert!(d_oracle.norm() < 1e-10);
    }

    #[test]
    fn oracle_objective_no_worse_than_zero_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 3;
            let p = 4;
            let y = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
            let x = SpherePoint::new(DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
                .unwrap();
            let u = DVector::from_fn(p, |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v.abs().min(1.0)
            });
            let spec = SubproblemSpec::new(x, u.clone(), 0.2, y.clone()).unwrap();
            let (_, obj) = brute_force_subproblem(&spec).unwrap();
            let zero_obj: f64 = {
                let yx = y.transpose() * spec.x.coords();
                (0..p).map(|i| u[i] * yx[i].abs()).sum()
            };
            assert!(obj <= zero_obj + 1e-12);
        }
    }

    fn random_penalty(rng: &mut ChaCha8Rng) -> Penalty {
        match rng.next_u32() % 4 {
            0 => Penalty::l1(),
            1 => Penalty::scad(1.0, 3.7).unwrap(),
            2 => Penalty::mcp(1.0, 2.0).unwrap(),
            _ => Penalty::log(1.0, 0.1).unwrap(),
        }
    }

    #[test]
    fn solver_matches_oracle_on_random_specs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..40 {
            let n = 2 + (rng.next_u32() as usize) % 5; // 2..=6
            let p = 1 + (rng.next_u32() as usize) % 8; // 1..=8
            let y = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
            let x = SpherePoint::new(DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
                .unwrap();
            let penalty = random_penalty(&mut rng);
            let q = (y.transpose() * x.coords()).abs();
            let u = penalty.weights(&q).unwrap();
            let lf = crate::geometry::lipschitz_modulus(&penalty, &y);
            let frac = 0.1 + 0.8 * (rng.next_u32() as f64 / u32::MAX as f64);
            let t = frac * 2.0 / lf.max(1e-12);
            let spec = SubproblemSpec::new(x, u, t, y).unwrap();

            let cert = solve_subproblem(&spec, 1e-10).unwrap();
            let (d_oracle, obj_oracle) = brute_force_subproblem(&spec).unwrap();
            let obj = subproblem_objective(&spec, &cert.d);
            assert!(
                (&cert.d - &d_oracle).norm() <= 1e-6 * (1.0 + d_oracle.norm()),
                "trial {trial}: |d - d_oracle| = {:e}",
                (&cert.d - &d_oracle).norm()
            );
            assert!(
                (obj - obj_oracle).abs() <= 1e-8 * (1.0 + obj_oracle.abs()),
                "trial {trial}: obj {obj} vs {obj_oracle}"
            );
        }
    }

    #[test]
    fn strong_convexity_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 4;
        let p = 6;
        let y = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let x =
            SpherePoint::new(DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))).unwrap();
        let u = DVector::from_element(p, 0.7);
        let t = 0.25;
        let spec = SubproblemSpec::new(x.clone(), u, t, y).unwrap();
        let cert = solve_subproblem(&spec, 1e-11).unwrap();
        let obj_star = subproblem_objective(&spec, &cert.d);
        for _ in 0..100 {
            let raw = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let dp = crate::geometry::tangent_project(&x, &raw);
            let obj = subproblem_objective(&spec, &dp);
            let gap = (&dp - &cert.d).norm_squared() / (2.0 * t);
            assert!(obj >= obj_star + gap - 1e-9, "obj {obj} vs {}", obj_star + gap);
        }
    }

    #[test]
    fn lambda_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..20 {
            let n = 3;
            let p = 5;
            let y = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
            let x = SpherePoint::new(DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
                .unwrap();
            let u = DVector::from_fn(p, |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v.abs().min(1.0)
            });
            let spec = SubproblemSpec::new(x, u.clone(), 0.15, y.clone()).unwrap();
            let cert = solve_subproblem(&spec, 1e-10).unwrap();
            let bound = crate::geometry::operator_norm(&y, 1e-12) * u.norm();
            assert!(cert.lambda.abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn sufficient_decrease_every_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for _ in 0..20 {
            let n = 4;
            let p = 7;
            let y = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
            let x = SpherePoint::new(DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
                .unwrap();
            let penalty = random_penalty(&mut rng);
            let u = penalty.weights(&(y.transpose() * x.coords()).abs()).unwrap();
            let lf = crate::geometry::lipschitz_modulus(&penalty, &y);
            let spec = SubproblemSpec::new(x, u, 1.0 / lf, y).unwrap();
            let tol = 1e-10;
            let cert = solve_subproblem(&spec, tol).unwrap();
            let slack = sufficient_decrease_slack(&spec, &cert);
            assert!(slack <= 10.0 * tol, "slack = {slack:e}");
        }
    }

    #[test]
    fn verify_accepts_sound_and_rejects_corrupt() {
        let y = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let spec = spec_from(vec![1.0, 0.0], vec![1.0], 1.0, y);
        let tau = default_tau_zero(&spec.y);
        let cert = solve_subproblem(&spec, 1e-10).unwrap();
        let report = verify_certificate(&spec, &cert, tau, 1e-9);
        assert!(report.valid, "{:?}", report.violations);

        let mut bad = cert.clone();
        bad.xi[0] = 2.0;
        let report = verify_certificate(&spec, &bad, tau, 1e-9);
        assert!(!report.valid);
        assert!(report.violations.iter().any(|v| v.contains("xi out of box")));

        let mut perturbed = cert.clone();
        perturbed.d[1] += 1e-3;
        let report = verify_certificate(&spec, &perturbed, tau, 1e-9);
        assert!(!report.valid);
        // residual dominated by ||perturbation|| / t
        assert!((report.recomputed_residual - 1e-3 / spec.t).abs() < 2e-4);
    }

    #[test]
    fn brute_force_refuses_large_p() {
        let y = DMatrix::from_element(2, 11, 0.1);
        let spec = spec_from(vec![1.0, 0.0], vec![1.0; 11], 0.5, y);
        assert!(matches!(
            brute_force_subproblem(&spec),
            Err(SubproblemError::TooManyColumns { .. })
        ));
    }
}
