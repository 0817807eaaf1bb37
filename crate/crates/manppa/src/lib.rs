//! Finding sparse vectors in a subspace by manifold proximal point
//! iterations with reweighting.
//!
//! The problem: given `Y` in `R^{n x p}` whose row space is believed to
//! contain a sparse direction, minimize the concave-penalized objective
//!
//! ```text
//! F(x) = sum_i phi(|[Y^T x]_i|)    subject to  ||x|| = 1,
//! ```
//!
//! where `phi` is one of the l1, SCAD, MCP or log penalties. Each outer
//! iteration linearizes `phi` into weights `u = phi'_+(|Y^T x|)`, solves a
//! weighted-l1 proximal subproblem restricted to the tangent space, and
//! retracts back to the sphere. Every inner solve produces a first-order
//! certificate `(d, lambda, xi)` that can be re-verified independently of
//! the solver, and the full iteration trace carries enough information to
//! re-check the descent inequalities and to classify the empirical
//! convergence rate (finite / linear / sublinear).
//!
//! # Example
//!
//! Recover a planted sparse direction from a warm start (the iteration is
//! local; a cold start converges to some stationary point, not necessarily
//! the planted one):
//!
//! ```
//! use manppa::data::generate_planted;
//! use manppa::geometry::SpherePoint;
//! use manppa::penalty::Penalty;
//! use manppa::solver::{manppa_rw, SolverConfig};
//!
//! let planted = generate_planted(6, 24, 2, Penalty::l1(), 7).unwrap();
//! let x0 = SpherePoint::new(
//!     planted.x_star.coords() * 0.9 + manppa::solver::default_x0(&planted.instance, 1).coords() * 0.1,
//! )
//! .unwrap();
//! let cfg = SolverConfig { x0: Some(x0), ..SolverConfig::default() };
//! let result = manppa_rw(&planted.instance, &cfg).unwrap();
//! let align = result
//!     .x_final
//!     .coords()
//!     .dot(planted.x_star.coords())
//!     .abs();
//! assert!(align > 1.0 - 1e-6, "recovered the planted direction");
//! ```
//!
//! The `manppa` binary exposes the same functionality as subcommands
//! (`generate`, `solve`, `bench`, `rate-study`); see the crate README.

pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod geometry;
pub mod penalty;
pub mod solver;
pub mod subproblem;

pub use data::{generate_planted, load_instance, save_instance, PlantedInstance};
pub use diagnostics::{
    check_potential_descent, estimate_rate, potential_tilde, weak_sharp_check, RateEstimate,
    RateKind,
};
pub use geometry::{
    lipschitz_modulus, operator_norm, retract, stationarity_measure, tangent_project, SpherePoint,
    TangentVector,
};
pub use penalty::{Extended, Penalty, PenaltyError};
pub use solver::{
    manppa_rw, objective_f, ProblemInstance, SolveError, SolveResult, SolverConfig, SolverStatus,
    TraceRecord,
};
pub use subproblem::{
    brute_force_subproblem, solve_subproblem, verify_certificate, SubproblemCertificate,
    SubproblemError, SubproblemSpec,
};
