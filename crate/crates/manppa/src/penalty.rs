//! Concave sparsity penalties and the scalar functions derived from them.
//!
//! A penalty is a continuous concave nondecreasing function `phi` on
//! `[0, inf)` with `phi(0) = 0` whose one-sided derivative at zero,
//! `ell = lim_{s -> 0+} phi'(s)`, is finite and positive. Four kinds are
//! supported: plain l1 (`phi(s) = s`), SCAD, MCP and the log penalty.
//!
//! Besides `phi` itself, the solver needs the right derivative `phi'_+`
//! (the reweighting weights), and the convex function
//!
//! ```text
//! psi(s) = -phi(s)      for s >= 0
//!          s^2 - ell*s  for s < 0
//! ```
//!
//! together with its Fenchel conjugate `psi*`, which enters the auxiliary
//! potential used by the descent diagnostics. `psi*` is implemented in
//! closed form per kind and takes the value `+inf` outside its domain of
//! finiteness; tests validate each closed form against a grid-supremum
//! oracle.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from penalty evaluations and construction.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PenaltyError {
    #[error("penalty evaluated at negative argument {0}")]
    NegativeArgument(f64),
    #[error("conjugate requested at positive argument {0}; only w <= 0 occurs")]
    PositiveConjugateArgument(f64),
    #[error("invalid penalty parameters: {0}")]
    InvalidParameters(String),
}

/// A real number extended with `+inf`.
///
/// `psi*` is `+inf` outside its effective domain (for the l1 penalty this
/// happens for every weight other than `ell`); the marker is explicit so
/// no caller has to interpret a sentinel float.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Extended {
    Finite(f64),
    PosInf,
}

impl Extended {
    pub fn is_finite(&self) -> bool {
        matches!(self, Extended::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Extended::Finite(v) => Some(*v),
            Extended::PosInf => None,
        }
    }

    /// Finite value or panic; for contexts where `+inf` cannot occur.
    pub fn expect_finite(&self, what: &str) -> f64 {
        match self {
            Extended::Finite(v) => *v,
            Extended::PosInf => panic!("{what} is +inf"),
        }
    }

    /// Collapses to `f64`, mapping the marker to `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        match self {
            Extended::Finite(v) => *v,
            Extended::PosInf => f64::INFINITY,
        }
    }

}

impl std::ops::Add for Extended {
    type Output = Extended;

    fn add(self, rhs: Extended) -> Extended {
        match (self, rhs) {
            (Extended::Finite(a), Extended::Finite(b)) => Extended::Finite(a + b),
            _ => Extended::PosInf,
        }
    }
}

impl PartialOrd for Extended {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.to_f64().partial_cmp(&other.to_f64())
    }
}

impl std::fmt::Display for Extended {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Extended::Finite(v) => write!(f, "{v}"),
            Extended::PosInf => write!(f, "inf"),
        }
    }
}

/// Concave penalty descriptor.
///
/// Serialized form is a tagged object, e.g.
/// `{"kind":"scad","lambda":1.0,"a":3.7}`; deserialized values should be
/// checked with [`Penalty::validate`] since serde does not enforce the
/// parameter ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Penalty {
    /// `phi(s) = s`.
    L1,
    /// Smoothly clipped absolute deviation; requires `lambda > 0`, `a > 2`.
    Scad { lambda: f64, a: f64 },
    /// Minimax concave penalty; requires `lambda > 0`, `beta > 0`.
    Mcp { lambda: f64, beta: f64 },
    /// `phi(s) = lambda * ln(1 + s/epsilon)`; requires `lambda > 0`, `epsilon > 0`.
    Log { lambda: f64, epsilon: f64 },
}

impl Penalty {
    pub fn l1() -> Penalty {
        Penalty::L1
    }

    pub fn scad(lambda: f64, a: f64) -> Result<Penalty, PenaltyError> {
        let p = Penalty::Scad { lambda, a };
        p.validate()?;
        Ok(p)
    }

    pub fn mcp(lambda: f64, beta: f64) -> Result<Penalty, PenaltyError> {
        let p = Penalty::Mcp { lambda, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn log(lambda: f64, epsilon: f64) -> Result<Penalty, PenaltyError> {
        let p = Penalty::Log { lambda, epsilon };
        p.validate()?;
        Ok(p)
    }

    /// Checks the parameter ranges; call after deserializing.
    pub fn validate(&self) -> Result<(), PenaltyError> {
        let bad = |msg: String| Err(PenaltyError::InvalidParameters(msg));
        match *self {
            Penalty::L1 => Ok(()),
            Penalty::Scad { lambda, a } => {
                if !(lambda > 0.0) || !lambda.is_finite() {
                    return bad(format!("scad requires lambda > 0, got {lambda}"));
                }
                if !(a > 2.0) || !a.is_finite() {
                    return bad(format!("scad requires a > 2, got {a}"));
                }
                Ok(())
            }
            Penalty::Mcp { lambda, beta } => {
                if !(lambda > 0.0) || !lambda.is_finite() {
                    return bad(format!("mcp requires lambda > 0, got {lambda}"));
                }
                if !(beta > 0.0) || !beta.is_finite() {
                    return bad(format!("mcp requires beta > 0, got {beta}"));
                }
                Ok(())
            }
            Penalty::Log { lambda, epsilon } => {
                if !(lambda > 0.0) || !lambda.is_finite() {
                    return bad(format!("log requires lambda > 0, got {lambda}"));
                }
                if !(epsilon > 0.0) || !epsilon.is_finite() {
                    return bad(format!("log requires epsilon > 0, got {epsilon}"));
                }
                Ok(())
            }
        }
    }

    /// `phi(s)` for `s >= 0`.
    pub fn phi(&self, s: f64) -> Result<f64, PenaltyError> {
        if !(s >= 0.0) {
            return Err(PenaltyError::NegativeArgument(s));
        }
        Ok(match *self {
            Penalty::L1 => s,
            Penalty::Scad { lambda, a } => {
                if s <= lambda {
                    lambda * s
                } else if s <= a * lambda {
                    (-s * s + 2.0 * a * lambda * s - lambda * lambda) / (2.0 * (a - 1.0))
                } else {
                    lambda * lambda * (a + 1.0) / 2.0
                }
            }
            Penalty::Mcp { lambda, beta } => {
                if s <= lambda * beta {
                    lambda * s - s * s / (2.0 * beta)
                } else {
                    lambda * lambda * beta / 2.0
                }
            }
            Penalty::Log { lambda, epsilon } => lambda * (1.0 + s / epsilon).ln(),
        })
    }

    /// Right derivative `phi'_+(s)`; at kinks the limit from the right.
    pub fn phi_rderiv(&self, s: f64) -> Result<f64, PenaltyError> {
        if !(s >= 0.0) {
            return Err(PenaltyError::NegativeArgument(s));
        }
        Ok(match *self {
            Penalty::L1 => 1.0,
            Penalty::Scad { lambda, a } => {
                if s < lambda {
                    lambda
                } else if s < a * lambda {
                    (a * lambda - s) / (a - 1.0)
                } else {
                    0.0
                }
            }
            Penalty::Mcp { lambda, beta } => {
                if s < lambda * beta {
                    lambda - s / beta
                } else {
                    0.0
                }
            }
            Penalty::Log { lambda, epsilon } => lambda / (epsilon + s),
        })
    }

    /// `ell = phi'_+(0)`, the slope at the origin.
    pub fn ell(&self) -> f64 {
        match *self {
            Penalty::L1 => 1.0,
            Penalty::Scad { lambda, .. } => lambda,
            Penalty::Mcp { lambda, .. } => lambda,
            Penalty::Log { lambda, epsilon } => lambda / epsilon,
        }
    }

    /// `psi(s) = -phi(s)` for `s >= 0`, `s^2 - ell*s` for `s < 0`.
    pub fn psi(&self, s: f64) -> f64 {
        if s >= 0.0 {
            -self.phi(s).expect("s >= 0")
        } else {
            s * s - self.ell() * s
        }
    }

    /// Fenchel conjugate `psi*(w) = sup_s { w*s - psi(s) }` for `w <= 0`.
    ///
    /// For `w <= -ell` every kind shares the parabola branch
    /// `(w + ell)^2 / 4` coming from the `s < 0` piece of `psi`; on
    /// `(-ell, 0]` the value is kind specific and infinite where the
    /// supremum over `s >= 0` diverges.
    pub fn psi_conjugate(&self, w: f64) -> Result<Extended, PenaltyError> {
        if w > 0.0 || w.is_nan() {
            return Err(PenaltyError::PositiveConjugateArgument(w));
        }
        let ell = self.ell();
        if w <= -ell {
            let r = w + ell;
            return Ok(Extended::Finite(r * r / 4.0));
        }
        // -ell < w <= 0
        Ok(match *self {
            Penalty::L1 => Extended::PosInf,
            Penalty::Scad { lambda, a } => Extended::Finite(
                a * lambda * w + (a - 1.0) * w * w / 2.0 + lambda * lambda * (a + 1.0) / 2.0,
            ),
            Penalty::Mcp { lambda, beta } => {
                let r = w + lambda;
                Extended::Finite(beta * r * r / 2.0)
            }
            Penalty::Log { lambda, epsilon } => {
                if w == 0.0 {
                    Extended::PosInf
                } else {
                    Extended::Finite(-lambda - epsilon * w + lambda * (-lambda / (epsilon * w)).ln())
                }
            }
        })
    }

    /// Componentwise `phi'_+` over a nonnegative vector; the reweighting map.
    pub fn weights(&self, q: &DVector<f64>) -> Result<DVector<f64>, PenaltyError> {
        let mut out = DVector::zeros(q.len());
        for (i, &qi) in q.iter().enumerate() {
            out[i] = self.phi_rderiv(qi)?;
        }
        Ok(out)
    }
}
