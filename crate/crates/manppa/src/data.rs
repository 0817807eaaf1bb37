//! Planted-instance generation and on-disk persistence.
//!
//! A planted instance hides a known sparse vector in the row space of `Y`:
//! a `k`-sparse vector `v` is drawn, stacked on top of `n - 1` Gaussian
//! rows, and the rows are orthonormalized by Gram-Schmidt keeping the first
//! direction, so `Y^T e_1` is proportional to `v` and `e_1` is the planted
//! direction. Orthonormal rows make `||Y||_2 = 1` exactly, which removes
//! spectral-norm estimation error from stepsize selection.
//!
//! Files: the matrix goes to `<base>.csv` (row-major, 17 significant
//! digits, lossless for f64) and `{n, p, k, seed, penalty}` to
//! `<base>.json`. All randomness is drawn from a ChaCha8 stream seeded by
//! the single `seed`, so generation is bit-reproducible across platforms.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::SpherePoint;
use crate::penalty::Penalty;
use crate::solver::ProblemInstance;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generation parameters: {0}")]
    InvalidParameters(String),
    #[error("row orthonormalization degenerated {attempts} times in a row")]
    Degenerate { attempts: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Metadata { path: PathBuf, message: String },
}

/// A generated instance together with its ground truth.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub instance: ProblemInstance,
    /// The planted direction; always `e_1` for generated instances.
    pub x_star: SpherePoint,
    /// The sparse row-space element, `Y^T x_star` up to scale.
    pub v: DVector<f64>,
    pub sparsity_k: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceMeta {
    n: usize,
    p: usize,
    k: usize,
    seed: u64,
    penalty: Penalty,
}

/// Draws a planted instance: `v` has exactly `k` Gaussian nonzeros on a
/// uniform support, the remaining `n - 1` rows are Gaussian, and rows are
/// orthonormalized preserving the first direction. Deterministic in `seed`;
/// a degenerate Gram-Schmidt pass retries on the next ChaCha stream, at
/// most 10 times.
pub fn generate_planted(
    n: usize,
    p: usize,
    k: usize,
    penalty: Penalty,
    seed: u64,
) -> Result<PlantedInstance, DataError> {
    if n < 2 || n > p {
        return Err(DataError::InvalidParameters(format!(
            "need 2 <= n <= p, got n = {n}, p = {p}"
        )));
    }
    if k < 1 || k > p {
        return Err(DataError::InvalidParameters(format!(
            "need 1 <= k <= p, got k = {k}, p = {p}"
        )));
    }
    penalty
        .validate()
        .map_err(|e| DataError::InvalidParameters(e.to_string()))?;

    const MAX_ATTEMPTS: usize = 10;
    'attempt: for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt as u64);

        let support = rand::seq::index::sample(&mut rng, p, k).into_vec();
        let mut v = DVector::zeros(p);
        for &idx in &support {
            v[idx] = StandardNormal.sample(&mut rng);
        }

        let mut rows: Vec<DVector<f64>> = Vec::with_capacity(n);
        rows.push(v.clone());
        for _ in 1..n {
            rows.push(DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng)));
        }

        // Gram-Schmidt preserving the first direction
        for i in 0..n {
            for j in 0..i {
                let proj = rows[j].dot(&rows[i]);
                let prev = rows[j].clone();
                rows[i] -= prev * proj;
            }
            let nrm = rows[i].norm();
            if nrm < 1e-8 {
                continue 'attempt;
            }
            rows[i] /= nrm;
        }

        let y = DMatrix::from_fn(n, p, |r, c| rows[r][c]);
        let instance = ProblemInstance::new(y, penalty)
            .map_err(|e| DataError::InvalidParameters(e.to_string()))?;
        return Ok(PlantedInstance {
            instance,
            x_star: SpherePoint::basis(n, 0),
            v,
            sparsity_k: k,
            seed,
        });
    }
    Err(DataError::Degenerate {
        attempts: MAX_ATTEMPTS,
    })
}

fn base_path(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

/// Formats one f64 with 17 significant digits; round trips losslessly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a matrix as bare CSV, row-major, one row per line.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<(), DataError> {
    let mut out = String::new();
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format_f64(m[(r, c)]));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a bare CSV matrix; errors carry 1-based line/column positions.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (line_idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col_idx, field) in line.split(',').enumerate() {
            let value = field.trim().parse::<f64>().map_err(|e| DataError::Parse {
                path: path.to_path_buf(),
                line: line_idx + 1,
                column: col_idx + 1,
                message: format!("bad float {field:?}: {e}"),
            })?;
            row.push(value);
        }
        if let Some(w) = width {
            if row.len() != w {
                return Err(DataError::Parse {
                    path: path.to_path_buf(),
                    line: line_idx + 1,
                    column: row.len(),
                    message: format!("row has {} entries, expected {}", row.len(), w),
                });
            }
        } else {
            width = Some(row.len());
        }
        rows.push(row);
    }
    let n = rows.len();
    let p = width.ok_or_else(|| DataError::Parse {
        path: path.to_path_buf(),
        line: 1,
        column: 1,
        message: "empty matrix file".into(),
    })?;
    Ok(DMatrix::from_fn(n, p, |r, c| rows[r][c]))
}

/// Writes `<base>.csv` and `<base>.json`; `path` may carry either extension
/// or none.
pub fn save_instance(inst: &PlantedInstance, path: &Path) -> Result<(), DataError> {
    let base = base_path(path);
    let csv = base.with_extension("csv");
    let json = base.with_extension("json");
    write_matrix_csv(&csv, &inst.instance.y)?;
    let meta = InstanceMeta {
        n: inst.instance.n(),
        p: inst.instance.p(),
        k: inst.sparsity_k,
        seed: inst.seed,
        penalty: inst.instance.penalty,
    };
    let body = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&json, body + "\n").map_err(|source| DataError::Io {
        path: json.clone(),
        source,
    })
}

/// Loads a `<base>.csv` / `<base>.json` pair. The planted direction is
/// `e_1` by construction and the sparse element is recovered as `Y^T e_1`.
pub fn load_instance(path: &Path) -> Result<PlantedInstance, DataError> {
    let base = base_path(path);
    let csv = base.with_extension("csv");
    let json = base.with_extension("json");

    let y = read_matrix_csv(&csv)?;
    let text = fs::read_to_string(&json).map_err(|source| DataError::Io {
        path: json.clone(),
        source,
    })?;
    let meta: InstanceMeta = serde_json::from_str(&text).map_err(|e| DataError::Metadata {
        path: json.clone(),
        message: e.to_string(),
    })?;
    meta.penalty.validate().map_err(|e| DataError::Metadata {
        path: json.clone(),
        message: e.to_string(),
    })?;
    if meta.n != y.nrows() || meta.p != y.ncols() {
        return Err(DataError::Metadata {
            path: json,
            message: format!(
                "metadata says {}x{} but csv is {}x{}",
                meta.n,
                meta.p,
                y.nrows(),
                y.ncols()
            ),
        });
    }

    let n = y.nrows();
    let v = DVector::from_column_slice((y.transpose() * SpherePoint::basis(n, 0).coords()).as_slice());
    let instance = ProblemInstance::new(y, meta.penalty)
        .map_err(|e| DataError::Metadata {
            path: json,
            message: e.to_string(),
        })?;
    Ok(PlantedInstance {
        instance,
        x_star: SpherePoint::basis(n, 0),
        v,
        sparsity_k: meta.k,
        seed: meta.seed,
    })
}
