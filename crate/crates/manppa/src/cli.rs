//! Command-line front end: `generate`, `solve`, `bench` and `rate-study`.
//!
//! Exit codes: 0 success, 1 usage or parse problems, 2 non-convergence,
//! 3 I/O failures. Solver flags mirror the `SolverConfig` fields; a JSON
//! config file (`--config`) can stand in for the flags, with explicit
//! flags taking precedence over file values. The default output directory
//! comes from `MANPPA_OUT_DIR` when set.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_f64, generate_planted, load_instance, save_instance, DataError};
use crate::diagnostics::{estimate_rate, RateEstimate, RateKind};
use crate::geometry::SpherePoint;
use crate::penalty::{Extended, Penalty};
use crate::solver::{
    manppa_rw, ProblemInstance, SolveError, SolveResult, SolverConfig, SolverStatus,
};

pub const OUT_DIR_ENV: &str = "MANPPA_OUT_DIR";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    NonConvergence(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::NonConvergence(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::NonConvergence(m) | CliError::Io(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Config(_) => CliError::Usage(e.to_string()),
            SolveError::Subproblem { .. } => CliError::NonConvergence(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(
    name = "manppa",
    about = "Sparse vector recovery on the unit sphere by reweighted manifold proximal point iterations",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted sparse instance and write it as CSV + JSON.
    Generate(GenerateArgs),
    /// Solve one instance; writes a trace CSV and a result JSON.
    Solve(SolveArgs),
    /// Time a batch of solves.
    Bench(BenchArgs),
    /// Solve a sweep of instances and tabulate empirical convergence rates.
    RateStudy(RateStudyArgs),
}

fn parse_t_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("t-fraction must lie strictly in (0, 1), got {v}"))
    }
}

#[derive(Args, Debug, Clone, Default)]
struct PenaltyArgs {
    /// Penalty kind: l1 | scad | mcp | log.
    #[arg(long)]
    penalty: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// SCAD shape parameter (> 2).
    #[arg(long)]
    a: Option<f64>,
    /// MCP shape parameter (> 0).
    #[arg(long)]
    beta: Option<f64>,
    /// Log penalty offset (> 0).
    #[arg(long)]
    epsilon: Option<f64>,
}

impl PenaltyArgs {
    fn build(&self) -> Result<Option<Penalty>, CliError> {
        let Some(kind) = &self.penalty else {
            return Ok(None);
        };
        let lambda = self.lambda.unwrap_or(1.0);
        let penalty = match kind.as_str() {
            "l1" => Ok(Penalty::l1()),
            "scad" => Penalty::scad(lambda, self.a.unwrap_or(3.7)),
            "mcp" => Penalty::mcp(lambda, self.beta.unwrap_or(2.0)),
            "log" => Penalty::log(lambda, self.epsilon.unwrap_or(0.1)),
            other => {
                return Err(CliError::Usage(format!(
                    "unknown penalty kind {other:?}; expected l1, scad, mcp or log"
                )))
            }
        };
        penalty.map(Some).map_err(|e| CliError::Usage(e.to_string()))
    }
}

#[derive(Args, Debug, Clone, Default)]
struct SolverArgs {
    /// Stepsize as a fraction of 2/L, strictly inside (0, 1).
    #[arg(long, value_parser = parse_t_fraction)]
    t_fraction: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Stop when the tangent step norm falls to this value.
    #[arg(long)]
    tol_d: Option<f64>,
    /// Step norm at which the run counts as finitely convergent.
    #[arg(long)]
    finite_tol: Option<f64>,
    /// Seed for the default starting point.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated starting vector; normalized onto the sphere.
    #[arg(long)]
    x0: Option<String>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    penalty: PenaltyArgs,
    /// Base path for <base>.csv and <base>.json; defaults to a name under
    /// the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// Base path of an instance written by `generate`.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Generate an instance on the fly instead of loading one.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Seed of the on-the-fly instance.
    #[arg(long)]
    gen_seed: Option<u64>,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// JSON file supplying any of the flags; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    /// Store every iterate in iterates.csv instead of first/last only.
    #[arg(long)]
    store_iterates: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Number of seeded instances to solve.
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 40)]
    p: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct RateStudyArgs {
    /// Number of instances in the generated sweep.
    #[arg(long, default_value_t = 0)]
    count: usize,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 40)]
    p: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
    /// Explicit instance base paths; overrides the generated sweep.
    #[arg(long, num_args = 1..)]
    instances: Vec<PathBuf>,
    #[command(flatten)]
    penalty: PenaltyArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, env = OUT_DIR_ENV, default_value = ".")]
    out_dir: PathBuf,
}

/// Optional-field mirror of the solve flags for `--config` files.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    instance: Option<PathBuf>,
    n: Option<usize>,
    p: Option<usize>,
    k: Option<usize>,
    gen_seed: Option<u64>,
    penalty: Option<Penalty>,
    t_fraction: Option<f64>,
    max_iter: Option<usize>,
    tol_d: Option<f64>,
    finite_tol: Option<f64>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    store_iterates: Option<bool>,
}

/// Entry point used by the binary; parses `args` and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Bench(args) => cmd_bench(args),
        Command::RateStudy(args) => cmd_rate_study(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let penalty = args.penalty.build()?.unwrap_or(Penalty::L1);
    let inst = generate_planted(args.n, args.p, args.k, penalty, args.seed)?;
    let base = args.out.unwrap_or_else(|| {
        args.out_dir.join(format!(
            "instance_n{}_p{}_k{}_seed{}",
            args.n, args.p, args.k, args.seed
        ))
    });
    if let Some(parent) = base.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    save_instance(&inst, &base)?;
    println!("wrote {}.csv and {}.json", base.display(), base.display());
    Ok(())
}

fn parse_x0(raw: &str) -> Result<SpherePoint, CliError> {
    let values: Result<Vec<f64>, _> = raw.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let values = values.map_err(|e| CliError::Usage(format!("bad --x0 entry: {e}")))?;
    SpherePoint::new(DVector::from_vec(values))
        .map_err(|e| CliError::Usage(format!("bad --x0: {e}")))
}

struct ResolvedSolve {
    instance: ProblemInstance,
    cfg: SolverConfig,
    out_dir: PathBuf,
    store_iterates: bool,
    label_seed: u64,
}

fn resolve_solve(args: &SolveArgs) -> Result<ResolvedSolve, CliError> {
    let file: FileConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };

    let instance_path = args.instance.clone().or(file.instance);
    let n = args.n.or(file.n);
    let p = args.p.or(file.p);
    let k = args.k.or(file.k);
    let gen_seed = args.gen_seed.or(file.gen_seed);
    let gen_requested = n.is_some() || p.is_some() || k.is_some() || gen_seed.is_some();

    let penalty_override = match args.penalty.build()? {
        Some(p) => Some(p),
        None => {
            if let Some(p) = file.penalty {
                p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
                Some(p)
            } else {
                None
            }
        }
    };

    let mut instance = match (&instance_path, gen_requested) {
        (Some(_), true) => {
            return Err(CliError::Usage(
                "--instance and generation parameters (--n/--p/--k/--gen-seed) are mutually exclusive".into(),
            ))
        }
        (Some(path), false) => load_instance(path)?.instance,
        (None, true) => {
            let (Some(n), Some(p), Some(k)) = (n, p, k) else {
                return Err(CliError::Usage(
                    "on-the-fly generation needs --n, --p and --k".into(),
                ));
            };
            let penalty = penalty_override.unwrap_or(Penalty::L1);
            generate_planted(n, p, k, penalty, gen_seed.unwrap_or(0))?.instance
        }
        (None, false) => {
            return Err(CliError::Usage(
                "no instance source: pass --instance or --n/--p/--k (or a --config providing them)"
                    .into(),
            ))
        }
    };
    if instance_path.is_some() {
        if let Some(p) = penalty_override {
            instance.penalty = p;
        }
    }

    let seed = args.solver.seed.or(file.seed).unwrap_or(0);
    let x0 = match &args.solver.x0 {
        Some(raw) => Some(parse_x0(raw)?),
        None => None,
    };
    let defaults = SolverConfig::default();
    let cfg = SolverConfig {
        t_fraction: args
            .solver
            .t_fraction
            .or(file.t_fraction)
            .unwrap_or(defaults.t_fraction),
        max_iter: args.solver.max_iter.or(file.max_iter).unwrap_or(defaults.max_iter),
        tol_d: args.solver.tol_d.or(file.tol_d).unwrap_or(defaults.tol_d),
        finite_tol: args
            .solver
            .finite_tol
            .or(file.finite_tol)
            .unwrap_or(defaults.finite_tol),
        seed,
        x0,
    };

    let out_dir = args
        .out_dir
        .clone()
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from("."));
    let store_iterates = args.store_iterates || file.store_iterates.unwrap_or(false);

    Ok(ResolvedSolve {
        instance,
        cfg,
        out_dir,
        store_iterates,
        label_seed: seed,
    })
}

pub(crate) fn write_trace_csv(path: &Path, result: &SolveResult) -> Result<(), CliError> {
    let mut out = String::from("k,d_norm,F,F_tilde,lambda,stationarity,descent_slack\n");
    for rec in &result.trace {
        let f_tilde = match rec.f_tilde_value {
            Extended::Finite(v) => format_f64(v),
            Extended::PosInf => "inf".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            rec.k,
            format_f64(rec.d_norm),
            format_f64(rec.f_value),
            f_tilde,
            format_f64(rec.lambda),
            format_f64(rec.stationarity),
            format_f64(rec.descent_slack),
        ));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

fn write_iterates_csv(path: &Path, result: &SolveResult) -> Result<(), CliError> {
    let n = result.x_initial.dim();
    let mut out = String::from("step");
    for i in 0..n {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    let mut push_row = |step: usize, x: &SpherePoint| {
        out.push_str(&step.to_string());
        for v in x.coords().iter() {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    };
    push_row(0, &result.x_initial);
    for rec in &result.trace {
        push_row(rec.k + 1, &rec.x);
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

#[derive(Serialize)]
struct SolveSummary {
    status: SolverStatus,
    iterations: usize,
    f_initial: f64,
    f_final: f64,
    d_norm_final: f64,
    lambda_final: f64,
    stationarity_final: f64,
    t: f64,
    lipschitz: f64,
    n: usize,
    p: usize,
    penalty: Penalty,
    seed: u64,
    zero_set_warning: bool,
    rate: RateEstimate,
    x0: Vec<f64>,
    x_final: Vec<f64>,
}

fn write_result_json(
    path: &Path,
    inst: &ProblemInstance,
    result: &SolveResult,
    rate: &RateEstimate,
    seed: u64,
) -> Result<(), CliError> {
    let last = result.trace.last();
    let summary = SolveSummary {
        status: result.status,
        iterations: result.iterations(),
        f_initial: result.f_initial,
        f_final: result.f_final(),
        d_norm_final: last.map(|r| r.d_norm).unwrap_or(f64::NAN),
        lambda_final: last.map(|r| r.lambda).unwrap_or(f64::NAN),
        stationarity_final: last.map(|r| r.stationarity).unwrap_or(f64::NAN),
        t: result.t,
        lipschitz: result.lipschitz,
        n: inst.n(),
        p: inst.p(),
        penalty: inst.penalty,
        seed,
        zero_set_warning: result.zero_set_warning,
        rate: rate.clone(),
        x0: result.x_initial.coords().as_slice().to_vec(),
        x_final: result.x_final.coords().as_slice().to_vec(),
    };
    let body = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(path, body + "\n").map_err(|e| io_err(path, e))
}

fn cmd_solve(args: SolveArgs) -> Result<(), CliError> {
    let resolved = resolve_solve(&args)?;
    fs::create_dir_all(&resolved.out_dir).map_err(|e| io_err(&resolved.out_dir, e))?;

    let result = manppa_rw(&resolved.instance, &resolved.cfg)?;
    let rate = estimate_rate(&result.trace, Some(&result.x_final), resolved.cfg.finite_tol);

    write_trace_csv(&resolved.out_dir.join("trace.csv"), &result)?;
    write_result_json(
        &resolved.out_dir.join("result.json"),
        &resolved.instance,
        &result,
        &rate,
        resolved.label_seed,
    )?;
    if resolved.store_iterates {
        write_iterates_csv(&resolved.out_dir.join("iterates.csv"), &result)?;
    }

    println!(
        "status={} iterations={} F={:.6e} stationarity={:.3e} rate_kind={:?}",
        result.status,
        result.iterations(),
        result.f_final(),
        result.trace.last().map(|r| r.stationarity).unwrap_or(f64::NAN),
        rate.kind,
    );
    if result.status == SolverStatus::MaxIter {
        return Err(CliError::NonConvergence(format!(
            "hit max_iter = {} with ||d|| = {:e}",
            resolved.cfg.max_iter,
            result.trace.last().map(|r| r.d_norm).unwrap_or(f64::NAN)
        )));
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<(), CliError> {
    if args.count == 0 {
        return Err(CliError::Usage("bench needs --count >= 1".into()));
    }
    let penalty = args.penalty.build()?.unwrap_or(Penalty::L1);
    fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;

    let mut rows = String::from("index,seed,wall_ms,iterations,status,f_final\n");
    let mut times = Vec::new();
    for i in 0..args.count {
        let seed = args.master_seed.wrapping_add(i as u64);
        let planted = generate_planted(args.n, args.p, args.k, penalty, seed)?;
        let cfg = solver_config_from_args(&args.solver, seed)?;
        let start = Instant::now();
        let result = manppa_rw(&planted.instance, &cfg)?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        times.push(ms);
        rows.push_str(&format!(
            "{i},{seed},{:.3},{},{},{}\n",
            ms,
            result.iterations(),
            result.status,
            format_f64(result.f_final()),
        ));
    }
    let path = args.out_dir.join("bench.csv");
    fs::write(&path, rows).map_err(|e| io_err(&path, e))?;

    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    println!(
        "{} solves: mean {:.2} ms, median {:.2} ms, max {:.2} ms -> {}",
        args.count,
        mean,
        times[times.len() / 2],
        times[times.len() - 1],
        path.display()
    );
    Ok(())
}

fn solver_config_from_args(solver: &SolverArgs, seed: u64) -> Result<SolverConfig, CliError> {
    let defaults = SolverConfig::default();
    let x0 = match &solver.x0 {
        Some(raw) => Some(parse_x0(raw)?),
        None => None,
    };
    Ok(SolverConfig {
        t_fraction: solver.t_fraction.unwrap_or(defaults.t_fraction),
        max_iter: solver.max_iter.unwrap_or(defaults.max_iter),
        tol_d: solver.tol_d.unwrap_or(defaults.tol_d),
        finite_tol: solver.finite_tol.unwrap_or(defaults.finite_tol),
        seed: solver.seed.unwrap_or(seed),
        x0,
    })
}

#[derive(Debug)]
enum StudySource {
    Seed(u64),
    Path(PathBuf),
}

struct StudyRow {
    index: usize,
    label: String,
    status: Option<SolverStatus>,
    iterations: usize,
    f_final: f64,
    rate: Option<RateEstimate>,
    error: Option<String>,
}

fn run_study_case(
    index: usize,
    source: &StudySource,
    dims: (usize, usize, usize),
    penalty_override: Option<Penalty>,
    solver: &SolverArgs,
) -> StudyRow {
    let fail = |label: String, message: String| StudyRow {
        index,
        label,
        status: None,
        iterations: 0,
        f_final: f64::NAN,
        rate: None,
        error: Some(message),
    };
    let outcome: Result<(ProblemInstance, u64, String), CliError> = match source {
        StudySource::Seed(seed) => {
            let penalty = penalty_override.unwrap_or(Penalty::L1);
            let (n, p, k) = dims;
            generate_planted(n, p, k, penalty, *seed)
                .map(|pl| (pl.instance, *seed, format!("seed:{seed}")))
                .map_err(CliError::from)
        }
        StudySource::Path(path) => load_instance(path)
            .map(|pl| {
                let mut inst = pl.instance;
                if let Some(p) = penalty_override {
                    inst.penalty = p;
                }
                (inst, pl.seed, path.display().to_string())
            })
            .map_err(CliError::from),
    };
    let (instance, seed, label) = match outcome {
        Ok(v) => v,
        Err(e) => return fail(format!("{source:?}"), e.message().to_string()),
    };
    let cfg = match solver_config_from_args(solver, seed) {
        Ok(c) => c,
        Err(e) => return fail(label, e.message().to_string()),
    };
    match manppa_rw(&instance, &cfg) {
        Ok(result) => {
            let rate = estimate_rate(&result.trace, Some(&result.x_final), cfg.finite_tol);
            StudyRow {
                index,
                label,
                status: Some(result.status),
                iterations: result.iterations(),
                f_final: result.f_final(),
                rate: Some(rate),
                error: None,
            }
        }
        Err(e) => fail(label, e.to_string()),
    }
}

fn study_sources(args: &RateStudyArgs) -> Result<Vec<StudySource>, CliError> {
    if !args.instances.is_empty() {
        return Ok(args.instances.iter().cloned().map(StudySource::Path).collect());
    }
    if args.count == 0 {
        return Err(CliError::Usage(
            "rate-study needs --count >= 1 or explicit --instances".into(),
        ));
    }
    Ok((0..args.count)
        .map(|i| StudySource::Seed(args.master_seed.wrapping_add(i as u64)))
        .collect())
}

#[derive(Serialize)]
struct StudySummary {
    total: usize,
    failed: usize,
    n_finite: usize,
    n_linear: usize,
    n_sublinear: usize,
    n_inconclusive: usize,
    fraction_finite: f64,
    fraction_linear: f64,
    median_linear_rate: Option<f64>,
}

fn cmd_rate_study(args: RateStudyArgs) -> Result<(), CliError> {
    let sources = study_sources(&args)?;
    let penalty_override = args.penalty.build()?;
    fs::create_dir_all(&args.out_dir).map_err(|e| io_err(&args.out_dir, e))?;

    // independent solves fan out over the pool; collect() preserves the
    // instance order, so the merge is deterministic
    let dims = (args.n, args.p, args.k);
    let rows: Vec<StudyRow> = sources
        .par_iter()
        .enumerate()
        .map(|(index, source)| run_study_case(index, source, dims, penalty_override, &args.solver))
        .collect();

    let mut csv = String::from("index,source,status,iterations,f_final,kind,rate,fit_r2,window_start,window_end,error\n");
    for row in &rows {
        let (kind, rate, r2, w0, w1) = match &row.rate {
            Some(r) => (
                format!("{:?}", r.kind).to_lowercase(),
                r.rate.map(format_f64).unwrap_or_default(),
                r.fit_r2.map(format_f64).unwrap_or_default(),
                r.window.0.to_string(),
                r.window.1.to_string(),
            ),
            None => (String::new(), String::new(), String::new(), String::new(), String::new()),
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.index,
            row.label,
            row.status.map(|s| s.to_string()).unwrap_or_default(),
            row.iterations,
            if row.f_final.is_nan() { String::new() } else { format_f64(row.f_final) },
            kind,
            rate,
            r2,
            w0,
            w1,
            row.error.clone().unwrap_or_default().replace(',', ";"),
        ));
    }
    let rates_path = args.out_dir.join("rates.csv");
    fs::write(&rates_path, csv).map_err(|e| io_err(&rates_path, e))?;

    let total = rows.len();
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let count_kind = |k: RateKind| {
        rows.iter()
            .filter(|r| r.rate.as_ref().map(|e| e.kind) == Some(k))
            .count()
    };
    let n_finite = count_kind(RateKind::Finite);
    let n_linear = count_kind(RateKind::Linear);
    let mut linear_rates: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.rate.as_ref())
        .filter(|e| e.kind == RateKind::Linear)
        .filter_map(|e| e.rate)
        .collect();
    linear_rates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let summary = StudySummary {
        total,
        failed,
        n_finite,
        n_linear,
        n_sublinear: count_kind(RateKind::Sublinear),
        n_inconclusive: count_kind(RateKind::Inconclusive),
        fraction_finite: n_finite as f64 / total.max(1) as f64,
        fraction_linear: n_linear as f64 / total.max(1) as f64,
        median_linear_rate: if linear_rates.is_empty() {
            None
        } else {
            Some(linear_rates[linear_rates.len() / 2])
        },
    };
    let summary_path = args.out_dir.join("summary.json");
    let body = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(&summary_path, body + "\n").map_err(|e| io_err(&summary_path, e))?;

    println!(
        "{total} instances: {n_finite} finite, {n_linear} linear, {} sublinear, {} inconclusive, {failed} failed -> {}",
        summary.n_sublinear,
        summary.n_inconclusive,
        rates_path.display()
    );
    Ok(())
}
