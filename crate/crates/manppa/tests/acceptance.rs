//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured quantities (run with `--nocapture` to see them all).
//!
//! The solve batches are shared between criteria through `OnceLock` so the
//! whole suite performs each batch once.

use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use manppa::data::generate_planted;
use manppa::diagnostics::{check_potential_descent, estimate_rate, weak_sharp_check, RateKind};
use manppa::geometry::{
    lipschitz_modulus, operator_norm, retract, smallest_singular_value, tangent_project,
    SpherePoint,
};
use manppa::penalty::Penalty;
use manppa::solver::{
    default_x0, manppa_rw, objective_f, ProblemInstance, SolveResult, SolverConfig, SolverStatus,
};
use manppa::subproblem::{brute_force_subproblem, solve_subproblem, SubproblemSpec};
use manppa::RateEstimate;

const N: usize = 10;
const P: usize = 40;
const K: usize = 3;
const SEEDS: u64 = 20;

fn penalty_set() -> [(&'static str, Penalty); 4] {
    [
        ("l1", Penalty::l1()),
        ("scad", Penalty::scad(1.0, 3.7).unwrap()),
        ("mcp", Penalty::mcp(1.0, 2.0).unwrap()),
        ("log", Penalty::log(1.0, 0.1).unwrap()),
    ]
}

struct DescentRun {
    penalty_name: &'static str,
    seed: u64,
    instance: ProblemInstance,
    result: SolveResult,
}

/// Criteria 1, 2, 8, 9 share these 20 x 4 solves.
fn descent_runs() -> &'static (Vec<DescentRun>, f64) {
    static RUNS: OnceLock<(Vec<DescentRun>, f64)> = OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let mut runs = Vec::new();
        for (penalty_name, penalty) in penalty_set() {
            for seed in 0..SEEDS {
                let planted = generate_planted(N, P, K, penalty, seed).expect("generation");
                let cfg = SolverConfig {
                    t_fraction: 0.5,
                    seed,
                    ..SolverConfig::default()
                };
                let result = manppa_rw(&planted.instance, &cfg).expect("solve");
                runs.push(DescentRun {
                    penalty_name,
                    seed,
                    instance: planted.instance,
                    result,
                });
            }
        }
        (runs, start.elapsed().as_secs_f64())
    })
}

/// Criteria 6 and 7 share these 20 l1 solves.
fn l1_rate_runs() -> &'static (Vec<(ProblemInstance, SolveResult, RateEstimate)>, f64) {
    static RUNS: OnceLock<(Vec<(ProblemInstance, SolveResult, RateEstimate)>, f64)> =
        OnceLock::new();
    RUNS.get_or_init(|| {
        let start = Instant::now();
        let mut runs = Vec::new();
        for seed in 0..SEEDS {
            let planted = generate_planted(N, P, K, Penalty::l1(), seed).expect("generation");
            // positive optimal value: full row rank makes min ||Y^T x||_1 > 0
            let sigma_min = smallest_singular_value(&planted.instance.y, 1e-10);
            assert!(
                sigma_min > 1e-8,
                "criterion 6 FAIL: seed {seed} is rank deficient (sigma_min = {sigma_min:e})"
            );
            let cfg = SolverConfig {
                seed,
                ..SolverConfig::default()
            };
            let result = manppa_rw(&planted.instance, &cfg).expect("solve");
            let rate = estimate_rate(&result.trace, Some(&result.x_final), cfg.finite_tol);
            runs.push((planted.instance, result, rate));
        }
        (runs, start.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_01_objective_descent() {
    let (runs, elapsed) = descent_runs();
    let mut worst: f64 = f64::NEG_INFINITY;
    for run in runs {
        for rec in &run.result.trace {
            let margin = rec.descent_slack - 10.0 * rec.inner_tol;
            worst = worst.max(margin);
            assert!(
                margin <= 0.0,
                "criterion 1 FAIL: {} seed {} k {}: slack {:e} > 10 x {:e}",
                run.penalty_name,
                run.seed,
                rec.k,
                rec.descent_slack,
                rec.inner_tol
            );
        }
    }
    assert!(
        *elapsed < 60.0,
        "criterion 1 FAIL: descent suite took {elapsed:.1} s (budget 60 s)"
    );
    println!(
        "criterion 1 (objective descent, 80 runs): PASS — worst slack margin {worst:.3e}, suite {elapsed:.1} s"
    );
}

#[test]
fn criterion_02_potential_descent() {
    let (runs, _) = descent_runs();
    let mut worst: f64 = f64::NEG_INFINITY;
    for run in runs {
        let report =
            check_potential_descent(&run.instance, &run.result.trace, run.result.t, run.result.lipschitz);
        for step in &report.steps {
            let rec = &run.result.trace[step.k];
            worst = worst.max(step.slack - 10.0 * rec.inner_tol);
            assert!(
                step.pass,
                "criterion 2 FAIL: {} seed {} k {}: slack {:e}, recompute dev {:?}",
                run.penalty_name, run.seed, step.k, step.slack, step.recompute_deviation
            );
        }
    }
    println!("criterion 2 (potential descent, 80 runs): PASS — worst slack margin {worst:.3e}");
}

#[test]
fn criterion_03_subproblem_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let penalties = penalty_set();
    let mut worst_d: f64 = 0.0;
    let mut worst_obj: f64 = 0.0;
    for trial in 0..200 {
        let n = 2 + (rng.next_u32() as usize) % 5; // 2..=6
        let p = 1 + (rng.next_u32() as usize) % 8; // 1..=8
        let y = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let x =
            SpherePoint::new(DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))).unwrap();
        let (_, penalty) = penalties[trial % 4];
        let u = penalty
            .weights(&(y.transpose() * x.coords()).abs())
            .unwrap();
        let l_f = lipschitz_modulus(&penalty, &y).max(1e-9);
        let frac: f64 = rng.random_range(0.05..0.95);
        let t = frac * 2.0 / l_f;
        let spec = SubproblemSpec::new(x, u, t, y).unwrap();

        let cert = solve_subproblem(&spec, 1e-10).expect("inner solve");
        let (d_oracle, obj_oracle) = brute_force_subproblem(&spec).expect("oracle");
        let obj = manppa::subproblem::subproblem_objective(&spec, &cert.d);

        let d_err = (&cert.d - &d_oracle).norm() / (1.0 + d_oracle.norm());
        let obj_err = (obj - obj_oracle).abs() / (1.0 + obj_oracle.abs());
        worst_d = worst_d.max(d_err);
        worst_obj = worst_obj.max(obj_err);
        assert!(
            d_err <= 1e-6,
            "criterion 3 FAIL: trial {trial}: step mismatch {d_err:e}"
        );
        assert!(
            obj_err <= 1e-8,
            "criterion 3 FAIL: trial {trial}: objective mismatch {obj_err:e}"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(
        elapsed < 30.0,
        "criterion 3 FAIL: took {elapsed:.1} s (budget 30 s)"
    );
    println!(
        "criterion 3 (oracle equivalence, 200 specs): PASS — worst step err {worst_d:.2e}, worst obj err {worst_obj:.2e}, {elapsed:.1} s"
    );
}

#[test]
fn criterion_04_geometry_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    // retraction bounds on 1000 random tangent pairs
    let mut worst_first: f64 = f64::NEG_INFINITY;
    let mut worst_second: f64 = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let n = 2 + (rng.next_u32() as usize) % 9;
        let x =
            SpherePoint::new(DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng))).unwrap();
        let d = tangent_project(&x, &DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)));
        let r = retract(&x, &d);
        let dn = d.norm();
        let first = (r.coords() - x.coords()).norm() - dn;
        let second = (r.coords() - (x.coords() + &d)).norm() - 0.5 * dn * dn;
        worst_first = worst_first.max(first);
        worst_second = worst_second.max(second);
        assert!(first <= 1e-10, "criterion 4 FAIL: first-order bound violated by {first:e}");
        assert!(
            second <= 1e-10,
            "criterion 4 FAIL: second-order bound violated by {second:e}"
        );
    }

    // Lipschitz bound per penalty on 1000 unit pairs
    let mut worst_lip: f64 = f64::NEG_INFINITY;
    for (name, penalty) in penalty_set() {
        let planted = generate_planted(N, P, K, penalty, 424_242).unwrap();
        let inst = &planted.instance;
        let l_f = lipschitz_modulus(&penalty, &inst.y);
        for _ in 0..1000 {
            let a = SpherePoint::new(DVector::from_fn(N, |_, _| StandardNormal.sample(&mut rng)))
                .unwrap();
            let b = SpherePoint::new(DVector::from_fn(N, |_, _| StandardNormal.sample(&mut rng)))
                .unwrap();
            let gap = (objective_f(inst, &a) - objective_f(inst, &b)).abs()
                - l_f * (a.coords() - b.coords()).norm();
            worst_lip = worst_lip.max(gap);
            assert!(
                gap <= 1e-10,
                "criterion 4 FAIL: {name}: Lipschitz bound violated by {gap:e}"
            );
        }
    }
    println!(
        "criterion 4 (geometry bounds): PASS — worst retraction margins {worst_first:.2e}/{worst_second:.2e}, worst Lipschitz margin {worst_lip:.2e}"
    );
}

#[test]
fn criterion_05_fenchel_young() {
    // scalar identity on a 100-point grid per penalty
    let mut worst: f64 = 0.0;
    for (name, penalty) in penalty_set() {
        for j in 0..100 {
            let q = 8.0 * (j as f64) / 99.0;
            let u = penalty.phi_rderiv(q).unwrap();
            let conj = penalty
                .psi_conjugate(-u)
                .unwrap()
                .expect_finite("attained conjugate");
            let err = (conj + u * q - penalty.phi(q).unwrap()).abs();
            worst = worst.max(err);
            assert!(
                err <= 1e-9,
                "criterion 5 FAIL: {name} at q = {q}: residual {err:e}"
            );
        }
    }

    // tightness of the potential at the reweighting vector, 100 random x
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst_pt: f64 = 0.0;
    for (name, penalty) in penalty_set() {
        let planted = generate_planted(N, P, K, penalty, 31).unwrap();
        let inst = &planted.instance;
        for _ in 0..100 {
            let x = SpherePoint::new(DVector::from_fn(N, |_, _| StandardNormal.sample(&mut rng)))
                .unwrap();
            let u = penalty
                .weights(&(inst.y.transpose() * x.coords()).abs())
                .unwrap();
            let pt = manppa::diagnostics::potential_tilde(inst, &x, &u)
                .expect_finite("potential at reweighting vector");
            let err = (pt - objective_f(inst, &x)).abs();
            worst_pt = worst_pt.max(err);
            assert!(err <= 1e-9, "criterion 5 FAIL: {name}: potential gap {err:e}");
        }
    }
    println!(
        "criterion 5 (Fenchel-Young): PASS — worst scalar residual {worst:.2e}, worst potential gap {worst_pt:.2e}"
    );
}

#[test]
fn criterion_06_linear_or_finite_rate() {
    let (runs, elapsed) = l1_rate_runs();
    let mut classified = 0;
    let mut kinds = Vec::new();
    for (i, (_, _, rate)) in runs.iter().enumerate() {
        kinds.push(format!("{i}:{:?}", rate.kind));
        match rate.kind {
            RateKind::Finite => classified += 1,
            RateKind::Linear => {
                let r2 = rate.fit_r2.unwrap_or(0.0);
                assert!(
                    r2 >= 0.9,
                    "criterion 6 FAIL: run {i} linear fit r2 = {r2}"
                );
                classified += 1;
            }
            _ => {}
        }
    }
    assert!(
        classified >= 18,
        "criterion 6 FAIL: only {classified}/20 runs classified Linear or Finite: {kinds:?}"
    );
    assert!(
        *elapsed < 120.0,
        "criterion 6 FAIL: rate suite took {elapsed:.1} s (budget 120 s)"
    );
    println!(
        "criterion 6 (linear/finite rate): PASS — {classified}/20 classified, suite {elapsed:.1} s"
    );
}

#[test]
fn criterion_07_finite_convergence_under_weak_sharpness() {
    let (runs, _) = l1_rate_runs();
    let grid = [1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.2, 0.5, 1.0];
    let mut qualifying = 0;
    let mut finite = 0;
    for (inst, result, _) in runs {
        let sharp = weak_sharp_check(inst, &result.x_final, &grid, 0.1, 200, 777);
        if let Some((alpha, _)) = sharp {
            if alpha > 0.0 {
                qualifying += 1;
                if result.status == SolverStatus::FiniteConvergence {
                    finite += 1;
                }
            }
        }
    }
    assert!(
        qualifying > 0,
        "criterion 7 FAIL: no run passed the weak-sharpness sampling check"
    );
    let fraction = finite as f64 / qualifying as f64;
    assert!(
        fraction >= 0.8,
        "criterion 7 FAIL: {finite}/{qualifying} weakly-sharp runs finished finitely"
    );
    println!(
        "criterion 7 (finite convergence): PASS — {finite}/{qualifying} weakly-sharp runs reached ||d|| <= 1e-13"
    );
}

#[test]
fn criterion_08_stationarity_bound() {
    let (runs, _) = descent_runs();
    let tol_d = SolverConfig::default().tol_d;
    let mut worst_ratio_seen: f64 = 0.0;
    for run in runs {
        let t = run.result.t;
        let mut max_ratio: f64 = 0.0;
        for rec in &run.result.trace {
            if rec.d_norm > tol_d {
                let ratio = rec.stationarity / rec.d_norm;
                assert!(
                    ratio.is_finite(),
                    "criterion 8 FAIL: {} seed {} k {}: ratio not finite",
                    run.penalty_name,
                    run.seed,
                    rec.k
                );
                max_ratio = max_ratio.max(ratio);
            }
        }
        worst_ratio_seen = worst_ratio_seen.max(max_ratio);
        let final_stat = run.result.trace.last().unwrap().stationarity;
        let bound = (max_ratio + 1.0 / t) * tol_d;
        assert!(
            final_stat <= bound,
            "criterion 8 FAIL: {} seed {}: final stationarity {:e} > {:e}",
            run.penalty_name,
            run.seed,
            final_stat,
            bound
        );
    }
    println!(
        "criterion 8 (stationarity bound): PASS — max observed ratio {worst_ratio_seen:.3e}"
    );
}

#[test]
fn criterion_09_lambda_boundedness() {
    let (runs, _) = descent_runs();
    let mut worst_margin: f64 = f64::NEG_INFINITY;
    for run in runs {
        let y_norm = operator_norm(&run.instance.y, 1e-10);
        let mut x_prev = run.result.x_initial.clone();
        for rec in &run.result.trace {
            let u = run
                .instance
                .penalty
                .weights(&(run.instance.y.transpose() * x_prev.coords()).abs())
                .unwrap();
            let bound = y_norm * u.norm();
            worst_margin = worst_margin.max(rec.lambda.abs() - bound);
            assert!(
                rec.lambda.abs() <= bound + 1e-12,
                "criterion 9 FAIL: {} seed {} k {}: |lambda| = {:e} > {:e}",
                run.penalty_name,
                run.seed,
                rec.k,
                rec.lambda.abs(),
                bound
            );
            x_prev = rec.x.clone();
        }
    }
    println!("criterion 9 (lambda bound): PASS — worst margin {worst_margin:.3e}");
}

#[test]
fn criterion_10_deterministic_traces() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("inst");
    let planted = generate_planted(N, P, K, Penalty::l1(), 5).unwrap();
    manppa::data::save_instance(&planted, &base).unwrap();

    let run = |out: &std::path::Path| {
        let code = manppa::cli::main_with_args([
            "manppa",
            "solve",
            "--instance",
            base.to_str().unwrap(),
            "--seed",
            "7",
            "--t-fraction",
            "0.5",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "criterion 10 FAIL: solve exited with {code}");
        std::fs::read(out.join("trace.csv")).unwrap()
    };
    let first = run(&dir.path().join("run1"));
    let second = run(&dir.path().join("run2"));
    assert_eq!(
        first, second,
        "criterion 10 FAIL: consecutive runs produced different trace bytes"
    );
    println!(
        "criterion 10 (determinism): PASS — {} identical trace bytes across two runs",
        first.len()
    );
}

/// Sanity check shared by several criteria: every solve in the descent
/// suite actually terminated by step size, not by the iteration cap.
#[test]
fn descent_suite_all_converged() {
    let (runs, _) = descent_runs();
    for run in runs {
        assert!(
            run.result.status != SolverStatus::MaxIter,
            "{} seed {} hit max_iter ({} iterations, last d = {:e})",
            run.penalty_name,
            run.seed,
            run.result.iterations(),
            run.result.trace.last().unwrap().d_norm
        );
    }
    let statuses: Vec<usize> = [SolverStatus::Converged, SolverStatus::FiniteConvergence]
        .iter()
        .map(|s| runs.iter().filter(|r| r.result.status == *s).count())
        .collect();
    println!(
        "descent suite: {} converged, {} finite-convergence",
        statuses[0], statuses[1]
    );
}

#[test]
fn rate_suite_recovery_quality() {
    // warm-started solves recover the planted direction itself
    let planted = generate_planted(N, P, K, Penalty::l1(), 1).unwrap();
    let x0 = SpherePoint::new(
        planted.x_star.coords() * 0.95 + default_x0(&planted.instance, 9).coords() * 0.05,
    )
    .unwrap();
    let cfg = SolverConfig {
        x0: Some(x0),
        ..SolverConfig::default()
    };
    let result = manppa_rw(&planted.instance, &cfg).unwrap();
    let align = result.x_final.coords().dot(planted.x_star.coords()).abs();
    assert!(align >= 1.0 - 1e-8, "alignment {align}");
    println!("planted recovery from warm start: alignment {align:.12}");
}
