//! Acceptance suite. Each test runs one criterion at its stated tolerance
//! and prints a single pass/fail line (visible with `--nocapture`).

mod common;

use std::time::Instant;

use kernel_infer::basis::{constraint_value, interpolate, SplineModel, SplineSpace};
use kernel_infer::diagnostics::{
    self, convolution_lipschitz_check, discrete_coercivity, estimate_ct, fixtures,
    random_matrix_mc, trajectory_bound_check, Misfit,
};
use kernel_infer::dynamics::{
    builtin_kernels, constant_kernel, eval_force, finite_difference_velocities,
    model_velocities, sample_initial, sample_initial_stream, simulate, trunc_lj,
    trunc_lj_default, Kernel,
};
use kernel_infer::learn::{
    assemble, error_functional, learn_kernel, m_sweep, minimize, space_for_trajectory,
    LearnProblem,
};
use kernel_infer::measures::{empirical_rho, wasserstein1, DiscreteMeasure};
use kernel_infer::rng::seeded_rng;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !($cond) {
            return Err(format!($($arg)+));
        }
    };
}

fn criterion(number: usize, name: &str, check: impl FnOnce() -> Result<(), String>) {
    let started = Instant::now();
    let outcome = check();
    let elapsed = started.elapsed().as_secs_f64();
    match outcome {
        Ok(()) => println!("acceptance criterion {number} ({name}): PASS [{elapsed:.2}s]"),
        Err(message) => {
            println!("acceptance criterion {number} ({name}): FAIL [{elapsed:.2}s] - {message}");
            panic!("criterion {number} ({name}) failed: {message}");
        }
    }
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-30)
}

#[test]
fn criterion_1_coercivity_identities() {
    criterion(1, "coercivity identities", || {
        let started = Instant::now();
        let mut rng = seeded_rng(811);
        let mut n2_constants = Vec::new();
        for _ in 0..100 {
            let r = rng.random_range(0.2..2.8);
            let (alpha, beta, gamma) =
                (rng.random_range(-1.5..1.5), rng.random_range(0.5..4.0), rng.random_range(-0.8..0.8));
            let misfit =
                Misfit::from_weighted_gap(move |s| alpha * (beta * s).sin() + gamma * s);

            // Equilateral triangle of side r.
            let triangle = fixtures::equilateral_triangle(r, 1.0, 2);
            let report = discrete_coercivity(&triangle, &misfit);
            let k = misfit.eval(r);
            ensure!(
                rel_close(report.lhs, k * k / 3.0, 1e-12),
                "triangle identity broke at r = {r}: lhs = {}, K(r)^2/3 = {}",
                report.lhs,
                k * k / 3.0
            );

            // Square of side sqrt(2) r.
            let square = fixtures::square(r, 1.0, 2);
            let report = discrete_coercivity(&square, &misfit);
            let term = misfit.eval(2.0 * r) + 2.0f64.sqrt() * misfit.eval(2.0f64.sqrt() * r);
            ensure!(
                rel_close(report.lhs, term * term / 16.0, 1e-12),
                "square identity broke at r = {r}: lhs = {}, expected {}",
                report.lhs,
                term * term / 16.0
            );

            // Two particles anywhere: ratio from the literal brute-force sums.
            let x1 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let mut x2 = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            if x1 == x2 {
                x2[0] += 1.0;
            }
            let pair = fixtures::two_particles(2, &x1, &x2, 1.0, 1);
            let report = discrete_coercivity(&pair, &misfit);
            let dist = ((x1[0] - x2[0]).powi(2) + (x1[1] - x2[1]).powi(2)).sqrt();
            let kv = misfit.eval(dist);
            if kv == 0.0 {
                continue;
            }
            // Literal evaluation of both sides for N = 2.
            let unit = [(x1[0] - x2[0]) / dist, (x1[1] - x2[1]) / dist];
            let term1 = [0.5 * kv * unit[0], 0.5 * kv * unit[1]];
            let lhs_oracle = 0.5
                * ((term1[0] * term1[0] + term1[1] * term1[1])
                    + (term1[0] * term1[0] + term1[1] * term1[1]));
            let rhs_oracle = (kv * kv + kv * kv) / 4.0;
            let oracle_ratio = lhs_oracle / rhs_oracle;
            ensure!(
                rel_close(report.ratio, oracle_ratio, 1e-12),
                "N=2 ratio {} disagrees with oracle {}",
                report.ratio,
                oracle_ratio
            );
            n2_constants.push(report.ratio);
        }
        for pair in n2_constants.windows(2) {
            ensure!(
                rel_close(pair[0], pair[1], 1e-12),
                "N=2 ratio is configuration dependent: {} vs {}",
                pair[0],
                pair[1]
            );
        }
        ensure!(
            rel_close(n2_constants[0], 0.5, 1e-12),
            "N=2 oracle constant drifted from 1/2: {}",
            n2_constants[0]
        );
        let elapsed = started.elapsed().as_secs_f64();
        ensure!(elapsed < 5.0, "runtime {elapsed:.2}s over the 5s budget");
        Ok(())
    });
}

#[test]
fn criterion_2_n_sweep_trend() {
    criterion(2, "N-sweep reconstruction trend", || {
        let started = Instant::now();
        // Truncation cap chosen so the true kernel respects the constraint
        // budget of the protocol (M = 100 needs the nodal interpolant's
        // constraint value below 100; the default cap of 100 puts it near
        // 300, and no feasible competitor can then track the kernel).
        let kernel = trunc_lj(1.0, 1.0, 20.0, 4.0, 0.5);
        let seeds = [101u64, 202, 303, 404, 505];
        let n_values = [10usize, 20, 40, 80];
        let per_seed: Vec<Result<Vec<f64>, String>> = seeds
            .par_iter()
            .map(|&seed| {
                n_values
                    .iter()
                    .map(|&n| {
                        let initial = sample_initial_stream(2, n, 3.0, seed, n as u64);
                        let traj = simulate(&kernel, &initial, 2, 0.5, 50, 10, seed)
                            .map_err(|e| e.to_string())?;
                        let report = learn_kernel(&traj, 2 * n, 100.0, Some(&kernel))
                            .map_err(|e| e.to_string())?;
                        if !report.converged {
                            return Err(format!("solver did not converge at N = {n}"));
                        }
                        Ok(report.l2_rho_error.expect("reference kernel attached"))
                    })
                    .collect()
            })
            .collect();
        let mut wins = 0;
        for (seed, errors) in seeds.iter().zip(per_seed) {
            let errors = errors?;
            println!(
                "  seed {seed}: L2(rho) errors over N = {:?}: {:?}",
                n_values, errors
            );
            if errors[3] < errors[0] {
                wins += 1;
            }
        }
        ensure!(wins >= 4, "error at N=80 beat N=10 for only {wins}/5 seeds");
        let elapsed = started.elapsed().as_secs_f64();
        ensure!(elapsed < 300.0, "runtime {elapsed:.2}s over the 5 min budget");
        Ok(())
    });
}

#[test]
fn criterion_3_m_sweep_monotone_with_plateau() {
    criterion(3, "M-sweep monotonicity and plateau", || {
        let started = Instant::now();
        let kernel = trunc_lj_default();
        let initial = sample_initial_stream(2, 20, 3.0, 7, 0);
        let traj = simulate(&kernel, &initial, 2, 1.0, 50, 10, 7).map_err(|e| e.to_string())?;
        let m_list: Vec<f64> = [10.0f64, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0]
            .iter()
            .map(|m| 2.7 * m)
            .collect();
        let sweep = m_sweep(&traj, 60, &m_list).map_err(|e| e.to_string())?;
        for window in sweep.points.windows(2) {
            ensure!(
                window[1].objective <= window[0].objective + 1e-6,
                "objective increased from {} (M = {}) to {} (M = {})",
                window[0].objective,
                window[0].m_constraint,
                window[1].objective,
                window[1].m_constraint
            );
        }
        let last = sweep.points.last().unwrap().m_constraint;
        ensure!(
            sweep.m_star <= last,
            "plateau onset {} beyond the grid end {last}",
            sweep.m_star
        );
        println!(
            "  objectives: {:?}, M* = {}",
            sweep
                .points
                .iter()
                .map(|p| p.objective)
                .collect::<Vec<_>>(),
            sweep.m_star
        );
        let elapsed = started.elapsed().as_secs_f64();
        ensure!(elapsed < 120.0, "runtime {elapsed:.2}s over the 2 min budget");
        Ok(())
    });
}

#[test]
fn criterion_4_trajectory_bound() {
    criterion(4, "trajectory approximation bound", || {
        let started = Instant::now();
        let mut rng = seeded_rng(4004);
        let mut cases: Vec<(Kernel, Kernel, Vec<f64>, usize, f64)> = Vec::new();
        // Constant kernels with constant shifts.
        for _ in 0..8 {
            let base = rng.random_range(0.3..0.8);
            let shift = rng.random_range(0.05..0.15) * if rng.random::<bool>() { 1.0 } else { -1.0 };
            let d = if rng.random::<bool>() { 1 } else { 2 };
            let n = 5;
            let initial: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            cases.push((
                constant_kernel(base),
                constant_kernel(base + shift),
                initial,
                d,
                0.5,
            ));
        }
        // Smooth bump kernels with smooth perturbations.
        for _ in 0..8 {
            let alpha = rng.random_range(0.2..0.5);
            let beta = rng.random_range(0.05..0.2);
            let reference = Kernel::new("bump", alpha, false, move |r| alpha * (-r * r / 2.0).exp());
            let candidate = Kernel::new("bump_perturbed", alpha + beta, false, move |r| {
                alpha * (-r * r / 2.0).exp() + beta * (r).sin() * (-r * r / 4.0).exp()
            });
            let d = 2;
            let initial: Vec<f64> = (0..5 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            cases.push((reference, candidate, initial, d, 0.5));
        }
        // Truncated Lennard-Jones with a tiny horizon so the constant stays finite.
        for _ in 0..4 {
            let delta = rng.random_range(0.02..0.08);
            let reference = trunc_lj_default();
            let candidate = Kernel::new("lj_perturbed", 100.0 + delta, false, move |r| {
                let q = (1.0f64 / r).powi(4);
                let raw = (q * (q - 1.0)).clamp(-100.0, 100.0);
                let ramp = if r <= 4.0 {
                    1.0
                } else if r >= 4.5 {
                    0.0
                } else {
                    let s = (r - 4.0) / 0.5;
                    1.0 - s * s * (3.0 - 2.0 * s)
                };
                raw * ramp + delta * (r).cos()
            });
            let initial: Vec<f64> = (0..10).map(|_| rng.random_range(-1.5..1.5)).collect();
            cases.push((reference, candidate, initial, 2, 0.001));
        }

        let mut violations = 0;
        for (idx, (reference, candidate, initial, d, t_final)) in cases.iter().enumerate() {
            let check = trajectory_bound_check(reference, candidate, initial, *d, *t_final, 50, 5)
                .map_err(|e| e.to_string())?;
            ensure!(
                check.bound.is_finite(),
                "case {idx}: Gronwall bound overflowed (constant {})",
                check.constant
            );
            if !check.holds() {
                violations += 1;
                println!(
                    "  case {idx} violated: deviation {} > bound {}",
                    check.deviation, check.bound
                );
            }
        }
        ensure!(violations == 0, "{violations}/20 bound violations");
        let elapsed = started.elapsed().as_secs_f64();
        ensure!(elapsed < 60.0, "runtime {elapsed:.2}s over the 1 min budget");
        Ok(())
    });
}

/// Exhaustive grid search over the feasible coefficient box with step 1e-3.
fn grid_search_objective(problem: &LearnProblem) -> f64 {
    let dim = problem.space().dim();
    assert!(dim <= 3, "grid oracle only meant for D <= 3");
    let m = problem.constraint();
    let half = m / 2.0;
    let step = 1e-3;
    let count = (2.0 * half / step).round() as usize + 1;
    let c = problem.matrix();
    let v = problem.velocity_vector();
    let scale = problem.scale();
    let objective = |a: &[f64]| -> f64 {
        let mut total = 0.0;
        for row in 0..c.nrows() {
            let mut residual = -v[row];
            for (col, coeff) in a.iter().enumerate() {
                residual += c[(row, col)] * coeff;
            }
            total += residual * residual;
        }
        scale * total
    };
    let feasible = |a: &[f64]| -> bool {
        let max_abs = a.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let max_diff = a
            .windows(2)
            .fold(0.0f64, |acc, w| acc.max((w[0] - w[1]).abs()));
        2.0 * max_abs + max_diff <= m
    };
    let coord = |idx: usize| -half + idx as f64 * step;
    let mut best = f64::INFINITY;
    let mut point = vec![0.0f64; dim];
    match dim {
        1 => {
            for i in 0..count {
                point[0] = coord(i);
                if feasible(&point) {
                    best = best.min(objective(&point));
                }
            }
        }
        2 => {
            for i in 0..count {
                point[0] = coord(i);
                for j in 0..count {
                    point[1] = coord(j);
                    if feasible(&point) {
                        best = best.min(objective(&point));
                    }
                }
            }
        }
        _ => {
            for i in 0..count {
                point[0] = coord(i);
                for j in 0..count {
                    point[1] = coord(j);
                    for k in 0..count {
                        point[2] = coord(k);
                        if feasible(&point) {
                            best = best.min(objective(&point));
                        }
                    }
                }
            }
        }
    }
    best
}

#[test]
fn criterion_5_qp_against_grid_oracle() {
    criterion(5, "QP correctness", || {
        let started = Instant::now();
        let mut rng = seeded_rng(5005);

        // Interior-minimum instances: the unconstrained least-squares point
        // is strictly feasible and the curvature is small enough that the
        // 1e-3 grid resolves the objective to 1e-6.
        let mut instances: Vec<LearnProblem> = Vec::new();
        for trial in 0..4 {
            let dim = if trial % 2 == 0 { 2 } else { 3 };
            let rows = 6;
            let c = DMatrix::from_fn(rows, dim, |_, _| rng.random_range(-0.4..0.4));
            let target = DVector::from_fn(dim, |_, _| rng.random_range(-0.02..0.02));
            let noise = DVector::from_fn(rows, |_, _| rng.random_range(-0.005..0.005));
            let v = &c * &target + noise;
            let normal = c.tr_mul(&c) + DMatrix::identity(dim, dim) * 1e-12;
            let ls = normal.lu().solve(&c.tr_mul(&v)).unwrap();
            let m = 1.5 * constraint_value(ls.as_slice());
            let space = SplineSpace::new(1.0, dim).unwrap();
            instances.push(LearnProblem::from_parts(c, v, 1.0 / rows as f64, space, m));
        }
        // Boundary instances whose constrained minimizer is a grid point.
        {
            let space = SplineSpace::new(1.0, 2).unwrap();
            let c = DMatrix::identity(2, 2);
            let t = DVector::from_row_slice(&[0.02 + 3.0 * 0.004, 0.01 - 0.004]);
            instances.push(LearnProblem::from_parts(c, t, 0.5, space, 0.05));
        }
        {
            let space = SplineSpace::new(1.0, 3).unwrap();
            let c = DMatrix::identity(3, 3);
            let t = DVector::from_row_slice(&[0.02 + 3.0 * 0.003, 0.012 - 0.003, 0.008]);
            instances.push(LearnProblem::from_parts(c, t, 1.0 / 3.0, space, 0.048));
        }
        // Rank-deficient instance: one basis function never touched.
        {
            let space = SplineSpace::new(1.0, 3).unwrap();
            let mut c = DMatrix::zeros(4, 3);
            for row in 0..4 {
                c[(row, 0)] = rng.random_range(-0.4..0.4);
                c[(row, 1)] = rng.random_range(-0.4..0.4);
            }
            let v = DVector::from_fn(4, |_, _| rng.random_range(-0.02..0.02));
            instances.push(LearnProblem::from_parts(c, v, 0.25, space, 0.1));
        }

        for (idx, problem) in instances.iter().enumerate() {
            let report = minimize(problem);
            ensure!(report.converged, "instance {idx} did not converge");
            ensure!(
                report.kkt_residual <= 1e-9,
                "instance {idx}: KKT residual {}",
                report.kkt_residual
            );
            let grid_best = grid_search_objective(problem);
            ensure!(
                (report.objective - grid_best).abs() <= 1e-6,
                "instance {idx}: objective {} vs grid {}",
                report.objective,
                grid_best
            );
        }

        // KKT residuals on 100 random instances.
        for trial in 0..100 {
            let dim = rng.random_range(2..=8usize);
            let rows = 3 * dim;
            let c = DMatrix::from_fn(rows, dim, |_, _| rng.random_range(-1.0..1.0));
            let v = DVector::from_fn(rows, |_, _| rng.random_range(-1.0..1.0));
            let m = [0.2, 1.0, 5.0, 25.0][trial % 4];
            let space = SplineSpace::new(1.0, dim).unwrap();
            let problem = LearnProblem::from_parts(c, v, 1.0 / rows as f64, space, m);
            let report = minimize(&problem);
            ensure!(report.converged, "random instance {trial} did not converge");
            ensure!(
                report.kkt_residual <= 1e-9,
                "random instance {trial}: KKT residual {}",
                report.kkt_residual
            );
            ensure!(
                constraint_value(report.model.coeffs()) <= m + 1e-9,
                "random instance {trial}: infeasible result"
            );
        }
        let elapsed = started.elapsed().as_secs_f64();
        ensure!(elapsed < 60.0, "runtime {elapsed:.2}s over the 1 min budget");
        Ok(())
    });
}

#[test]
fn criterion_6_optimal_transport_oracles() {
    criterion(6, "exact optimal transport", || {
        let started = Instant::now();
        let mut rng = seeded_rng(6006);

        // General weights against spanning-tree enumeration, supports <= 5
        // per side (plus 6x4), exact to 1e-10.
        let mut shapes: Vec<(usize, usize)> = (1..=5)
            .flat_map(|p| (1..=5).map(move |q| (p, q)))
            .collect();
        shapes.push((6, 4));
        shapes.push((4, 6));
        for &(p, q) in &shapes {
            let mu_pts: Vec<f64> = (0..2 * p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let nu_pts: Vec<f64> = (0..2 * q).map(|_| rng.random_range(-2.0..2.0)).collect();
            let raw_mu: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..1.0)).collect();
            let raw_nu: Vec<f64> = (0..q).map(|_| rng.random_range(0.1..1.0)).collect();
            let mass_mu: f64 = raw_mu.iter().sum();
            let mass_nu: f64 = raw_nu.iter().sum();
            let w_mu: Vec<f64> = raw_mu.iter().map(|w| w / mass_mu).collect();
            let w_nu: Vec<f64> = raw_nu.iter().map(|w| w / mass_nu).collect();
            let mu = DiscreteMeasure::new(2, mu_pts.clone(), w_mu.clone()).unwrap();
            let nu = DiscreteMeasure::new(2, nu_pts.clone(), w_nu.clone()).unwrap();
            let via_simplex = wasserstein1(&mu, &nu).map_err(|e| e.to_string())?;
            let mut cost = Vec::with_capacity(p * q);
            for i in 0..p {
                for j in 0..q {
                    let dx = mu_pts[2 * i] - nu_pts[2 * j];
                    let dy = mu_pts[2 * i + 1] - nu_pts[2 * j + 1];
                    cost.push((dx * dx + dy * dy).sqrt());
                }
            }
            let oracle = common::transport_lp_by_enumeration(&w_mu, &w_nu, &cost);
            ensure!(
                (via_simplex - oracle).abs() <= 1e-10,
                "({p},{q}): simplex {via_simplex} vs enumeration {oracle}"
            );
        }

        // Equal weights up to 6 atoms per side against permutation couplings.
        for n in [2usize, 4, 5, 6] {
            let mu_pts: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let nu_pts: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mu = DiscreteMeasure::uniform_on(&mu_pts, 2).unwrap();
            let nu = DiscreteMeasure::uniform_on(&nu_pts, 2).unwrap();
            let via_simplex = wasserstein1(&mu, &nu).map_err(|e| e.to_string())?;
            let mut cost = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let dx = mu_pts[2 * i] - nu_pts[2 * j];
                    let dy = mu_pts[2 * i + 1] - nu_pts[2 * j + 1];
                    cost.push((dx * dx + dy * dy).sqrt());
                }
            }
            let oracle = common::transport_by_permutations(n, &cost);
            ensure!(
                (via_simplex - oracle).abs() <= 1e-10,
                "equal weights n = {n}: simplex {via_simplex} vs permutations {oracle}"
            );
        }

        // The 1D sorted computation against the LP on 100 random
        // equal-weight instances (embedding the line in the plane).
        for trial in 0..100 {
            let n = rng.random_range(2..20usize);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mu1 = DiscreteMeasure::uniform_on(&a, 1).unwrap();
            let nu1 = DiscreteMeasure::uniform_on(&b, 1).unwrap();
            let sorted_value = wasserstein1(&mu1, &nu1).map_err(|e| e.to_string())?;
            let embed = |pts: &[f64]| -> Vec<f64> {
                pts.iter().flat_map(|x| [*x, 0.0]).collect()
            };
            let mu2 = DiscreteMeasure::uniform_on(&embed(&a), 2).unwrap();
            let nu2 = DiscreteMeasure::uniform_on(&embed(&b), 2).unwrap();
            let lp_value = wasserstein1(&mu2, &nu2).map_err(|e| e.to_string())?;
            ensure!(
                (sorted_value - lp_value).abs() <= 1e-10,
                "trial {trial}: 1D sweep {sorted_value} vs LP {lp_value}"
            );
        }
        let elapsed = started.elapsed().as_secs_f64();
        ensure!(elapsed < 30.0, "runtime {elapsed:.2}s over the 30s budget");
        Ok(())
    });
}

#[test]
fn criterion_7_functional_consistency() {
    criterion(7, "error functional consistency", || {
        let started = Instant::now();
        let mut rng = seeded_rng(7007);

        // Assembled evaluation against the direct double-sum on 20 random
        // trajectories.
        for trial in 0..20 {
            let d = if trial % 2 == 0 { 1 } else { 2 };
            let n = rng.random_range(3..6usize);
            let m = rng.random_range(2..5usize);
            let kernel = match trial % 3 {
                0 => constant_kernel(rng.random_range(0.2..1.0)),
                1 => trunc_lj_default(),
                _ => {
                    let a = rng.random_range(0.2..0.6);
                    Kernel::new("bump", a, false, move |r: f64| a * (-r * r / 3.0).exp())
                }
            };
            let initial: Vec<f64> = (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let traj = simulate(&kernel, &initial, d, 0.4, m, 6, 0).map_err(|e| e.to_string())?;
            let dim = rng.random_range(4..9usize);
            let space = space_for_trajectory(&traj, dim).map_err(|e| e.to_string())?;
            let problem = assemble(&traj, &space, 10.0).map_err(|e| e.to_string())?;
            let coeffs: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let model = SplineModel::new(space.clone(), coeffs.clone(), 10.0).unwrap();
            let velocities = finite_difference_velocities(&traj);
            let via_matrix = error_functional(&problem, &coeffs);
            let direct = diagnostics::direct_error_functional(&traj, &model, &velocities);
            ensure!(
                rel_close(via_matrix, direct, 1e-10),
                "trial {trial}: assembled {via_matrix} vs direct {direct}"
            );
        }

        // Halving the snapshot step shrinks E at the interpolated true
        // kernel by a factor close to 4 (the kernels below are reproduced
        // exactly by the linear spline space, so only the backward
        // difference error remains).
        let linear = Kernel::new("linear", 10.0, false, |r: f64| 0.4 * r);
        for kernel in [constant_kernel(1.0), linear] {
            let initial = sample_initial(2, 6, 1.0, 17);
            let fine = simulate(&kernel, &initial, 2, 0.5, 40, 10, 17).map_err(|e| e.to_string())?;
            let coarse = fine.subsample(2).map_err(|e| e.to_string())?;
            let space = space_for_trajectory(&fine, 12).map_err(|e| e.to_string())?;
            let interp = interpolate(&kernel, &space);
            let e_fine = error_functional(
                &assemble(&fine, &space, 100.0).map_err(|e| e.to_string())?,
                interp.coeffs(),
            );
            let e_coarse = error_functional(
                &assemble(&coarse, &space, 100.0).map_err(|e| e.to_string())?,
                interp.coeffs(),
            );
            let ratio = e_coarse / e_fine;
            ensure!(
                (3.0..=5.0).contains(&ratio),
                "kernel {}: step-halving ratio {ratio} outside [3, 5]",
                kernel.name()
            );
        }
        let elapsed = started.elapsed().as_secs_f64();
        ensure!(elapsed < 60.0, "runtime {elapsed:.2}s");
        Ok(())
    });
}

#[test]
fn criterion_8_random_matrix_model() {
    criterion(8, "random matrix coercivity model", || {
        let (mean, stderr) = random_matrix_mc(50, 2, 10_000, 90);
        ensure!(stderr > 0.0, "degenerate standard error");
        ensure!(
            (mean - 1.0).abs() <= 5.0 * stderr,
            "mean {mean} is {} standard errors from 1",
            (mean - 1.0).abs() / stderr
        );
        println!("  mean = {mean:.6}, stderr = {stderr:.2e}");
        Ok(())
    });
}

#[test]
fn criterion_9_invariant_suite() {
    criterion(9, "invariant suite", || {
        let mut rng = seeded_rng(9009);

        // Spline partition of unity.
        let space = SplineSpace::new(rng.random_range(0.5..3.0), rng.random_range(3..40usize))
            .unwrap();
        let ones = SplineModel::new(space.clone(), vec![1.0; space.dim()], 10.0).unwrap();
        for i in 0..=10_000 {
            let r = space.domain_end() * i as f64 / 10_000.0;
            ensure!(
                (kernel_infer::basis::evaluate(&ones, r) - 1.0).abs() <= 1e-14,
                "partition of unity off at r = {r}"
            );
        }

        // Constraint homogeneity, exact for power-of-two factors.
        let coeffs: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        for factor in [0.5f64, 2.0, 8.0] {
            let scaled: Vec<f64> = coeffs.iter().map(|c| factor * c).collect();
            ensure!(
                constraint_value(&scaled) == factor * constraint_value(&coeffs),
                "homogeneity broke for factor {factor}"
            );
        }

        // rho_bar has unit mass.
        let kernel = trunc_lj_default();
        let initial = sample_initial(2, 6, 2.0, 23);
        let traj = simulate(&kernel, &initial, 2, 0.5, 10, 10, 23).map_err(|e| e.to_string())?;
        let pair = empirical_rho(&traj);
        ensure!(
            (pair.rho_bar.total_mass() - 1.0).abs() <= 1e-12,
            "rho_bar mass {}",
            pair.rho_bar.total_mass()
        );

        // Center of mass conservation.
        let com = |snap: &[f64]| -> [f64; 2] {
            let n = snap.len() / 2;
            let mut c = [0.0f64; 2];
            for i in 0..n {
                c[0] += snap[2 * i] / n as f64;
                c[1] += snap[2 * i + 1] / n as f64;
            }
            c
        };
        let start = com(traj.snapshot(0));
        let end = com(traj.snapshot(traj.interval_count()));
        let scale = traj.max_radius();
        ensure!(
            (start[0] - end[0]).abs() <= 1e-10 * scale
                && (start[1] - end[1]).abs() <= 1e-10 * scale,
            "center of mass drifted"
        );

        // Sum of all forces vanishes.
        let mut total = [0.0f64; 2];
        for i in 0..6 {
            let f = eval_force(&kernel, i, &initial, 2).map_err(|e| e.to_string())?;
            total[0] += f[0];
            total[1] += f[1];
        }
        ensure!(
            total[0].abs() <= 1e-12 && total[1].abs() <= 1e-12,
            "forces do not balance: {total:?}"
        );

        // Permutation (bit exact), translation, rotation equivariance.
        let small = sample_initial(2, 5, 2.0, 29);
        let mut permuted = vec![0.0; small.len()];
        for i in 0..5 {
            permuted[(4 - i) * 2..(4 - i) * 2 + 2].copy_from_slice(&small[i * 2..i * 2 + 2]);
        }
        let base = simulate(&kernel, &small, 2, 0.4, 8, 5, 29).map_err(|e| e.to_string())?;
        let perm = simulate(&kernel, &permuted, 2, 0.4, 8, 5, 29).map_err(|e| e.to_string())?;
        for k in 0..=8 {
            for i in 0..5 {
                ensure!(
                    base.position(k, i) == perm.position(k, 4 - i),
                    "permutation equivariance not bit exact at snapshot {k}"
                );
            }
        }
        let shifted: Vec<f64> = small
            .iter()
            .enumerate()
            .map(|(idx, v)| v + if idx % 2 == 0 { 0.8 } else { -0.6 })
            .collect();
        let trans = simulate(&kernel, &shifted, 2, 0.4, 8, 5, 29).map_err(|e| e.to_string())?;
        let (cos, sin) = (0.9f64.cos(), 0.9f64.sin());
        let rotated: Vec<f64> = (0..5)
            .flat_map(|i| {
                let p = &small[2 * i..2 * i + 2];
                [cos * p[0] - sin * p[1], sin * p[0] + cos * p[1]]
            })
            .collect();
        let rot = simulate(&kernel, &rotated, 2, 0.4, 8, 5, 29).map_err(|e| e.to_string())?;
        for k in 0..=8 {
            for i in 0..5 {
                let b = base.position(k, i);
                let t = trans.position(k, i);
                ensure!(
                    (b[0] + 0.8 - t[0]).abs() <= 1e-10 && (b[1] - 0.6 - t[1]).abs() <= 1e-10,
                    "translation equivariance broke at snapshot {k}"
                );
                let r = rot.position(k, i);
                let expect = [cos * b[0] - sin * b[1], sin * b[0] + cos * b[1]];
                ensure!(
                    (expect[0] - r[0]).abs() <= 1e-8 && (expect[1] - r[1]).abs() <= 1e-8,
                    "rotation equivariance broke at snapshot {k}"
                );
            }
        }

        // Radius bound for the bounded built-ins.
        for builtin in builtin_kernels() {
            if builtin.singular_at_zero() {
                continue;
            }
            let start_pts = sample_initial(2, 5, 1.0, 31);
            let c0 = (0..5)
                .map(|i| {
                    let p = &start_pts[2 * i..2 * i + 2];
                    (p[0] * p[0] + p[1] * p[1]).sqrt()
                })
                .fold(0.0f64, f64::max);
            let run = simulate(&builtin, &start_pts, 2, 0.5, 8, 8, 31).map_err(|e| e.to_string())?;
            let bound = c0 * (2.0 * builtin.sup_bound() * 0.5).exp();
            ensure!(
                run.max_radius() <= bound + 1e-9,
                "radius bound broke for {}",
                builtin.name()
            );
        }

        // Convolution Lipschitz estimate: 50 random discrete pairs.
        for trial in 0..50 {
            let n_mu = rng.random_range(2..8usize);
            let n_nu = rng.random_range(2..8usize);
            let sample_disc = |rng: &mut rand_chacha::ChaCha8Rng, count: usize| -> Vec<f64> {
                (0..count)
                    .flat_map(|_| {
                        loop {
                            let x = rng.random_range(-3.0..3.0);
                            let y = rng.random_range(-3.0..3.0);
                            if x * x + y * y <= 9.0 {
                                return [x, y];
                            }
                        }
                    })
                    .collect()
            };
            let mu = DiscreteMeasure::uniform_on(&sample_disc(&mut rng, n_mu), 2).unwrap();
            let nu = DiscreteMeasure::uniform_on(&sample_disc(&mut rng, n_nu), 2).unwrap();
            let check = convolution_lipschitz_check(&kernel, &mu, &nu, 3.0, 3.0, 40, trial as u64)
                .map_err(|e| e.to_string())?;
            ensure!(
                check.holds(),
                "trial {trial}: ratio {} above Lipschitz estimate {}",
                check.max_ratio,
                check.lip_bound
            );
        }
        Ok(())
    });
}

#[test]
fn criterion_10_coercivity_upper_bound_and_sweep() {
    criterion(10, "empirical coercivity ratio", || {
        let started = Instant::now();
        let mut rng = seeded_rng(1010);

        // With exact velocities the ratio obeys the Jensen bound.
        for trial in 0..20 {
            let (alpha, beta, gamma) = (
                rng.random_range(0.2..0.8),
                rng.random_range(0.1..0.5),
                rng.random_range(0.5..3.0),
            );
            let kernel = Kernel::new("wave", alpha + beta, false, move |r: f64| {
                alpha + beta * (gamma * r).sin()
            });
            let initial: Vec<f64> = (0..10).map(|_| rng.random_range(-1.5..1.5)).collect();
            let traj =
                simulate(&kernel, &initial, 2, 0.4, 8, 5, trial).map_err(|e| e.to_string())?;
            let space = space_for_trajectory(&traj, 6).map_err(|e| e.to_string())?;
            let coeffs: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let learned = SplineModel::new(space, coeffs, 20.0).unwrap();
            let velocities = model_velocities(&kernel, &traj).map_err(|e| e.to_string())?;
            let ratio =
                estimate_ct(&traj, &kernel, &learned, &velocities).map_err(|e| e.to_string())?;
            ensure!(
                ratio <= 1.05,
                "trial {trial}: ratio {ratio} above the upper bound"
            );
        }

        // Empirical c_T over the protocol sweep (reported, not asserted).
        // Runs whose particles never come within interaction range learn
        // the zero kernel exactly and trip the degenerate-misfit signal;
        // those are reported as such.
        let kernel = trunc_lj_default();
        let rows: Vec<Result<(usize, f64, Option<f64>), String>> = (3..=12usize)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&n| {
                let initial = sample_initial_stream(2, n, 5.0, 1234, n as u64);
                let traj = simulate(&kernel, &initial, 2, 0.5, 50, 10, 1234)
                    .map_err(|e| e.to_string())?;
                let report = learn_kernel(&traj, 3 * n - 5, 100.0, Some(&kernel))
                    .map_err(|e| e.to_string())?;
                if !report.converged {
                    return Err(format!("sweep N = {n} did not converge"));
                }
                let velocities = finite_difference_velocities(&traj);
                match estimate_ct(&traj, &kernel, &report.model, &velocities) {
                    Ok(ratio) => Ok((n, report.objective, Some(ratio))),
                    Err(kernel_infer::Error::DegenerateMisfit(_)) => {
                        Ok((n, report.objective, None))
                    }
                    Err(other) => Err(other.to_string()),
                }
            })
            .collect();
        for row in rows {
            let (n, objective, ratio) = row?;
            match ratio {
                Some(ratio) => {
                    ensure!(
                        ratio.is_finite() && ratio >= 0.0,
                        "sweep N = {n}: bad ratio {ratio}"
                    );
                    println!("  N = {n:2}: E = {objective:.3e}, empirical c_T = {ratio:.4}");
                }
                None => println!(
                    "  N = {n:2}: E = {objective:.3e}, degenerate misfit (no interactions)"
                ),
            }
        }
        let elapsed = started.elapsed().as_secs_f64();
        ensure!(elapsed < 120.0, "runtime {elapsed:.2}s");
        Ok(())
    });
}
