//! Assembly of the discrete least-squares error functional and its
//! constrained minimization, plus the constraint sweep and Monte Carlo
//! averaging protocols.
//!
//! The functional is `E(a) = (1/(mN)) ||C a - v||^2` where row block `(k, j)`
//! of `C` holds, per basis index, `(1/N) sum_i phi(|x_j - x_i|)(x_i - x_j)`
//! and `v` stacks the backward-difference velocities. The constrained
//! problem bounds `2 ||a||_inf + ||D a||_inf` by `M` through an epigraph
//! reformulation with two auxiliary scalars, solved by the in-crate
//! interior-point method.

pub(crate) mod qp;

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::basis::{constraint_value, SplineModel, SplineSpace};
use crate::dynamics::{
    self, finite_difference_velocities, Kernel, RadialFn, Trajectory, VelocitySamples,
};
use crate::error::{Error, Result};
use crate::measures;

/// Constraint level standing in for `M = 0`.
pub const M_EPSILON: f64 = 1e-12;

/// Tikhonov weight selecting the minimum-norm representative among
/// least-squares minimizers when `C` is rank deficient.
const TIKHONOV: f64 = 1e-12;

/// Assembled least-squares data of one learning problem.
#[derive(Debug, Clone)]
pub struct LearnProblem {
    c: DMatrix<f64>,
    v: DVector<f64>,
    scale: f64,
    diff: DMatrix<f64>,
    m_constraint: f64,
    space: SplineSpace,
}

impl LearnProblem {
    pub fn space(&self) -> &SplineSpace {
        &self.space
    }

    pub fn constraint(&self) -> f64 {
        self.m_constraint
    }

    /// Same data under a different constraint level.
    pub fn with_constraint(&self, m_constraint: f64) -> LearnProblem {
        LearnProblem {
            m_constraint,
            ..self.clone()
        }
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn velocity_vector(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn difference_matrix(&self) -> &DMatrix<f64> {
        &self.diff
    }

    /// Assembles a problem directly from raw parts (tests and oracles).
    pub fn from_parts(
        c: DMatrix<f64>,
        v: DVector<f64>,
        scale: f64,
        space: SplineSpace,
        m_constraint: f64,
    ) -> Self {
        let diff_raw = space.difference_matrix();
        let dim = space.dim();
        let diff = DMatrix::from_fn(dim, dim, |r, col| diff_raw[r * dim + col]);
        LearnProblem {
            c,
            v,
            scale,
            diff,
            m_constraint,
            space,
        }
    }
}

/// Assembles `(C, v)` from a trajectory with backward-difference velocities.
pub fn assemble(traj: &Trajectory, space: &SplineSpace, m_constraint: f64) -> Result<LearnProblem> {
    let velocities = finite_difference_velocities(traj);
    assemble_with_velocities(traj, space, &velocities, m_constraint)
}

/// Assembly with injected velocity samples. The learning pipeline always
/// uses backward differences; this entry point exists so tests and
/// diagnostics can supply exact model velocities instead.
pub fn assemble_with_velocities(
    traj: &Trajectory,
    space: &SplineSpace,
    velocities: &VelocitySamples,
    m_constraint: f64,
) -> Result<LearnProblem> {
    let d = traj.dim();
    let n = traj.particle_count();
    let m = traj.interval_count();
    if velocities.sample_count() != m {
        return Err(Error::Invalid(format!(
            "{} velocity samples do not match {m} snapshot intervals",
            velocities.sample_count()
        )));
    }
    let dim = space.dim();
    let rows = d * n * m;
    let mut c = DMatrix::zeros(rows, dim);
    let mut v = DVector::zeros(rows);
    let inv_n = 1.0 / n as f64;
    for k in 1..=m {
        for j in 0..n {
            let row0 = ((k - 1) * n + j) * d;
            let vel = velocities.velocity(k, j);
            for coord in 0..d {
                v[row0 + coord] = vel[coord];
            }
            let xj = traj.position(k, j);
            for i in 0..n {
                if i == j {
                    continue;
                }
                let xi = traj.position(k, i);
                let r = dynamics::dist(xj, xi);
                let Some((cell, theta)) = space.locate(r) else {
                    return Err(Error::DomainTooSmall {
                        domain_end: space.domain_end(),
                        distance: r,
                    });
                };
                for coord in 0..d {
                    let component = inv_n * (xi[coord] - xj[coord]);
                    c[(row0 + coord, cell)] += component * (1.0 - theta);
                    c[(row0 + coord, cell + 1)] += component * theta;
                }
            }
        }
    }
    Ok(LearnProblem {
        c,
        v,
        scale: 1.0 / (m as f64 * n as f64),
        diff: {
            let diff_raw = space.difference_matrix();
            DMatrix::from_fn(dim, dim, |r, col| diff_raw[r * dim + col])
        },
        m_constraint,
        space: space.clone(),
    })
}

/// `E(a) = scale * ||C a - v||^2`.
pub fn error_functional(problem: &LearnProblem, coeffs: &[f64]) -> f64 {
    debug_assert_eq!(coeffs.len(), problem.space.dim());
    let a = DVector::from_row_slice(coeffs);
    let residual = &problem.c * a - &problem.v;
    problem.scale * residual.norm_squared()
}

/// Outcome of one constrained minimization.
#[derive(Debug, Clone)]
pub struct LearnReport {
    pub model: SplineModel,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub l2_rho_error: Option<f64>,
}

impl LearnReport {
    pub fn write_json(&self, path: &Path, kernel_name: Option<&str>) -> Result<()> {
        let value = serde_json::json!({
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "l2_rho_error": self.l2_rho_error,
            "model": {
                "R": self.model.space().r(),
                "D": self.model.space().dim(),
                "coeffs": self.model.coeffs(),
                "M": self.model.constraint_m(),
                "kernel_name": kernel_name,
            },
        });
        std::fs::write(path, serde_json::to_string_pretty(&value)?)?;
        Ok(())
    }
}

/// Solves `min scale ||C a - v||^2` over `2 ||a||_inf + ||D a||_inf <= M`.
///
/// The epigraph form carries two auxiliary scalars `(s, t)` with
/// `-s <= a_l <= s`, `-t <= (D a)_l <= t`, `2 s + t <= M`; the origin is
/// always strictly feasible, so the solve cannot be infeasible. Hitting the
/// iteration cap is reported through `converged`, never silently.
pub fn minimize(problem: &LearnProblem) -> LearnReport {
    let dim = problem.space.dim();
    let m_constraint = if problem.m_constraint <= M_EPSILON {
        M_EPSILON
    } else {
        problem.m_constraint
    };

    let nv = dim + 2;
    let mut q = DMatrix::zeros(nv, nv);
    let qa = problem.c.tr_mul(&problem.c) * (2.0 * problem.scale);
    q.view_mut((0, 0), (dim, dim)).copy_from(&qa);
    for i in 0..dim {
        q[(i, i)] += 2.0 * TIKHONOV;
    }
    let mut c_lin = DVector::zeros(nv);
    let ctv = problem.c.tr_mul(&problem.v) * (-2.0 * problem.scale);
    c_lin.rows_mut(0, dim).copy_from(&ctv);

    let nc = 4 * dim + 1;
    let mut g = DMatrix::zeros(nc, nv);
    let h = {
        let mut h = DVector::zeros(nc);
        h[nc - 1] = m_constraint;
        h
    };
    for l in 0..dim {
        // a_l - s <= 0 and -a_l - s <= 0.
        g[(l, l)] = 1.0;
        g[(l, dim)] = -1.0;
        g[(dim + l, l)] = -1.0;
        g[(dim + l, dim)] = -1.0;
        // (D a)_l - t <= 0 and -(D a)_l - t <= 0.
        for col in 0..dim {
            let entry = problem.diff[(l, col)];
            if entry != 0.0 {
                g[(2 * dim + l, col)] = entry;
                g[(3 * dim + l, col)] = -entry;
            }
        }
        g[(2 * dim + l, dim + 1)] = -1.0;
        g[(3 * dim + l, dim + 1)] = -1.0;
    }
    g[(nc - 1, dim)] = 2.0;
    g[(nc - 1, dim + 1)] = 1.0;

    let mut z0 = DVector::zeros(nv);
    z0[dim] = m_constraint / 4.0;
    z0[dim + 1] = m_constraint / 4.0;

    let qp = qp::QpProblem { q, c: c_lin, g, h };
    let sol = qp::solve_qp(&qp, z0);

    let coeffs: Vec<f64> = sol.z.rows(0, dim).iter().copied().collect();
    let objective = error_functional(problem, &coeffs);
    let model = SplineModel::new(problem.space.clone(), coeffs, m_constraint)
        .expect("coefficient count matches the space by construction");
    LearnReport {
        model,
        objective,
        kkt_residual: sol.kkt_residual(),
        iterations: sol.iterations,
        converged: sol.converged,
        l2_rho_error: None,
    }
}

/// Spline space covering all observed pairwise distances of a trajectory:
/// `[0, 2 R_obs]` where `R_obs` is the largest observed distance.
pub fn space_for_trajectory(traj: &Trajectory, basis_dim: usize) -> Result<SplineSpace> {
    let r_obs = traj.max_pairwise_distance();
    if !(r_obs > 0.0) {
        return Err(Error::Invalid(
            "all observed particles coincide; there is no distance information to learn from"
                .into(),
        ));
    }
    SplineSpace::new(r_obs, basis_dim)
}

/// End-to-end reconstruction from one trajectory: builds the space from the
/// observed distances, assembles, minimizes, and (when the generating kernel
/// is supplied) reports the `L2(rho^N)` distance between truth and estimate.
pub fn learn_kernel(
    traj: &Trajectory,
    basis_dim: usize,
    m_constraint: f64,
    reference: Option<&Kernel>,
) -> Result<LearnReport> {
    let space = space_for_trajectory(traj, basis_dim)?;
    let problem = assemble(traj, &space, m_constraint)?;
    let mut report = minimize(&problem);
    if let Some(kernel) = reference {
        let rho = measures::empirical_rho(traj).rho;
        let model = report.model.clone();
        let error = measures::l2_rho_norm(|s| kernel.eval(s) - model.value(s), &rho)?;
        report.l2_rho_error = Some(error);
    }
    Ok(report)
}

/// One `(M, objective)` pair of the constraint sweep.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub m_constraint: f64,
    pub objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct MSweep {
    pub points: Vec<SweepPoint>,
    /// Smallest `M` whose objective is within `1e-6` of the final one.
    pub m_star: f64,
}

impl MSweep {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("M,objective,Mstar\n");
        for p in &self.points {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                p.m_constraint, p.objective, self.m_star
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Runs the minimization for every constraint level in ascending `m_list`
/// on one assembled problem and locates the plateau onset.
pub fn m_sweep(traj: &Trajectory, basis_dim: usize, m_list: &[f64]) -> Result<MSweep> {
    if m_list.is_empty() || m_list.iter().any(|m| *m <= 0.0) {
        return Err(Error::Invalid("M list must be positive".into()));
    }
    if m_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Invalid("M list must be ascending".into()));
    }
    let space = space_for_trajectory(traj, basis_dim)?;
    let base = assemble(traj, &space, m_list[0])?;
    let points: Vec<SweepPoint> = m_list
        .par_iter()
        .map(|&m_constraint| {
            let report = minimize(&base.with_constraint(m_constraint));
            SweepPoint {
                m_constraint,
                objective: report.objective,
                converged: report.converged,
            }
        })
        .collect();
    let last = points.last().unwrap().objective;
    let m_star = points
        .iter()
        .find(|p| p.objective <= last + 1e-6)
        .unwrap()
        .m_constraint;
    Ok(MSweep { points, m_star })
}

/// Simulation parameters shared by the averaging protocols.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub d: usize,
    pub n: usize,
    pub l: f64,
    pub t_final: f64,
    pub snapshots: usize,
    pub substeps: usize,
}

/// Monte Carlo average of reconstructions over independent initial data.
#[derive(Debug, Clone)]
pub struct MonteCarloBand {
    pub space: SplineSpace,
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub reports: Vec<LearnReport>,
}

impl MonteCarloBand {
    /// `r,mean,lo,hi` at the knots.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("r,mean,lo,hi\n");
        for k in 0..self.space.dim() {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e},{:.16e}\n",
                self.space.knot(k),
                self.mean[k],
                self.lo[k],
                self.hi[k]
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Draws `theta` independent initial conditions (streams of `master_seed`),
/// learns each run on one shared spline space whose radius is the largest
/// observed distance across all runs, and averages the coefficients
/// pointwise. The band is `mean +/- 1.96 stdev / sqrt(theta)` per knot.
pub fn montecarlo_average(
    kernel: &Kernel,
    run: &RunConfig,
    basis_dim: usize,
    m_constraint: f64,
    theta: usize,
    master_seed: u64,
) -> Result<MonteCarloBand> {
    if theta < 2 {
        return Err(Error::Invalid(format!(
            "Monte Carlo averaging needs at least two runs, got {theta}"
        )));
    }
    let trajectories: Vec<Result<Trajectory>> = (0..theta)
        .into_par_iter()
        .map(|idx| {
            let initial =
                dynamics::sample_initial_stream(run.d, run.n, run.l, master_seed, idx as u64);
            dynamics::simulate(
                kernel,
                &initial,
                run.d,
                run.t_final,
                run.snapshots,
                run.substeps,
                master_seed,
            )
        })
        .collect();
    let trajectories: Vec<Trajectory> = trajectories.into_iter().collect::<Result<_>>()?;

    let r_common = trajectories
        .iter()
        .map(Trajectory::max_pairwise_distance)
        .fold(0.0f64, f64::max);
    if !(r_common > 0.0) {
        return Err(Error::Invalid("degenerate runs: no pairwise distances".into()));
    }
    let space = SplineSpace::new(r_common, basis_dim)?;

    let reports: Vec<Result<LearnReport>> = trajectories
        .par_iter()
        .map(|traj| {
            let problem = assemble(traj, &space, m_constraint)?;
            let mut report = minimize(&problem);
            let rho = measures::empirical_rho(traj).rho;
            let model = report.model.clone();
            report.l2_rho_error =
                Some(measures::l2_rho_norm(|s| kernel.eval(s) - model.value(s), &rho)?);
            Ok(report)
        })
        .collect();
    let reports: Vec<LearnReport> = reports.into_iter().collect::<Result<_>>()?;

    let rows: Vec<&[f64]> = reports.iter().map(|r| r.model.coeffs()).collect();
    let (mean, stdev, lo, hi) = band_statistics(&rows);
    Ok(MonteCarloBand {
        space,
        mean,
        stdev,
        lo,
        hi,
        reports,
    })
}

/// Pointwise mean, unbiased standard deviation and 95% normal band of a set
/// of coefficient vectors.
pub fn band_statistics(rows: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let theta = rows.len();
    assert!(theta >= 2, "need at least two rows for a band");
    let dim = rows[0].len();
    let mut mean = vec![0.0; dim];
    for row in rows {
        for (acc, c) in mean.iter_mut().zip(row.iter()) {
            *acc += c / theta as f64;
        }
    }
    let mut stdev = vec![0.0; dim];
    for row in rows {
        for (acc, (c, mu)) in stdev.iter_mut().zip(row.iter().zip(&mean)) {
            *acc += (c - mu) * (c - mu);
        }
    }
    for s in stdev.iter_mut() {
        *s = (*s / (theta - 1) as f64).sqrt();
    }
    let half_width: Vec<f64> = stdev
        .iter()
        .map(|s| 1.96 * s / (theta as f64).sqrt())
        .collect();
    let lo: Vec<f64> = mean.iter().zip(&half_width).map(|(m, h)| m - h).collect();
    let hi: Vec<f64> = mean.iter().zip(&half_width).map(|(m, h)| m + h).collect();
    (mean, stdev, lo, hi)
}

/// Feasibility slack granted to returned models.
pub fn constraint_is_satisfied(model: &SplineModel) -> bool {
    constraint_value(model.coeffs()) <= model.constraint_m() + 1e-9
}
