//! Primal-dual interior-point method for small dense convex QPs
//!
//! ```text
//! minimize   1/2 z' Q z + c' z
//! subject to G z <= h
//! ```
//!
//! with Mehrotra predictor-corrector steps on the condensed normal
//! equations. The caller supplies a strictly feasible starting point; for
//! the epigraph reformulation used by the learning problem one always
//! exists, so infeasibility never arises.

use nalgebra::{Cholesky, DMatrix, DVector};

/// Convergence is declared when the primal residual, dual residual and the
/// complementarity gap are all below this absolute threshold.
pub const QP_TOLERANCE: f64 = 1e-9;

/// Iteration cap; reaching it flags the result as non-converged.
pub const QP_MAX_ITERATIONS: usize = 20_000;

pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Inequality multipliers; read by the independent KKT checks.
    #[allow(dead_code)]
    pub lambda: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

impl QpSolution {
    /// Largest of the three optimality residuals.
    pub fn kkt_residual(&self) -> f64 {
        self.primal_residual.max(self.dual_residual).max(self.gap)
    }
}

/// Solves the QP from the strictly feasible point `z0` (`G z0 < h`).
pub fn solve_qp(problem: &QpProblem, z0: DVector<f64>) -> QpSolution {
    let nv = problem.q.nrows();
    let nc = problem.g.nrows();
    debug_assert_eq!(problem.q.ncols(), nv);
    debug_assert_eq!(problem.c.len(), nv);
    debug_assert_eq!(problem.g.ncols(), nv);
    debug_assert_eq!(problem.h.len(), nc);

    let mut z = z0;
    let mut w = &problem.h - &problem.g * &z;
    debug_assert!(
        w.iter().all(|s| *s > 0.0),
        "starting point must be strictly feasible"
    );
    let mut lambda = DVector::from_element(nc, 1.0);

    let mut best: Option<(f64, QpSolution)> = None;
    let mut iterations = 0;

    for iter in 0..QP_MAX_ITERATIONS {
        iterations = iter;
        let r_dual = &problem.q * &z + &problem.c + problem.g.tr_mul(&lambda);
        let r_primal = &problem.g * &z + &w - &problem.h;
        let gap = w.dot(&lambda);
        let primal_norm = r_primal.amax();
        let dual_norm = r_dual.amax();

        let snapshot = QpSolution {
            z: z.clone(),
            lambda: lambda.clone(),
            iterations: iter,
            converged: false,
            primal_residual: primal_norm,
            dual_residual: dual_norm,
            gap,
        };
        let score = snapshot.kkt_residual();
        if best.as_ref().map_or(true, |(s, _)| score < *s) {
            best = Some((score, snapshot));
        }

        if primal_norm <= QP_TOLERANCE && dual_norm <= QP_TOLERANCE && gap <= QP_TOLERANCE {
            let (_, mut sol) = best.unwrap();
            sol.converged = true;
            return sol;
        }

        let mu = gap / nc as f64;

        // Scaling lambda/w of the condensed system H = Q + G' diag(lambda/w) G.
        let d: DVector<f64> = lambda.component_div(&w);
        let mut gd = problem.g.clone();
        for (i, mut row) in gd.row_iter_mut().enumerate() {
            row *= d[i];
        }
        let h_mat = &problem.q + problem.g.tr_mul(&gd);
        let Some(chol) = factor_with_regularization(h_mat) else {
            break;
        };

        // Affine predictor: rc = w o lambda.
        let rc_aff = w.component_mul(&lambda);
        let dz_aff = condensed_solve(&chol, problem, &r_dual, &r_primal, &rc_aff, &w, &lambda);
        let dw_aff = -&r_primal - &problem.g * &dz_aff;
        let dl_aff = -(&rc_aff + lambda.component_mul(&dw_aff)).component_div(&w);

        let alpha_aff = step_length(&w, &dw_aff).min(step_length(&lambda, &dl_aff));
        let mu_aff = (&w + &dw_aff * alpha_aff).dot(&(&lambda + &dl_aff * alpha_aff)) / nc as f64;
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(0.0, 1.0)
        } else {
            0.0
        };

        // Corrector.
        let rc: DVector<f64> = DVector::from_fn(nc, |i, _| {
            w[i] * lambda[i] - sigma * mu + dw_aff[i] * dl_aff[i]
        });
        let dz = condensed_solve(&chol, problem, &r_dual, &r_primal, &rc, &w, &lambda);
        let dw = -&r_primal - &problem.g * &dz;
        let dl = -(&rc + lambda.component_mul(&dw)).component_div(&w);

        let alpha = (0.995 * step_length(&w, &dw).min(step_length(&lambda, &dl))).min(1.0);
        if alpha <= 1e-14 {
            break;
        }
        z += &dz * alpha;
        w += &dw * alpha;
        lambda += &dl * alpha;
    }

    let (_, mut sol) = best.expect("at least one iterate recorded");
    sol.iterations = iterations;
    sol.converged = false;
    sol
}

/// Right-hand side and solve of the condensed system, with one round of
/// iterative refinement:
/// `(Q + G' D G) dz = -r_dual + G' (rc ./ w - D r_primal)`.
fn condensed_solve(
    chol: &Cholesky<f64, nalgebra::Dyn>,
    problem: &QpProblem,
    r_dual: &DVector<f64>,
    r_primal: &DVector<f64>,
    rc: &DVector<f64>,
    w: &DVector<f64>,
    lambda: &DVector<f64>,
) -> DVector<f64> {
    let nc = w.len();
    let mixed: DVector<f64> =
        DVector::from_fn(nc, |i, _| rc[i] / w[i] - lambda[i] / w[i] * r_primal[i]);
    let rhs = -r_dual + problem.g.tr_mul(&mixed);
    let mut dz = chol.solve(&rhs);
    // One refinement pass against the implicit operator.
    let residual = &rhs - apply_condensed(problem, w, lambda, &dz);
    dz += chol.solve(&residual);
    dz
}

fn apply_condensed(
    problem: &QpProblem,
    w: &DVector<f64>,
    lambda: &DVector<f64>,
    x: &DVector<f64>,
) -> DVector<f64> {
    let gx = &problem.g * x;
    let scaled: DVector<f64> = DVector::from_fn(w.len(), |i, _| lambda[i] / w[i] * gx[i]);
    &problem.q * x + problem.g.tr_mul(&scaled)
}

fn factor_with_regularization(mut h: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let n = h.nrows();
    let scale = 1.0 + h.diagonal().amax();
    let mut reg = 0.0;
    for _ in 0..8 {
        let attempt = if reg == 0.0 {
            h.clone()
        } else {
            let mut shifted = h.clone();
            for i in 0..n {
                shifted[(i, i)] += reg;
            }
            shifted
        };
        if let Some(chol) = Cholesky::new(attempt) {
            return Some(chol);
        }
        reg = if reg == 0.0 { 1e-12 * scale } else { reg * 100.0 };
    }
    // Last resort: heavy static shift.
    for i in 0..n {
        h[(i, i)] += 1e-4 * scale;
    }
    Cholesky::new(h)
}

/// Largest alpha in (0, 1e30] keeping `v + alpha dv` positive.
fn step_length(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1e30f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}
