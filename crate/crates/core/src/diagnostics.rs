//! Numerical verification of the theoretical claims: discrete coercivity
//! identities, the empirical coercivity ratio, the random-matrix model, the
//! trajectory-approximation bound with its explicit Gronwall constant, and
//! the convolution Lipschitz estimate.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::SplineModel;
use crate::dynamics::{self, grid_lipschitz, Kernel, RadialFn, Trajectory, VelocitySamples};
use crate::error::{Error, Result};
use crate::measures::{self, DiscreteMeasure};
use crate::rng::stream_rng;

/// The misfit `K(r) = (a(r) - a_hat(r)) r`; `K(0) = 0` exactly.
#[derive(Clone)]
pub struct Misfit {
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl Misfit {
    /// Misfit between a reference kernel and a competitor.
    pub fn between<A, B>(reference: A, competitor: B) -> Misfit
    where
        A: RadialFn + Send + Sync + 'static,
        B: RadialFn + Send + Sync + 'static,
    {
        Misfit {
            eval: Arc::new(move |r| (reference.value(r) - competitor.value(r)) * r),
        }
    }

    /// Misfit `K(r) = g(r) r` from an arbitrary gap profile `g`.
    pub fn from_weighted_gap(g: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Misfit {
        Misfit {
            eval: Arc::new(move |r| g(r) * r),
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r == 0.0 {
            0.0
        } else {
            (self.eval)(r)
        }
    }
}

/// Both sides of the discrete coercivity inequality and their ratio, the
/// empirical `c_T` of this misfit on this trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    pub lhs: f64,
    pub rhs_unscaled: f64,
    pub ratio: f64,
    /// Distinct particles at distance zero; their unit vector is taken as
    /// the zero vector.
    pub coincident_pairs: usize,
}

/// Time average over `k = 1..=m` of
/// `lhs  = (1/N) sum_i |(1/N) sum_{j != i} K(r_ij) (x_i - x_j)/r_ij|^2` and
/// `rhs = (1/N^2) sum_i sum_j |K(r_ij)|^2`.
pub fn discrete_coercivity(traj: &Trajectory, misfit: &Misfit) -> CoercivityReport {
    let (d, n, m) = (traj.dim(), traj.particle_count(), traj.interval_count());
    assert!(n >= 2, "coercivity needs at least two particles");
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut coincident = 0usize;
    for k in 1..=m {
        for i in 0..n {
            let xi = traj.position(k, i);
            let mut acc = vec![0.0; d];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let xj = traj.position(k, j);
                let r = dynamics::dist(xi, xj);
                if r == 0.0 {
                    coincident += 1;
                    continue;
                }
                let value = misfit.eval(r);
                rhs += value * value;
                let w = value / r;
                for c in 0..d {
                    acc[c] += w * (xi[c] - xj[c]);
                }
            }
            lhs += acc.iter().map(|v| (v / n as f64) * (v / n as f64)).sum::<f64>();
        }
    }
    let scale_lhs = 1.0 / (m as f64 * n as f64);
    let scale_rhs = 1.0 / (m as f64 * (n * n) as f64);
    let lhs = lhs * scale_lhs;
    let rhs = rhs * scale_rhs;
    CoercivityReport {
        lhs,
        rhs_unscaled: rhs,
        ratio: if rhs > 0.0 { lhs / rhs } else { 0.0 },
        coincident_pairs: coincident,
    }
}

/// Empirical coercivity constant: the error functional of the learned model
/// (direct double-sum evaluation against the supplied velocities) divided by
/// `||a - a_hat||^2_{L2(rho^N)}`.
pub fn estimate_ct(
    traj: &Trajectory,
    reference: &Kernel,
    learned: &SplineModel,
    velocities: &VelocitySamples,
) -> Result<f64> {
    let energy = direct_error_functional(traj, learned, velocities);
    let rho = measures::empirical_rho(traj).rho;
    let learned = learned.clone();
    let norm = measures::l2_rho_norm(|s| reference.eval(s) - learned.value(s), &rho)?;
    let denom = norm * norm;
    if denom < 1e-14 {
        return Err(Error::DegenerateMisfit(denom));
    }
    Ok(energy / denom)
}

/// `E(a_hat) = (1/m) sum_k (1/N) sum_j |(1/N) sum_i a_hat(r_ij)(x_i - x_j) - v_j|^2`
/// evaluated by direct double sums, independent of the assembled form.
pub fn direct_error_functional(
    traj: &Trajectory,
    competitor: &(impl RadialFn + ?Sized),
    velocities: &VelocitySamples,
) -> f64 {
    let (d, n, m) = (traj.dim(), traj.particle_count(), traj.interval_count());
    let mut total = 0.0;
    for k in 1..=m {
        for j in 0..n {
            let xj = traj.position(k, j);
            let mut residual: Vec<f64> = velocities.velocity(k, j).iter().map(|v| -v).collect();
            for i in 0..n {
                if i == j {
                    continue;
                }
                let xi = traj.position(k, i);
                let r = dynamics::dist(xj, xi);
                if r == 0.0 {
                    continue;
                }
                let w = competitor.value(r) / n as f64;
                for c in 0..d {
                    residual[c] += w * (xi[c] - xj[c]);
                }
            }
            total += residual.iter().map(|v| v * v).sum::<f64>();
        }
    }
    total / (m as f64 * n as f64)
}

/// Monte Carlo check of the random-matrix coercivity model: the empirical
/// mean of `|K(i,:) X_i|^2 / N` over Gaussian misfit rows and random unit
/// direction matrices, which the computation in the model puts at one.
pub fn random_matrix_mc(n: usize, d: usize, trials: usize, seed: u64) -> (f64, f64) {
    assert!(n >= 1 && d >= 1 && trials >= 2);
    let values: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(seed, trial as u64);
            // Row i of K against its own direction matrix X_i.
            let mut trial_sum = 0.0;
            let mut row = vec![0.0; n];
            let mut directions = vec![0.0; n * d];
            for _ in 0..n {
                for entry in row.iter_mut() {
                    *entry = rng.sample(StandardNormal);
                }
                for j in 0..n {
                    let u = random_unit_vector(&mut rng, d);
                    directions[j * d..(j + 1) * d].copy_from_slice(&u);
                }
                trial_sum += normalized_row_form(&row, &directions, d);
            }
            trial_sum / n as f64
        })
        .collect();
    let mean = values.iter().sum::<f64>() / trials as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (trials - 1) as f64;
    (mean, (var / trials as f64).sqrt())
}

/// `|K(i,:) X_i|^2 / N` for one misfit row against a direction matrix whose
/// rows are unit vectors (`directions` is `[n][d]`).
fn normalized_row_form(row: &[f64], directions: &[f64], d: usize) -> f64 {
    let n = row.len();
    let mut y = vec![0.0; d];
    for (j, k_ij) in row.iter().enumerate() {
        for c in 0..d {
            y[c] += k_ij * directions[j * d + c];
        }
    }
    y.iter().map(|v| v * v).sum::<f64>() / n as f64
}

fn random_unit_vector(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    if d == 1 {
        return vec![if rng.random::<bool>() { 1.0 } else { -1.0 }];
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Outcome of the trajectory-approximation bound check.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    /// `sup_k (1/N) sum_i |x_i(t_k) - x_hat_i(t_k)|^2`.
    pub deviation: f64,
    /// `C * E` with the explicit Gronwall constant.
    pub bound: f64,
    pub constant: f64,
    /// Error functional of the candidate on the reference trajectory with
    /// exact model velocities.
    pub error_value: f64,
}

impl BoundCheck {
    pub fn holds(&self) -> bool {
        self.deviation <= self.bound
    }
}

/// Simulates the reference and candidate systems from the same start and
/// compares the mean-square trajectory deviation against
/// `C E` with `C = 2 T^2 exp(8 T^2 (||a_hat||^2_inf + (R Lip(a_hat))^2))`,
/// all norms taken on `K = [0, 2R]` with `R` from the candidate's radius
/// bound. Sup norm and Lipschitz constant are dense-grid estimates.
pub fn trajectory_bound_check(
    reference: &Kernel,
    candidate: &Kernel,
    initial: &[f64],
    d: usize,
    t_final: f64,
    m: usize,
    substeps: usize,
) -> Result<BoundCheck> {
    let n = initial.len() / d;
    let reference_traj = dynamics::simulate(reference, initial, d, t_final, m, substeps, 0)?;
    let candidate_traj = dynamics::simulate(candidate, initial, d, t_final, m, substeps, 0)?;

    let mut deviation = 0.0f64;
    for k in 0..=m {
        let mut mean_sq = 0.0;
        for i in 0..n {
            let a = reference_traj.position(k, i);
            let b = candidate_traj.position(k, i);
            mean_sq += a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        deviation = deviation.max(mean_sq / n as f64);
    }

    let c0 = (0..n)
        .map(|i| dynamics::norm(&initial[i * d..(i + 1) * d]))
        .fold(0.0f64, f64::max);
    let radius = c0 * (2.0 * candidate.sup_bound() * t_final).exp();
    let domain = 2.0 * radius;
    let sup = grid_max_abs(|r| candidate.eval(r), 0.0, domain);
    let lip = grid_lipschitz(|r| candidate.eval(r), 0.0, domain);
    let constant =
        2.0 * t_final * t_final * (8.0 * t_final * t_final * (sup * sup + (radius * lip).powi(2))).exp();

    let velocities = dynamics::model_velocities(reference, &reference_traj)?;
    let error_value = direct_error_functional(&reference_traj, candidate, &velocities);
    Ok(BoundCheck {
        deviation,
        bound: constant * error_value,
        constant,
        error_value,
    })
}

fn grid_max_abs(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    let cells = 10_000usize;
    let h = (hi - lo) / cells as f64;
    (0..=cells)
        .map(|k| f(lo + k as f64 * h).abs())
        .fold(0.0f64, f64::max)
}

/// Lipschitz bound of the interaction field `F[a](z) = -a(|z|) z` on the
/// ball of radius `s`: the differential's eigenvalues are `-a(rho)` and
/// `-(rho a(rho))'`, so the constant is the larger of the two profiles.
pub fn field_lipschitz(kernel: &Kernel, s: f64) -> f64 {
    let sup_a = grid_max_abs(|r| kernel.eval(r), 0.0, s);
    let lip_radial = grid_lipschitz(|r| r * kernel.eval(r), 0.0, s);
    sup_a.max(lip_radial)
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvolutionCheck {
    /// Largest observed `|F*mu - F*nu|(x) / W1(mu, nu)` over the samples.
    pub max_ratio: f64,
    /// Dense-grid estimate of `Lip(F[a])` on `B(0, R + r)`.
    pub lip_bound: f64,
    pub w1: f64,
}

impl ConvolutionCheck {
    pub fn holds(&self) -> bool {
        self.max_ratio <= self.lip_bound
    }
}

/// Samples `x` in `B(0, r)` and compares `|(F[a]*mu)(x) - (F[a]*nu)(x)|`
/// against `Lip_{B(0, R + r)}(F[a]) W1(mu, nu)`.
pub fn convolution_lipschitz_check(
    kernel: &Kernel,
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    r: f64,
    big_r: f64,
    samples: usize,
    seed: u64,
) -> Result<ConvolutionCheck> {
    let d = mu.dim();
    if nu.dim() != d {
        return Err(Error::DimensionMismatch(d, nu.dim()));
    }
    for measure in [mu, nu] {
        for idx in 0..measure.atom_count() {
            if dynamics::norm(measure.location(idx)) > big_r + 1e-12 {
                return Err(Error::Invalid(format!(
                    "atom outside the stated support ball of radius {big_r}"
                )));
            }
        }
    }
    let w1 = measures::wasserstein1(mu, nu)?;
    let lip_bound = field_lipschitz(kernel, big_r + r);

    let mut rng = stream_rng(seed, 0);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let direction = random_unit_vector(&mut rng, d);
        let radius = r * rng.random::<f64>().powf(1.0 / d as f64);
        let x: Vec<f64> = direction.iter().map(|u| radius * u).collect();
        let gap = convolution_gap(kernel, mu, nu, &x);
        worst = worst.max(gap);
    }
    if w1 == 0.0 {
        if worst > 1e-10 * (1.0 + lip_bound) {
            return Err(Error::ConvolutionContract(worst));
        }
        return Ok(ConvolutionCheck {
            max_ratio: 0.0,
            lip_bound,
            w1,
        });
    }
    Ok(ConvolutionCheck {
        max_ratio: worst / w1,
        lip_bound,
        w1,
    })
}

fn convolution_gap(kernel: &Kernel, mu: &DiscreteMeasure, nu: &DiscreteMeasure, x: &[f64]) -> f64 {
    let d = x.len();
    let mut diff = vec![0.0; d];
    for (measure, sign) in [(mu, 1.0), (nu, -1.0)] {
        for idx in 0..measure.atom_count() {
            let loc = measure.location(idx);
            let z: Vec<f64> = x.iter().zip(loc).map(|(a, b)| a - b).collect();
            let rho = dynamics::norm(&z);
            if rho == 0.0 {
                continue;
            }
            let w = -kernel.eval(rho) * measure.weight(idx) * sign;
            for c in 0..d {
                diff[c] += w * z[c];
            }
        }
    }
    dynamics::norm(&diff)
}

/// Constant-in-time configurations used by the identity checks.
pub mod fixtures {
    use super::*;

    fn constant_trajectory(d: usize, points: &[f64], t_final: f64, m: usize) -> Trajectory {
        let n = points.len() / d;
        let times: Vec<f64> = (0..=m).map(|k| k as f64 * t_final / m as f64).collect();
        let mut positions = Vec::with_capacity((m + 1) * points.len());
        for _ in 0..=m {
            positions.extend_from_slice(points);
        }
        Trajectory::from_parts(d, n, times, positions, 0, "fixture", t_final / m as f64)
            .expect("valid fixture")
    }

    /// Three particles at the vertices of an equilateral triangle of side `r`.
    pub fn equilateral_triangle(r: f64, t_final: f64, m: usize) -> Trajectory {
        let h = r * 3.0f64.sqrt() / 2.0;
        let points = vec![0.0, 0.0, r, 0.0, r / 2.0, h];
        constant_trajectory(2, &points, t_final, m)
    }

    /// Four particles at the vertices of a square of side `sqrt(2) r`
    /// (diagonal `2 r`).
    pub fn square(r: f64, t_final: f64, m: usize) -> Trajectory {
        let half = r / 2.0f64.sqrt();
        let points = vec![half, half, -half, half, -half, -half, half, -half];
        constant_trajectory(2, &points, t_final, m)
    }

    /// Two particles held at the given positions.
    pub fn two_particles(d: usize, x1: &[f64], x2: &[f64], t_final: f64, m: usize) -> Trajectory {
        let mut points = x1.to_vec();
        points.extend_from_slice(x2);
        constant_trajectory(d, &points, t_final, m)
    }
}
