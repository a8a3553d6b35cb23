//! Discrete measures, exact Wasserstein-1 distances, and the time-averaged
//! pairwise-distance measures `rho_bar` and `rho` with their weighted L2
//! norms.
//!
//! Measures are kept as exact atom lists; every downstream norm is a finite
//! sum, so nothing is ever histogrammed.

mod network_simplex;

use std::path::Path;

use rayon::prelude::*;

use crate::dynamics::{self, Kernel, Trajectory};
use crate::error::{Error, Result};

/// Atom budget for the exact transportation LP in dimension >= 2.
pub const OT_SUPPORT_CAP: usize = 2000;

const PROBABILITY_TOL: f64 = 1e-9;

/// Weighted atoms on `R^d` (or on `R_+` when `dim == 1`).
#[derive(Debug, Clone)]
pub struct DiscreteMeasure {
    dim: usize,
    /// Flattened `[atoms][dim]`.
    locations: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, locations: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("measure dimension must be positive".into()));
        }
        if locations.len() != weights.len() * dim {
            return Err(Error::Invalid(format!(
                "{} coordinates do not hold {} atoms of dimension {dim}",
                locations.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Invalid("weights must be finite and nonnegative".into()));
        }
        Ok(DiscreteMeasure {
            dim,
            locations,
            weights,
        })
    }

    /// Scalar measure from `(location, weight)` pairs.
    pub fn from_scalar_atoms(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let (locations, weights): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
        DiscreteMeasure::new(1, locations, weights)
    }

    /// Uniform probability measure on the given points (`[n][dim]`).
    pub fn uniform_on(points: &[f64], dim: usize) -> Result<Self> {
        let n = points.len() / dim;
        DiscreteMeasure::new(dim, points.to_vec(), vec![1.0 / n as f64; n])
    }

    pub fn dirac(point: &[f64]) -> Self {
        DiscreteMeasure {
            dim: point.len(),
            locations: point.to_vec(),
            weights: vec![1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atom_count(&self) -> usize {
        self.weights.len()
    }

    pub fn location(&self, idx: usize) -> &[f64] {
        &self.locations[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn weight(&self, idx: usize) -> f64 {
        self.weights[idx]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_probability(&self) -> bool {
        (self.total_mass() - 1.0).abs() <= PROBABILITY_TOL
    }

    fn require_probability(&self) -> Result<()> {
        if self.is_probability() {
            Ok(())
        } else {
            Err(Error::NotProbability(self.total_mass()))
        }
    }
}

/// Exact 1-Wasserstein distance between two discrete probability measures.
///
/// Scalar supports use the sorted quantile/CDF coupling, which is exact in
/// one dimension. Higher dimensions solve the transportation LP with the
/// network simplex; the combined support is capped at [`OT_SUPPORT_CAP`].
pub fn wasserstein1(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch(mu.dim(), nu.dim()));
    }
    mu.require_probability()?;
    nu.require_probability()?;
    if mu.dim() == 1 {
        return Ok(w1_line(mu, nu));
    }
    let mu_atoms: Vec<usize> = (0..mu.atom_count()).filter(|&i| mu.weight(i) > 0.0).collect();
    let nu_atoms: Vec<usize> = (0..nu.atom_count()).filter(|&i| nu.weight(i) > 0.0).collect();
    let combined = mu_atoms.len() + nu_atoms.len();
    if combined > OT_SUPPORT_CAP {
        return Err(Error::SupportTooLarge {
            atoms: combined,
            cap: OT_SUPPORT_CAP,
        });
    }
    let supply: Vec<f64> = mu_atoms.iter().map(|&i| mu.weight(i)).collect();
    let demand: Vec<f64> = nu_atoms.iter().map(|&j| nu.weight(j)).collect();
    let mut cost = Vec::with_capacity(supply.len() * demand.len());
    for &i in &mu_atoms {
        for &j in &nu_atoms {
            cost.push(dynamics::dist(mu.location(i), nu.location(j)));
        }
    }
    network_simplex::transport_min_cost(&supply, &demand, &cost)
}

/// CDF-difference integral: exact W1 for atomic measures on the line.
fn w1_line(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let mut events: Vec<(f64, f64, f64)> = Vec::with_capacity(mu.atom_count() + nu.atom_count());
    for i in 0..mu.atom_count() {
        events.push((mu.location(i)[0], mu.weight(i), 0.0));
    }
    for j in 0..nu.atom_count() {
        events.push((nu.location(j)[0], 0.0, nu.weight(j)));
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut w1 = 0.0;
    let mut gap = 0.0f64; // F_mu - F_nu left of the sweep point
    let mut prev_x = events.first().map(|e| e.0).unwrap_or(0.0);
    for (x, dmu, dnu) in events {
        w1 += gap.abs() * (x - prev_x);
        gap += dmu - dnu;
        prev_x = x;
    }
    w1
}

/// The pairwise-distance measures of one observed trajectory:
/// `rho_bar` averages the law of `|x_i(t_k) - x_j(t_k)|` over the ordered
/// pairs and the snapshots `k = 1..=m`; `rho` reweights each atom by `s^2`.
#[derive(Debug, Clone)]
pub struct RhoPair {
    pub rho_bar: DiscreteMeasure,
    pub rho: DiscreteMeasure,
}

impl RhoPair {
    /// Writes `s,weight_bar,weight_rho` sorted by `s`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut order: Vec<usize> = (0..self.rho_bar.atom_count()).collect();
        order.sort_by(|&a, &b| self.rho_bar.location(a)[0].total_cmp(&self.rho_bar.location(b)[0]));
        let mut out = String::from("s,weight_bar,weight_rho\n");
        for idx in order {
            out.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                self.rho_bar.location(idx)[0],
                self.rho_bar.weight(idx),
                self.rho.weight(idx)
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Builds `rho_bar` and `rho` from a trajectory. The diagonal pairs `i = j`
/// contribute atoms at zero, which carry no weight in `rho`.
pub fn empirical_rho(traj: &Trajectory) -> RhoPair {
    let n = traj.particle_count();
    let m = traj.interval_count();
    let w = 1.0 / (m as f64 * (n * n) as f64);
    let mut locations = Vec::with_capacity(m * n * n);
    for k in 1..=m {
        for i in 0..n {
            for j in 0..n {
                locations.push(dynamics::dist(traj.position(k, i), traj.position(k, j)));
            }
        }
    }
    let weights_bar = vec![w; locations.len()];
    let weights_rho: Vec<f64> = locations.iter().map(|s| s * s * w).collect();
    RhoPair {
        rho_bar: DiscreteMeasure {
            dim: 1,
            locations: locations.clone(),
            weights: weights_bar,
        },
        rho: DiscreteMeasure {
            dim: 1,
            locations,
            weights: weights_rho,
        },
    }
}

/// `sqrt( sum_atoms weight * f(s)^2 )`, the `L2(rho)` norm of a scalar
/// function against a scalar measure.
pub fn l2_rho_norm(f: impl Fn(f64) -> f64, rho: &DiscreteMeasure) -> Result<f64> {
    debug_assert_eq!(rho.dim(), 1);
    let mut sum = 0.0;
    for idx in 0..rho.atom_count() {
        let w = rho.weight(idx);
        if w == 0.0 {
            continue;
        }
        let s = rho.location(idx)[0];
        let value = f(s);
        if !value.is_finite() {
            return Err(Error::NonFiniteAtAtom { location: s });
        }
        sum += w * value * value;
    }
    Ok(sum.sqrt())
}

/// One row of the mean-field convergence table.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub n: usize,
    /// `W1(mu^N(T), mu^{N_ref}(T))` against the largest-N run.
    pub w1_final_vs_reference: f64,
    /// `W1(mu_0^N, mu_0)`, exact for the uniform law when `d == 1`.
    pub w1_initial_to_law: Option<f64>,
}

/// Simulates every `N` in `n_list` from fresh streams of `master_seed` and
/// reports the final-time W1 distance to the largest-N run.
pub fn meanfield_convergence(
    kernel: &Kernel,
    d: usize,
    l: f64,
    n_list: &[usize],
    t_final: f64,
    m: usize,
    substeps: usize,
    master_seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("N list must be strictly increasing".into()));
    }
    let runs: Vec<Result<(Vec<f64>, Option<f64>)>> = n_list
        .par_iter()
        .enumerate()
        .map(|(idx, &n)| {
            let initial = dynamics::sample_initial_stream(d, n, l, master_seed, idx as u64);
            let w1_initial = if d == 1 {
                Some(w1_empirical_to_uniform(&initial, l))
            } else {
                None
            };
            let traj = dynamics::simulate(kernel, &initial, d, t_final, m, substeps, master_seed)?;
            let final_points = traj.snapshot(m).to_vec();
            Ok((final_points, w1_initial))
        })
        .collect();
    let mut finals = Vec::with_capacity(n_list.len());
    let mut initial_dists = Vec::with_capacity(n_list.len());
    for run in runs {
        let (points, w1_initial) = run?;
        finals.push(points);
        initial_dists.push(w1_initial);
    }
    let reference = DiscreteMeasure::uniform_on(finals.last().unwrap(), d)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for (idx, &n) in n_list.iter().enumerate() {
        let mu = DiscreteMeasure::uniform_on(&finals[idx], d)?;
        rows.push(ConvergenceRow {
            n,
            w1_final_vs_reference: wasserstein1(&mu, &reference)?,
            w1_initial_to_law: initial_dists[idx],
        });
    }
    Ok(rows)
}

/// Exact `W1` between the empirical measure of scalar `samples` and the
/// uniform law on `[-L, L]`, by the closed-form quantile integral.
pub fn w1_empirical_to_uniform(samples: &[f64], l: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut total = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let u0 = i as f64 / n as f64;
        let u1 = (i + 1) as f64 / n as f64;
        total += abs_integral_linear(x, l, u0, u1);
    }
    total
}

// integral of |x + L - 2 L u| du over [u0, u1]; the integrand is linear so
// trapezoids are exact once split at the sign change.
fn abs_integral_linear(x: f64, l: f64, u0: f64, u1: f64) -> f64 {
    let g = |u: f64| x + l - 2.0 * l * u;
    let root = (x + l) / (2.0 * l);
    if root <= u0 || root >= u1 {
        ((g(u0) + g(u1)) / 2.0).abs() * (u1 - u0)
    } else {
        g(u0).abs() / 2.0 * (root - u0) + g(u1).abs() / 2.0 * (u1 - root)
    }
}
