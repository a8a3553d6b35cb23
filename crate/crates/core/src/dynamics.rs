//! Interaction kernels and the first-order particle system
//! `dx_i/dt = (1/N) sum_{j != i} a(|x_i - x_j|)(x_j - x_i)`.
//!
//! Trajectories are produced by a fixed-step classical Runge-Kutta scheme and
//! sampled at `m + 1` uniform snapshots; observed velocities are backward
//! finite differences of those snapshots.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Anything that evaluates as a radial function of a pairwise distance.
pub trait RadialFn {
    fn value(&self, r: f64) -> f64;
}

impl<F: Fn(f64) -> f64> RadialFn for F {
    fn value(&self, r: f64) -> f64 {
        self(r)
    }
}

/// A radial interaction kernel `a(r)` together with the metadata the
/// estimates need: a sup-norm bound, and whether the kernel is singular at
/// the origin (in which case the bound only covers the capped evaluator).
#[derive(Clone)]
pub struct Kernel {
    name: String,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    sup_bound: f64,
    singular_at_zero: bool,
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Kernel")
            .field("name", &self.name)
            .field("sup_bound", &self.sup_bound)
            .field("singular_at_zero", &self.singular_at_zero)
            .finish()
    }
}

impl RadialFn for Kernel {
    fn value(&self, r: f64) -> f64 {
        (self.eval)(r)
    }
}

impl Kernel {
    pub fn new(
        name: impl Into<String>,
        sup_bound: f64,
        singular_at_zero: bool,
        eval: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Kernel {
            name: name.into(),
            eval: Arc::new(eval),
            sup_bound,
            singular_at_zero,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn singular_at_zero(&self) -> bool {
        self.singular_at_zero
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.eval)(r)
    }

    /// Evaluation that reports a non-finite value at a strictly positive
    /// distance as an error naming the offending `r`.
    pub fn eval_checked(&self, r: f64) -> Result<f64> {
        let v = (self.eval)(r);
        if r > 0.0 && !v.is_finite() {
            return Err(Error::NonFiniteKernel {
                name: self.name.clone(),
                r,
            });
        }
        Ok(v)
    }

    /// Lipschitz bound of the kernel on `[lo, hi]`, estimated by difference
    /// quotients on a dense grid (10^4 intervals).
    pub fn lipschitz_bound_on(&self, lo: f64, hi: f64) -> f64 {
        grid_lipschitz(|r| (self.eval)(r), lo, hi)
    }
}

/// Dense-grid difference-quotient estimate of a Lipschitz constant.
pub(crate) fn grid_lipschitz(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    assert!(hi > lo, "empty interval");
    let cells = 10_000usize;
    let h = (hi - lo) / cells as f64;
    let mut prev = f(lo);
    let mut max_quot = 0.0f64;
    for k in 1..=cells {
        let cur = f(lo + k as f64 * h);
        let quot = ((cur - prev) / h).abs();
        if quot > max_quot {
            max_quot = quot;
        }
        prev = cur;
    }
    max_quot
}

/// Truncated Lennard-Jones-type kernel:
/// `clip(G ((r0/r)^8 - (r0/r)^4), -m_cap, m_cap)` times a smooth ramp that
/// takes it to zero on `[r_cut, r_cut + delta]`.
pub fn trunc_lj(g: f64, r0: f64, m_cap: f64, r_cut: f64, delta: f64) -> Kernel {
    let eval = move |r: f64| -> f64 {
        let q = (r0 / r).powi(4);
        let raw = (g * q * (q - 1.0)).clamp(-m_cap, m_cap);
        raw * cutoff_ramp(r, r_cut, delta)
    };
    Kernel::new("trunc_lj", m_cap, false, eval)
}

/// Default-parameter truncated Lennard-Jones kernel (G=1, r0=1, cap 100,
/// cutoff on [4, 4.5]).
pub fn trunc_lj_default() -> Kernel {
    trunc_lj(1.0, 1.0, 100.0, 4.0, 0.5)
}

// C^1 ramp: 1 below r_cut, 0 above r_cut + delta.
fn cutoff_ramp(r: f64, r_cut: f64, delta: f64) -> f64 {
    if r <= r_cut {
        1.0
    } else if r >= r_cut + delta {
        0.0
    } else {
        let s = (r - r_cut) / delta;
        1.0 - s * s * (3.0 - 2.0 * s)
    }
}

/// Oscillatory kernel with a singularity at the origin:
/// `r^{-1/2} (1 + sin(omega r))`, capped at `m_cap` for `r < (1/m_cap)^2`.
pub fn osc_sing(omega: f64, m_cap: f64) -> Kernel {
    let r_min = (1.0 / m_cap).powi(2);
    // The envelope decreases past r_min, so the capped sup sits at r_min.
    let sup = m_cap * (1.0 + (omega * r_min).sin());
    let eval = move |r: f64| -> f64 {
        if r < r_min {
            m_cap
        } else {
            r.powf(-0.5) * (1.0 + (omega * r).sin())
        }
    };
    Kernel::new("osc_sing", sup, true, eval)
}

pub fn osc_sing_default() -> Kernel {
    osc_sing(20.0, 100.0)
}

pub fn zero_kernel() -> Kernel {
    Kernel::new("zero", 0.0, false, |_| 0.0)
}

pub fn constant_kernel(c: f64) -> Kernel {
    Kernel::new("constant", c.abs(), false, move |_| c)
}

/// The built-in catalog with default parameters.
pub fn builtin_kernels() -> Vec<Kernel> {
    vec![
        trunc_lj_default(),
        osc_sing_default(),
        zero_kernel(),
        constant_kernel(1.0),
    ]
}

/// Catalog lookup by name.
pub fn kernel_by_name(name: &str) -> Result<Kernel> {
    builtin_kernels()
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| Error::UnknownKernel(name.to_string()))
}

/// Positions of `N` particles in `R^d` at `m + 1` uniform time snapshots,
/// plus the provenance needed to reproduce them.
#[derive(Debug, Clone)]
pub struct Trajectory {
    d: usize,
    n: usize,
    times: Vec<f64>,
    /// Row-major `[m + 1][n][d]`.
    positions: Vec<f64>,
    seed: u64,
    kernel_name: String,
    step_dt: f64,
}

/// Sidecar metadata stored next to a trajectory CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySidecar {
    pub d: usize,
    pub n: usize,
    pub t_final: f64,
    pub m: usize,
    pub seed: u64,
    pub kernel_name: String,
    pub step_dt: f64,
}

impl Trajectory {
    /// Builds a trajectory from raw parts, validating the time grid
    /// (strictly increasing, uniform within 1e-12 relative).
    pub fn from_parts(
        d: usize,
        n: usize,
        times: Vec<f64>,
        positions: Vec<f64>,
        seed: u64,
        kernel_name: impl Into<String>,
        step_dt: f64,
    ) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::Invalid("d and N must be positive".into()));
        }
        if times.len() < 2 {
            return Err(Error::Invalid("need at least two snapshots".into()));
        }
        if positions.len() != times.len() * n * d {
            return Err(Error::Invalid(format!(
                "positions has {} entries, expected {}",
                positions.len(),
                times.len() * n * d
            )));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::Invalid("times must be strictly increasing".into()));
        }
        let t_span = times[times.len() - 1] - times[0];
        for w in times.windows(2) {
            let step = w[1] - w[0];
            if !(step > 0.0) || (step - dt).abs() > 1e-12 * dt.max(t_span) {
                return Err(Error::Invalid("snapshot times must be uniform".into()));
            }
        }
        Ok(Trajectory {
            d,
            n,
            times,
            positions,
            seed,
            kernel_name: kernel_name.into(),
            step_dt,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn particle_count(&self) -> usize {
        self.n
    }

    /// Number of snapshot intervals `m` (there are `m + 1` snapshots).
    pub fn interval_count(&self) -> usize {
        self.times.len() - 1
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshot_dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kernel_name(&self) -> &str {
        &self.kernel_name
    }

    pub fn step_dt(&self) -> f64 {
        self.step_dt
    }

    /// Position of particle `i` at snapshot `k`.
    pub fn position(&self, k: usize, i: usize) -> &[f64] {
        let at = (k * self.n + i) * self.d;
        &self.positions[at..at + self.d]
    }

    /// All positions at snapshot `k`, laid out `[n][d]`.
    pub fn snapshot(&self, k: usize) -> &[f64] {
        let at = k * self.n * self.d;
        &self.positions[at..at + self.n * self.d]
    }

    pub fn positions_raw(&self) -> &[f64] {
        &self.positions
    }

    /// Largest particle norm over all snapshots.
    pub fn max_radius(&self) -> f64 {
        let mut max = 0.0f64;
        for k in 0..=self.interval_count() {
            for i in 0..self.n {
                let norm = norm(self.position(k, i));
                if norm > max {
                    max = norm;
                }
            }
        }
        max
    }

    /// Largest pairwise distance over all snapshots.
    pub fn max_pairwise_distance(&self) -> f64 {
        let mut max = 0.0f64;
        for k in 0..=self.interval_count() {
            for i in 0..self.n {
                for j in (i + 1)..self.n {
                    let r = dist(self.position(k, i), self.position(k, j));
                    if r > max {
                        max = r;
                    }
                }
            }
        }
        max
    }

    /// Keeps every `stride`-th snapshot; `m` must be divisible by `stride`.
    /// The retained positions are the same numbers, so this is the exact
    /// coarse observation of one underlying path.
    pub fn subsample(&self, stride: usize) -> Result<Trajectory> {
        let m = self.interval_count();
        if stride == 0 || m % stride != 0 {
            return Err(Error::Invalid(format!(
                "stride {stride} does not divide the {m} intervals"
            )));
        }
        let mut times = Vec::with_capacity(m / stride + 1);
        let mut positions = Vec::with_capacity((m / stride + 1) * self.n * self.d);
        for k in (0..=m).step_by(stride) {
            times.push(self.times[k]);
            positions.extend_from_slice(self.snapshot(k));
        }
        Trajectory::from_parts(
            self.d,
            self.n,
            times,
            positions,
            self.seed,
            self.kernel_name.clone(),
            self.step_dt,
        )
    }

    /// Writes the trajectory as CSV (`t,particle,c0,...`) with 17 significant
    /// digits plus a JSON sidecar at the same path with extension `json`.
    pub fn write_csv(&self, csv_path: &Path) -> Result<()> {
        use std::io::Write;
        let mut out = String::new();
        out.push_str("t,particle");
        for c in 0..self.d {
            out.push_str(&format!(",c{c}"));
        }
        out.push('\n');
        for k in 0..=self.interval_count() {
            for i in 0..self.n {
                out.push_str(&format!("{:.16e},{}", self.times[k], i));
                for c in 0..self.d {
                    out.push_str(&format!(",{:.16e}", self.position(k, i)[c]));
                }
                out.push('\n');
            }
        }
        let mut file = std::fs::File::create(csv_path)?;
        file.write_all(out.as_bytes())?;

        let sidecar = TrajectorySidecar {
            d: self.d,
            n: self.n,
            t_final: *self.times.last().unwrap(),
            m: self.interval_count(),
            seed: self.seed,
            kernel_name: self.kernel_name.clone(),
            step_dt: self.step_dt,
        };
        let json = serde_json::to_string_pretty(&sidecar)?;
        std::fs::write(csv_path.with_extension("json"), json)?;
        Ok(())
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`]; the sidecar
    /// must sit next to the CSV.
    pub fn read_csv(csv_path: &Path) -> Result<Trajectory> {
        let sidecar: TrajectorySidecar =
            serde_json::from_str(&std::fs::read_to_string(csv_path.with_extension("json"))?)?;
        let body = std::fs::read_to_string(csv_path)?;
        let mut lines = body.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty trajectory CSV".into()))?;
        let expected_cols = 2 + sidecar.d;
        if header.split(',').count() != expected_cols {
            return Err(Error::Parse(format!(
                "trajectory CSV header has wrong arity: `{header}`"
            )));
        }
        let mut times = Vec::with_capacity(sidecar.m + 1);
        let mut positions = Vec::with_capacity((sidecar.m + 1) * sidecar.n * sidecar.d);
        for (row, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected_cols {
                return Err(Error::Parse(format!("bad row {}: `{line}`", row + 2)));
            }
            let t: f64 = fields[0]
                .parse()
                .map_err(|e| Error::Parse(format!("bad time in row {}: {e}", row + 2)))?;
            let particle: usize = fields[1]
                .parse()
                .map_err(|e| Error::Parse(format!("bad particle in row {}: {e}", row + 2)))?;
            if particle == 0 {
                times.push(t);
            }
            for f in &fields[2..] {
                positions.push(
                    f.parse()
                        .map_err(|e| Error::Parse(format!("bad coordinate in row {}: {e}", row + 2)))?,
                );
            }
        }
        if times.len() != sidecar.m + 1 || positions.len() != (sidecar.m + 1) * sidecar.n * sidecar.d
        {
            return Err(Error::Parse(format!(
                "trajectory CSV does not match sidecar (read {} snapshots, {} coordinates)",
                times.len(),
                positions.len()
            )));
        }
        Trajectory::from_parts(
            sidecar.d,
            sidecar.n,
            times,
            positions,
            sidecar.seed,
            sidecar.kernel_name,
            sidecar.step_dt,
        )
    }
}

/// Backward-difference velocity samples, indexed `k = 1..=m`.
#[derive(Debug, Clone)]
pub struct VelocitySamples {
    n: usize,
    d: usize,
    /// Row-major `[m][n][d]`.
    values: Vec<f64>,
}

impl VelocitySamples {
    pub fn from_values(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() % (n * d) != 0 || values.is_empty() {
            return Err(Error::Invalid("velocity array has wrong length".into()));
        }
        Ok(VelocitySamples { n, d, values })
    }

    pub fn sample_count(&self) -> usize {
        self.values.len() / (self.n * self.d)
    }

    /// Velocity of particle `i` at snapshot `k` (1-based, `k = 1..=m`).
    pub fn velocity(&self, k: usize, i: usize) -> &[f64] {
        let at = ((k - 1) * self.n + i) * self.d;
        &self.values[at..at + self.d]
    }

    pub fn values_raw(&self) -> &[f64] {
        &self.values
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Right-hand side of the particle system for every particle at once.
///
/// Per-particle contributions are accumulated coordinate-wise in sorted
/// order, so relabeling the particles permutes the output bit-exactly.
fn velocity_field(
    kernel: &Kernel,
    d: usize,
    n: usize,
    x: &[f64],
    out: &mut [f64],
    terms: &mut [Vec<f64>],
) -> Result<()> {
    debug_assert_eq!(x.len(), n * d);
    debug_assert_eq!(out.len(), n * d);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        for buf in terms.iter_mut() {
            buf.clear();
        }
        let xi = &x[i * d..(i + 1) * d];
        for j in 0..n {
            if j == i {
                continue;
            }
            let xj = &x[j * d..(j + 1) * d];
            let r = dist(xi, xj);
            if r == 0.0 {
                // Coincident pair: a(|z|)z extends by zero at z = 0.
                continue;
            }
            let w = kernel.eval_checked(r)?;
            for c in 0..d {
                terms[c].push(w * (xj[c] - xi[c]));
            }
        }
        for c in 0..d {
            terms[c].sort_unstable_by(f64::total_cmp);
            out[i * d + c] = terms[c].iter().sum::<f64>() * inv_n;
        }
    }
    Ok(())
}

/// Interaction force on one particle:
/// `(1/N) sum_{j != i} a(|x_i - x_j|)(x_j - x_i)`. The `j = i` term is zero
/// by definition, also for singular kernels.
pub fn eval_force(kernel: &Kernel, index: usize, positions: &[f64], d: usize) -> Result<Vec<f64>> {
    let n = positions.len() / d;
    assert!(index < n, "particle index out of range");
    assert_eq!(positions.len(), n * d);
    let inv_n = 1.0 / n as f64;
    let xi = &positions[index * d..(index + 1) * d];
    let mut terms: Vec<Vec<f64>> = vec![Vec::with_capacity(n); d];
    for j in 0..n {
        if j == index {
            continue;
        }
        let xj = &positions[j * d..(j + 1) * d];
        let r = dist(xi, xj);
        if r == 0.0 {
            continue;
        }
        let w = kernel.eval_checked(r)?;
        for c in 0..d {
            terms[c].push(w * (xj[c] - xi[c]));
        }
    }
    Ok((0..d)
        .map(|c| {
            terms[c].sort_unstable_by(f64::total_cmp);
            terms[c].iter().sum::<f64>() * inv_n
        })
        .collect())
}

/// Simulates the system with classical fixed-step RK4.
///
/// The step is `dt = T / (m * substeps)` and snapshots are recorded at the
/// `m + 1` uniform instants `k T / m`. Deterministic for fixed inputs. Fails
/// if the state leaves ten times the a-priori radius bound or turns
/// non-finite.
pub fn simulate(
    kernel: &Kernel,
    initial: &[f64],
    d: usize,
    t_final: f64,
    m: usize,
    substeps: usize,
    seed: u64,
) -> Result<Trajectory> {
    if d == 0 || initial.is_empty() || initial.len() % d != 0 {
        return Err(Error::Invalid("initial positions must be [N][d]".into()));
    }
    if !(t_final > 0.0) || m == 0 || substeps == 0 {
        return Err(Error::Invalid("T, m and substeps must be positive".into()));
    }
    if initial.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("initial positions must be finite".into()));
    }
    let n = initial.len() / d;
    let dt = t_final / (m as f64 * substeps as f64);

    let c0 = (0..n)
        .map(|i| norm(&initial[i * d..(i + 1) * d]))
        .fold(0.0f64, f64::max);
    let radius_bound = c0 * (2.0 * kernel.sup_bound() * t_final).exp();

    let mut x = initial.to_vec();
    let mut k1 = vec![0.0; n * d];
    let mut k2 = vec![0.0; n * d];
    let mut k3 = vec![0.0; n * d];
    let mut k4 = vec![0.0; n * d];
    let mut stage = vec![0.0; n * d];
    let mut terms: Vec<Vec<f64>> = vec![Vec::with_capacity(n); d];

    let mut times = Vec::with_capacity(m + 1);
    let mut positions = Vec::with_capacity((m + 1) * n * d);
    times.push(0.0);
    positions.extend_from_slice(&x);

    for snap in 1..=m {
        for _ in 0..substeps {
            velocity_field(kernel, d, n, &x, &mut k1, &mut terms)?;
            axpy(&mut stage, &x, &k1, 0.5 * dt);
            velocity_field(kernel, d, n, &stage, &mut k2, &mut terms)?;
            axpy(&mut stage, &x, &k2, 0.5 * dt);
            velocity_field(kernel, d, n, &stage, &mut k3, &mut terms)?;
            axpy(&mut stage, &x, &k3, dt);
            velocity_field(kernel, d, n, &stage, &mut k4, &mut terms)?;
            for idx in 0..n * d {
                x[idx] += dt / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
            }
        }
        let max_norm = (0..n)
            .map(|i| norm(&x[i * d..(i + 1) * d]))
            .fold(0.0f64, f64::max);
        if !max_norm.is_finite() || max_norm > 10.0 * radius_bound {
            return Err(Error::Unstable {
                observed: max_norm,
                bound: radius_bound,
            });
        }
        times.push(snap as f64 * (t_final / m as f64));
        positions.extend_from_slice(&x);
    }

    Trajectory::from_parts(d, n, times, positions, seed, kernel.name(), dt)
}

fn axpy(out: &mut [f64], x: &[f64], k: &[f64], factor: f64) {
    for i in 0..out.len() {
        out[i] = x[i] + factor * k[i];
    }
}

/// I.i.d. uniform initial positions on the cube `[-L, L]^d`, drawn from
/// stream `stream` of `seed`.
pub fn sample_initial_stream(d: usize, n: usize, l: f64, seed: u64, stream: u64) -> Vec<f64> {
    assert!(l > 0.0, "half-width must be positive");
    let mut rng = stream_rng(seed, stream);
    (0..n * d)
        .map(|_| l * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

/// Uniform initial positions on `[-L, L]^d` (stream 0 of `seed`).
pub fn sample_initial(d: usize, n: usize, l: f64, seed: u64) -> Vec<f64> {
    sample_initial_stream(d, n, l, seed, 0)
}

/// Backward differences `(x(t_k) - x(t_{k-1})) / dt` for `k = 1..=m`.
pub fn finite_difference_velocities(traj: &Trajectory) -> VelocitySamples {
    let (d, n, m) = (traj.dim(), traj.particle_count(), traj.interval_count());
    let mut values = Vec::with_capacity(m * n * d);
    for k in 1..=m {
        let dt = traj.times()[k] - traj.times()[k - 1];
        let cur = traj.snapshot(k);
        let prev = traj.snapshot(k - 1);
        for idx in 0..n * d {
            values.push((cur[idx] - prev[idx]) / dt);
        }
    }
    VelocitySamples { n, d, values }
}

/// Exact model velocities `(1/N) sum_j a(|x_i - x_j|)(x_j - x_i)` evaluated
/// at snapshots `k = 1..=m`. Test harnesses and diagnostics use these where
/// the finite-difference error must be excluded.
pub fn model_velocities(kernel: &Kernel, traj: &Trajectory) -> Result<VelocitySamples> {
    let (d, n, m) = (traj.dim(), traj.particle_count(), traj.interval_count());
    let mut values = Vec::with_capacity(m * n * d);
    let mut out = vec![0.0; n * d];
    let mut terms: Vec<Vec<f64>> = vec![Vec::with_capacity(n); d];
    for k in 1..=m {
        velocity_field(kernel, d, n, traj.snapshot(k), &mut out, &mut terms)?;
        values.extend_from_slice(&out);
    }
    Ok(VelocitySamples { n, d, values })
}
