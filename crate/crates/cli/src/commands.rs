//! The five experiment commands. Every command is deterministic given its
//! config: per-run randomness comes from fixed streams of the config seed,
//! and outputs are written in config order after all runs finish.

use std::path::{Path, PathBuf};
use std::time::Instant;

use kernel_infer::basis::evaluate;
use kernel_infer::diagnostics::{
    discrete_coercivity, estimate_ct, fixtures, random_matrix_mc, trajectory_bound_check, Misfit,
};
use kernel_infer::dynamics::{
    finite_difference_velocities, model_velocities, sample_initial_stream, simulate, Kernel,
    Trajectory,
};
use kernel_infer::learn::{
    assemble_with_velocities, m_sweep, minimize, montecarlo_average, space_for_trajectory,
    LearnReport, RunConfig,
};
use kernel_infer::measures::{empirical_rho, l2_rho_norm};

use crate::config::ExperimentConfig;
use crate::CliError;

pub struct CommandOutcome {
    pub artifacts: Vec<PathBuf>,
    /// False when some solve hit the iteration cap; the caller maps this to
    /// the numerical-failure exit code after artifacts are on disk.
    pub all_converged: bool,
}

fn ensure_out_dir(config: &ExperimentConfig, override_dir: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = match override_dir {
        Some(d) => d.to_path_buf(),
        None => PathBuf::from(config.out_dir.as_deref().unwrap_or("out")),
    };
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_manifest(
    out: &Path,
    config: &ExperimentConfig,
    artifacts: &[PathBuf],
    started: Instant,
) -> Result<PathBuf, CliError> {
    let manifest = serde_json::json!({
        "config_hash": config.source_hash,
        "artifacts": artifacts.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    let path = out.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(path)
}

fn simulate_run(
    config: &ExperimentConfig,
    kernel: &Kernel,
    n: usize,
    stream: u64,
) -> Result<Trajectory, CliError> {
    let initial = sample_initial_stream(config.d, n, config.l, config.seed, stream);
    simulate(
        kernel,
        &initial,
        config.d,
        config.t,
        config.snapshots,
        config.substeps,
        config.seed,
    )
    .map_err(CliError::from)
}

pub fn cmd_simulate(
    config: &ExperimentConfig,
    override_dir: Option<&Path>,
) -> Result<CommandOutcome, CliError> {
    let started = Instant::now();
    let out = ensure_out_dir(config, override_dir)?;
    let kernel = config.kernel.build();
    let mut artifacts = Vec::new();
    for (idx, n) in config.particle_counts().into_iter().enumerate() {
        let traj = simulate_run(config, &kernel, n, idx as u64)?;
        let path = out.join(format!("trajectory_n{n}.csv"));
        traj.write_csv(&path)?;
        artifacts.push(path.clone());
        artifacts.push(path.with_extension("json"));
    }
    artifacts.push(write_manifest(&out, config, &artifacts, started)?);
    Ok(CommandOutcome {
        artifacts,
        all_converged: true,
    })
}

fn learn_one(
    config: &ExperimentConfig,
    kernel: &Kernel,
    traj: &Trajectory,
    exact_velocities: bool,
) -> Result<LearnReport, CliError> {
    let n = traj.particle_count();
    let dim = config.basis.dimension(n)?;
    let m_constraint = config.single_constraint()?;
    let space = space_for_trajectory(traj, dim)?;
    let velocities = if exact_velocities {
        model_velocities(kernel, traj)?
    } else {
        finite_difference_velocities(traj)
    };
    let problem = assemble_with_velocities(traj, &space, &velocities, m_constraint)?;
    let mut report = minimize(&problem);
    let rho = empirical_rho(traj).rho;
    let model = report.model.clone();
    report.l2_rho_error = Some(l2_rho_norm(|s| kernel.eval(s) - evaluate(&model, s), &rho)?);
    Ok(report)
}

fn write_reconstruction_csv(
    path: &Path,
    kernel: &Kernel,
    report: &LearnReport,
) -> Result<(), CliError> {
    let space = report.model.space();
    let mut body = String::from("r,a_true,a_hat\n");
    let points = 512;
    for i in 0..points {
        let r = space.domain_end() * i as f64 / (points - 1) as f64;
        body.push_str(&format!(
            "{:.16e},{:.16e},{:.16e}\n",
            r,
            kernel.eval(r),
            evaluate(&report.model, r)
        ));
    }
    std::fs::write(path, body).map_err(|e| CliError::Io(e.to_string()))
}

pub fn cmd_learn(
    config: &ExperimentConfig,
    override_dir: Option<&Path>,
    trajectory: Option<&Path>,
    exact_velocities: bool,
) -> Result<CommandOutcome, CliError> {
    let started = Instant::now();
    let out = ensure_out_dir(config, override_dir)?;
    let kernel = config.kernel.build();

    let runs: Vec<Trajectory> = match trajectory {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "trajectory file {} does not exist",
                    path.display()
                )));
            }
            vec![Trajectory::read_csv(path)?]
        }
        None => {
            let mut runs = Vec::new();
            for (idx, n) in config.particle_counts().into_iter().enumerate() {
                runs.push(simulate_run(config, &kernel, n, idx as u64)?);
            }
            runs
        }
    };

    let mut artifacts = Vec::new();
    let mut all_converged = true;
    for traj in &runs {
        let n = traj.particle_count();
        let report = learn_one(config, &kernel, traj, exact_velocities)?;
        all_converged &= report.converged;
        let report_path = out.join(format!("report_n{n}.json"));
        report.write_json(&report_path, Some(kernel.name()))?;
        let recon_path = out.join(format!("reconstruction_n{n}.csv"));
        write_reconstruction_csv(&recon_path, &kernel, &report)?;
        artifacts.push(report_path);
        artifacts.push(recon_path);
    }
    artifacts.push(write_manifest(&out, config, &artifacts, started)?);
    Ok(CommandOutcome {
        artifacts,
        all_converged,
    })
}

pub fn cmd_sweep_m(
    config: &ExperimentConfig,
    override_dir: Option<&Path>,
) -> Result<CommandOutcome, CliError> {
    let started = Instant::now();
    let out = ensure_out_dir(config, override_dir)?;
    let counts = config.particle_counts();
    if counts.len() != 1 {
        return Err(CliError::Config(
            "sweep-m runs on a single particle count; give `n`, not `n_list`".into(),
        ));
    }
    let m_list = config.constraint_list()?;
    let kernel = config.kernel.build();
    let traj = simulate_run(config, &kernel, counts[0], 0)?;
    let dim = config.basis.dimension(counts[0])?;
    let sweep = m_sweep(&traj, dim, &m_list)?;
    let path = out.join("sweep_m.csv");
    sweep.write_csv(&path)?;
    let all_converged = sweep.points.iter().all(|p| p.converged);
    let mut artifacts = vec![path];
    artifacts.push(write_manifest(&out, config, &artifacts, started)?);
    Ok(CommandOutcome {
        artifacts,
        all_converged,
    })
}

pub fn cmd_montecarlo(
    config: &ExperimentConfig,
    override_dir: Option<&Path>,
) -> Result<CommandOutcome, CliError> {
    let started = Instant::now();
    let out = ensure_out_dir(config, override_dir)?;
    let counts = config.particle_counts();
    if counts.len() != 1 {
        return Err(CliError::Config(
            "montecarlo runs on a single particle count; give `n`, not `n_list`".into(),
        ));
    }
    let theta = config
        .theta
        .ok_or_else(|| CliError::Config("montecarlo needs `theta`".into()))?;
    if theta < 2 {
        return Err(CliError::Config(format!(
            "montecarlo needs theta >= 2 runs, got {theta}"
        )));
    }
    let kernel = config.kernel.build();
    let run = RunConfig {
        d: config.d,
        n: counts[0],
        l: config.l,
        t_final: config.t,
        snapshots: config.snapshots,
        substeps: config.substeps,
    };
    let dim = config.basis.dimension(counts[0])?;
    let band = montecarlo_average(
        &kernel,
        &run,
        dim,
        config.single_constraint()?,
        theta,
        config.seed,
    )?;
    let band_path = out.join("band.csv");
    band.write_csv(&band_path)?;
    let summary = serde_json::json!({
        "theta": theta,
        "runs": band.reports.iter().map(|r| serde_json::json!({
            "objective": r.objective,
            "kkt_residual": r.kkt_residual,
            "converged": r.converged,
            "l2_rho_error": r.l2_rho_error,
        })).collect::<Vec<_>>(),
    });
    let summary_path = out.join("montecarlo.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary).unwrap())
        .map_err(|e| CliError::Io(e.to_string()))?;
    let all_converged = band.reports.iter().all(|r| r.converged);
    let mut artifacts = vec![band_path, summary_path];
    artifacts.push(write_manifest(&out, config, &artifacts, started)?);
    Ok(CommandOutcome {
        artifacts,
        all_converged,
    })
}

pub fn cmd_diagnose(
    config: &ExperimentConfig,
    override_dir: Option<&Path>,
) -> Result<CommandOutcome, CliError> {
    let started = Instant::now();
    let out = ensure_out_dir(config, override_dir)?;
    let kernel = config.kernel.build();

    // Exact polygon identities for one representative misfit.
    let misfit = Misfit::from_weighted_gap(|r| 0.6 * (1.7 * r).sin() + 0.2);
    let triangle = discrete_coercivity(&fixtures::equilateral_triangle(1.3, 1.0, 2), &misfit);
    let triangle_expected = misfit.eval(1.3).powi(2) / 3.0;
    let square = discrete_coercivity(&fixtures::square(0.9, 1.0, 2), &misfit);
    let square_expected = {
        let term = misfit.eval(1.8) + 2.0f64.sqrt() * misfit.eval(2.0f64.sqrt() * 0.9);
        term * term / 16.0
    };
    let pair = discrete_coercivity(
        &fixtures::two_particles(2, &[0.0, 0.0], &[1.1, -0.4], 1.0, 2),
        &misfit,
    );

    // Learning sweep with the empirical coercivity ratio per N.
    let mut all_converged = true;
    let mut rows = Vec::new();
    let mut first_model: Option<kernel_infer::basis::SplineModel> = None;
    for (idx, n) in config.particle_counts().into_iter().enumerate() {
        let traj = simulate_run(config, &kernel, n, idx as u64)?;
        let report = learn_one(config, &kernel, &traj, false)?;
        all_converged &= report.converged;
        let coercivity = discrete_coercivity(
            &traj,
            &Misfit::between(kernel.clone(), report.model.clone()),
        );
        let velocities = finite_difference_velocities(&traj);
        let ct = match estimate_ct(&traj, &kernel, &report.model, &velocities) {
            Ok(value) => Some(value),
            Err(kernel_infer::Error::DegenerateMisfit(_)) => None,
            Err(other) => return Err(other.into()),
        };
        if first_model.is_none() {
            first_model = Some(report.model.clone());
        }
        rows.push((n, coercivity, ct));
    }

    let mut csv = String::from("N,lhs,rhs,ratio\n");
    for (n, report, _) in &rows {
        csv.push_str(&format!(
            "{n},{:.16e},{:.16e},{:.16e}\n",
            report.lhs, report.rhs_unscaled, report.ratio
        ));
    }
    let csv_path = out.join("coercivity.csv");
    std::fs::write(&csv_path, csv).map_err(|e| CliError::Io(e.to_string()))?;

    // Trajectory bound check with the first learned model as the candidate.
    let model = first_model.expect("at least one run");
    let candidate = model.to_kernel("learned");
    let n0 = config.particle_counts()[0];
    let initial = sample_initial_stream(config.d, n0, config.l, config.seed, 1_000);
    let bound = trajectory_bound_check(
        &kernel,
        &candidate,
        &initial,
        config.d,
        config.t,
        config.snapshots,
        config.substeps,
    )?;

    let (rm_mean, rm_stderr) = random_matrix_mc(50, config.d, 2_000, config.seed);

    let report = serde_json::json!({
        "identities": {
            "triangle": { "lhs": triangle.lhs, "expected": triangle_expected },
            "square": { "lhs": square.lhs, "expected": square_expected },
            "two_particle_ratio": pair.ratio,
        },
        "coercivity_sweep": rows.iter().map(|(n, r, ct)| serde_json::json!({
            "n": n, "lhs": r.lhs, "rhs": r.rhs_unscaled, "ratio": r.ratio,
            "empirical_c_t": ct,
        })).collect::<Vec<_>>(),
        "trajectory_bound": {
            "deviation": bound.deviation,
            "bound": bound.bound,
            "constant": bound.constant,
            "error_value": bound.error_value,
            "holds": bound.holds(),
        },
        "random_matrix": { "mean": rm_mean, "stderr": rm_stderr },
    });
    let json_path = out.join("diagnose.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&report).unwrap())
        .map_err(|e| CliError::Io(e.to_string()))?;

    let mut artifacts = vec![csv_path, json_path];
    artifacts.push(write_manifest(&out, config, &artifacts, started)?);
    Ok(CommandOutcome {
        artifacts,
        all_converged,
    })
}
