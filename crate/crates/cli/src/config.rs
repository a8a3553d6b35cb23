//! Experiment configuration: a single JSON document with unknown keys
//! rejected, mirroring the parameter tables of the protocol.

use std::path::Path;

use serde::Deserialize;

use kernel_infer::dynamics::{constant_kernel, osc_sing, trunc_lj, zero_kernel, Kernel};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    TruncLj {
        #[serde(default = "default_g")]
        g: f64,
        #[serde(default = "default_r0")]
        r0: f64,
        #[serde(default = "default_m_cap")]
        m_cap: f64,
        #[serde(default = "default_r_cut")]
        r_cut: f64,
        #[serde(default = "default_delta")]
        delta: f64,
    },
    OscSing {
        #[serde(default = "default_omega")]
        omega: f64,
        #[serde(default = "default_m_cap")]
        m_cap: f64,
    },
    Zero,
    Constant {
        #[serde(default = "default_c")]
        c: f64,
    },
}

fn default_g() -> f64 {
    1.0
}
fn default_r0() -> f64 {
    1.0
}
fn default_m_cap() -> f64 {
    100.0
}
fn default_r_cut() -> f64 {
    4.0
}
fn default_delta() -> f64 {
    0.5
}
fn default_omega() -> f64 {
    20.0
}
fn default_c() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn build(&self) -> Kernel {
        match *self {
            KernelSpec::TruncLj {
                g,
                r0,
                m_cap,
                r_cut,
                delta,
            } => trunc_lj(g, r0, m_cap, r_cut, delta),
            KernelSpec::OscSing { omega, m_cap } => osc_sing(omega, m_cap),
            KernelSpec::Zero => zero_kernel(),
            KernelSpec::Constant { c } => constant_kernel(c),
        }
    }
}

/// Rule mapping the particle count to the basis dimension.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BasisRule {
    Fixed(usize),
    Named(String),
}

impl BasisRule {
    pub fn dimension(&self, n: usize) -> Result<usize, CliError> {
        let dim = match self {
            BasisRule::Fixed(d) => *d,
            BasisRule::Named(rule) => match rule.to_ascii_lowercase().as_str() {
                "2n" => 2 * n,
                "3n-5" => {
                    let raw = 3 * n;
                    if raw < 7 {
                        return Err(CliError::Config(format!(
                            "rule 3n-5 needs N >= 3, got N = {n}"
                        )));
                    }
                    raw - 5
                }
                other => {
                    return Err(CliError::Config(format!(
                        "unknown basis rule `{other}` (expected \"2N\", \"3N-5\" or a number)"
                    )))
                }
            },
        };
        if dim < 2 {
            return Err(CliError::Config(format!(
                "basis rule yields dimension {dim} < 2 for N = {n}"
            )));
        }
        Ok(dim)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    pub l: f64,
    pub t: f64,
    pub snapshots: usize,
    pub substeps: usize,
    pub kernel: KernelSpec,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    pub basis: BasisRule,
    #[serde(default)]
    pub constraint_m: Option<f64>,
    #[serde(default)]
    pub constraint_m_list: Option<Vec<f64>>,
    #[serde(default)]
    pub theta: Option<usize>,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
    /// SHA-256 of the config document, filled at load time.
    #[serde(skip)]
    pub source_hash: String,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: ExperimentConfig = serde_json::from_str(&body)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        config.source_hash = {
            use sha2::{Digest, Sha256};
            let mut hasher = Sha256::new();
            hasher.update(body.as_bytes());
            hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.d == 0 || self.snapshots == 0 || self.substeps == 0 {
            return Err(CliError::Config(
                "d, snapshots and substeps must be positive".into(),
            ));
        }
        if !(self.l > 0.0) || !(self.t > 0.0) {
            return Err(CliError::Config("L and T must be positive".into()));
        }
        match (&self.n, &self.n_list) {
            (Some(_), Some(_)) => {
                return Err(CliError::Config("give either `n` or `n_list`, not both".into()))
            }
            (None, None) => return Err(CliError::Config("one of `n` or `n_list` is required".into())),
            (_, Some(list)) if list.is_empty() => {
                return Err(CliError::Config("`n_list` must not be empty".into()))
            }
            _ => {}
        }
        if let (Some(_), Some(_)) = (&self.constraint_m, &self.constraint_m_list) {
            return Err(CliError::Config(
                "give either `constraint_m` or `constraint_m_list`, not both".into(),
            ));
        }
        if self.particle_counts().iter().any(|n| *n == 0) {
            return Err(CliError::Config("particle counts must be positive".into()));
        }
        for n in self.particle_counts() {
            self.basis.dimension(n)?;
        }
        Ok(())
    }

    pub fn particle_counts(&self) -> Vec<usize> {
        match (&self.n, &self.n_list) {
            (Some(n), None) => vec![*n],
            (None, Some(list)) => list.clone(),
            _ => unreachable!("validated"),
        }
    }

    pub fn single_constraint(&self) -> Result<f64, CliError> {
        self.constraint_m
            .ok_or_else(|| CliError::Config("this command needs `constraint_m`".into()))
    }

    pub fn constraint_list(&self) -> Result<Vec<f64>, CliError> {
        self.constraint_m_list
            .clone()
            .ok_or_else(|| CliError::Config("this command needs `constraint_m_list`".into()))
    }
}
