//! Linear uniform B-spline trial space on `[0, 2R]`.
//!
//! The space has `D` hat functions, one per knot, including full half-hats
//! at both endpoints so that constants are representable. The constraint
//! functional is the coefficient-space surrogate `2 max |a_l| + max |(D a)_l|`
//! for the bound on the function and its derivative.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Kernel, RadialFn};
use crate::error::{Error, Result};

/// Uniform knot grid on `[0, 2R]` with `D >= 2` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineSpace {
    r: f64,
    dim: usize,
}

impl SplineSpace {
    pub fn new(r: f64, dim: usize) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::Invalid(format!("spline radius must be positive, got {r}")));
        }
        if dim < 2 {
            return Err(Error::Invalid(format!("spline dimension must be >= 2, got {dim}")));
        }
        Ok(SplineSpace { r, dim })
    }

    /// Half-domain parameter `R`; the basis lives on `[0, 2R]`.
    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain_end(&self) -> f64 {
        2.0 * self.r
    }

    /// Knot spacing `h = 2R / (D - 1)`.
    pub fn spacing(&self) -> f64 {
        self.domain_end() / (self.dim - 1) as f64
    }

    pub fn knot(&self, index: usize) -> f64 {
        debug_assert!(index < self.dim);
        index as f64 * self.spacing()
    }

    pub fn knots(&self) -> Vec<f64> {
        (0..self.dim).map(|k| self.knot(k)).collect()
    }

    /// Value of hat function `index` at `r` (zero outside `[0, 2R]`).
    pub fn hat(&self, index: usize, r: f64) -> f64 {
        if r < 0.0 || r > self.domain_end() {
            return 0.0;
        }
        let h = self.spacing();
        let t = 1.0 - (r - self.knot(index)).abs() / h;
        t.max(0.0)
    }

    /// Cell index and barycentric offset for an in-domain argument.
    pub(crate) fn locate(&self, r: f64) -> Option<(usize, f64)> {
        if r < 0.0 || r > self.domain_end() {
            return None;
        }
        let h = self.spacing();
        let u = r / h;
        let cell = (u.floor() as usize).min(self.dim - 2);
        Some((cell, u - cell as f64))
    }

    /// The standard finite difference matrix: `+1` on the diagonal, `-1` on
    /// the superdiagonal, last row zero. Returned row-major `D x D`.
    pub fn difference_matrix(&self) -> Vec<f64> {
        let d = self.dim;
        let mut m = vec![0.0; d * d];
        for row in 0..d - 1 {
            m[row * d + row] = 1.0;
            m[row * d + row + 1] = -1.0;
        }
        m
    }
}

/// Spline coefficients with the constraint level they were optimized under.
#[derive(Debug, Clone)]
pub struct SplineModel {
    space: SplineSpace,
    coeffs: Vec<f64>,
    constraint_m: f64,
}

/// Serialized form: knots are implied by `(R, D)` and never stored.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplineModelJson {
    #[serde(rename = "R")]
    r: f64,
    #[serde(rename = "D")]
    d: usize,
    coeffs: Vec<f64>,
    #[serde(rename = "M")]
    m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    kernel_name: Option<String>,
}

impl RadialFn for SplineModel {
    fn value(&self, r: f64) -> f64 {
        evaluate(self, r)
    }
}

impl SplineModel {
    pub fn new(space: SplineSpace, coeffs: Vec<f64>, constraint_m: f64) -> Result<Self> {
        if coeffs.len() != space.dim() {
            return Err(Error::Invalid(format!(
                "coefficient count {} does not match spline dimension {}",
                coeffs.len(),
                space.dim()
            )));
        }
        Ok(SplineModel {
            space,
            coeffs,
            constraint_m,
        })
    }

    pub fn space(&self) -> &SplineSpace {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn constraint_m(&self) -> f64 {
        self.constraint_m
    }

    /// Wraps the model as a simulatable kernel. The sup bound of a linear
    /// spline is the largest coefficient magnitude, exactly.
    pub fn to_kernel(&self, name: impl Into<String>) -> Kernel {
        let model = self.clone();
        let sup = self
            .coeffs
            .iter()
            .fold(0.0f64, |acc, c| acc.max(c.abs()));
        Kernel::new(name, sup, false, move |r| evaluate(&model, r))
    }

    pub fn write_json(&self, path: &Path, kernel_name: Option<&str>) -> Result<()> {
        let json = SplineModelJson {
            r: self.space.r(),
            d: self.space.dim(),
            coeffs: self.coeffs.clone(),
            m: self.constraint_m,
            kernel_name: kernel_name.map(str::to_string),
        };
        std::fs::write(path, serde_json::to_string_pretty(&json)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<(SplineModel, Option<String>)> {
        let json: SplineModelJson = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let space = SplineSpace::new(json.r, json.d)?;
        Ok((SplineModel::new(space, json.coeffs, json.m)?, json.kernel_name))
    }
}

/// Evaluates the spline at `r`; zero outside `[0, 2R]`.
pub fn evaluate(model: &SplineModel, r: f64) -> f64 {
    match model.space.locate(r) {
        Some((cell, theta)) => {
            model.coeffs[cell] * (1.0 - theta) + model.coeffs[cell + 1] * theta
        }
        None => 0.0,
    }
}

/// Constraint functional `2 ||a||_inf + ||D a||_inf` in coefficient space.
pub fn constraint_value(coeffs: &[f64]) -> f64 {
    let max_abs = coeffs.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    let max_diff = coeffs
        .windows(2)
        .fold(0.0f64, |acc, w| acc.max((w[0] - w[1]).abs()));
    2.0 * max_abs + max_diff
}

/// Nodal interpolation of a kernel: `coeffs[l] = a(knot_l)`, with the
/// constraint level set to the interpolant's own constraint value.
pub fn interpolate(kernel: &Kernel, space: &SplineSpace) -> SplineModel {
    let coeffs: Vec<f64> = (0..space.dim()).map(|k| kernel.eval(space.knot(k))).collect();
    let m = constraint_value(&coeffs);
    SplineModel {
        space: space.clone(),
        coeffs,
        constraint_m: m,
    }
}
