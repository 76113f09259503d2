//! Cantilever beam mechanics for layered builds.
//!
//! A beam of `n` layers with per-layer widths `w_1..w_n` has tip compliance
//! `alpha * sum_k c_{n,k} / (w_k + gamma)`, where the bending-influence
//! coefficients `c_{n,k}` come from the piecewise-constant-stiffness solution
//! of the Euler-Bernoulli equation and `(alpha, gamma)` encode the affine
//! dependence of the cross-section's second moment of area on the width.
//! Everything here is deterministic; units are mm, gram-force, mm/gram for
//! compliance and gram/mm for stiffness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Build geometry: layer height, layer count, and the fixed-width foundation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub layer_height_mm: f64,
    pub total_layers: usize,
    pub base_layers: usize,
    pub base_width_mm: f64,
}

/// Finite and strictly positive (rejects NaN and infinities).
pub(crate) fn positive_finite(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

pub(crate) fn nonnegative_finite(x: f64) -> bool {
    x.is_finite() && x >= 0.0
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if !positive_finite(self.layer_height_mm) {
            return Err(Error::InvalidParameter {
                what: format!("layer_height_mm must be > 0, got {}", self.layer_height_mm),
            });
        }
        if self.total_layers == 0 {
            return Err(Error::InvalidParameter {
                what: "total_layers must be >= 1".into(),
            });
        }
        if self.base_layers >= self.total_layers {
            return Err(Error::InvalidParameter {
                what: format!(
                    "base_layers ({}) must be < total_layers ({})",
                    self.base_layers, self.total_layers
                ),
            });
        }
        if !positive_finite(self.base_width_mm) {
            return Err(Error::InvalidParameter {
                what: format!("base_width_mm must be > 0, got {}", self.base_width_mm),
            });
        }
        Ok(())
    }

    /// Number of layers under control (above the foundation).
    pub fn controlled_layers(&self) -> usize {
        self.total_layers - self.base_layers
    }
}

/// Identified process-model parameters.
///
/// `alpha` (1/gram) and `gamma` (mm) define the affine cross-section model;
/// `sigma_p` (mm) is the per-layer width noise and `sigma_o` the standard
/// deviation of the stiffness-reading noise in the reading's own units
/// (gram/mm).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub gamma: f64,
    pub sigma_p: f64,
    pub sigma_o: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !positive_finite(self.alpha) {
            return Err(Error::InvalidParameter {
                what: format!("alpha must be > 0, got {}", self.alpha),
            });
        }
        if !positive_finite(self.gamma) {
            return Err(Error::InvalidParameter {
                what: format!("gamma must be > 0, got {}", self.gamma),
            });
        }
        if !nonnegative_finite(self.sigma_p) {
            return Err(Error::InvalidParameter {
                what: format!("sigma_p must be >= 0, got {}", self.sigma_p),
            });
        }
        if !nonnegative_finite(self.sigma_o) {
            return Err(Error::InvalidParameter {
                what: format!("sigma_o must be >= 0, got {}", self.sigma_o),
            });
        }
        Ok(())
    }
}

/// Six times the bending-influence coefficient, exact in integer arithmetic.
///
/// `6 * c_{n,k} = 3(2k-1)(n-k) + 3k^2 - 1`. Exact for every `n, k` that fits
/// the physical range here (n <= ~10^6); callers needing the float value use
/// [`coeff`].
pub fn coeff_sixths(n: usize, k: usize) -> u64 {
    debug_assert!(k >= 1 && k <= n);
    let (n, k) = (n as u64, k as u64);
    3 * (2 * k - 1) * (n - k) + 3 * k * k - 1
}

/// Bending-influence coefficient `c_{n,k}` of layer `k` on the stage-`n` tip.
pub fn coeff(n: usize, k: usize) -> Result<f64> {
    if n < 1 || k < 1 || k > n {
        return Err(Error::CoeffDomain { n, k });
    }
    Ok(coeff_sixths(n, k) as f64 / 6.0)
}

/// The full coefficient vector `C_n = (c_{n,1}, ..., c_{n,n})`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVector {
    stage: usize,
    values: Vec<f64>,
}

impl CoeffVector {
    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Computes `C_n` from the closed form (no recursion).
pub fn coeff_vector(n: usize) -> Result<CoeffVector> {
    if n < 1 {
        return Err(Error::CoeffDomain { n, k: 0 });
    }
    let values = (1..=n).map(|k| coeff_sixths(n, k) as f64 / 6.0).collect();
    Ok(CoeffVector { stage: n, values })
}

/// Sum of the stage-`n` coefficients in closed form: `n^3 / 3`.
pub fn coeff_sum(n: usize) -> f64 {
    let n = n as f64;
    n * n * n / 3.0
}

fn check_effective_width(layer: usize, w: f64, gamma: f64) -> Result<f64> {
    let effective = w + gamma;
    if effective <= 0.0 || !effective.is_finite() {
        return Err(Error::SingularWidth { layer, effective });
    }
    Ok(effective)
}

/// Tip compliance (mm/gram) of a beam with the given realized widths.
pub fn compliance(widths: &[f64], params: &ModelParams) -> Result<f64> {
    if widths.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let n = widths.len();
    let mut acc = 0.0;
    for (idx, &w) in widths.iter().enumerate() {
        let effective = check_effective_width(idx + 1, w, params.gamma)?;
        acc += coeff_sixths(n, idx + 1) as f64 / 6.0 / effective;
    }
    Ok(params.alpha * acc)
}

/// Tip stiffness (gram/mm); reciprocal of [`compliance`].
pub fn stiffness(widths: &[f64], params: &ModelParams) -> Result<f64> {
    Ok(1.0 / compliance(widths, params)?)
}

/// Predicted compliance of the finished `total_layers`-layer part, splitting
/// the beam into an already-printed prefix (known through the state estimate
/// entries `mu_k ~ 1/(w_k + gamma)`) and a planned suffix of commanded widths.
///
/// Stage-`total_layers` coefficients are used for both sums so the value is
/// exactly the finished-part compliance when the estimates are exact.
pub fn final_compliance_split(
    prefix_means: &[f64],
    plan: &[f64],
    params: &ModelParams,
    total_layers: usize,
) -> Result<f64> {
    if prefix_means.len() + plan.len() != total_layers {
        return Err(Error::DimensionMismatch {
            what: format!(
                "prefix ({}) + plan ({}) != total_layers ({})",
                prefix_means.len(),
                plan.len(),
                total_layers
            ),
        });
    }
    let mut acc = 0.0;
    for (idx, &mu) in prefix_means.iter().enumerate() {
        acc += coeff_sixths(total_layers, idx + 1) as f64 / 6.0 * mu;
    }
    let offset = prefix_means.len();
    for (idx, &u) in plan.iter().enumerate() {
        let layer = offset + idx + 1;
        let effective = check_effective_width(layer, u, params.gamma)?;
        acc += coeff_sixths(total_layers, layer) as f64 / 6.0 / effective;
    }
    Ok(params.alpha * acc)
}

/// Variance of the finished-part compliance induced by per-layer width noise
/// on the planned suffix: `alpha^2 sigma_p^2 sum_k c_{N,k}^2 / (u_k+gamma)^4`.
pub fn final_compliance_variance(
    plan: &[f64],
    params: &ModelParams,
    total_layers: usize,
) -> Result<f64> {
    if plan.len() > total_layers {
        return Err(Error::DimensionMismatch {
            what: format!(
                "plan ({}) longer than total_layers ({})",
                plan.len(),
                total_layers
            ),
        });
    }
    let first = total_layers - plan.len();
    let mut acc = 0.0;
    for (idx, &u) in plan.iter().enumerate() {
        let layer = first + idx + 1;
        let effective = check_effective_width(layer, u, params.gamma)?;
        let c = coeff_sixths(total_layers, layer) as f64 / 6.0;
        acc += c * c / effective.powi(4);
    }
    Ok(params.alpha * params.alpha * params.sigma_p * params.sigma_p * acc)
}
