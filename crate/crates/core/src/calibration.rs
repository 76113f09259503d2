//! Parameter identification from constant-width test specimens.
//!
//! `m` distinct input widths, `p` specimens per width, `q` compliance
//! readings per specimen. An affine regression of per-width mean stiffness
//! against input width identifies `(alpha, gamma)`; plug-in estimators built
//! on the per-specimen compliance means identify the two noise scales.

use serde::{Deserialize, Serialize};

use crate::beam::{coeff_sum, positive_finite, ModelParams};
use crate::error::{Error, Result};
use crate::sim::{NoiseStream, PrintState};

/// Compliance readings from a batch of constant-width specimens.
///
/// `readings[i][j][l]` is reading `l` of specimen `j` at width `widths_mm[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecimenDataset {
    pub widths_mm: Vec<f64>,
    pub replicates: usize,
    pub readings_per_specimen: usize,
    pub layers_per_specimen: usize,
    pub readings: Vec<Vec<Vec<f64>>>,
}

/// How the per-width stiffness estimate is formed from compliance readings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum StiffnessConvention {
    /// 1 / mean(compliance readings) per width group (default).
    #[default]
    ReciprocalOfMeanCompliance,
    /// mean(1 / compliance reading) per width group (sensitivity check).
    MeanOfReciprocals,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionDiagnostics {
    pub slope: f64,
    pub intercept: f64,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub params: ModelParams,
    pub diagnostics: RegressionDiagnostics,
}

/// Synthesis protocol for generating datasets from the process simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProtocol {
    pub widths_mm: Vec<f64>,
    pub replicates: usize,
    pub readings_per_specimen: usize,
    pub layers_per_specimen: usize,
}

impl SpecimenDataset {
    pub fn validate(&self) -> Result<()> {
        let m = self.widths_mm.len();
        if m < 2 {
            return Err(Error::DegenerateRegression {
                what: format!("need at least 2 widths, got {m}"),
            });
        }
        if self.replicates < 1 || self.readings_per_specimen < 1 || self.layers_per_specimen < 1 {
            return Err(Error::InvalidParameter {
                what: "replicates, readings_per_specimen, layers_per_specimen must be >= 1".into(),
            });
        }
        if self.readings.len() != m {
            return Err(Error::DimensionMismatch {
                what: format!(
                    "readings has {} width groups, expected {m}",
                    self.readings.len()
                ),
            });
        }
        for (i, group) in self.readings.iter().enumerate() {
            if group.len() != self.replicates {
                return Err(Error::DimensionMismatch {
                    what: format!("width group {i} has {} specimens", group.len()),
                });
            }
            for (j, spec) in group.iter().enumerate() {
                if spec.len() != self.readings_per_specimen {
                    return Err(Error::DimensionMismatch {
                        what: format!("specimen ({i},{j}) has {} readings", spec.len()),
                    });
                }
                if let Some(&bad) = spec.iter().find(|r| !positive_finite(**r)) {
                    return Err(Error::InvalidParameter {
                        what: format!("non-positive compliance reading {bad} at ({i},{j})"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Mean compliance of specimen (i, j) over its readings.
    fn specimen_mean(&self, i: usize, j: usize) -> f64 {
        let spec = &self.readings[i][j];
        spec.iter().sum::<f64>() / spec.len() as f64
    }

    /// Mean compliance over all readings of a width group.
    fn group_mean(&self, i: usize) -> f64 {
        let group = &self.readings[i];
        let total: f64 = group.iter().flatten().sum();
        total / (group.len() * self.readings_per_specimen) as f64
    }
}

/// Identifies `(alpha, gamma)` by regressing per-width stiffness estimates
/// against the input width: the model predicts `K_i = (u_i + gamma) / (alpha S)`
/// with `S = n^3/3`, so slope `a` and intercept `b` give
/// `alpha = 1/(a S)`, `gamma = b/a`.
pub fn estimate_alpha_gamma(ds: &SpecimenDataset) -> Result<(f64, f64, RegressionDiagnostics)> {
    estimate_alpha_gamma_with(ds, StiffnessConvention::default())
}

pub fn estimate_alpha_gamma_with(
    ds: &SpecimenDataset,
    convention: StiffnessConvention,
) -> Result<(f64, f64, RegressionDiagnostics)> {
    ds.validate()?;
    let m = ds.widths_mm.len();
    let span = ds
        .widths_mm
        .iter()
        .cloned()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| {
            (lo.min(w), hi.max(w))
        });
    if span.1 - span.0 <= 0.0 {
        return Err(Error::DegenerateRegression {
            what: "all input widths are equal".into(),
        });
    }

    let k_hat: Vec<f64> = (0..m)
        .map(|i| match convention {
            StiffnessConvention::ReciprocalOfMeanCompliance => 1.0 / ds.group_mean(i),
            StiffnessConvention::MeanOfReciprocals => {
                let group = &ds.readings[i];
                let total: f64 = group.iter().flatten().map(|c| 1.0 / c).sum();
                total / (group.len() * ds.readings_per_specimen) as f64
            }
        })
        .collect();

    // Ordinary least squares of k_hat against width.
    let mf = m as f64;
    let sx: f64 = ds.widths_mm.iter().sum();
    let sy: f64 = k_hat.iter().sum();
    let sxx: f64 = ds.widths_mm.iter().map(|x| x * x).sum();
    let sxy: f64 = ds.widths_mm.iter().zip(&k_hat).map(|(x, y)| x * y).sum();
    let denom = mf * sxx - sx * sx;
    let slope = (mf * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / mf;
    if !positive_finite(slope) {
        return Err(Error::NegativeSlope { slope });
    }
    let residual_norm = ds
        .widths_mm
        .iter()
        .zip(&k_hat)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        .sqrt();

    let s = coeff_sum(ds.layers_per_specimen);
    let alpha = 1.0 / (slope * s);
    let gamma = intercept / slope;
    Ok((
        alpha,
        gamma,
        RegressionDiagnostics {
            slope,
            intercept,
            residual_norm,
        },
    ))
}

/// Plug-in estimator of the observation-noise scale from within-specimen
/// reading scatter: each residual `(C_ijl - Chat_ij)/Chat_ij^2` estimates one
/// reading-noise draw, scaled by `(u_i + gamma)/alpha`.
pub fn estimate_sigma_o(ds: &SpecimenDataset, alpha: f64, gamma: f64) -> Result<f64> {
    ds.validate()?;
    if !positive_finite(alpha) {
        return Err(Error::InvalidParameter {
            what: format!("alpha must be > 0, got {alpha}"),
        });
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for (i, &u) in ds.widths_mm.iter().enumerate() {
        for j in 0..ds.replicates {
            let mean = ds.specimen_mean(i, j);
            if mean == 0.0 {
                return Err(Error::Numerical {
                    what: format!("zero mean compliance for specimen ({i},{j})"),
                });
            }
            for &c in &ds.readings[i][j] {
                let term = (c - mean) / (mean * mean) * (u + gamma) / alpha;
                acc += term * term;
                count += 1;
            }
        }
    }
    Ok((acc / count as f64).sqrt())
}

/// Plug-in estimator of the width-noise scale.
///
/// For each specimen, the coefficient-weighted noise sum is isolated from the
/// per-specimen compliance mean as
/// `sum_k c_k eps_k = (Chat_ij (u_i+gamma)/alpha - S)(u_i+gamma)`; its square
/// over `sum_k c_k^2` estimates `sigma_p^2`, averaged over all specimens.
pub fn estimate_sigma_p(ds: &SpecimenDataset, alpha: f64, gamma: f64) -> Result<f64> {
    ds.validate()?;
    if !positive_finite(alpha) {
        return Err(Error::InvalidParameter {
            what: format!("alpha must be > 0, got {alpha}"),
        });
    }
    let n = ds.layers_per_specimen;
    let s = coeff_sum(n);
    let sum_c_sq: f64 = (1..=n)
        .map(|k| {
            let c = crate::beam::coeff_sixths(n, k) as f64 / 6.0;
            c * c
        })
        .sum();
    let mut acc = 0.0;
    let mut count = 0usize;
    for (i, &u) in ds.widths_mm.iter().enumerate() {
        for j in 0..ds.replicates {
            let mean = ds.specimen_mean(i, j);
            let weighted_noise = (mean * (u + gamma) / alpha - s) * (u + gamma);
            acc += weighted_noise * weighted_noise / sum_c_sq;
            count += 1;
        }
    }
    Ok((acc / count as f64).sqrt())
}

/// Runs the full identification pipeline on a dataset.
pub fn calibrate(ds: &SpecimenDataset) -> Result<CalibrationResult> {
    let (alpha, gamma, diagnostics) = estimate_alpha_gamma(ds)?;
    if gamma <= 0.0 {
        return Err(Error::DegenerateRegression {
            what: format!("identified gamma {gamma} is not positive"),
        });
    }
    let sigma_o = estimate_sigma_o(ds, alpha, gamma)?;
    let sigma_p = estimate_sigma_p(ds, alpha, gamma)?;
    let params = ModelParams {
        alpha,
        gamma,
        sigma_p,
        sigma_o,
    };
    params.validate()?;
    Ok(CalibrationResult {
        params,
        diagnostics,
    })
}

/// Prints and probes synthetic specimens with the process simulator.
///
/// Invalid (non-positive) raw readings are re-measured, since a physical
/// calibration run would simply repeat a botched probe.
pub fn synthesize_dataset(
    true_params: &ModelParams,
    protocol: &DatasetProtocol,
    seed: u64,
) -> Result<SpecimenDataset> {
    true_params.validate()?;
    if protocol.widths_mm.len() < 2 {
        return Err(Error::DegenerateRegression {
            what: "protocol needs at least 2 widths".into(),
        });
    }
    let root = NoiseStream::new(seed);
    let mut readings = Vec::with_capacity(protocol.widths_mm.len());
    for (i, &u) in protocol.widths_mm.iter().enumerate() {
        let mut group = Vec::with_capacity(protocol.replicates);
        for j in 0..protocol.replicates {
            let tag = (i * protocol.replicates + j) as u64;
            let process = root.substream(2 * tag);
            let mut observe = root.substream(2 * tag + 1);
            let mut state = PrintState::new(*true_params)?;
            for _ in 0..protocol.layers_per_specimen {
                state.deposit_layer(u, &process)?;
            }
            let mut spec = Vec::with_capacity(protocol.readings_per_specimen);
            let mut attempts = 0;
            while spec.len() < protocol.readings_per_specimen {
                let reading = state.measure_stiffness(&mut observe)?;
                if let Some(c) = reading.observed_compliance {
                    spec.push(c);
                }
                attempts += 1;
                if attempts > 1000 * protocol.readings_per_specimen {
                    return Err(Error::Numerical {
                        what: "too many invalid readings while synthesizing dataset".into(),
                    });
                }
            }
            group.push(spec);
        }
        readings.push(group);
    }
    Ok(SpecimenDataset {
        widths_mm: protocol.widths_mm.clone(),
        replicates: protocol.replicates,
        readings_per_specimen: protocol.readings_per_specimen,
        layers_per_specimen: protocol.layers_per_specimen,
        readings,
    })
}
