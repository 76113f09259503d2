//! Recursive state estimator over the transformed state `s_k = 1/(w_k + gamma)`.
//!
//! The filter grows one dimension per deposited layer. The process update
//! appends the nominal entry `a = 1/(u + gamma)` with variance `a^4 sigma_p^2`;
//! the measurement update is a scalar Kalman correction against the observed
//! compliance, linearized at the current prediction. The primary update uses
//! the covariance (gain) form, which is a rank-one Sherman-Morrison step and
//! tolerates singular prior covariances; the literal information form with
//! explicit inverses is kept as a validation reference.

use nalgebra::{DMatrix, DVector};

use crate::beam::{coeff_vector, Geometry, ModelParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    params: ModelParams,
}

impl EstimatorState {
    /// Empty (stage-0) state.
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(EstimatorState {
            mean: DVector::zeros(0),
            covariance: DMatrix::zeros(0, 0),
            params,
        })
    }

    /// Stage-`base_layers` state reached by depositing the foundation at the
    /// fixed base width, with no measurements.
    pub fn init_foundation(geometry: &Geometry, params: ModelParams) -> Result<Self> {
        geometry.validate()?;
        let mut state = EstimatorState::new(params)?;
        for _ in 0..geometry.base_layers {
            state = state.process_update(geometry.base_width_mm)?;
        }
        Ok(state)
    }

    pub fn stage(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn mean_slice(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn covariance_trace(&self) -> f64 {
        self.covariance.trace()
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Estimated compliance of the current partial part: `alpha * C_n' mu`.
    pub fn predicted_compliance(&self) -> Result<f64> {
        let n = self.stage();
        if n == 0 {
            return Err(Error::EmptyProfile);
        }
        let coeffs = coeff_vector(n)?;
        let dot: f64 = coeffs
            .values()
            .iter()
            .zip(self.mean.iter())
            .map(|(c, m)| c * m)
            .sum();
        Ok(self.params.alpha * dot)
    }

    /// Process update for a commanded width `u`: appends the nominal state
    /// entry and block-extends the covariance with its noise variance.
    pub fn process_update(&self, u: f64) -> Result<Self> {
        let effective = u + self.params.gamma;
        if effective <= 0.0 || !effective.is_finite() {
            return Err(Error::SingularWidth {
                layer: self.stage() + 1,
                effective,
            });
        }
        let a = 1.0 / effective;
        let n = self.stage();
        let mut mean = DVector::zeros(n + 1);
        mean.rows_mut(0, n).copy_from(&self.mean);
        mean[n] = a;
        let mut covariance = DMatrix::zeros(n + 1, n + 1);
        covariance
            .view_mut((0, 0), (n, n))
            .copy_from(&self.covariance);
        covariance[(n, n)] = a.powi(4) * self.params.sigma_p * self.params.sigma_p;
        Ok(EstimatorState {
            mean,
            covariance,
            params: self.params,
        })
    }

    /// No reading taken this stage: the predicted state is the posterior.
    pub fn no_measurement(&self) -> Self {
        self.clone()
    }

    fn measurement_setup(&self, observed_compliance: f64) -> Result<(DVector<f64>, f64, f64)> {
        if self.stage() == 0 {
            return Err(Error::EmptyProfile);
        }
        if !crate::beam::positive_finite(observed_compliance) {
            return Err(Error::NonPositiveObservation {
                observed: observed_compliance,
            });
        }
        let coeffs = coeff_vector(self.stage())?;
        let c = DVector::from_column_slice(coeffs.values());
        let ctmu = c.dot(&self.mean);
        if !crate::beam::positive_finite(ctmu) {
            return Err(Error::NonPositivePrediction {
                predicted: self.params.alpha * ctmu,
            });
        }
        Ok((c, ctmu, observed_compliance))
    }

    /// Measurement update in covariance (gain) form.
    ///
    /// With `H = alpha C'` and `R = alpha^4 sigma_o^2 (C' mu)^4` this is
    /// algebraically the same correction as the information form but needs no
    /// inverse of the prior covariance, so it also covers sigma_p = 0.
    pub fn measurement_update(&self, observed_compliance: f64) -> Result<Self> {
        let (c, ctmu, o) = self.measurement_setup(observed_compliance)?;
        let alpha = self.params.alpha;
        let r = alpha.powi(4) * self.params.sigma_o.powi(2) * ctmu.powi(4);
        let sigma_c = &self.covariance * &c;
        let s = alpha * alpha * c.dot(&sigma_c) + r;
        if s <= 0.0 {
            // Exact prior and exact measurement at once: keep the prior.
            return Ok(self.clone());
        }
        let innovation = o - alpha * ctmu;
        let gain = &sigma_c * (alpha / s);
        let mean = &self.mean + &gain * innovation;
        let mut covariance =
            &self.covariance - (&sigma_c * sigma_c.transpose()) * (alpha * alpha / s);
        symmetrize(&mut covariance);
        Ok(EstimatorState {
            mean,
            covariance,
            params: self.params,
        })
    }

    /// Measurement update in literal information form (explicit inverses).
    ///
    /// Validation reference only: requires an invertible prior covariance and
    /// is O(n^3) per reading.
    pub fn measurement_update_information_form(&self, observed_compliance: f64) -> Result<Self> {
        let (c, ctmu, o) = self.measurement_setup(observed_compliance)?;
        let alpha = self.params.alpha;
        let sigma_o2 = self.params.sigma_o.powi(2);
        if sigma_o2 == 0.0 {
            return Err(Error::IllConditioned {
                what: "information form needs sigma_o > 0".into(),
            });
        }
        let prior_inv =
            self.covariance
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::IllConditioned {
                    what: "prior covariance is singular; use the gain form".into(),
                })?;
        let denom = alpha * alpha * sigma_o2 * ctmu.powi(4);
        let info = &prior_inv + (&c * c.transpose()) / denom;
        let mut covariance = info.try_inverse().ok_or_else(|| Error::IllConditioned {
            what: "information matrix is singular".into(),
        })?;
        let rhs = &prior_inv * &self.mean + &c * (o / (alpha.powi(3) * sigma_o2 * ctmu.powi(4)));
        let mean = &covariance * rhs;
        symmetrize(&mut covariance);
        Ok(EstimatorState {
            mean,
            covariance,
            params: self.params,
        })
    }

    /// Clamps mean entries up to `floor`, returning how many were raised.
    ///
    /// The linearized correction can push entries of `mu` non-positive under
    /// heavy noise; a non-positive entry has no physical reading (it would be
    /// a layer of negative flexibility), so the run harness repairs the state
    /// and logs the event.
    pub fn floor_mean(&mut self, floor: f64) -> usize {
        let mut clamped = 0;
        for v in self.mean.iter_mut() {
            if *v < floor {
                *v = floor;
                clamped += 1;
            }
        }
        clamped
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}
