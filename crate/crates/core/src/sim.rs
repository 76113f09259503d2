//! Ground-truth simulator of the printing process and the stiffness probe.
//!
//! The simulator applies noise through the exact nonlinear entry points
//! (width space for deposition, reciprocal space for readings), so the
//! estimator's linearized model is genuinely approximate, matching the real
//! process it stands in for.

use serde::{Deserialize, Serialize};

use crate::beam::{compliance, ModelParams};
use crate::error::{Error, Result};

const REJECTION_ATTEMPT_CAP: u64 = 10_000;

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash3(seed: u64, a: u64, b: u64) -> u64 {
    mix64(seed ^ mix64(a ^ mix64(b)))
}

/// u64 -> (0, 1), never exactly 0 or 1, so logs stay finite.
fn to_unit_open(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) / 9_007_199_254_740_992.0
}

/// Deterministic counter-based Gaussian stream.
///
/// Every draw is a pure function of `(seed, index, attempt)`, so draws keyed
/// by layer index are independent of whether measurements happened in
/// between. Identical seeds and draw sequences give identical realizations
/// regardless of thread count or scheduling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStream {
    seed: u64,
    counter: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream { seed, counter: 0 }
    }

    /// Derives an independent stream for a separate noise domain.
    pub fn substream(&self, tag: u64) -> NoiseStream {
        NoiseStream {
            seed: hash3(self.seed, tag, 0x5EED_5EED_5EED_5EED),
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws(&self) -> u64 {
        self.counter
    }

    /// Unit normal addressed by `(index, attempt)`; Box-Muller on two
    /// counter-derived uniforms.
    pub fn unit_normal_at(&self, index: u64, attempt: u64) -> f64 {
        let u1 = to_unit_open(hash3(self.seed, index, 2 * attempt));
        let u2 = to_unit_open(hash3(self.seed, index, 2 * attempt + 1));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Sequential unit normal; advances the draw counter.
    pub fn next_unit_normal(&mut self) -> f64 {
        let v = self.unit_normal_at(self.counter, 0);
        self.counter += 1;
        v
    }
}

/// One stiffness probe of the partially built part.
///
/// The raw reading is `1/C + nu`; when that is non-positive the reading is
/// flagged invalid instead of being clamped, and the caller decides what to
/// do with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reading {
    pub raw_stiffness: f64,
    pub observed_compliance: Option<f64>,
}

impl Reading {
    pub fn is_valid(&self) -> bool {
        self.observed_compliance.is_some()
    }
}

/// A measurement row as logged by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub stage: usize,
    pub reading_index: usize,
    pub observed_compliance: f64,
    pub valid: bool,
}

/// When to pause and probe the part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasurementSchedule {
    Never,
    Periodic {
        period: usize,
        readings_per_stop: usize,
    },
}

impl MeasurementSchedule {
    fn stop_after(&self, deposited: usize) -> Option<usize> {
        match *self {
            MeasurementSchedule::Never => None,
            MeasurementSchedule::Periodic {
                period,
                readings_per_stop,
            } => {
                if period > 0 && deposited.is_multiple_of(period) {
                    Some(readings_per_stop)
                } else {
                    None
                }
            }
        }
    }
}

/// Hidden ground truth of the partially built part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrintState {
    widths: Vec<f64>,
    params: ModelParams,
    redraws: u64,
}

impl PrintState {
    pub fn new(true_params: ModelParams) -> Result<Self> {
        true_params.validate()?;
        Ok(PrintState {
            widths: Vec::new(),
            params: true_params,
            redraws: 0,
        })
    }

    /// Stage index = number of deposited layers.
    pub fn stage(&self) -> usize {
        self.widths.len()
    }

    pub fn realized_widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn true_params(&self) -> &ModelParams {
        &self.params
    }

    /// Total number of rejected (redrawn) width-noise samples so far.
    pub fn redraw_count(&self) -> u64 {
        self.redraws
    }

    /// Deposits one layer of commanded width `u`; the realized width is
    /// `u + eps` with `eps ~ N(0, sigma_p^2)`, truncated by rejection to keep
    /// `w + gamma > 0`. Returns the realized width.
    ///
    /// Process noise is keyed by layer index (and rejection attempt), so two
    /// runs sharing a seed see the same noise for any layer they both print.
    pub fn deposit_layer(&mut self, u: f64, noise: &NoiseStream) -> Result<f64> {
        let layer = self.widths.len() as u64 + 1;
        if self.params.sigma_p == 0.0 {
            if u + self.params.gamma <= 0.0 {
                return Err(Error::SingularWidth {
                    layer: layer as usize,
                    effective: u + self.params.gamma,
                });
            }
            self.widths.push(u);
            return Ok(u);
        }
        for attempt in 0..REJECTION_ATTEMPT_CAP {
            let w = u + self.params.sigma_p * noise.unit_normal_at(layer, attempt);
            if w + self.params.gamma > 0.0 {
                self.widths.push(w);
                return Ok(w);
            }
            self.redraws += 1;
        }
        Err(Error::Numerical {
            what: format!(
                "layer {layer}: no admissible width after {REJECTION_ATTEMPT_CAP} draws \
                 (u={u}, gamma={})",
                self.params.gamma
            ),
        })
    }

    /// True compliance of the current partial part.
    pub fn true_compliance(&self) -> Result<f64> {
        compliance(&self.widths, &self.params)
    }

    /// Probes the part: the raw reading is `1/C + nu` with
    /// `nu ~ N(0, sigma_o^2)`, and the observed compliance is its exact
    /// reciprocal (no linearization).
    pub fn measure_stiffness(&self, noise: &mut NoiseStream) -> Result<Reading> {
        let c = self.true_compliance()?;
        let nu = self.params.sigma_o * noise.next_unit_normal();
        let raw = 1.0 / c + nu;
        let observed = if raw > 0.0 { Some(1.0 / raw) } else { None };
        Ok(Reading {
            raw_stiffness: raw,
            observed_compliance: observed,
        })
    }

    /// Deposits `commands` in order, pausing per `schedule` to take readings.
    pub fn run_schedule(
        &mut self,
        commands: &[f64],
        schedule: MeasurementSchedule,
        process_noise: &NoiseStream,
        observation_noise: &mut NoiseStream,
    ) -> Result<Vec<MeasurementRecord>> {
        let mut records = Vec::new();
        for (i, &u) in commands.iter().enumerate() {
            self.deposit_layer(u, process_noise)?;
            if let Some(readings) = schedule.stop_after(i + 1) {
                for r in 0..readings {
                    let reading = self.measure_stiffness(observation_noise)?;
                    records.push(MeasurementRecord {
                        stage: self.stage(),
                        reading_index: r,
                        observed_compliance: reading.observed_compliance.unwrap_or(0.0),
                        valid: reading.is_valid(),
                    });
                }
            }
        }
        Ok(records)
    }
}
