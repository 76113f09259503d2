//! Open-loop and closed-loop experiment execution.
//!
//! Both modes print the fixed-width foundation, solve the width plan once
//! from the foundation estimate, and then diverge: the open loop executes
//! that plan blindly, while the closed loop pauses on schedule, folds the
//! readings into the state estimate, and re-solves the remaining widths.
//! Paired trials share layer-indexed process noise (common random numbers),
//! so open/closed differences are attributable to feedback, not luck.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use layerbeam_core::estimator::EstimatorState;
use layerbeam_core::planner::{Plan, PlanProblem, SolverStats};
use layerbeam_core::sim::{MeasurementRecord, NoiseStream, PrintState};
use layerbeam_core::Error;

use crate::config::RunConfig;
use crate::report::{ModeAggregate, ReportTable, TrialOutcome};
use crate::HarnessError;

/// Floor applied to estimate means after measurement corrections.
const MEAN_FLOOR: f64 = 1e-12;

const PROCESS_STREAM: u64 = 0;
const OBSERVE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Open,
    Closed,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Open => write!(f, "open"),
            Mode::Closed => write!(f, "closed"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open" => Ok(Mode::Open),
            "closed" => Ok(Mode::Closed),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub stage: usize,
    pub commanded_mm: f64,
    pub realized_mm: f64,
    /// Controller's final-compliance prediction after this layer (NaN during
    /// the foundation, before any plan exists).
    pub predicted_final_compliance: f64,
    /// True when a fresh plan was computed immediately before this layer.
    pub replanned: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Mode,
    pub trial: usize,
    pub rows: Vec<StageRow>,
    pub measurements: Vec<MeasurementRecord>,
    pub final_compliance_mm_per_g: f64,
    pub final_stiffness_g_per_mm: f64,
    pub abs_error_g_per_mm: f64,
    pub pct_error: f64,
    pub infeasible_replans: usize,
    pub invalid_readings: usize,
    pub mean_clamps: usize,
    pub noise_redraws: u64,
    pub solver_stats: Vec<SolverStats>,
}

/// Deterministic per-trial seed derived from the master seed.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    NoiseStream::new(master).substream(trial as u64).seed()
}

fn map_core(e: Error) -> HarnessError {
    match e {
        Error::Infeasible { .. } => HarnessError::Infeasible(e.to_string()),
        Error::InvalidParameter { .. }
        | Error::DimensionMismatch { .. }
        | Error::DegenerateRegression { .. }
        | Error::NegativeSlope { .. }
        | Error::CoeffDomain { .. }
        | Error::HorizonTooLarge { .. }
        | Error::EmptyProfile => HarnessError::Config(e.to_string()),
        _ => HarnessError::Numerical(e.to_string()),
    }
}

struct Trial<'a> {
    cfg: &'a RunConfig,
    sim: PrintState,
    est: EstimatorState,
    process: NoiseStream,
    observe: NoiseStream,
    rows: Vec<StageRow>,
    measurements: Vec<MeasurementRecord>,
    invalid_readings: usize,
    mean_clamps: usize,
    solver_stats: Vec<SolverStats>,
}

impl<'a> Trial<'a> {
    fn start(cfg: &'a RunConfig, trial: usize) -> Result<Self, HarnessError> {
        let root = NoiseStream::new(trial_seed(cfg.seed, trial));
        let mut t = Trial {
            cfg,
            sim: PrintState::new(cfg.simulator).map_err(map_core)?,
            est: EstimatorState::new(cfg.controller).map_err(map_core)?,
            process: root.substream(PROCESS_STREAM),
            observe: root.substream(OBSERVE_STREAM),
            rows: Vec::with_capacity(cfg.geometry.total_layers),
            measurements: Vec::new(),
            invalid_readings: 0,
            mean_clamps: 0,
            solver_stats: Vec::new(),
        };
        for _ in 0..cfg.geometry.base_layers {
            let u = cfg.geometry.base_width_mm;
            let w = t.sim.deposit_layer(u, &t.process).map_err(map_core)?;
            t.est = t.est.process_update(u).map_err(map_core)?;
            t.rows.push(StageRow {
                stage: t.sim.stage(),
                commanded_mm: u,
                realized_mm: w,
                predicted_final_compliance: f64::NAN,
                replanned: false,
            });
        }
        Ok(t)
    }

    fn problem(&self, prev_width: f64) -> PlanProblem {
        PlanProblem {
            stage: self.est.stage() + 1,
            horizon_end: self.cfg.geometry.total_layers,
            prefix_mean: self.est.mean_slice().to_vec(),
            prev_width,
            params: self.cfg.controller,
            bounds: self.cfg.bounds,
            target_compliance: self.cfg.target_compliance_mm_per_g,
            weights: self.cfg.weights,
            options: self.cfg.solver,
        }
    }

    fn solve(&mut self, prev_width: f64) -> Result<Plan, Error> {
        let plan = self.problem(prev_width).solve()?;
        self.solver_stats.push(plan.stats);
        Ok(plan)
    }

    fn deposit_planned(
        &mut self,
        u: f64,
        remaining: &[f64],
        replanned: bool,
    ) -> Result<(), HarnessError> {
        let w = self.sim.deposit_layer(u, &self.process).map_err(map_core)?;
        self.est = self.est.process_update(u).map_err(map_core)?;
        let predicted = layerbeam_core::beam::final_compliance_split(
            self.est.mean_slice(),
            remaining,
            &self.cfg.controller,
            self.cfg.geometry.total_layers,
        )
        .map_err(map_core)?;
        self.rows.push(StageRow {
            stage: self.sim.stage(),
            commanded_mm: u,
            realized_mm: w,
            predicted_final_compliance: predicted,
            replanned,
        });
        Ok(())
    }

    fn take_readings(&mut self) -> Result<(), HarnessError> {
        for r in 0..self.cfg.schedule.readings_per_stop {
            let reading = self
                .sim
                .measure_stiffness(&mut self.observe)
                .map_err(map_core)?;
            self.measurements.push(MeasurementRecord {
                stage: self.sim.stage(),
                reading_index: r,
                observed_compliance: reading.observed_compliance.unwrap_or(0.0),
                valid: reading.is_valid(),
            });
            match reading.observed_compliance {
                Some(o) => {
                    self.est = self.est.measurement_update(o).map_err(map_core)?;
                    self.mean_clamps += self.est.floor_mean(MEAN_FLOOR);
                }
                None => self.invalid_readings += 1,
            }
        }
        Ok(())
    }

    fn finish(
        self,
        mode: Mode,
        trial: usize,
        infeasible_replans: usize,
    ) -> Result<RunRecord, HarnessError> {
        let final_compliance = self.sim.true_compliance().map_err(map_core)?;
        let final_stiffness = 1.0 / final_compliance;
        let target_stiffness = self.cfg.target_stiffness();
        let abs_error = (final_stiffness - target_stiffness).abs();
        Ok(RunRecord {
            mode,
            trial,
            rows: self.rows,
            measurements: self.measurements,
            final_compliance_mm_per_g: final_compliance,
            final_stiffness_g_per_mm: final_stiffness,
            abs_error_g_per_mm: abs_error,
            pct_error: 100.0 * abs_error / target_stiffness,
            infeasible_replans,
            invalid_readings: self.invalid_readings,
            mean_clamps: self.mean_clamps,
            noise_redraws: self.sim.redraw_count(),
            solver_stats: self.solver_stats,
        })
    }
}

/// Solves the plan once from the foundation estimate and executes it blind.
pub fn run_open_loop(cfg: &RunConfig, trial: usize) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let mut t = Trial::start(cfg, trial)?;
    let plan = t.solve(cfg.geometry.base_width_mm).map_err(map_core)?;
    for (i, &u) in plan.widths.iter().enumerate() {
        t.deposit_planned(u, &plan.widths[i + 1..], i == 0)?;
    }
    t.finish(Mode::Open, trial, 0)
}

/// Executes with scheduled measurement stops and replanning.
///
/// An infeasible replan (the filter believes the target is no longer
/// reachable) falls back to the previous plan's suffix and is counted; a
/// print cannot halt mid-part.
pub fn run_closed_loop(cfg: &RunConfig, trial: usize) -> Result<RunRecord, HarnessError> {
    cfg.validate()?;
    let mut t = Trial::start(cfg, trial)?;
    let mut plan = t.solve(cfg.geometry.base_width_mm).map_err(map_core)?;
    let mut cursor = 0usize;
    let mut infeasible_replans = 0usize;
    let mut replanned_next = true;
    let controlled = cfg.geometry.controlled_layers();

    for i in 0..controlled {
        let u = plan.widths[cursor];
        cursor += 1;
        t.deposit_planned(u, &plan.widths[cursor..], replanned_next)?;
        replanned_next = false;

        let at_stop = (i + 1) % cfg.schedule.period == 0;
        if at_stop {
            t.take_readings()?;
            if i + 1 < controlled {
                match t.solve(u) {
                    Ok(new_plan) => {
                        plan = new_plan;
                        cursor = 0;
                        replanned_next = true;
                    }
                    Err(Error::Infeasible { .. }) => {
                        infeasible_replans += 1;
                    }
                    Err(e) => return Err(map_core(e)),
                }
            }
        }
    }
    t.finish(Mode::Closed, trial, infeasible_replans)
}

pub fn run_mode(cfg: &RunConfig, mode: Mode, trial: usize) -> Result<RunRecord, HarnessError> {
    match mode {
        Mode::Open => run_open_loop(cfg, trial),
        Mode::Closed => run_closed_loop(cfg, trial),
    }
}

/// Paired open/closed Monte-Carlo trials under common random numbers.
pub fn run_monte_carlo(cfg: &RunConfig) -> Result<(ReportTable, Vec<RunRecord>), HarnessError> {
    cfg.validate()?;
    let run_all = || -> Result<Vec<(RunRecord, RunRecord)>, HarnessError> {
        (0..cfg.trials)
            .into_par_iter()
            .map(|trial| Ok((run_open_loop(cfg, trial)?, run_closed_loop(cfg, trial)?)))
            .collect()
    };
    let pairs = match cfg.parallelism {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| HarnessError::Numerical(e.to_string()))?
            .install(run_all),
        None => run_all(),
    }?;

    let mut records = Vec::with_capacity(2 * pairs.len());
    let mut outcomes = Vec::with_capacity(2 * pairs.len());
    for (open, closed) in pairs {
        for record in [open, closed] {
            outcomes.push(TrialOutcome {
                trial: record.trial,
                mode: record.mode,
                final_stiffness_g_per_mm: record.final_stiffness_g_per_mm,
                abs_error_g_per_mm: record.abs_error_g_per_mm,
                pct_error: record.pct_error,
            });
            records.push(record);
        }
    }
    Ok((ReportTable::from_rows(outcomes), records))
}

/// Per-mode aggregate solver effort, for the manifest.
pub fn solver_totals(records: &[RunRecord]) -> Vec<(Mode, usize, usize)> {
    let mut totals = Vec::new();
    for mode in [Mode::Open, Mode::Closed] {
        let solves: usize = records
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| r.solver_stats.len())
            .sum();
        let newton: usize = records
            .iter()
            .filter(|r| r.mode == mode)
            .flat_map(|r| &r.solver_stats)
            .map(|s| s.newton_steps)
            .sum();
        if solves > 0 {
            totals.push((mode, solves, newton));
        }
    }
    totals
}

pub use crate::report::aggregate_for_mode;

/// Convenience for tests: aggregates of one mode from a record slice.
pub fn mode_aggregate(records: &[RunRecord], mode: Mode) -> Option<ModeAggregate> {
    let rows: Vec<TrialOutcome> = records
        .iter()
        .filter(|r| r.mode == mode)
        .map(|r| TrialOutcome {
            trial: r.trial,
            mode: r.mode,
            final_stiffness_g_per_mm: r.final_stiffness_g_per_mm,
            abs_error_g_per_mm: r.abs_error_g_per_mm,
            pct_error: r.pct_error,
        })
        .collect();
    aggregate_for_mode(&rows, mode)
}
