use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use layerbeam_cli::config::{ParamFile, Provenance, RunConfig};
use layerbeam_cli::files;
use layerbeam_cli::report::ReportTable;
use layerbeam_cli::runner::{run_mode, run_monte_carlo, Mode};
use layerbeam_cli::HarnessError;
use layerbeam_core::calibration::{calibrate, estimate_alpha_gamma_with, StiffnessConvention};
use layerbeam_core::estimator::EstimatorState;
use layerbeam_core::planner::PlanProblem;

#[derive(Parser)]
#[command(
    name = "layerbeam",
    version,
    about = "Width-controlled beam printing: planning, simulation, and reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Identify model parameters from a dataset CSV and write a parameter file.
    Calibrate {
        /// Dataset CSV (width_mm,specimen_index,reading_index,compliance_mm_per_g).
        #[arg(long)]
        data: PathBuf,
        /// Layers per calibration specimen.
        #[arg(long, default_value_t = 250)]
        layers: usize,
        #[arg(long)]
        out: PathBuf,
        /// Use the mean-of-reciprocals stiffness convention instead of the
        /// default reciprocal-of-mean.
        #[arg(long)]
        mean_of_reciprocals: bool,
    },
    /// Solve the initial width plan and write it as CSV.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Execute a single trial in one mode and write its record files.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run paired open/closed Monte-Carlo trials and write the report set.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute aggregates from a persisted report.csv.
    Report {
        /// Path to a report.csv produced by `compare`.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target stiffness used for the stdout table header (g/mm).
        #[arg(long, default_value_t = 0.0)]
        target_stiffness: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), HarnessError> {
    match command {
        Command::Calibrate {
            data,
            layers,
            out,
            mean_of_reciprocals,
        } => {
            let text = std::fs::read_to_string(&data)?;
            let ds = files::parse_dataset_csv(&text, layers)?;
            let map = |e: layerbeam_core::Error| HarnessError::Config(e.to_string());
            let result = if mean_of_reciprocals {
                let (alpha, gamma, diagnostics) =
                    estimate_alpha_gamma_with(&ds, StiffnessConvention::MeanOfReciprocals)
                        .map_err(map)?;
                let sigma_o = layerbeam_core::calibration::estimate_sigma_o(&ds, alpha, gamma)
                    .map_err(map)?;
                let sigma_p = layerbeam_core::calibration::estimate_sigma_p(&ds, alpha, gamma)
                    .map_err(map)?;
                layerbeam_core::calibration::CalibrationResult {
                    params: layerbeam_core::ModelParams {
                        alpha,
                        gamma,
                        sigma_p,
                        sigma_o,
                    },
                    diagnostics,
                }
            } else {
                calibrate(&ds).map_err(map)?
            };
            let mut file = ParamFile::from_params(
                &result.params,
                Provenance {
                    source: "calibrate".into(),
                    dataset: Some(data.display().to_string()),
                    layers_per_specimen: Some(layers),
                },
            );
            file.diagnostics = Some(layerbeam_cli::config::ParamDiagnostics {
                slope: result.diagnostics.slope,
                intercept: result.diagnostics.intercept,
                residual_norm: result.diagnostics.residual_norm,
            });
            files::write_string(&out.join("params.toml"), &file.to_toml_string()?)?;
            println!(
                "calibrated: alpha={} gamma={} sigma_p={} sigma_o={}",
                result.params.alpha,
                result.params.gamma,
                result.params.sigma_p,
                result.params.sigma_o
            );
            Ok(())
        }
        Command::Plan { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let est = EstimatorState::init_foundation(&cfg.geometry, cfg.controller)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let problem = PlanProblem {
                stage: cfg.geometry.base_layers + 1,
                horizon_end: cfg.geometry.total_layers,
                prefix_mean: est.mean_slice().to_vec(),
                prev_width: cfg.geometry.base_width_mm,
                params: cfg.controller,
                bounds: cfg.bounds,
                target_compliance: cfg.target_compliance_mm_per_g,
                weights: cfg.weights,
                options: cfg.solver,
            };
            let plan = problem.solve().map_err(|e| match e {
                layerbeam_core::Error::Infeasible { .. } => HarnessError::Infeasible(e.to_string()),
                other => HarnessError::Numerical(other.to_string()),
            })?;
            files::write_string(
                &out.join("plan.csv"),
                &files::plan_csv(cfg.geometry.base_layers + 1, &plan.widths),
            )?;
            println!(
                "planned {} layers: cost={} predicted_final_compliance={} (target {})",
                plan.widths.len(),
                plan.achieved_cost,
                plan.predicted_final_compliance,
                cfg.target_compliance_mm_per_g
            );
            Ok(())
        }
        Command::Run {
            config,
            mode,
            seed,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let record = run_mode(&cfg, mode, 0)?;
            files::write_string(&out.join("widths.csv"), &files::widths_csv(&record))?;
            files::write_string(
                &out.join("measurements.csv"),
                &files::measurements_csv(&record.measurements),
            )?;
            println!(
                "{mode} run: final stiffness {} g/mm (target {}), error {}%",
                record.final_stiffness_g_per_mm,
                cfg.target_stiffness(),
                record.pct_error
            );
            Ok(())
        }
        Command::Compare {
            config,
            seed,
            trials,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(trials) = trials {
                cfg.trials = trials;
            }
            cfg.validate()?;
            let (table, records) = run_monte_carlo(&cfg)?;
            files::write_comparison(&out, &cfg, &table, &records)?;
            print!("{}", table.render_text(cfg.target_stiffness()));
            Ok(())
        }
        Command::Report {
            records,
            out,
            target_stiffness,
        } => {
            let text = std::fs::read_to_string(&records)?;
            let table = ReportTable::from_csv(&text)?;
            files::write_string(&out.join("summary.csv"), &table.summary_csv())?;
            print!("{}", table.render_text(target_stiffness));
            Ok(())
        }
    }
}
