//! File emission and ingestion: per-run CSVs, the run manifest, and the
//! calibration dataset format.
//!
//! Every writer builds the complete byte string before touching the
//! filesystem, and nothing here records wall-clock time or absolute paths,
//! so a (config, seed) pair fully determines every output byte.

use std::path::Path;

use serde::Serialize;

use layerbeam_core::calibration::SpecimenDataset;
use layerbeam_core::sim::MeasurementRecord;

use crate::config::RunConfig;
use crate::report::ReportTable;
use crate::runner::{trial_seed, Mode, RunRecord};
use crate::HarnessError;

pub const WIDTHS_HEADER: &str = "stage,u_mm,w_mm";
pub const MEASUREMENTS_HEADER: &str = "stage,reading_index,compliance_mm_per_g,valid";
pub const PLAN_HEADER: &str = "stage,u_mm";
pub const DATASET_HEADER: &str = "width_mm,specimen_index,reading_index,compliance_mm_per_g";

pub fn widths_csv(record: &RunRecord) -> String {
    let mut out = String::from(WIDTHS_HEADER);
    out.push('\n');
    for row in &record.rows {
        out.push_str(&format!(
            "{},{},{}\n",
            row.stage, row.commanded_mm, row.realized_mm
        ));
    }
    out
}

pub fn measurements_csv(records: &[MeasurementRecord]) -> String {
    let mut out = String::from(MEASUREMENTS_HEADER);
    out.push('\n');
    for m in records {
        out.push_str(&format!(
            "{},{},{},{}\n",
            m.stage, m.reading_index, m.observed_compliance, m.valid
        ));
    }
    out
}

pub fn plan_csv(first_stage: usize, widths: &[f64]) -> String {
    let mut out = String::from(PLAN_HEADER);
    out.push('\n');
    for (i, u) in widths.iter().enumerate() {
        out.push_str(&format!("{},{}\n", first_stage + i, u));
    }
    out
}

pub fn dataset_csv(ds: &SpecimenDataset) -> String {
    let mut out = String::from(DATASET_HEADER);
    out.push('\n');
    for (i, &width) in ds.widths_mm.iter().enumerate() {
        for (j, spec) in ds.readings[i].iter().enumerate() {
            for (l, c) in spec.iter().enumerate() {
                out.push_str(&format!("{width},{j},{l},{c}\n"));
            }
        }
    }
    out
}

/// Parses the calibration dataset format. Width groups keep first-appearance
/// order; specimen and reading indices must be dense per group.
pub fn parse_dataset_csv(
    text: &str,
    layers_per_specimen: usize,
) -> Result<SpecimenDataset, HarnessError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Config("empty dataset CSV".into()))?;
    if header != DATASET_HEADER {
        return Err(HarnessError::Config(format!(
            "unexpected dataset CSV header: {header:?}"
        )));
    }
    let mut widths: Vec<f64> = Vec::new();
    let mut groups: Vec<Vec<Vec<(usize, f64)>>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(HarnessError::Config(format!(
                "dataset CSV line {}: expected 4 fields",
                lineno + 2
            )));
        }
        let bad = |e: String| HarnessError::Config(format!("dataset CSV line {}: {e}", lineno + 2));
        let width: f64 = fields[0]
            .parse()
            .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        let specimen: usize = fields[1]
            .parse()
            .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        let reading: usize = fields[2]
            .parse()
            .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?;
        let value: f64 = fields[3]
            .parse()
            .map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?;
        let gi = match widths.iter().position(|w| *w == width) {
            Some(gi) => gi,
            None => {
                widths.push(width);
                groups.push(Vec::new());
                widths.len() - 1
            }
        };
        if groups[gi].len() <= specimen {
            groups[gi].resize(specimen + 1, Vec::new());
        }
        groups[gi][specimen].push((reading, value));
    }
    if widths.is_empty() {
        return Err(HarnessError::Config("dataset CSV has no rows".into()));
    }
    let readings_per_specimen = groups
        .first()
        .and_then(|g| g.first())
        .map(|s| s.len())
        .unwrap_or(0);
    let replicates = groups[0].len();
    let mut readings = Vec::with_capacity(groups.len());
    for (gi, group) in groups.into_iter().enumerate() {
        if group.len() != replicates {
            return Err(HarnessError::Config(format!(
                "width group {gi} has {} specimens, expected {replicates}",
                group.len()
            )));
        }
        let mut specs = Vec::with_capacity(group.len());
        for (j, mut spec) in group.into_iter().enumerate() {
            spec.sort_by_key(|(idx, _)| *idx);
            if spec.len() != readings_per_specimen
                || spec.iter().enumerate().any(|(l, (idx, _))| l != *idx)
            {
                return Err(HarnessError::Config(format!(
                    "specimen ({gi},{j}) has irregular reading indices"
                )));
            }
            specs.push(spec.into_iter().map(|(_, v)| v).collect());
        }
        readings.push(specs);
    }
    let ds = SpecimenDataset {
        widths_mm: widths,
        replicates,
        readings_per_specimen,
        layers_per_specimen,
        readings,
    };
    ds.validate()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(ds)
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a> {
    pub version: &'static str,
    pub config: &'a RunConfig,
    pub seed: u64,
    pub trial_seeds: Vec<u64>,
    pub files: Vec<String>,
    pub aggregates: &'a ReportTable,
    pub solver_totals: Vec<SolverTotal>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverTotal {
    pub mode: Mode,
    pub solves: usize,
    pub newton_steps: usize,
}

pub fn write_string(path: &Path, content: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, content)?;
    Ok(())
}

fn trial_file_stem(record: &RunRecord) -> String {
    format!("trial_{:03}_{}", record.trial, record.mode)
}

/// Writes the full output set of a Monte-Carlo comparison into `out`.
/// Returns the list of emitted relative paths.
pub fn write_comparison(
    out: &Path,
    cfg: &RunConfig,
    table: &ReportTable,
    records: &[RunRecord],
) -> Result<Vec<String>, HarnessError> {
    let mut files = Vec::new();
    for record in records {
        let stem = trial_file_stem(record);
        let widths_rel = format!("trials/{stem}_widths.csv");
        write_string(&out.join(&widths_rel), &widths_csv(record))?;
        files.push(widths_rel);
        let meas_rel = format!("trials/{stem}_measurements.csv");
        write_string(
            &out.join(&meas_rel),
            &measurements_csv(&record.measurements),
        )?;
        files.push(meas_rel);
    }
    write_string(&out.join("report.csv"), &table.to_csv())?;
    files.push("report.csv".into());
    write_string(&out.join("summary.csv"), &table.summary_csv())?;
    files.push("summary.csv".into());

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        seed: cfg.seed,
        trial_seeds: (0..cfg.trials).map(|t| trial_seed(cfg.seed, t)).collect(),
        files: files.clone(),
        aggregates: table,
        solver_totals: crate::runner::solver_totals(records)
            .into_iter()
            .map(|(mode, solves, newton_steps)| SolverTotal {
                mode,
                solves,
                newton_steps,
            })
            .collect(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HarnessError::Numerical(e.to_string()))?;
    write_string(&out.join("manifest.json"), &manifest_json)?;
    files.push("manifest.json".into());
    Ok(files)
}
