//! Report tables: per-trial outcomes plus per-mode aggregates, with CSV
//! round-tripping that is byte-stable for identical inputs.

use serde::{Deserialize, Serialize};

use crate::runner::Mode;
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub mode: Mode,
    pub final_stiffness_g_per_mm: f64,
    pub abs_error_g_per_mm: f64,
    pub pct_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub mode: Mode,
    pub trials: usize,
    pub mean_stiffness_g_per_mm: f64,
    /// Sample standard deviation (n-1 denominator; 0 for a single trial).
    pub std_stiffness_g_per_mm: f64,
    pub mean_abs_error_g_per_mm: f64,
    pub mean_pct_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub rows: Vec<TrialOutcome>,
    pub aggregates: Vec<ModeAggregate>,
}

pub fn aggregate_for_mode(rows: &[TrialOutcome], mode: Mode) -> Option<ModeAggregate> {
    let selected: Vec<&TrialOutcome> = rows.iter().filter(|r| r.mode == mode).collect();
    if selected.is_empty() {
        return None;
    }
    let n = selected.len() as f64;
    let mean_stiffness = selected
        .iter()
        .map(|r| r.final_stiffness_g_per_mm)
        .sum::<f64>()
        / n;
    let std_stiffness = if selected.len() > 1 {
        (selected
            .iter()
            .map(|r| (r.final_stiffness_g_per_mm - mean_stiffness).powi(2))
            .sum::<f64>()
            / (n - 1.0))
            .sqrt()
    } else {
        0.0
    };
    Some(ModeAggregate {
        mode,
        trials: selected.len(),
        mean_stiffness_g_per_mm: mean_stiffness,
        std_stiffness_g_per_mm: std_stiffness,
        mean_abs_error_g_per_mm: selected.iter().map(|r| r.abs_error_g_per_mm).sum::<f64>() / n,
        mean_pct_error: selected.iter().map(|r| r.pct_error).sum::<f64>() / n,
    })
}

impl ReportTable {
    pub fn from_rows(mut rows: Vec<TrialOutcome>) -> Self {
        rows.sort_by_key(|r| (r.trial, r.mode as usize));
        let aggregates = [Mode::Open, Mode::Closed]
            .into_iter()
            .filter_map(|mode| aggregate_for_mode(&rows, mode))
            .collect();
        ReportTable { rows, aggregates }
    }

    pub fn aggregate(&self, mode: Mode) -> Option<&ModeAggregate> {
        self.aggregates.iter().find(|a| a.mode == mode)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,mode,final_stiffness_g_per_mm,abs_error,pct_error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.trial, r.mode, r.final_stiffness_g_per_mm, r.abs_error_g_per_mm, r.pct_error
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let mut rows = Vec::new();
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| HarnessError::Config("empty report CSV".into()))?;
        if header != "trial,mode,final_stiffness_g_per_mm,abs_error,pct_error" {
            return Err(HarnessError::Config(format!(
                "unexpected report CSV header: {header:?}"
            )));
        }
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(HarnessError::Config(format!(
                    "report CSV line {}: expected 5 fields, got {}",
                    lineno + 2,
                    fields.len()
                )));
            }
            let parse_f = |s: &str| -> Result<f64, HarnessError> {
                s.parse()
                    .map_err(|e| HarnessError::Config(format!("line {}: {e}", lineno + 2)))
            };
            rows.push(TrialOutcome {
                trial: fields[0]
                    .parse()
                    .map_err(|e| HarnessError::Config(format!("line {}: {e}", lineno + 2)))?,
                mode: fields[1]
                    .parse()
                    .map_err(|e| HarnessError::Config(format!("line {}: {e}", lineno + 2)))?,
                final_stiffness_g_per_mm: parse_f(fields[2])?,
                abs_error_g_per_mm: parse_f(fields[3])?,
                pct_error: parse_f(fields[4])?,
            });
        }
        Ok(ReportTable::from_rows(rows))
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "mode,trials,mean_stiffness_g_per_mm,std_stiffness_g_per_mm,\
             mean_abs_error_g_per_mm,mean_pct_error\n",
        );
        for a in &self.aggregates {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                a.mode,
                a.trials,
                a.mean_stiffness_g_per_mm,
                a.std_stiffness_g_per_mm,
                a.mean_abs_error_g_per_mm,
                a.mean_pct_error
            ));
        }
        out
    }

    /// Human-oriented stdout table.
    pub fn render_text(&self, target_stiffness: f64) -> String {
        let mut out = String::new();
        out.push_str(&format!("target stiffness: {target_stiffness} g/mm\n"));
        out.push_str(&format!(
            "{:<8} {:>8} {:>22} {:>20} {:>22} {:>16}\n",
            "mode",
            "trials",
            "mean stiffness g/mm",
            "std stiffness",
            "mean |error| g/mm",
            "mean % error"
        ));
        for a in &self.aggregates {
            out.push_str(&format!(
                "{:<8} {:>8} {:>22.6} {:>20.6} {:>22.6} {:>16.4}\n",
                a.mode.to_string(),
                a.trials,
                a.mean_stiffness_g_per_mm,
                a.std_stiffness_g_per_mm,
                a.mean_abs_error_g_per_mm,
                a.mean_pct_error
            ));
        }
        out
    }
}
