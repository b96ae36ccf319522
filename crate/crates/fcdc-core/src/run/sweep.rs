//! Experiment sweeps over the tap layer or the negative weight ratio.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::RunReport;
use super::train::train;
use crate::error::{Error, Result};

/// The two sweep axes: tap depth, and beta = alpha_diff / alpha_same with
/// alpha_same and alpha_momentum held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TapLayer,
    WeightRatio,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tap_layer" => Ok(SweepAxis::TapLayer),
            "weight_ratio" => Ok(SweepAxis::WeightRatio),
            other => Err(Error::invalid(
                "sweep",
                format!("unknown axis {other:?} (expected tap_layer or weight_ratio)"),
            )),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SweepAxis::TapLayer => write!(f, "tap_layer"),
            SweepAxis::WeightRatio => write!(f, "weight_ratio"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub cells: Vec<SweepCell>,
}

/// Apply one axis value to a copy of the base configuration.
pub fn apply_axis(config: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut cfg = config.clone();
    match axis {
        SweepAxis::TapLayer => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(Error::invalid(
                    "sweep",
                    format!("tap_layer value {value} is not a positive integer"),
                ));
            }
            cfg.tap_layer = value as usize;
        }
        SweepAxis::WeightRatio => {
            if value <= 0.0 {
                return Err(Error::invalid("sweep", "weight ratio must be positive"));
            }
            cfg.alpha_diff = value * cfg.alpha_same;
        }
    }
    Ok(cfg)
}

/// One full train + evaluate per axis value, shared seeds. A failing cell
/// records its error and the sweep continues.
pub fn sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    out_dir: Option<&Path>,
) -> Result<SweepReport> {
    if values.is_empty() {
        return Err(Error::invalid("sweep", "no axis values given"));
    }
    let mut cells = Vec::with_capacity(values.len());
    for &value in values {
        let cell_dir = out_dir.map(|d| d.join(format!("{axis}={value}")));
        let outcome = apply_axis(config, axis, value)
            .and_then(|cfg| train(&cfg, cell_dir.as_deref()));
        cells.push(match outcome {
            Ok(o) => SweepCell {
                value,
                report: Some(o.report),
                error: None,
            },
            Err(e) => SweepCell {
                value,
                report: None,
                error: Some(e.to_string()),
            },
        });
    }
    let report = SweepReport { axis, cells };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("sweep.json"),
            serde_json::to_string_pretty(&report)?,
        )?;
        std::fs::write(dir.join("sweep.txt"), report.to_text_table())?;
    }
    Ok(report)
}

impl SweepReport {
    /// Aligned text table of the headline metrics per cell.
    pub fn to_text_table(&self) -> String {
        let fmt_opt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.4}"),
            None => "-".to_string(),
        };
        let mut out = format!(
            "{:>12}  {:>10} {:>10} {:>10} {:>10}  {}\n",
            self.axis, "coarse_acc", "fine_acc", "fine_ari", "fine_nmi", "status"
        );
        for cell in &self.cells {
            match (&cell.report, &cell.error) {
                (Some(r), _) => {
                    let e = &r.final_eval;
                    out.push_str(&format!(
                        "{:>12}  {:>10.4} {:>10} {:>10} {:>10}  ok\n",
                        cell.value,
                        e.coarse_accuracy,
                        fmt_opt(e.fine_acc),
                        fmt_opt(e.fine_ari),
                        fmt_opt(e.fine_nmi),
                    ));
                }
                (None, Some(err)) => {
                    out.push_str(&format!("{:>12}  error: {err}\n", cell.value));
                }
                (None, None) => out.push_str(&format!("{:>12}  (missing)\n", cell.value)),
            }
        }
        out
    }
}
