//! Metric tables.
//!
//! `metrics.csv` and `sweep.csv` start with a schema comment line followed by
//! a header row. Reals use Rust's shortest round-trip formatting, so equal
//! runs produce equal bytes.

use std::io::Write;

use super::{MetricRow, SweepRow};
use crate::error::Result;

pub const METRICS_SCHEMA_LINE: &str = "# gem-metrics schema v1";
pub const METRICS_CSV_HEADER: &str =
    "step,method,train_loss,eval_preference_accuracy,mean_group_score,gradient_norm,wall_ms";
pub const SWEEP_SCHEMA_LINE: &str = "# gem-sweep schema v1";
pub const SWEEP_CSV_HEADER: &str = "budget,method,final_accuracy";

pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], mut out: W) -> Result<()> {
    writeln!(out, "{METRICS_SCHEMA_LINE}")?;
    writeln!(out, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step,
            r.method,
            r.train_loss,
            r.eval_preference_accuracy,
            r.mean_group_score,
            r.gradient_norm,
            r.wall_ms
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_metrics_jsonl<W: Write>(rows: &[MetricRow], mut out: W) -> Result<()> {
    for r in rows {
        writeln!(out, "{}", serde_json::to_string(r)?)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(out, "{SWEEP_SCHEMA_LINE}")?;
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.budget, r.method, r.final_accuracy)?;
    }
    out.flush()?;
    Ok(())
}
