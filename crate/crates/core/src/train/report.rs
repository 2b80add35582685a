//! Plot-ready CSV tables and the JSON-lines run log.
//!
//! Schemas (version [`SCHEMA_VERSION`]):
//!
//! | file            | columns                                             |
//! |-----------------|-----------------------------------------------------|
//! | criterion1.csv  | `angle,mae_deg` rows pitch, yaw, roll, overall      |
//! | criterion2.csv  | `threshold_deg,fraction`                            |
//! | criterion3.csv  | `bin_lo_deg,bin_hi_deg,count,fraction,mae_deg`      |
//! | robustness.csv  | `condition,repeats,mean_mae_deg,spread_deg,runs,no_detection` |
//! | radius_sweep.csv| `r_heat,mae_overall_deg,mae_pitch_deg,mae_yaw_deg,mae_roll_deg,no_detection` |
//! | history.jsonl   | one object per epoch, see [`history_line`]          |
//!
//! Empty cells mean "undefined" (an empty bin, or no detections).

use std::path::Path;

use serde_json::json;

use super::metrics::{Mae, MetricsReport};
use super::protocols::{RobustnessRow, SweepRow};
use super::EpochRecord;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub fn criterion1_csv(m: &Mae) -> String {
    format!("angle,mae_deg\npitch,{}\nyaw,{}\nroll,{}\noverall,{}\n", m.pitch, m.yaw, m.roll, m.overall)
}

pub fn criterion2_csv(r: &MetricsReport) -> String {
    let mut s = String::from("threshold_deg,fraction\n");
    for (t, f) in r.thresholds.iter().zip(&r.curve) {
        s.push_str(&format!("{t},{f}\n"));
    }
    s
}

pub fn criterion3_csv(r: &MetricsReport) -> String {
    let mut s = String::from("bin_lo_deg,bin_hi_deg,count,fraction,mae_deg\n");
    for b in &r.bins {
        let mae = b.mae.map(|m| m.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{mae}\n", b.lo, b.hi, b.count, b.fraction));
    }
    s
}

pub fn robustness_csv(rows: &[RobustnessRow]) -> String {
    let mut s = String::from("condition,repeats,mean_mae_deg,spread_deg,runs,no_detection\n");
    for r in rows {
        let runs: Vec<String> = r.runs.iter().map(f64::to_string).collect();
        s.push_str(&format!("{},{},{},{},{},{}\n", r.condition.name(), r.runs.len(), r.mean, r.spread, runs.join(";"), r.no_detection));
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("r_heat,mae_overall_deg,mae_pitch_deg,mae_yaw_deg,mae_roll_deg,no_detection\n");
    for r in rows {
        let cells = match r.mae {
            Some(m) => format!("{},{},{},{}", m.overall, m.pitch, m.yaw, m.roll),
            None => ",,,".into(),
        };
        s.push_str(&format!("{},{cells},{}\n", r.r_heat, r.no_detection));
    }
    s
}

/// `{"schema":1,"epoch":..,"lr":..,"train_loss":..,"val_mae":{..}|null,"val_no_detection":..}`
pub fn history_line(r: &EpochRecord) -> String {
    json!({
        "schema": SCHEMA_VERSION,
        "epoch": r.epoch,
        "lr": r.lr,
        "train_loss": r.train_loss,
        "val_mae": r.val_mae,
        "val_no_detection": r.val_no_detection,
    })
    .to_string()
}

pub fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write criterion1/2/3.csv into `dir`.
pub fn write_report(dir: &Path, r: &MetricsReport) -> Result<()> {
    write(&dir.join("criterion1.csv"), &criterion1_csv(&r.mae))?;
    write(&dir.join("criterion2.csv"), &criterion2_csv(r))?;
    write(&dir.join("criterion3.csv"), &criterion3_csv(r))
}
