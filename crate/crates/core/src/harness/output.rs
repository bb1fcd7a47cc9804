//! CSV artifacts. Every file has a header row and a fixed column order, and
//! identical inputs produce identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Comparison, MetricsLog, VehicleRecord};
use crate::dqn::training::{DaySummary, StepLogRow};
use crate::error::Result;
use crate::sim::ApproachId;

/// One row of `vehicles.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleRow {
    pub controller: String,
    pub seed: u64,
    pub approach: String,
    pub arrival_s: u64,
    pub at_stopline_s: u64,
    /// Empty for vehicles still on the links at day end.
    pub depart_s: Option<u64>,
    pub delay_s: u64,
}

pub const VEHICLE_HEADER: &str = "controller,seed,approach,arrival_s,at_stopline_s,depart_s,delay_s";
pub const BIN_HEADER: &str = "controller,bin_start_s,bin_label,vehicles,mean_delay_s,flagged";
pub const SUMMARY_HEADER: &str = "controller,days,vehicles,mean_delay_s,total_travel_time_s,window_mean_delay_s,reduction_pct";
pub const TRAINING_DAY_HEADER: &str =
    "day,total_travel_time_s,vehicles_departed,mean_delay_s,total_reward,mean_loss,epsilon_end,gradient_steps,short_greens,conflicting_greens";
pub const TRAINING_LOG_HEADER: &str = "t,gradient_step,epsilon,loss,reward";

fn writer(path: &Path, header: &str) -> Result<csv::Writer<std::fs::File>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header.split(','))?;
    Ok(w)
}

pub fn write_vehicles(path: &Path, logs: &[MetricsLog]) -> Result<()> {
    let mut w = writer(path, VEHICLE_HEADER)?;
    for log in logs {
        for v in &log.vehicles {
            w.serialize(VehicleRow {
                controller: log.controller.clone(),
                seed: log.seed,
                approach: v.approach.name().to_string(),
                arrival_s: v.arrival_s,
                at_stopline_s: v.at_stopline_s,
                depart_s: v.depart_s,
                delay_s: v.delay_s,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_vehicles(path: &Path) -> Result<Vec<(String, u64, VehicleRecord)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: VehicleRow = row?;
        out.push((
            row.controller,
            row.seed,
            VehicleRecord {
                approach: ApproachId::parse(&row.approach)?,
                arrival_s: row.arrival_s,
                at_stopline_s: row.at_stopline_s,
                depart_s: row.depart_s,
                delay_s: row.delay_s,
            },
        ));
    }
    Ok(out)
}

fn clock_label(s: u32) -> String {
    format!("{:02}:{:02}", s / 3600, (s % 3600) / 60)
}

pub fn write_bins(path: &Path, cmp: &Comparison) -> Result<()> {
    let mut w = writer(path, BIN_HEADER)?;
    for s in &cmp.summaries {
        for b in &s.bins {
            w.write_record([
                s.controller.clone(),
                b.start_s.to_string(),
                clock_label(b.start_s),
                b.vehicles.to_string(),
                format!("{:.3}", b.mean_delay_s),
                (b.flagged as u8).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, cmp: &Comparison) -> Result<()> {
    let mut w = writer(path, SUMMARY_HEADER)?;
    for s in &cmp.summaries {
        let red = cmp.reductions.iter().find(|(n, _)| *n == s.controller).map(|(_, r)| format!("{r:.3}"));
        w.write_record([
            s.controller.clone(),
            s.days.to_string(),
            s.vehicles.to_string(),
            format!("{:.4}", s.mean_delay_s),
            s.total_travel_time_s.to_string(),
            s.window_mean_delay_s.map(|v| format!("{v:.4}")).unwrap_or_default(),
            red.unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_training_days(path: &Path, days: &[DaySummary]) -> Result<()> {
    let mut w = writer(path, TRAINING_DAY_HEADER)?;
    for d in days {
        w.write_record([
            d.day.to_string(),
            d.total_travel_time_s.to_string(),
            d.vehicles_departed.to_string(),
            format!("{:.4}", d.mean_delay_s),
            format!("{:.1}", d.total_reward),
            d.mean_loss.map(|l| format!("{l:.6e}")).unwrap_or_default(),
            format!("{:.6}", d.epsilon_end),
            d.gradient_steps.to_string(),
            d.short_greens.to_string(),
            d.conflicting_greens.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_training_log(path: &Path, rows: &[StepLogRow]) -> Result<()> {
    let mut w = writer(path, TRAINING_LOG_HEADER)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.gradient_step.to_string(),
            format!("{:.6}", r.epsilon),
            r.loss.map(|l| format!("{l:.6e}")).unwrap_or_default(),
            format!("{:.1}", r.reward),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(vehicles: Vec<VehicleRecord>) -> MetricsLog {
        MetricsLog {
            controller: "fixed_time".into(),
            seed: 4,
            day_end_s: 86_400,
            vehicles,
            ticks: vec![],
            arrival_stream_hash: 0,
            total_travel_time_s: 0,
            total_reward: 0.0,
        }
    }

    #[test]
    fn empty_log_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        write_vehicles(&p, &[log(vec![])]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{VEHICLE_HEADER}\n"));
    }

    #[test]
    fn one_vehicle_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        let v = VehicleRecord { approach: ApproachId::NORTHBOUND, arrival_s: 100, at_stopline_s: 120, depart_s: Some(132), delay_s: 12 };
        write_vehicles(&p, &[log(vec![v.clone()])]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().nth(1), Some("fixed_time,4,NB,100,120,132,12"));
        assert_eq!(read_vehicles(&p).unwrap()[0].2, v);
    }
}
