//! Run artifacts: trajectory trace, per-vehicle table, signal schedule,
//! metrics summary and the effective configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::signal::PhasePlan;
use crate::sim::{Breach, MetricsReport, RunOutput, TraceRecord, VehicleReport};

pub const SCHEMA_VERSION: u32 = 1;

pub const TRACE_FILE: &str = "trajectories.csv";
pub const VEHICLES_FILE: &str = "vehicles.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.toml";

pub const TRACE_HEADER: &str = "time,vehicle_id,class,path,position,velocity,acceleration,mode,active_phase,lights";
pub const VEHICLES_HEADER: &str = "vehicle_id,class,path,light,arrival_time,entry_time,entry_speed,light_time,exit_time,travel_time,energy,stops,standby_entries,replans";
pub const SCHEDULE_HEADER: &str = "cycle,slot,phase,start,end,pressure";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("CSV error on {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("JSON error on {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// One phase of one cycle in the schedule log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub cycle: u64,
    /// Position of the phase in the cycle's sequence.
    pub slot: usize,
    pub phase: usize,
    pub start: f64,
    pub end: f64,
    pub pressure: f64,
}

pub fn schedule_rows(plans: &[PhasePlan]) -> Vec<ScheduleRow> {
    plans
        .iter()
        .flat_map(|plan| {
            plan.intervals().into_iter().enumerate().map(move |(slot, (phase, start, end))| ScheduleRow {
                cycle: plan.cycle,
                slot,
                phase,
                start,
                end,
                pressure: plan.pressure[phase],
            })
        })
        .collect()
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub schema_version: u32,
    pub metrics: MetricsReport,
    pub breaches: Vec<Breach>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), OutputError> {
    let csv_err = |source| OutputError::Csv { path: path.to_path_buf(), source };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| OutputError::Io { path: path.to_path_buf(), source })
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, OutputError> {
    let csv_err = |source| OutputError::Csv { path: path.to_path_buf(), source };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(csv_err)
}

/// Writes all artifacts of `out` into `dir`, creating it if needed.
pub fn emit(out: &RunOutput, dir: &Path) -> Result<(), OutputError> {
    fs::create_dir_all(dir).map_err(|source| OutputError::Io { path: dir.to_path_buf(), source })?;
    if out.trace.is_empty() {
        // keep the header even for an empty trace
        let path = dir.join(TRACE_FILE);
        fs::write(&path, format!("{TRACE_HEADER}\n")).map_err(|source| OutputError::Io { path, source })?;
    } else {
        write_csv(&dir.join(TRACE_FILE), &out.trace)?;
    }
    write_csv(&dir.join(VEHICLES_FILE), &out.vehicles)?;
    write_csv(&dir.join(SCHEDULE_FILE), &schedule_rows(&out.schedule))?;
    let metrics = MetricsFile { schema_version: SCHEMA_VERSION, metrics: out.metrics.clone(), breaches: out.breaches.clone() };
    let path = dir.join(METRICS_FILE);
    let json = serde_json::to_string_pretty(&metrics).map_err(|source| OutputError::Json { path: path.clone(), source })?;
    fs::write(&path, json + "\n").map_err(|source| OutputError::Io { path, source })?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, out.config.to_toml_string()).map_err(|source| OutputError::Io { path, source })?;
    Ok(())
}

/// Artifacts read back from a run directory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: ScenarioConfig,
    pub trace: Vec<TraceRecord>,
    pub vehicles: Vec<VehicleReport>,
    pub schedule: Vec<ScheduleRow>,
    pub metrics: MetricsFile,
}

pub fn read_run(dir: &Path) -> Result<RunArtifacts, OutputError> {
    let config = crate::config::load_config(&dir.join(CONFIG_FILE))?;
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).map_err(|source| OutputError::Io { path: path.clone(), source })?;
    let metrics = serde_json::from_str(&text).map_err(|source| OutputError::Json { path, source })?;
    Ok(RunArtifacts {
        config,
        trace: read_csv(&dir.join(TRACE_FILE))?,
        vehicles: read_csv(&dir.join(VEHICLES_FILE))?,
        schedule: read_csv(&dir.join(SCHEDULE_FILE))?,
        metrics,
    })
}
