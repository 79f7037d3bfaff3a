//! The policy-by-penetration grid: fixed 40 s cycle and adaptive 20, 30 and
//! 40 s cycles at 0, 50 and 70 % connected vehicles.

use serde::Serialize;

use crate::config::ScenarioConfig;
use crate::signal::Policy;
use crate::sim::{Engine, RunOutput, SimError};

/// One signal setting of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignalCell {
    pub policy: Policy,
    pub t_cycle: f64,
}

impl SignalCell {
    pub fn label(&self) -> String {
        let p = match self.policy {
            Policy::Fixed => "fc",
            Policy::Adaptive => "ac",
        };
        format!("{p}{}", self.t_cycle)
    }
}

pub const SIGNAL_CELLS: [SignalCell; 4] = [
    SignalCell { policy: Policy::Fixed, t_cycle: 40.0 },
    SignalCell { policy: Policy::Adaptive, t_cycle: 20.0 },
    SignalCell { policy: Policy::Adaptive, t_cycle: 30.0 },
    SignalCell { policy: Policy::Adaptive, t_cycle: 40.0 },
];

pub const PENETRATIONS: [f64; 3] = [0.0, 0.5, 0.7];

/// `base` with the signal setting and penetration of one cell.
pub fn cell_config(base: &ScenarioConfig, cell: SignalCell, penetration: f64) -> ScenarioConfig {
    ScenarioConfig {
        policy: cell.policy,
        t_cycle: cell.t_cycle,
        t_update: None,
        first_cycle_durations: None,
        penetration,
        ..base.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub cell: String,
    pub policy: Policy,
    pub t_cycle: f64,
    pub penetration: f64,
    pub complete: bool,
    pub exited: usize,
    pub mean_travel_time: f64,
    pub mean_travel_time_cav: f64,
    pub mean_travel_time_hdv: f64,
    pub mean_energy: f64,
    pub mean_stops: f64,
    pub breaches: usize,
}

pub fn cell_name(cell: SignalCell, penetration: f64) -> String {
    format!("{}_p{:03}", cell.label(), (penetration * 100.0).round() as u32)
}

pub fn summarize(cell: SignalCell, penetration: f64, out: &RunOutput) -> SweepRow {
    let m = &out.metrics;
    SweepRow {
        cell: cell_name(cell, penetration),
        policy: cell.policy,
        t_cycle: cell.t_cycle,
        penetration,
        complete: m.complete,
        exited: m.exited,
        mean_travel_time: m.all.travel_time,
        mean_travel_time_cav: m.cav.travel_time,
        mean_travel_time_hdv: m.hdv.travel_time,
        mean_energy: m.all.energy,
        mean_stops: m.all.stops,
        breaches: m.breaches,
    }
}

/// Runs all twelve cells in order, handing every output to `sink`.
pub fn sweep<E: From<SimError>>(
    base: &ScenarioConfig,
    trace: bool,
    mut sink: impl FnMut(SignalCell, f64, &RunOutput) -> Result<(), E>,
) -> Result<Vec<SweepRow>, E> {
    let mut rows = Vec::new();
    for &penetration in &PENETRATIONS {
        for &cell in &SIGNAL_CELLS {
            let cfg = cell_config(base, cell, penetration);
            let out = Engine::new(&cfg)?.with_trace(trace).run()?;
            sink(cell, penetration, &out)?;
            rows.push(summarize(cell, penetration, &out));
        }
    }
    Ok(rows)
}
