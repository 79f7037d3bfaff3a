//! Post-hoc invariant checks on an emitted run.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::output::{RunArtifacts, ScheduleRow};
use crate::planner::GreenWindow;
use crate::signal::{phase_lights, LIGHTS};
use crate::sim::{ClassMeans, MetricsReport, Mode, VehicleClass, LIGHT_TOL, SAFETY_TOL};

/// Findings of [`check_run`]; every list empty means the run is clean.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CheckReport {
    pub rear_end: Vec<String>,
    pub red_light: Vec<String>,
    pub ordering: Vec<String>,
    pub modes: Vec<String>,
    pub metrics: Vec<String>,
    pub recorded_breaches: usize,
}

impl CheckReport {
    pub fn is_clean(&self) -> bool {
        self.rear_end.is_empty()
            && self.red_light.is_empty()
            && self.ordering.is_empty()
            && self.modes.is_empty()
            && self.metrics.is_empty()
            && self.recorded_breaches == 0
    }

    pub fn violations(&self) -> usize {
        self.rear_end.len() + self.red_light.len() + self.ordering.len() + self.modes.len() + self.metrics.len()
    }
}

/// Green windows per light rebuilt from the schedule log.
pub fn windows_from_schedule(rows: &[ScheduleRow]) -> Vec<Vec<GreenWindow>> {
    let mut out = vec![Vec::<GreenWindow>::new(); LIGHTS];
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
    for r in sorted {
        for light in phase_lights(r.phase) {
            let list = &mut out[light];
            match list.last_mut() {
                Some(w) if (w.end - r.start).abs() <= 1e-9 => w.end = r.end,
                _ => list.push(GreenWindow::new(r.start, r.end)),
            }
        }
    }
    out
}

fn green(windows: &[GreenWindow], t: f64, tol: f64) -> bool {
    windows.iter().any(|w| t >= w.start - tol && t <= w.end + tol)
}

/// Relative tolerance on recomputed means; CSV text loses the last bits.
const METRICS_RTOL: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= METRICS_RTOL * a.abs().max(b.abs()).max(1.0)
}

fn means_match(a: &ClassMeans, b: &ClassMeans) -> bool {
    a.count == b.count && close(a.travel_time, b.travel_time) && close(a.energy, b.energy) && close(a.stops, b.stops)
}

fn metrics_match(a: &MetricsReport, b: &MetricsReport) -> bool {
    a.complete == b.complete
        && a.spawned == b.spawned
        && a.exited == b.exited
        && a.breaches == b.breaches
        && close(a.sim_time, b.sim_time)
        && means_match(&a.all, &b.all)
        && means_match(&a.cav, &b.cav)
        && means_match(&a.hdv, &b.hdv)
}

pub fn check_run(run: &RunArtifacts) -> CheckReport {
    let mut report = CheckReport { recorded_breaches: run.metrics.breaches.len(), ..CheckReport::default() };
    let cfg = &run.config;
    let p_light = cfg.p_light();
    let windows = windows_from_schedule(&run.schedule);
    let gamma = |c: VehicleClass| match c {
        VehicleClass::Cav => cfg.standstill_cav,
        VehicleClass::Hdv => cfg.standstill_hdv,
    };

    for v in &run.vehicles {
        if let Some(t) = v.light_time {
            if !green(&windows[v.light], t, LIGHT_TOL) {
                report.red_light.push(format!("vehicle {} crossed light {} at t={t}", v.vehicle_id, v.light));
            }
        }
    }

    // per-vehicle ordering, modes and coarse light crossings
    let lights: BTreeMap<u32, usize> = run.vehicles.iter().map(|v| (v.vehicle_id, v.light)).collect();
    let mut last: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for r in &run.trace {
        let light = lights.get(&r.vehicle_id).copied();
        if let Some(&(t_prev, p_prev)) = last.get(&r.vehicle_id) {
            if r.time <= t_prev {
                report.ordering.push(format!("vehicle {} records out of order at t={}", r.vehicle_id, r.time));
            }
            if p_prev < p_light && r.position >= p_light {
                let any_green = light.is_some_and(|l| {
                    windows[l].iter().any(|w| w.start <= r.time + LIGHT_TOL && w.end >= t_prev - LIGHT_TOL)
                });
                if !any_green {
                    report.red_light.push(format!(
                        "vehicle {} crossed between t={t_prev} and t={} without green",
                        r.vehicle_id, r.time
                    ));
                }
            }
        }
        last.insert(r.vehicle_id, (r.time, r.position));
        let legal = match r.class {
            VehicleClass::Hdv => r.mode == Mode::Idm,
            VehicleClass::Cav => r.mode != Mode::Idm && !(r.mode == Mode::Standby && r.position > p_light + 1e-6),
        };
        if !legal {
            report.modes.push(format!("vehicle {} in mode {:?} at t={}", r.vehicle_id, r.mode, r.time));
        }
    }

    // rear-end constraint for planned followers at every sampled time
    let mut i = 0;
    while i < run.trace.len() {
        let t = run.trace[i].time;
        let mut j = i;
        while j < run.trace.len() && run.trace[j].time == t {
            j += 1;
        }
        let mut by_path: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for k in i..j {
            by_path.entry(run.trace[k].path.as_str()).or_default().push(k);
        }
        for (_, mut idx) in by_path {
            idx.sort_by_key(|&k| run.trace[k].vehicle_id);
            for pair in idx.windows(2) {
                let (l, f) = (&run.trace[pair[0]], &run.trace[pair[1]]);
                let gap = l.position - f.position;
                let ok = match f.class {
                    VehicleClass::Cav => gap >= cfg.reaction_time * f.velocity.max(0.0) + gamma(l.class) - SAFETY_TOL,
                    VehicleClass::Hdv => gap > 0.0,
                };
                if !ok {
                    report.rear_end.push(format!("t={t}: {} behind {} by {gap}", f.vehicle_id, l.vehicle_id));
                }
            }
        }
        i = j;
    }

    let recomputed = MetricsReport::from_reports(
        &run.vehicles,
        run.metrics.metrics.complete,
        run.metrics.metrics.sim_time,
        run.metrics.metrics.breaches,
    );
    if !metrics_match(&recomputed, &run.metrics.metrics) {
        report.metrics.push(format!("summary {:?} != recomputed {:?}", run.metrics.metrics, recomputed));
    }
    report
}
