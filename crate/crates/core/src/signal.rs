//! Four-phase signal: intersection topology, phase pressure, the adaptive
//! next-cycle split and the append-only green schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::GreenWindow;

pub const APPROACHES: usize = 4;
pub const PATHS: usize = 12;
pub const LIGHTS: usize = 8;
pub const PHASES: usize = 4;

/// Windows closer than this are merged.
const MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("cycle length {t_cycle} s must exceed four minimum phases of {t_min} s")]
    CycleTooShort { t_cycle: f64, t_min: f64 },
    #[error("update offset {t_update} s must lie inside the cycle of {t_cycle} s")]
    BadUpdateOffset { t_update: f64, t_cycle: f64 },
    #[error("first-cycle plan is invalid: {0}")]
    BadFirstPlan(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Turn {
    Left,
    Through,
    Right,
}

impl Turn {
    pub const ALL: [Turn; 3] = [Turn::Left, Turn::Through, Turn::Right];

    fn exit_offset(self) -> usize {
        match self {
            Turn::Left => 1,
            Turn::Through => 2,
            Turn::Right => 3,
        }
    }
}

/// One of the twelve movements: an approach (N, E, S, W = 0..4) and a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathId(pub usize);

impl PathId {
    pub fn new(approach: usize, turn: Turn) -> Self {
        let t = Turn::ALL.iter().position(|x| *x == turn).unwrap();
        PathId(approach * 3 + t)
    }

    pub fn approach(self) -> usize {
        self.0 / 3
    }

    pub fn turn(self) -> Turn {
        Turn::ALL[self.0 % 3]
    }

    pub fn exit_leg(self) -> usize {
        (self.approach() + self.turn().exit_offset()) % APPROACHES
    }

    /// Light governing this path: per approach one for through and right,
    /// one for left.
    pub fn light(self) -> usize {
        2 * self.approach() + usize::from(self.turn() == Turn::Left)
    }

    pub fn label(self) -> String {
        let leg = ["N", "E", "S", "W"][self.approach()];
        let turn = match self.turn() {
            Turn::Left => "L",
            Turn::Through => "T",
            Turn::Right => "R",
        };
        format!("{leg}{turn}")
    }

    pub fn all() -> impl Iterator<Item = PathId> {
        (0..PATHS).map(PathId)
    }
}

/// Lights green in `phase`: 0 N/S through, 1 N/S left, 2 E/W through,
/// 3 E/W left.
pub fn phase_lights(phase: usize) -> [usize; 2] {
    let (a, b) = if phase < 2 { (0, 2) } else { (1, 3) };
    let left = phase % 2;
    [2 * a + left, 2 * b + left]
}

pub fn phase_of_light(light: usize) -> usize {
    let approach = light / 2;
    let left = light % 2;
    2 * (approach % 2) + left
}

/// Paths governed by `light`.
pub fn light_paths(light: usize) -> Vec<PathId> {
    PathId::all().filter(|p| p.light() == light).collect()
}

/// Two movements conflict when their chords across the junction cross or
/// they leave on the same leg. Entry and exit points of leg `a` sit at
/// `2a` and `2a + 1` around the junction boundary.
pub fn paths_conflict(x: PathId, y: PathId) -> bool {
    if x == y {
        return false;
    }
    if x.approach() == y.approach() {
        return false;
    }
    if x.exit_leg() == y.exit_leg() {
        return true;
    }
    let chord = |p: PathId| (2 * p.approach(), 2 * p.exit_leg() + 1);
    let (a1, a2) = chord(x);
    let (b1, b2) = chord(y);
    let (lo, hi) = (a1.min(a2), a1.max(a2));
    let inside = |q: usize| q > lo && q < hi;
    inside(b1) != inside(b2)
}

/// Signal plan of one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub cycle: u64,
    pub start: f64,
    /// Phase sequence.
    pub order: [usize; PHASES],
    /// Duration per phase index.
    pub durations: [f64; PHASES],
    pub t_cycle: f64,
    pub t_min: f64,
    pub t_update: f64,
    pub pressure: [f64; PHASES],
}

impl PhasePlan {
    /// `(phase, start, end)` in sequence order.
    pub fn intervals(&self) -> Vec<(usize, f64, f64)> {
        let mut t = self.start;
        let mut out = Vec::with_capacity(PHASES);
        for (k, &p) in self.order.iter().enumerate() {
            let end = if k + 1 == PHASES { self.start + self.t_cycle } else { t + self.durations[p] };
            out.push((p, t, end));
            t = end;
        }
        out
    }
}

/// Per-phase pressure from per-path counts of stopped or standby vehicles.
pub fn pressure(counts: &[u32; PATHS]) -> [f64; PHASES] {
    let mut q = [0.0; PHASES];
    for (phase, qp) in q.iter_mut().enumerate() {
        for light in phase_lights(phase) {
            for path in light_paths(light) {
                *qp += f64::from(counts[path.0]);
            }
        }
    }
    q
}

/// Phases sorted by descending pressure, ties by ascending index, and their
/// durations: the minimum plus a share of the remaining time proportional to
/// the pressure.
pub fn next_cycle_split(q: &[f64; PHASES], t_cycle: f64, t_min: f64) -> Result<([usize; PHASES], [f64; PHASES]), SignalError> {
    if !(t_cycle > PHASES as f64 * t_min) {
        return Err(SignalError::CycleTooShort { t_cycle, t_min });
    }
    let mut order = [0, 1, 2, 3];
    order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
    let remain = t_cycle - PHASES as f64 * t_min;
    let total: f64 = q.iter().sum();
    let mut durations = [0.0; PHASES];
    for p in 0..PHASES {
        let share = if total > 0.0 { q[p] / total } else { 1.0 / PHASES as f64 };
        durations[p] = t_min + share * remain;
    }
    Ok((order, durations))
}

/// How the next cycle is split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Adaptive,
    Fixed,
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Policy::Adaptive => "adaptive",
            Policy::Fixed => "fixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalTiming {
    pub t_cycle: f64,
    pub t_min: f64,
    pub t_update: f64,
}

impl SignalTiming {
    pub fn validate(&self) -> Result<(), SignalError> {
        if !(self.t_cycle > PHASES as f64 * self.t_min) || !(self.t_min > 0.0) {
            return Err(SignalError::CycleTooShort { t_cycle: self.t_cycle, t_min: self.t_min });
        }
        if !(self.t_update > 0.0 && self.t_update < self.t_cycle) {
            return Err(SignalError::BadUpdateOffset { t_update: self.t_update, t_cycle: self.t_cycle });
        }
        Ok(())
    }
}

/// Sequential signal controller: one plan per cycle, the next one fixed and
/// broadcast `t_update` seconds into the current cycle.
#[derive(Debug, Clone)]
pub struct SignalController {
    policy: Policy,
    timing: SignalTiming,
    plans: Vec<PhasePlan>,
    windows: [Vec<GreenWindow>; LIGHTS],
}

impl SignalController {
    pub fn new(
        policy: Policy,
        timing: SignalTiming,
        first_order: [usize; PHASES],
        first_durations: [f64; PHASES],
    ) -> Result<Self, SignalError> {
        timing.validate()?;
        let mut seen = [false; PHASES];
        for &p in &first_order {
            if p >= PHASES || seen[p] {
                return Err(SignalError::BadFirstPlan(format!("order {first_order:?} is not a permutation")));
            }
            seen[p] = true;
        }
        let sum: f64 = first_durations.iter().sum();
        if (sum - timing.t_cycle).abs() > 1e-9 || first_durations.iter().any(|d| *d < timing.t_min) {
            return Err(SignalError::BadFirstPlan(format!(
                "durations {first_durations:?} must each be at least {} and sum to {}",
                timing.t_min, timing.t_cycle
            )));
        }
        let mut ctl = Self { policy, timing, plans: Vec::new(), windows: Default::default() };
        ctl.push_plan(PhasePlan {
            cycle: 0,
            start: 0.0,
            order: first_order,
            durations: first_durations,
            t_cycle: timing.t_cycle,
            t_min: timing.t_min,
            t_update: timing.t_update,
            pressure: [0.0; PHASES],
        });
        Ok(ctl)
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn timing(&self) -> SignalTiming {
        self.timing
    }

    pub fn plans(&self) -> &[PhasePlan] {
        &self.plans
    }

    /// End of the broadcast schedule.
    pub fn known_until(&self) -> f64 {
        let last = self.plans.last().expect("at least one plan");
        last.start + last.t_cycle
    }

    /// Time at which the next plan is due.
    pub fn next_broadcast(&self) -> f64 {
        let last = self.plans.last().expect("at least one plan");
        last.start + self.timing.t_update
    }

    /// `true` when the next plan should be broadcast at `t`.
    pub fn due(&self, t: f64) -> bool {
        t + 1e-9 >= self.next_broadcast()
    }

    /// Fixes and broadcasts the next cycle from the current pressures.
    pub fn broadcast(&mut self, q: [f64; PHASES]) -> &PhasePlan {
        let (order, durations) = match self.policy {
            Policy::Adaptive => {
                next_cycle_split(&q, self.timing.t_cycle, self.timing.t_min).expect("timing validated")
            }
            Policy::Fixed => ([0, 1, 2, 3], [self.timing.t_cycle / PHASES as f64; PHASES]),
        };
        let last = self.plans.last().expect("at least one plan");
        let plan = PhasePlan {
            cycle: last.cycle + 1,
            start: last.start + last.t_cycle,
            order,
            durations,
            t_cycle: self.timing.t_cycle,
            t_min: self.timing.t_min,
            t_update: self.timing.t_update,
            pressure: q,
        };
        self.push_plan(plan);
        self.plans.last().unwrap()
    }

    fn push_plan(&mut self, plan: PhasePlan) {
        for (phase, start, end) in plan.intervals() {
            for light in phase_lights(phase) {
                let list = &mut self.windows[light];
                match list.last_mut() {
                    Some(w) if (w.end - start).abs() <= MERGE_TOL => w.end = end,
                    _ => list.push(GreenWindow::new(start, end)),
                }
            }
        }
        self.plans.push(plan);
    }

    /// Known green windows of `light`, oldest first.
    pub fn light_windows(&self, light: usize) -> &[GreenWindow] {
        &self.windows[light]
    }

    pub fn path_windows(&self, path: PathId) -> &[GreenWindow] {
        self.light_windows(path.light())
    }

    /// Phase active at `t`, if `t` lies in the known schedule.
    pub fn active_phase(&self, t: f64) -> Option<usize> {
        let idx = self.plans.partition_point(|p| p.start <= t);
        let plan = self.plans.get(idx.checked_sub(1)?)?;
        plan.intervals().into_iter().find(|(_, s, e)| *s <= t && t < *e).map(|(p, _, _)| p)
    }

    pub fn is_green(&self, light: usize, t: f64) -> bool {
        self.active_phase(t).is_some_and(|p| phase_lights(p).contains(&light))
    }
}
