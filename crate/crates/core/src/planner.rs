//! Energy-optimal unconstrained planning: the cubic family with a free
//! terminal acceleration of zero, its feasible exit-time range, and the
//! minimum-exit-time search.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::{
    first_rear_end_violation, rear_end_violated_at, Bounds, CubicSegment, Landmarks, Motion, Segment, Trajectory, VehicleState,
};

/// Horizons shorter than this are treated as degenerate.
pub const MIN_HORIZON: f64 = 1e-6;

/// Slack used when testing a plan against state and control bounds.
pub const BOUNDS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("degenerate horizon: tf - t0 = {0:e} s")]
    DegenerateHorizon(f64),
    #[error("no feasible exit time from state (p={p}, v={v}) to {target}")]
    InfeasibleState { p: f64, v: f64, target: f64 },
    #[error("requested light crossing at {requested} is earlier than the physical minimum {minimum}")]
    PhysicallyInfeasible { requested: f64, minimum: f64 },
    #[error("requested crossing at {requested} needs a cruise speed below the entry speed")]
    BelowCruiseFamily { requested: f64 },
    #[error(transparent)]
    Motion(#[from] crate::motion::MotionError),
}

/// Solves for the cubic with `p(t0)=p0`, `v(t0)=v0`, `p(tf)=pf`, `u(tf)=0`.
pub fn solve_unconstrained(p0: f64, v0: f64, t0: f64, pf: f64, tf: f64) -> Result<CubicSegment, PlanError> {
    let horizon = tf - t0;
    if !(horizon >= MIN_HORIZON) {
        return Err(PlanError::DegenerateHorizon(horizon));
    }
    let distance = pf - p0;
    let a = (v0 * horizon - distance) / (2.0 * horizon.powi(3));
    let b = -3.0 * a * horizon;
    Ok(CubicSegment::new(a, b, v0, p0, t0, tf)?)
}

/// Earliest and latest exit times reachable by an unconstrained cubic from
/// `anchor` while respecting the state and control bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitTimeRange {
    pub lower: f64,
    pub upper: f64,
    pub anchor: VehicleState,
    pub target: f64,
}

impl ExitTimeRange {
    pub fn contains(&self, tf: f64) -> bool {
        tf >= self.lower && tf <= self.upper
    }

    pub fn lower_cubic(&self) -> Result<CubicSegment, PlanError> {
        self.cubic(self.lower)
    }

    pub fn upper_cubic(&self) -> Result<CubicSegment, PlanError> {
        self.cubic(self.upper)
    }

    pub fn cubic(&self, tf: f64) -> Result<CubicSegment, PlanError> {
        solve_unconstrained(self.anchor.position, self.anchor.velocity, self.anchor.time, self.target, tf)
    }
}

/// Feasible exit-time range from `(p0, v0)` at `t0` to `pf`.
///
/// For this family the acceleration is linear and vanishes at `tf`, so it
/// keeps one sign and the speed is monotone between `v0` and
/// `v(tf) = 1.5 D / T - 0.5 v0`. The pointwise bounds therefore reduce to
/// conditions on `u(t0) = 3 (D - v0 T) / T^2` and `v(tf)`, each of which is a
/// quadratic inequality in the horizon `T`. The range returned is the
/// connected set of feasible horizons starting at the earliest one; its
/// upper end is capped at `t0 + t_cap`.
pub fn feasible_exit_range(
    p0: f64,
    v0: f64,
    t0: f64,
    pf: f64,
    bounds: &Bounds,
    t_cap: f64,
) -> Result<ExitTimeRange, PlanError> {
    let infeasible = || PlanError::InfeasibleState { p: p0, v: v0, target: pf };
    let distance = pf - p0;
    if !(distance > 0.0) || v0 < bounds.v_min - BOUNDS_TOL || v0 > bounds.v_max + BOUNDS_TOL {
        return Err(infeasible());
    }
    let v0 = v0.clamp(bounds.v_min, bounds.v_max);

    // v(tf) <= v_max
    let mut lower = 1.5 * distance / (bounds.v_max + 0.5 * v0);
    // u(t0) <= u_max
    let (um, v3) = (bounds.u_max, 3.0 * v0);
    lower = lower.max((-v3 + (v3 * v3 + 12.0 * um * distance).sqrt()) / (2.0 * um));
    lower = lower.max(MIN_HORIZON);

    // v(tf) >= v_min
    let denom = bounds.v_min + 0.5 * v0;
    let mut upper = if denom > 0.0 { 1.5 * distance / denom } else { f64::INFINITY };
    upper = upper.min(t_cap);

    // u(t0) >= u_min excludes the open band between the roots of
    // |u_min| T^2 - 3 v0 T + 3 D = 0.
    let brake = -bounds.u_min;
    let disc = v3 * v3 - 12.0 * brake * distance;
    if disc > 0.0 {
        let root = disc.sqrt();
        let (r1, r2) = ((v3 - root) / (2.0 * brake), (v3 + root) / (2.0 * brake));
        if lower > r1 && lower < r2 {
            lower = r2;
        } else if lower <= r1 {
            upper = upper.min(r1);
        }
    }
    if !(lower <= upper) {
        return Err(infeasible());
    }

    let anchor = VehicleState::new(t0, p0, v0, 0.0);
    let mut range = ExitTimeRange { lower: t0 + lower, upper: t0 + upper, anchor, target: pf };
    // Nudge inward if rounding put an end point just outside the feasible set.
    for _ in 0..50 {
        if range.lower_cubic()?.respects(bounds, BOUNDS_TOL) {
            break;
        }
        range.lower += 1e-9 * (1.0 + lower);
    }
    for _ in 0..50 {
        if range.upper_cubic()?.respects(bounds, BOUNDS_TOL) {
            break;
        }
        range.upper -= 1e-9 * (1.0 + upper);
    }
    if !(range.lower <= range.upper) {
        return Err(infeasible());
    }
    range.anchor.acceleration = range.lower_cubic()?.acceleration(t0);
    Ok(range)
}

/// A green interval `[start, end]` of one traffic light.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenWindow {
    pub start: f64,
    pub end: f64,
}

impl GreenWindow {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t <= self.end
    }
}

/// The vehicle ahead on the same path, as seen by a planner.
#[derive(Clone, Copy)]
pub struct Predecessor<'a> {
    pub motion: &'a dyn Motion,
    /// Standstill distance of the predecessor.
    pub gamma: f64,
}

impl std::fmt::Debug for Predecessor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Predecessor").field("gamma", &self.gamma).finish_non_exhaustive()
    }
}

/// Everything a CAV needs to plan besides its own state.
#[derive(Debug, Clone)]
pub struct PlanningContext<'a> {
    pub bounds: Bounds,
    /// Disjoint, chronologically ordered green windows of the own light.
    pub green: Vec<GreenWindow>,
    pub predecessor: Option<Predecessor<'a>>,
    /// Light position along the own path.
    pub p_light: f64,
    /// Zone exit position along the own path.
    pub p_exit: f64,
    /// Step of the exit-time search.
    pub search_step: f64,
    /// Sampling step for pointwise rear-end checks.
    pub check_grid: f64,
    /// Cap on the latest exit time, relative to the anchor time.
    pub t_cap: f64,
}

impl PlanningContext<'_> {
    /// Checks the rear-end constraint of `plan` against the predecessor from
    /// `from` until the plan ends (or the predecessor leaves).
    pub fn rear_end_ok(&self, plan: &dyn Motion, from: f64, to: f64) -> bool {
        match &self.predecessor {
            None => true,
            Some(pred) => {
                first_rear_end_violation(plan, pred.motion, &self.bounds, pred.gamma, from, to, self.check_grid)
                    .is_none()
            }
        }
    }

    /// Same decision as [`Self::rear_end_ok`], probing the last grid point and
    /// the one nearest `hint` first. On a violation `hint` is set to the
    /// violating time, so neighbouring candidates of a search usually fail on
    /// an early probe.
    pub fn rear_end_ok_hinted(&self, plan: &dyn Motion, from: f64, to: f64, hint: &mut Option<f64>) -> bool {
        let Some(pred) = &self.predecessor else { return true };
        let end = to.min(pred.motion.exit_time()).min(plan.exit_time());
        if end >= from && rear_end_violated_at(plan, pred.motion, &self.bounds, pred.gamma, end) {
            return false;
        }
        if let Some(h) = *hint {
            if h >= from && h <= end {
                let t = (from + ((h - from) / self.check_grid).round() * self.check_grid).min(end);
                if rear_end_violated_at(plan, pred.motion, &self.bounds, pred.gamma, t) {
                    return false;
                }
            }
        }
        match first_rear_end_violation(plan, pred.motion, &self.bounds, pred.gamma, from, to, self.check_grid) {
            Some(t) => {
                *hint = Some(t);
                false
            }
            None => true,
        }
    }
}

/// Wraps a single cubic into a trajectory with its landmarks.
pub fn cubic_trajectory(seg: CubicSegment, p_light: f64, p_exit: f64) -> Result<Trajectory, PlanError> {
    let p_start = seg.position(seg.t_start);
    let t_light = if p_start < p_light {
        Some(Trajectory::new(vec![Segment::Cubic(seg)], Landmarks::default())?.crossing_time(p_light)?)
    } else {
        None
    };
    let landmarks = Landmarks { p_start, p_light, p_exit, t_light, t_exit: Some(seg.t_end) };
    Ok(Trajectory::new(vec![Segment::Cubic(seg)], landmarks)?)
}

/// Steps the exit time upward from the earliest feasible value by
/// `ctx.search_step` and returns the first cubic that respects the bounds,
/// the rear-end constraint against the predecessor and, when the light is
/// still ahead, crosses it inside one of `ctx.green`. `None` means no such
/// exit time exists within the feasible range.
pub fn algorithm1_search(ctx: &PlanningContext<'_>, anchor: VehicleState) -> Option<Trajectory> {
    let range = feasible_exit_range(
        anchor.position,
        anchor.velocity,
        anchor.time,
        ctx.p_exit,
        &ctx.bounds,
        ctx.t_cap,
    )
    .ok()?;
    let before_light = anchor.position < ctx.p_light;
    let mut tf = range.lower;
    let mut k = 0usize;
    let mut hint = None;
    while tf <= range.upper {
        if let Some(traj) = candidate(ctx, &range, tf, before_light, &mut hint) {
            return Some(traj);
        }
        k += 1;
        tf = range.lower + k as f64 * ctx.search_step;
    }
    None
}

fn candidate(
    ctx: &PlanningContext<'_>,
    range: &ExitTimeRange,
    tf: f64,
    before_light: bool,
    hint: &mut Option<f64>,
) -> Option<Trajectory> {
    let seg = range.cubic(tf).ok()?;
    if !seg.respects(&ctx.bounds, BOUNDS_TOL) {
        return None;
    }
    if before_light && !ctx.green.iter().any(|w| may_cross_within(&seg, ctx.p_light, w)) {
        return None;
    }
    let traj = cubic_trajectory(seg, ctx.p_light, ctx.p_exit).ok()?;
    if before_light {
        let t_light = traj.landmarks.t_light?;
        if !ctx.green.iter().any(|w| w.contains(t_light)) {
            return None;
        }
    }
    if !ctx.rear_end_ok_hinted(&traj, range.anchor.time, tf, hint) {
        return None;
    }
    Some(traj)
}

/// Cheap necessary condition for the light crossing of `seg` to fall in `w`,
/// read off the (nondecreasing) position at the window edges.
fn may_cross_within(seg: &CubicSegment, p_light: f64, w: &GreenWindow) -> bool {
    const SLACK: f64 = 1e-6;
    let lo = (w.start - SLACK).max(seg.t_start);
    let hi = (w.end + SLACK).min(seg.t_end);
    lo <= hi && seg.position(hi) >= p_light && seg.position(lo) <= p_light
}
