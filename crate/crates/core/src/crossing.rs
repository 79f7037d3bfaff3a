//! Green-window feasibility of unconstrained plans and the constrained
//! (accelerate-then-cruise) fallback used when no cubic can make the green.

use serde::{Deserialize, Serialize};

use crate::motion::{Bounds, ConstAccelSegment, Landmarks, Segment, Trajectory, VehicleState};
use crate::planner::{
    algorithm1_search, feasible_exit_range, ExitTimeRange, GreenWindow, PlanError, PlanningContext,
};

/// Light-arrival interval of the boundary cubics intersected with a green
/// window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingWindow {
    pub t_c1: f64,
    pub t_c2: f64,
    pub g1: f64,
    pub g2: f64,
    pub start: f64,
    pub end: f64,
}

impl CrossingWindow {
    pub fn from_times(t_c1: f64, t_c2: f64, green: GreenWindow) -> Self {
        Self {
            t_c1,
            t_c2,
            g1: green.start,
            g2: green.end,
            start: t_c1.max(green.start),
            end: t_c2.min(green.end),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.start > self.end
    }

    /// The green start, not the vehicle, limits the earliest crossing.
    pub fn clipped_by_green_start(&self) -> bool {
        !self.is_empty() && self.t_c1 < self.g1
    }
}

/// Crossing times of the earliest- and latest-exit cubics of `range` at
/// `p_light`, intersected with `green`.
pub fn crossing_window(range: &ExitTimeRange, p_light: f64, green: GreenWindow) -> Result<CrossingWindow, PlanError> {
    let (t_c1, t_c2) = boundary_crossings(range, p_light)?;
    Ok(CrossingWindow::from_times(t_c1, t_c2, green))
}

/// `(t_c1, t_c2)`: when the boundary cubics of `range` reach `p_light`.
pub fn boundary_crossings(range: &ExitTimeRange, p_light: f64) -> Result<(f64, f64), PlanError> {
    let early = Trajectory::new(vec![Segment::Cubic(range.lower_cubic()?)], Landmarks::default())?;
    let late = Trajectory::new(vec![Segment::Cubic(range.upper_cubic()?)], Landmarks::default())?;
    Ok((early.crossing_time(p_light)?, late.crossing_time(p_light)?))
}

/// Shortest time to cover `distance` from speed `v0` under `u_max` and
/// `v_max`.
pub fn minimal_arrival_time(v0: f64, distance: f64, bounds: &Bounds) -> f64 {
    let (u, vm) = (bounds.u_max, bounds.v_max);
    let p_vmax = (vm * vm - v0 * v0) / (2.0 * u);
    if p_vmax >= distance {
        ((v0 * v0 + 2.0 * u * distance).sqrt() - v0) / u
    } else {
        (vm - v0) / u + (distance - p_vmax) / vm
    }
}

/// Accelerates at `u_max` from `state` to a cruise speed, then cruises so
/// that `p_light` is reached exactly at `t_light`. The returned trajectory
/// ends at the light.
pub fn build_constrained_trajectory(
    state: VehicleState,
    t_light: f64,
    p_light: f64,
    bounds: &Bounds,
) -> Result<Trajectory, PlanError> {
    let (t0, p0, v0) = (state.time, state.position, state.velocity);
    let distance = p_light - p0;
    let horizon = t_light - t0;
    let t_min = minimal_arrival_time(v0, distance, bounds);
    if horizon < t_min - 1e-9 {
        return Err(PlanError::PhysicallyInfeasible { requested: t_light, minimum: t0 + t_min });
    }
    let u = bounds.u_max;
    // (T - (vc - v0)/u) vc = D - (vc^2 - v0^2) / (2u), smaller root
    let k = u * horizon + v0;
    let disc = k * k - 2.0 * u * distance - v0 * v0;
    let vc = (k - disc.max(0.0).sqrt()).min(bounds.v_max);
    if vc < v0 - 1e-9 {
        return Err(PlanError::BelowCruiseFamily { requested: t_light });
    }
    let vc = vc.max(v0);
    let t_accel = ((vc - v0) / u).min(horizon);
    let mut segments = Vec::with_capacity(2);
    if t_accel > 1e-9 {
        segments.push(Segment::ConstAccel(ConstAccelSegment::new(u, p0, v0, t0, t0 + t_accel)?));
    }
    let cruise = horizon - t_accel;
    if cruise > 1e-9 {
        let p1 = p0 + v0 * t_accel + 0.5 * u * t_accel * t_accel;
        let seg = ConstAccelSegment::new(0.0, p1, vc, t0 + t_accel, t_light)?;
        segments.push(Segment::ConstAccel(seg));
    } else if let Some(Segment::ConstAccel(last)) = segments.last_mut() {
        last.t_end = t_light;
    }
    let landmarks = Landmarks { p_start: p0, p_light, p_exit: f64::NAN, t_light: Some(t_light), t_exit: None };
    Ok(Trajectory::new(segments, landmarks)?)
}

/// Search interval for the constrained crossing time and the time headway
/// derived from the rear-end constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedSearchInterval {
    pub lo: f64,
    pub hi: f64,
    pub epsilon: f64,
}

/// When the predecessor reaches the light and at what speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredecessorCrossing {
    pub time: f64,
    pub speed: f64,
}

/// Lowest crossing speed used to convert the standstill distance into a
/// time headway.
pub const MIN_HEADWAY_SPEED: f64 = 1.0;

/// Interval in which a constrained crossing time may lie, or `None` if it is
/// empty.
pub fn constrained_search_interval(
    ctx: &PlanningContext<'_>,
    state: VehicleState,
    green: GreenWindow,
    predecessor: Option<PredecessorCrossing>,
    fallback_speed: f64,
) -> Option<ConstrainedSearchInterval> {
    let t_min = state.time + minimal_arrival_time(state.velocity, ctx.p_light - state.position, &ctx.bounds);
    let mut lo = t_min.max(green.start);
    let hi = green.end;
    let gamma = ctx.predecessor.map(|p| p.gamma).unwrap_or(0.0);
    let mut epsilon = 0.0;
    if let Some(pc) = predecessor {
        let speed = if pc.speed.is_finite() && pc.speed > 0.0 { pc.speed } else { fallback_speed };
        epsilon = ctx.bounds.reaction_time + gamma / speed.max(MIN_HEADWAY_SPEED);
        lo = lo.max(pc.time + epsilon);
    }
    (lo <= hi).then_some(ConstrainedSearchInterval { lo, hi, epsilon })
}

/// Result of the constrained search: the pre-light arc and the crossing time.
#[derive(Debug, Clone)]
pub struct ConstrainedCrossing {
    pub t_light: f64,
    pub interval: ConstrainedSearchInterval,
    pub pre_light: Trajectory,
}

/// Steps the crossing time through the search interval by
/// `ctx.search_step` and returns the first one whose pre-light arc keeps the
/// rear-end constraint and after which the slowest post-light cubic does too.
pub fn find_crossing_time(
    ctx: &PlanningContext<'_>,
    state: VehicleState,
    green: GreenWindow,
    predecessor: Option<PredecessorCrossing>,
    fallback_speed: f64,
) -> Option<ConstrainedCrossing> {
    let interval = constrained_search_interval(ctx, state, green, predecessor, fallback_speed)?;
    let mut k = 0usize;
    loop {
        let t_light = interval.lo + k as f64 * ctx.search_step;
        if t_light > interval.hi {
            return None;
        }
        k += 1;
        let pre = match build_constrained_trajectory(state, t_light, ctx.p_light, &ctx.bounds) {
            Ok(p) => p,
            // later crossing times only need lower cruise speeds
            Err(PlanError::BelowCruiseFamily { .. }) => return None,
            Err(_) => continue,
        };
        if !ctx.rear_end_ok(&pre, state.time, t_light) {
            continue;
        }
        let arrival = pre.eval(t_light).ok()?;
        let Ok(range) = feasible_exit_range(ctx.p_light, arrival.velocity, t_light, ctx.p_exit, &ctx.bounds, ctx.t_cap)
        else {
            continue;
        };
        let Ok(full) = join_post_light(&pre, &range, range.upper, ctx) else { continue };
        if ctx.rear_end_ok(&full, t_light, range.upper) {
            return Some(ConstrainedCrossing { t_light, interval, pre_light: pre });
        }
    }
}

/// Appends the post-light cubic of `range` exiting at `tf` to `pre`.
fn join_post_light(
    pre: &Trajectory,
    range: &ExitTimeRange,
    tf: f64,
    ctx: &PlanningContext<'_>,
) -> Result<Trajectory, PlanError> {
    let post = range.cubic(tf)?;
    let mut segments = pre.segments().to_vec();
    segments.push(Segment::Cubic(post));
    let landmarks = Landmarks {
        p_start: pre.landmarks.p_start,
        p_light: ctx.p_light,
        p_exit: ctx.p_exit,
        t_light: pre.landmarks.t_light,
        t_exit: Some(tf),
    };
    Ok(Trajectory::new(segments, landmarks)?)
}

/// Full constrained plan: the pre-light arc of `crossing` followed by the
/// minimum-exit-time cubic from the light to the zone exit.
pub fn complete_constrained_plan(ctx: &PlanningContext<'_>, crossing: &ConstrainedCrossing) -> Option<Trajectory> {
    let arrival = crossing.pre_light.eval(crossing.t_light).ok()?;
    let post_ctx = PlanningContext { green: Vec::new(), ..ctx.clone() };
    let post = algorithm1_search(&post_ctx, VehicleState::new(crossing.t_light, ctx.p_light, arrival.velocity, 0.0))?;
    let mut segments = crossing.pre_light.segments().to_vec();
    segments.extend_from_slice(post.segments());
    let landmarks = Landmarks {
        p_start: crossing.pre_light.landmarks.p_start,
        p_light: ctx.p_light,
        p_exit: ctx.p_exit,
        t_light: Some(crossing.t_light),
        t_exit: post.landmarks.t_exit,
    };
    Trajectory::new(segments, landmarks).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::Predecessor;
    use approx::assert_abs_diff_eq;

    fn ctx<'a>(predecessor: Option<Predecessor<'a>>) -> PlanningContext<'a> {
        PlanningContext {
            bounds: Bounds::default(),
            green: Vec::new(),
            predecessor,
            p_light: 100.0,
            p_exit: 130.0,
            search_step: 0.1,
            check_grid: 0.01,
            t_cap: 120.0,
        }
    }

    #[test]
    fn window_intersections() {
        let w = CrossingWindow::from_times(10.0, 20.0, GreenWindow::new(15.0, 30.0));
        assert_eq!((w.start, w.end), (15.0, 20.0));
        assert!(w.clipped_by_green_start());
        let w = CrossingWindow::from_times(10.0, 12.0, GreenWindow::new(15.0, 30.0));
        assert!(w.is_empty());
        let w = CrossingWindow::from_times(10.0, 20.0, GreenWindow::new(12.0, 14.0));
        assert_eq!((w.start, w.end), (12.0, 14.0));
    }

    #[test]
    fn minimal_arrival_cases() {
        let b = Bounds::default();
        assert_abs_diff_eq!(minimal_arrival_time(0.0, 40.0, &b), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(minimal_arrival_time(0.0, 100.0, &b), 7.0, epsilon = 1e-12);
        assert_abs_diff_eq!(minimal_arrival_time(20.0, 80.0, &b), 4.0, epsilon = 1e-12);
    }

    #[test]
    fn constrained_pure_acceleration() {
        let t = build_constrained_trajectory(VehicleState::new(0.0, 0.0, 0.0, 0.0), 4.0, 40.0, &Bounds::default())
            .unwrap();
        assert_eq!(t.segments().len(), 1);
        let end = t.eval(4.0).unwrap();
        assert_abs_diff_eq!(end.position, 40.0, epsilon = 1e-9);
        assert_abs_diff_eq!(end.velocity, 20.0, epsilon = 1e-9);
    }

    #[test]
    fn constrained_accel_then_cruise_at_cap() {
        let t = build_constrained_trajectory(VehicleState::new(0.0, 0.0, 0.0, 0.0), 7.0, 100.0, &Bounds::default())
            .unwrap();
        assert_eq!(t.segments().len(), 2);
        assert_abs_diff_eq!(t.segments()[0].t_end(), 4.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t.eval(7.0).unwrap().position, 100.0, epsilon = 1e-6);
    }

    #[test]
    fn constrained_rejects_too_early() {
        let r = build_constrained_trajectory(VehicleState::new(0.0, 0.0, 0.0, 0.0), 3.9, 40.0, &Bounds::default());
        assert!(matches!(r, Err(PlanError::PhysicallyInfeasible { .. })));
        let r = build_constrained_trajectory(VehicleState::new(0.0, 0.0, 10.0, 0.0), 13.0, 120.0, &Bounds::default());
        assert!(matches!(r, Err(PlanError::BelowCruiseFamily { .. })));
    }

    #[test]
    fn unobstructed_search_takes_interval_minimum() {
        // v0 = 0 and 40 m to the light: T_min = 4
        let mut c = ctx(None);
        c.p_light = 40.0;
        c.p_exit = 70.0;
        let found = find_crossing_time(&c, VehicleState::new(0.0, 0.0, 0.0, 0.0), GreenWindow::new(6.0, 10.0), None, 15.0)
            .unwrap();
        assert_abs_diff_eq!(found.t_light, 6.0, epsilon = 1e-12);
    }

    #[test]
    fn predecessor_tightens_interval() {
        let hold = Trajectory::new(
            vec![Segment::ConstAccel(ConstAccelSegment::new(0.0, 200.0, 5.0, 0.0, 50.0).unwrap())],
            Landmarks::default(),
        )
        .unwrap();
        let mut c = ctx(Some(Predecessor { motion: &hold, gamma: 3.0 }));
        c.p_light = 40.0;
        let pc = PredecessorCrossing { time: 6.0, speed: 5.0 };
        let iv = constrained_search_interval(
            &c,
            VehicleState::new(0.0, 0.0, 0.0, 0.0),
            GreenWindow::new(6.0, 10.0),
            Some(pc),
            15.0,
        )
        .unwrap();
        assert_abs_diff_eq!(iv.epsilon, 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(iv.lo, 7.6, epsilon = 1e-12);
    }
}
