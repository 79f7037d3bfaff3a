//! Standby mode: the latest feasible stop at the light, the stopping cubic,
//! and the monitor that decides when to leave standby or refine a plan.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossing::boundary_crossings;
use crate::motion::{Bounds, ConstAccelSegment, CubicSegment, Landmarks, MotionError, Segment, Trajectory, VehicleState};
use crate::planner::{feasible_exit_range, GreenWindow, BOUNDS_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StandbyError {
    #[error("vehicle is at rest; it holds position instead of stopping")]
    AtRest,
    #[error("cannot stop within {distance} m from {speed} m/s with u_min = {u_min}")]
    CannotStop { speed: f64, distance: f64, u_min: f64 },
    #[error("stop cubic violates the speed or control bounds (min u = {min_accel})")]
    BoundsViolated { min_accel: f64 },
    #[error(transparent)]
    Motion(#[from] MotionError),
}

/// Latest stop time and the quantities it is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopTiming {
    /// Stop duration measured from the current time.
    pub duration: f64,
    /// Critical initial acceleration `-2 v0^2 / (3 D)`.
    pub critical_accel: f64,
    /// Duration at which the terminal acceleration equals `u_min`.
    pub t_b: f64,
}

/// Initial acceleration of the stop cubic of duration `3 D / v0`.
pub fn critical_acceleration(v0: f64, distance: f64) -> f64 {
    -2.0 * v0 * v0 / (3.0 * distance)
}

/// Latest duration after which an unconstrained cubic brings a vehicle at
/// speed `v0` to rest exactly `distance` ahead without violating `u_min`.
///
/// Past `3 D / v0` the stop cubic has positive terminal acceleration, so the
/// speed dips below zero before the stop. At `3 D / v0` the terminal
/// acceleration is zero, which is at least `u_min`; since the terminal
/// acceleration increases with the duration, the `t_b` branch never binds
/// there. The initial acceleration equals `critical_accel`; when that is
/// below `u_min` the latest admissible duration is the smaller root of
/// `|u_min| T^2 - 4 v0 T + 6 D = 0`, provided it is not shorter than `t_b`.
pub fn latest_stop_time(v0: f64, distance: f64, u_min: f64) -> Result<StopTiming, StandbyError> {
    if !(v0 > 0.0) {
        return Err(StandbyError::AtRest);
    }
    let cannot = || StandbyError::CannotStop { speed: v0, distance, u_min };
    if !(distance > 0.0) {
        return Err(cannot());
    }
    let brake = -u_min;
    let critical_accel = critical_acceleration(v0, distance);
    let t_b = (-v0 + (v0 * v0 - 6.0 * u_min * distance).sqrt()) / brake;
    let t_star = 3.0 * distance / v0;
    let duration = if critical_accel >= u_min {
        t_star.max(t_b)
    } else {
        let disc = 16.0 * v0 * v0 - 24.0 * brake * distance;
        let t_a = (4.0 * v0 - disc.max(0.0).sqrt()) / (2.0 * brake);
        if t_a < t_b {
            return Err(cannot());
        }
        t_a
    };
    Ok(StopTiming { duration, critical_accel, t_b })
}

/// Cubic with `p(t0)=p0`, `v(t0)=v0`, `p(t_stop)=stop_pos`, `v(t_stop)=0`.
pub fn stop_cubic(state: VehicleState, stop_pos: f64, t_stop: f64) -> Result<CubicSegment, StandbyError> {
    let horizon = t_stop - state.time;
    let distance = stop_pos - state.position;
    let v0 = state.velocity;
    let a = (v0 * horizon - 2.0 * distance) / horizon.powi(3);
    let b = (-v0 - 3.0 * a * horizon * horizon) / (2.0 * horizon);
    Ok(CubicSegment::new(a, b, v0, state.position, state.time, t_stop)?)
}

/// Stop cubic followed by holding still at `stop_pos`.
pub fn standby_trajectory(
    state: VehicleState,
    stop_pos: f64,
    t_stop: f64,
    bounds: &Bounds,
    p_light: f64,
    p_exit: f64,
) -> Result<Trajectory, StandbyError> {
    let cubic = stop_cubic(state, stop_pos, t_stop)?;
    if !cubic.respects(bounds, BOUNDS_TOL) {
        return Err(StandbyError::BoundsViolated { min_accel: cubic.acceleration_range().0 });
    }
    let landmarks = Landmarks { p_start: state.position, p_light, p_exit, t_light: None, t_exit: None };
    let hold = ConstAccelSegment::hold(stop_pos, t_stop);
    Ok(Trajectory::new(vec![Segment::Cubic(cubic), Segment::ConstAccel(hold)], landmarks)?)
}

/// Holding still from `state` on.
pub fn hold_trajectory(state: VehicleState, p_light: f64, p_exit: f64) -> Trajectory {
    let landmarks = Landmarks { p_start: state.position, p_light, p_exit, t_light: None, t_exit: None };
    Trajectory::new(vec![Segment::ConstAccel(ConstAccelSegment::hold(state.position, state.time))], landmarks)
        .expect("a single hold segment is always valid")
}

/// Stop position behind a queued predecessor resting at `predecessor_rest`.
pub fn queued_stop_position(p_light: f64, predecessor_rest: Option<f64>, gamma_predecessor: f64) -> f64 {
    match predecessor_rest {
        Some(rest) => p_light.min(rest - gamma_predecessor),
        None => p_light,
    }
}

/// A committed standby plan.
#[derive(Debug, Clone, PartialEq)]
pub struct StandbyPlan {
    pub stop_time: f64,
    pub stop_position: f64,
    pub timing: Option<StopTiming>,
    pub trajectory: Trajectory,
}

/// What the monitor is watching for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MonitorState {
    /// Nothing to watch (light already crossed, or plan not signal-limited).
    Idle,
    /// In standby, waiting for a reachable green window.
    Standby,
    /// Crossing on a window whose start clipped the unconstrained set.
    Clipped { g1: f64, t_exit: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Trigger {
    None,
    ExitStandby,
    Refine,
}

/// Latest crossing-window values seen by the monitor.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WindowReading {
    pub t_c1: f64,
    pub t_c2: f64,
    pub start: f64,
    pub end: f64,
}

/// Recomputes the feasible exit range from the current state and the
/// crossing window against each upcoming green window.
pub fn replanning_trigger(
    monitor: MonitorState,
    state: VehicleState,
    windows: &[GreenWindow],
    p_light: f64,
    p_exit: f64,
    bounds: &Bounds,
    t_cap: f64,
) -> (Trigger, Option<WindowReading>) {
    if matches!(monitor, MonitorState::Idle) {
        return (Trigger::None, None);
    }
    if state.position >= p_light {
        // past the light the window no longer binds
        let trigger = if matches!(monitor, MonitorState::Clipped { .. }) { Trigger::Refine } else { Trigger::None };
        return (trigger, None);
    }
    let Ok(range) = feasible_exit_range(state.position, state.velocity, state.time, p_exit, bounds, t_cap) else {
        return (Trigger::None, None);
    };
    let Ok((t_c1, t_c2)) = boundary_crossings(&range, p_light) else {
        return (Trigger::None, None);
    };
    match monitor {
        MonitorState::Standby => {
            for w in windows.iter().filter(|w| w.end >= state.time) {
                let (start, end) = (t_c1.max(w.start), t_c2.min(w.end));
                if start <= end {
                    return (Trigger::ExitStandby, Some(WindowReading { t_c1, t_c2, start, end }));
                }
            }
            (Trigger::None, Some(WindowReading { t_c1, t_c2, start: f64::NAN, end: f64::NAN }))
        }
        MonitorState::Clipped { g1, .. } => {
            let reading = WindowReading { t_c1, t_c2, start: t_c1.max(g1), end: t_c2 };
            if t_c1 >= g1 {
                (Trigger::Refine, Some(reading))
            } else {
                (Trigger::None, Some(reading))
            }
        }
        MonitorState::Idle => (Trigger::None, None),
    }
}
