//! Longitudinal vehicle motion: state, bounds, and piecewise trajectories.
//!
//! A [`Trajectory`] is an ordered list of [`Segment`]s over absolute
//! simulation time. Cubic segments keep their coefficients in a frame shifted
//! to the segment start so that evaluation stays well conditioned late in a
//! run; callers only ever see absolute time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used for position/velocity continuity and landmark checks.
pub const POSITION_TOL: f64 = 1e-6;

/// Bisection tolerance for crossing-time queries, in seconds.
pub const CROSSING_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("time {t} outside trajectory domain [{start}, {end}]")]
    OutOfRange { t: f64, start: f64, end: f64 },
    #[error("position {target} is never reached (trajectory spans [{from}, {to}])")]
    NoCrossing { target: f64, from: f64, to: f64 },
    #[error("segments are not contiguous at t={at}")]
    Gap { at: f64 },
    #[error("discontinuity at t={at}: dp={dp:e}, dv={dv:e}")]
    Discontinuity { at: f64, dp: f64, dv: f64 },
    #[error("empty or inverted segment [{start}, {end}]")]
    BadInterval { start: f64, end: f64 },
    #[error("trajectory has no segments")]
    Empty,
    #[error("invalid bounds: {0}")]
    InvalidBounds(&'static str),
}

/// Position, velocity and acceleration of one vehicle at an instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub time: f64,
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl VehicleState {
    pub fn new(time: f64, position: f64, velocity: f64, acceleration: f64) -> Self {
        Self { time, position, velocity, acceleration }
    }
}

/// State and control limits shared by every CAV plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Reaction time used by the rear-end constraint.
    pub reaction_time: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Self { v_min: 0.0, v_max: 20.0, u_min: -5.0, u_max: 5.0, reaction_time: 1.0 }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<(), MotionError> {
        if !(self.v_min < self.v_max) {
            return Err(MotionError::InvalidBounds("v_min must be below v_max"));
        }
        if self.v_min < 0.0 {
            return Err(MotionError::InvalidBounds("v_min must be non-negative"));
        }
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            return Err(MotionError::InvalidBounds("require u_min < 0 < u_max"));
        }
        if !(self.reaction_time > 0.0) {
            return Err(MotionError::InvalidBounds("reaction time must be positive"));
        }
        Ok(())
    }

    /// Safe following distance `phi * v + gamma` required behind a leader
    /// whose standstill distance is `gamma`.
    pub fn safe_distance(&self, follower_speed: f64, gamma: f64) -> f64 {
        self.reaction_time * follower_speed + gamma
    }
}

/// `p(t) = a s^3 + b s^2 + c s + d` with `s = t - t_start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CubicSegment {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl CubicSegment {
    /// Builds a segment from coefficients expressed in local (shifted) time.
    pub fn new(a: f64, b: f64, c: f64, d: f64, t_start: f64, t_end: f64) -> Result<Self, MotionError> {
        if !(t_start < t_end) {
            return Err(MotionError::BadInterval { start: t_start, end: t_end });
        }
        Ok(Self { a, b, c, d, t_start, t_end })
    }

    /// Builds a segment from coefficients of the absolute-time polynomial.
    pub fn from_absolute(a: f64, b: f64, c: f64, d: f64, t_start: f64, t_end: f64) -> Result<Self, MotionError> {
        let s = t_start;
        Self::new(
            a,
            3.0 * a * s + b,
            3.0 * a * s * s + 2.0 * b * s + c,
            ((a * s + b) * s + c) * s + d,
            t_start,
            t_end,
        )
    }

    /// Coefficients of the same polynomial in absolute time.
    pub fn absolute_coefficients(&self) -> [f64; 4] {
        let (a, b, c, d, s) = (self.a, self.b, self.c, self.d, self.t_start);
        [
            a,
            b - 3.0 * a * s,
            c - 2.0 * b * s + 3.0 * a * s * s,
            d - c * s + b * s * s - a * s * s * s,
        ]
    }

    pub fn position(&self, t: f64) -> f64 {
        let s = t - self.t_start;
        ((self.a * s + self.b) * s + self.c) * s + self.d
    }

    pub fn velocity(&self, t: f64) -> f64 {
        let s = t - self.t_start;
        (3.0 * self.a * s + 2.0 * self.b) * s + self.c
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        6.0 * self.a * (t - self.t_start) + 2.0 * self.b
    }

    /// Velocity range over the whole interval (the velocity is quadratic, so
    /// its extremes are at the ends or at the stationary point).
    pub fn velocity_range(&self) -> (f64, f64) {
        let mut lo = self.velocity(self.t_start).min(self.velocity(self.t_end));
        let mut hi = self.velocity(self.t_start).max(self.velocity(self.t_end));
        if self.a != 0.0 {
            let s = -self.b / (3.0 * self.a);
            if s > 0.0 && s < self.t_end - self.t_start {
                let v = self.velocity(self.t_start + s);
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        (lo, hi)
    }

    /// Acceleration range over the interval (linear in time).
    pub fn acceleration_range(&self) -> (f64, f64) {
        let u0 = self.acceleration(self.t_start);
        let u1 = self.acceleration(self.t_end);
        (u0.min(u1), u0.max(u1))
    }

    /// True when speed and acceleration stay within `bounds` on the whole
    /// interval, up to `tol`.
    pub fn respects(&self, bounds: &Bounds, tol: f64) -> bool {
        let (vlo, vhi) = self.velocity_range();
        let (ulo, uhi) = self.acceleration_range();
        vlo >= bounds.v_min - tol
            && vhi <= bounds.v_max + tol
            && ulo >= bounds.u_min - tol
            && uhi <= bounds.u_max + tol
    }
}

/// Constant acceleration from a known start state. A zero-speed,
/// zero-acceleration segment with an infinite end represents holding still.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstAccelSegment {
    pub accel: f64,
    pub p0: f64,
    pub v0: f64,
    pub t_start: f64,
    pub t_end: f64,
}

impl ConstAccelSegment {
    pub fn new(accel: f64, p0: f64, v0: f64, t_start: f64, t_end: f64) -> Result<Self, MotionError> {
        if !(t_start < t_end) {
            return Err(MotionError::BadInterval { start: t_start, end: t_end });
        }
        Ok(Self { accel, p0, v0, t_start, t_end })
    }

    pub fn hold(position: f64, t_start: f64) -> Self {
        Self { accel: 0.0, p0: position, v0: 0.0, t_start, t_end: f64::INFINITY }
    }

    pub fn position(&self, t: f64) -> f64 {
        let s = t - self.t_start;
        self.p0 + self.v0 * s + 0.5 * self.accel * s * s
    }

    pub fn velocity(&self, t: f64) -> f64 {
        self.v0 + self.accel * (t - self.t_start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Segment {
    Cubic(CubicSegment),
    ConstAccel(ConstAccelSegment),
}

impl Segment {
    pub fn t_start(&self) -> f64 {
        match self {
            Segment::Cubic(c) => c.t_start,
            Segment::ConstAccel(k) => k.t_start,
        }
    }

    pub fn t_end(&self) -> f64 {
        match self {
            Segment::Cubic(c) => c.t_end,
            Segment::ConstAccel(k) => k.t_end,
        }
    }

    pub fn state(&self, t: f64) -> VehicleState {
        match self {
            Segment::Cubic(c) => VehicleState::new(t, c.position(t), c.velocity(t), c.acceleration(t)),
            Segment::ConstAccel(k) => VehicleState::new(t, k.position(t), k.velocity(t), k.accel),
        }
    }

    pub fn position(&self, t: f64) -> f64 {
        match self {
            Segment::Cubic(c) => c.position(t),
            Segment::ConstAccel(k) => k.position(t),
        }
    }

    fn acceleration(&self, t: f64) -> f64 {
        match self {
            Segment::Cubic(c) => c.acceleration(t),
            Segment::ConstAccel(k) => k.accel,
        }
    }

    /// `1/2 * integral of u^2` over `[from, to]` clipped to the segment.
    /// Exact: `u^2` is at most quadratic in time, so Simpson's rule is exact.
    pub fn energy(&self, from: f64, to: f64) -> f64 {
        let lo = from.max(self.t_start());
        let hi = to.min(self.t_end());
        if !(hi > lo) {
            return 0.0;
        }
        let h = hi - lo;
        match self {
            Segment::ConstAccel(k) => 0.5 * k.accel * k.accel * h,
            Segment::Cubic(_) => {
                let ua = self.acceleration(lo);
                let um = self.acceleration(0.5 * (lo + hi));
                let ub = self.acceleration(hi);
                0.5 * h / 6.0 * (ua * ua + 4.0 * um * um + ub * ub)
            }
        }
    }
}

/// Times and positions a plan commits to.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Landmarks {
    pub p_start: f64,
    pub p_light: f64,
    pub p_exit: f64,
    /// Light crossing time, when the plan crosses the light.
    pub t_light: Option<f64>,
    /// Zone exit time, when the plan exits the zone.
    pub t_exit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    segments: Vec<Segment>,
    pub landmarks: Landmarks,
}

impl Trajectory {
    /// Validates contiguity and continuity of `segments`.
    pub fn new(segments: Vec<Segment>, landmarks: Landmarks) -> Result<Self, MotionError> {
        if segments.is_empty() {
            return Err(MotionError::Empty);
        }
        for seg in &segments {
            if !(seg.t_start() < seg.t_end()) {
                return Err(MotionError::BadInterval { start: seg.t_start(), end: seg.t_end() });
            }
        }
        for pair in segments.windows(2) {
            let (prev, next) = (&pair[0], &pair[1]);
            let at = next.t_start();
            if (prev.t_end() - at).abs() > 1e-9 {
                return Err(MotionError::Gap { at });
            }
            let before = prev.state(prev.t_end());
            let after = next.state(at);
            let dp = (before.position - after.position).abs();
            let dv = (before.velocity - after.velocity).abs();
            if dp > POSITION_TOL || dv > POSITION_TOL {
                return Err(MotionError::Discontinuity { at, dp, dv });
            }
        }
        Ok(Self { segments, landmarks })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start_time(&self) -> f64 {
        self.segments[0].t_start()
    }

    pub fn end_time(&self) -> f64 {
        self.segments[self.segments.len() - 1].t_end()
    }

    fn segment_index(&self, t: f64) -> usize {
        // later segment owns a shared junction
        self.segments.partition_point(|s| s.t_start() <= t).saturating_sub(1)
    }

    /// State at absolute time `t`.
    pub fn eval(&self, t: f64) -> Result<VehicleState, MotionError> {
        let (start, end) = (self.start_time(), self.end_time());
        if !(t >= start && t <= end) {
            return Err(MotionError::OutOfRange { t, start, end });
        }
        Ok(self.segments[self.segment_index(t)].state(t))
    }

    /// State at `t`, clamped to the trajectory domain and extrapolated at
    /// constant speed past its end.
    pub fn state_clamped(&self, t: f64) -> VehicleState {
        let (start, end) = (self.start_time(), self.end_time());
        if t <= start {
            return self.segments[0].state(start);
        }
        if t > end {
            let last = self.segments[self.segments.len() - 1].state(end);
            return VehicleState::new(t, last.position + last.velocity * (t - end), last.velocity, 0.0);
        }
        self.segments[self.segment_index(t)].state(t)
    }

    /// Earliest time at which the position reaches `target`. Assumes the
    /// position is nondecreasing, which holds whenever `v_min >= 0`.
    pub fn crossing_time(&self, target: f64) -> Result<f64, MotionError> {
        let from = self.segments[0].position(self.start_time());
        if target <= from {
            if (target - from).abs() <= POSITION_TOL {
                return Ok(self.start_time());
            }
            return Err(MotionError::NoCrossing { target, from, to: from });
        }
        for seg in &self.segments {
            let (t0, mut t1) = (seg.t_start(), seg.t_end());
            if t1.is_infinite() {
                let s = seg.state(t0);
                if s.velocity <= 0.0 && s.acceleration <= 0.0 {
                    continue;
                }
                let mut width = 1.0;
                while seg.position(t0 + width) < target {
                    width *= 2.0;
                    if width > 1e7 {
                        break;
                    }
                }
                t1 = t0 + width;
            }
            if seg.position(t1) < target {
                continue;
            }
            let (mut lo, mut hi) = (t0, t1);
            while hi - lo > CROSSING_TOL {
                let mid = 0.5 * (lo + hi);
                if seg.position(mid) >= target {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(hi);
        }
        let last = &self.segments[self.segments.len() - 1];
        let end = self.end_time();
        let to = if end.is_finite() { last.position(end) } else { last.position(last.t_start()) };
        Err(MotionError::NoCrossing { target, from, to })
    }

    /// `1/2 * integral of u^2` over `[from, to]` (clipped to the domain).
    pub fn energy(&self, from: f64, to: f64) -> f64 {
        self.segments.iter().map(|s| s.energy(from, to)).sum()
    }

    /// Every cubic piece respects the speed and acceleration bounds, and every
    /// constant-acceleration piece stays within them at both ends.
    pub fn respects(&self, bounds: &Bounds, tol: f64) -> bool {
        self.segments.iter().all(|seg| match seg {
            Segment::Cubic(c) => c.respects(bounds, tol),
            Segment::ConstAccel(k) => {
                let end = if k.t_end.is_finite() { k.t_end } else { k.t_start };
                let (v0, v1) = (k.velocity(k.t_start), k.velocity(end));
                k.accel >= bounds.u_min - tol
                    && k.accel <= bounds.u_max + tol
                    && v0.min(v1) >= bounds.v_min - tol
                    && v0.max(v1) <= bounds.v_max + tol
            }
        })
    }
}

/// Anything whose longitudinal motion can be queried over time: committed
/// CAV plans and HDV predictions.
pub trait Motion {
    /// State at `t`; implementations extrapolate outside their domain.
    fn state_at(&self, t: f64) -> VehicleState;
    /// Time at which the vehicle leaves the control zone, or infinity.
    fn exit_time(&self) -> f64;
}

impl Motion for Trajectory {
    fn state_at(&self, t: f64) -> VehicleState {
        self.state_clamped(t)
    }

    fn exit_time(&self) -> f64 {
        self.landmarks.t_exit.unwrap_or(f64::INFINITY)
    }
}

/// Checks `p_k(t) - p_i(t) >= phi * v_i(t) + gamma_k` on a uniform grid over
/// `[from, to]` (the end point is always included). Returns the first
/// violating time, if any.
pub fn first_rear_end_violation(
    follower: &dyn Motion,
    leader: &dyn Motion,
    bounds: &Bounds,
    gamma_leader: f64,
    from: f64,
    to: f64,
    grid: f64,
) -> Option<f64> {
    let to = to.min(leader.exit_time()).min(follower.exit_time());
    if !(to >= from) {
        return None;
    }
    let steps = ((to - from) / grid).ceil() as usize;
    // the slack changes no faster than this, so grid points within
    // slack / rate of a checked point cannot violate and are skipped
    let rate = 1.5 * (bounds.v_max + bounds.reaction_time * bounds.u_min.abs().max(bounds.u_max));
    let mut j = 0;
    while j <= steps {
        let t = (from + j as f64 * grid).min(to);
        let slack = rear_end_slack(follower, leader, bounds, gamma_leader, t) + POSITION_TOL;
        if slack < 0.0 {
            return Some(t);
        }
        j += (slack / (rate * grid)).floor() as usize + 1;
    }
    None
}

fn rear_end_slack(follower: &dyn Motion, leader: &dyn Motion, bounds: &Bounds, gamma_leader: f64, t: f64) -> f64 {
    let f = follower.state_at(t);
    leader.state_at(t).position - f.position - bounds.safe_distance(f.velocity.max(0.0), gamma_leader)
}

/// Pointwise form of the rear-end constraint at `t`.
pub fn rear_end_violated_at(follower: &dyn Motion, leader: &dyn Motion, bounds: &Bounds, gamma_leader: f64, t: f64) -> bool {
    rear_end_slack(follower, leader, bounds, gamma_leader, t) < -POSITION_TOL
}
