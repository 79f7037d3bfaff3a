//! Human-driven vehicles: intelligent driver model with a virtual stopped
//! vehicle at a red light, lane-level RK4 integration and forward prediction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::motion::{Bounds, Motion, VehicleState};
use crate::planner::GreenWindow;

/// Speed below which a vehicle counts as stopped.
pub const STOP_SPEED: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HdvError {
    #[error("non-positive gap {gap} m to the leader at t = {time}")]
    Collision { gap: f64, time: f64 },
    #[error("invalid IDM parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
}

/// How the closing speed to the virtual red-light vehicle is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RedLightClosing {
    /// `dv = v`, as for any stationary leader.
    #[default]
    OwnSpeed,
    /// `dv = 0`.
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    pub desired_speed: f64,
    pub max_accel: f64,
    pub exponent: f64,
    /// Standstill distance to the leader.
    pub standstill: f64,
    /// Desired time headway.
    pub headway: f64,
    /// Comfortable deceleration magnitude.
    pub comfortable_decel: f64,
    pub red_light_closing: RedLightClosing,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            desired_speed: 15.0,
            max_accel: 5.0,
            exponent: 4.0,
            standstill: 4.0,
            headway: 1.5,
            comfortable_decel: 2.0,
            red_light_closing: RedLightClosing::OwnSpeed,
        }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), HdvError> {
        let checks = [
            ("desired_speed", self.desired_speed),
            ("max_accel", self.max_accel),
            ("standstill", self.standstill),
            ("headway", self.headway),
            ("comfortable_decel", self.comfortable_decel),
        ];
        for (name, value) in checks {
            if !(value > 0.0 && value.is_finite()) {
                return Err(HdvError::InvalidParam { name, value });
            }
        }
        if !(self.exponent >= 1.0 && self.exponent.is_finite()) {
            return Err(HdvError::InvalidParam { name: "exponent", value: self.exponent });
        }
        Ok(())
    }

    /// Desired gap `s*` at speed `v` and closing speed `dv`.
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        let dynamic = v * self.headway + v * dv / (2.0 * (self.max_accel * self.comfortable_decel).sqrt());
        self.standstill + dynamic.max(0.0)
    }

    fn free_term(&self, v: f64) -> f64 {
        (v / self.desired_speed).powf(self.exponent)
    }

    fn following(&self, v: f64, gap: f64, dv: f64) -> f64 {
        let ratio = self.desired_gap(v, dv) / gap;
        self.max_accel * (1.0 - self.free_term(v) - ratio * ratio)
    }
}

/// Leader as seen by the follower: bumper gap and leader speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderGap {
    pub gap: f64,
    pub speed: f64,
}

/// IDM acceleration at speed `v`, taking the minimum over the active
/// interactions (a leader and/or a red light `red_gap` ahead), clamped to the
/// control bounds.
pub fn idm_acceleration(
    v: f64,
    leader: Option<LeaderGap>,
    red_gap: Option<f64>,
    params: &IdmParams,
    bounds: &Bounds,
) -> Result<f64, HdvError> {
    let mut u = params.max_accel * (1.0 - params.free_term(v));
    if leader.is_some() || red_gap.is_some() {
        u = f64::INFINITY;
    }
    if let Some(l) = leader {
        if !(l.gap > 0.0) {
            return Err(HdvError::Collision { gap: l.gap, time: f64::NAN });
        }
        u = u.min(params.following(v, l.gap, v - l.speed));
    }
    if let Some(gap) = red_gap {
        if !(gap > 0.0) {
            return Err(HdvError::Collision { gap, time: f64::NAN });
        }
        let dv = match params.red_light_closing {
            RedLightClosing::OwnSpeed => v,
            RedLightClosing::Zero => 0.0,
        };
        u = u.min(params.following(v, gap, dv));
    }
    Ok(u.clamp(bounds.u_min, bounds.u_max))
}

/// Green windows of one light as known at some instant. Beyond
/// `known_until` the light is taken to be red.
#[derive(Debug, Clone, Copy)]
pub struct LightView<'a> {
    pub windows: &'a [GreenWindow],
    pub known_until: f64,
}

impl LightView<'_> {
    /// Remaining green at `t`, or `None` when red.
    pub fn green_remaining(&self, t: f64) -> Option<f64> {
        if t >= self.known_until {
            return None;
        }
        self.windows
            .iter()
            .find(|w| w.start <= t && t < w.end)
            .map(|w| w.end.min(self.known_until) - t)
    }
}

/// Driver rule at the light: stop on red, and during the last `lookahead`
/// seconds of green stop unless the current speed carries the vehicle over
/// the line in time. A vehicle that can no longer stop before the line at
/// `u_min` keeps going.
pub fn stops_for_light(p: f64, v: f64, t: f64, p_light: f64, light: &LightView<'_>, lookahead: f64, u_min: f64) -> bool {
    if p >= p_light {
        return false;
    }
    let dist = p_light - p;
    let can_stop = dist >= v * v / (2.0 * -u_min);
    match light.green_remaining(t) {
        None => can_stop,
        Some(rem) if rem < lookahead => dist > v * rem && can_stop,
        Some(_) => false,
    }
}

/// Kinematic state of one integrated vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HdvKinematics {
    pub position: f64,
    pub velocity: f64,
    /// Mean acceleration over the last step.
    pub acceleration: f64,
}

/// Member of a lane, front to back.
#[derive(Clone, Copy)]
pub enum LaneSlot<'a> {
    /// Index into the integrated state vector.
    Hdv(usize),
    /// Vehicle on a committed plan.
    Planned(&'a dyn Motion),
}

/// Static environment of a lane integration.
#[derive(Debug, Clone, Copy)]
pub struct LaneEnv<'a> {
    pub params: &'a IdmParams,
    pub bounds: &'a Bounds,
    pub p_light: f64,
    pub p_exit: f64,
    pub light: LightView<'a>,
    pub amber_lookahead: f64,
}

/// Advances every HDV of a lane by one RK4 step of length `dt` from `t`.
/// The stop decision at the light is taken once per step. `noise` holds an
/// additive acceleration per HDV (zeros for the deterministic model).
pub fn step_lane(
    env: &LaneEnv<'_>,
    slots: &[LaneSlot<'_>],
    states: &mut [HdvKinematics],
    noise: &[f64],
    t: f64,
    dt: f64,
) -> Result<(), HdvError> {
    let n = states.len();
    let stop: Vec<bool> = states
        .iter()
        .map(|s| {
            stops_for_light(s.position, s.velocity, t, env.p_light, &env.light, env.amber_lookahead, env.bounds.u_min)
        })
        .collect();
    let p0: Vec<f64> = states.iter().map(|s| s.position).collect();
    let v0: Vec<f64> = states.iter().map(|s| s.velocity).collect();

    let deriv = |ts: f64, p: &[f64], v: &[f64], out: &mut [f64]| -> Result<(), HdvError> {
        let mut ahead: Option<LeaderGap> = None;
        let mut ahead_pos = f64::NAN;
        for slot in slots {
            match *slot {
                LaneSlot::Planned(m) => {
                    let s = m.state_at(ts);
                    if ts >= m.exit_time() || s.position >= env.p_exit {
                        ahead = None;
                    } else {
                        ahead = Some(LeaderGap { gap: 0.0, speed: s.velocity });
                        ahead_pos = s.position;
                    }
                }
                LaneSlot::Hdv(i) => {
                    let leader = ahead.map(|l| LeaderGap { gap: ahead_pos - p[i], speed: l.speed });
                    let red = (stop[i] && p[i] < env.p_light).then(|| env.p_light - p[i]).filter(|g| *g > 0.0);
                    let mut u = idm_acceleration(v[i], leader, red, env.params, env.bounds)
                        .map_err(|e| match e {
                            HdvError::Collision { gap, .. } => HdvError::Collision { gap, time: ts },
                            other => other,
                        })?;
                    u = (u + noise[i]).clamp(env.bounds.u_min, env.bounds.u_max);
                    if v[i] <= 0.0 && u < 0.0 {
                        u = 0.0;
                    }
                    out[i] = u;
                    if p[i] >= env.p_exit {
                        ahead = None;
                    } else {
                        ahead = Some(LeaderGap { gap: 0.0, speed: v[i] });
                        ahead_pos = p[i];
                    }
                }
            }
        }
        Ok(())
    };

    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut ps = vec![0.0; n];
    let mut vs = vec![0.0; n];
    let h = dt;

    deriv(t, &p0, &v0, &mut k1)?;
    for i in 0..n {
        ps[i] = p0[i] + 0.5 * h * v0[i];
        vs[i] = v0[i] + 0.5 * h * k1[i];
    }
    let v2 = vs.clone();
    deriv(t + 0.5 * h, &ps, &vs, &mut k2)?;
    for i in 0..n {
        ps[i] = p0[i] + 0.5 * h * v2[i];
        vs[i] = v0[i] + 0.5 * h * k2[i];
    }
    let v3 = vs.clone();
    deriv(t + 0.5 * h, &ps, &vs, &mut k3)?;
    for i in 0..n {
        ps[i] = p0[i] + h * v3[i];
        vs[i] = v0[i] + h * k3[i];
    }
    let v4 = vs.clone();
    deriv(t + h, &ps, &vs, &mut k4)?;

    for i in 0..n {
        let dp = h / 6.0 * (v0[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]);
        let dv = h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        let v_new = (v0[i] + dv).max(0.0);
        states[i] = HdvKinematics {
            position: p0[i] + dp.max(0.0),
            velocity: v_new,
            acceleration: (v_new - v0[i]) / h,
        };
    }
    Ok(())
}

/// Predicted motion of one HDV on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct HdvPrediction {
    pub t0: f64,
    pub dt: f64,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub accelerations: Vec<f64>,
    /// Comes below the stop speed before the light within the horizon.
    pub stops: bool,
    pub exit: f64,
    pub threshold: f64,
}

impl HdvPrediction {
    pub fn horizon_end(&self) -> f64 {
        self.t0 + (self.positions.len() - 1) as f64 * self.dt
    }

    pub fn position_at(&self, t: f64) -> f64 {
        self.state_at(t).position
    }

    /// `true` when the actual position strays from the prediction by more
    /// than the threshold, so followers must replan.
    pub fn deviates(&self, t: f64, actual_position: f64) -> bool {
        (actual_position - self.position_at(t)).abs() > self.threshold
    }
}

impl Motion for HdvPrediction {
    fn state_at(&self, t: f64) -> VehicleState {
        let last = self.positions.len() - 1;
        let x = (t - self.t0) / self.dt;
        if x <= 0.0 {
            return VehicleState::new(t, self.positions[0], self.velocities[0], self.accelerations[0]);
        }
        let nearest = x.round();
        let k = if (x - nearest).abs() < 1e-6 { nearest as usize } else { x.floor() as usize };
        if k >= last {
            let end = self.horizon_end();
            let v = self.velocities[last];
            return VehicleState::new(t, self.positions[last] + v * (t - end), v, 0.0);
        }
        let s = x - k as f64;
        if s <= 1e-6 {
            return VehicleState::new(t, self.positions[k], self.velocities[k], self.accelerations[k]);
        }
        // cubic Hermite on position and speed
        let (p0, p1) = (self.positions[k], self.positions[k + 1]);
        let (m0, m1) = (self.velocities[k] * self.dt, self.velocities[k + 1] * self.dt);
        let (s2, s3) = (s * s, s * s * s);
        let p = (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * m1;
        let v = self.velocities[k] + s * (self.velocities[k + 1] - self.velocities[k]);
        VehicleState::new(t, p, v, self.accelerations[k + 1])
    }

    fn exit_time(&self) -> f64 {
        self.exit
    }
}

/// Linear interpolation of the time at which `target` is passed between two
/// samples.
pub fn interpolate_crossing(t: f64, dt: f64, p_before: f64, p_after: f64, target: f64) -> f64 {
    if p_after <= p_before {
        return t + dt;
    }
    t + dt * ((target - p_before) / (p_after - p_before)).clamp(0.0, 1.0)
}

/// Forward-integrates a lane from `t0` over `horizon` seconds and returns one
/// prediction per HDV (in state-vector order).
pub fn predict_lane(
    env: &LaneEnv<'_>,
    slots: &[LaneSlot<'_>],
    initial: &[HdvKinematics],
    t0_step: u64,
    dt: f64,
    horizon: f64,
    threshold: f64,
) -> Vec<HdvPrediction> {
    let n = initial.len();
    let t0 = t0_step as f64 * dt;
    let mut out: Vec<HdvPrediction> = initial
        .iter()
        .map(|s| HdvPrediction {
            t0,
            dt,
            positions: vec![s.position],
            velocities: vec![s.velocity],
            accelerations: vec![s.acceleration],
            stops: s.position < env.p_light && s.velocity < STOP_SPEED,
            exit: if s.position >= env.p_exit { t0 } else { f64::INFINITY },
            threshold,
        })
        .collect();
    let mut states = initial.to_vec();
    let zeros = vec![0.0; n];
    let steps = (horizon / dt).ceil() as u64;
    for j in 0..steps {
        if states.iter().all(|s| s.position >= env.p_exit) {
            break;
        }
        let t = (t0_step + j) as f64 * dt;
        let before: Vec<f64> = states.iter().map(|s| s.position).collect();
        if step_lane(env, slots, &mut states, &zeros, t, dt).is_err() {
            break;
        }
        for (i, s) in states.iter().enumerate() {
            let pred = &mut out[i];
            pred.positions.push(s.position);
            pred.velocities.push(s.velocity);
            pred.accelerations.push(s.acceleration);
            if s.position < env.p_light && s.velocity < STOP_SPEED {
                pred.stops = true;
            }
            if pred.exit.is_infinite() && s.position >= env.p_exit {
                pred.exit = interpolate_crossing(t, dt, before[i], s.position, env.p_exit);
            }
        }
    }
    out
}
