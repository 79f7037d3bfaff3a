//! Scenario configuration: a flat TOML document, every key optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hdv::{IdmParams, RedLightClosing};
use crate::motion::Bounds;
use crate::signal::{Policy, SignalTiming, PHASES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub zone_length: f64,
    /// Distance from the light to the end of the zone.
    pub light_offset: f64,

    pub v_min: f64,
    pub v_max: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub reaction_time: f64,
    pub standstill_cav: f64,
    pub standstill_hdv: f64,

    pub desired_speed: f64,
    pub idm_exponent: f64,
    pub time_headway: f64,
    pub comfortable_decel: f64,
    pub red_light_closing: RedLightClosing,
    pub amber_lookahead: f64,
    pub hdv_accel_noise: f64,
    pub deviation_threshold: f64,
    pub prediction_horizon: f64,

    pub policy: Policy,
    pub t_cycle: f64,
    pub t_min: f64,
    pub t_update: Option<f64>,
    pub first_cycle_order: [usize; PHASES],
    pub first_cycle_durations: Option<[f64; PHASES]>,

    pub seed: u64,
    pub penetration: f64,
    pub vehicle_count: usize,
    /// Mean arrivals per second over the whole intersection.
    pub arrival_rate: f64,
    pub left_share: f64,
    pub right_share: f64,
    pub entry_speed_min: f64,
    pub entry_speed_max: f64,

    pub step: f64,
    pub horizon: f64,
    pub search_step: f64,
    pub check_grid: f64,
    pub exit_time_cap: f64,
    pub trace_interval: f64,
    pub retry_interval: f64,
    pub strict: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            zone_length: 300.0,
            light_offset: 30.0,
            v_min: 0.0,
            v_max: 20.0,
            u_min: -5.0,
            u_max: 5.0,
            reaction_time: 1.0,
            standstill_cav: 3.0,
            standstill_hdv: 4.0,
            desired_speed: 15.0,
            idm_exponent: 4.0,
            time_headway: 1.5,
            comfortable_decel: 2.0,
            red_light_closing: RedLightClosing::OwnSpeed,
            amber_lookahead: 4.0,
            hdv_accel_noise: 0.0,
            deviation_threshold: 2.0,
            prediction_horizon: 60.0,
            policy: Policy::Adaptive,
            t_cycle: 40.0,
            t_min: 3.0,
            t_update: None,
            first_cycle_order: [0, 1, 2, 3],
            first_cycle_durations: None,
            seed: 1,
            penetration: 0.7,
            vehicle_count: 200,
            arrival_rate: 0.5,
            left_share: 0.25,
            right_share: 0.25,
            entry_speed_min: 10.0,
            entry_speed_max: 15.0,
            step: 0.01,
            horizon: 3600.0,
            search_step: 0.1,
            check_grid: 0.01,
            exit_time_cap: 120.0,
            trace_interval: 0.1,
            retry_interval: 0.1,
            strict: true,
        }
    }
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, reason: reason.into() }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        let mut eff = self.clone();
        eff.t_update = Some(self.t_update());
        eff.first_cycle_durations = Some(self.first_cycle_durations());
        toml::to_string(&eff).expect("config serializes")
    }

    pub fn p_light(&self) -> f64 {
        self.zone_length - self.light_offset
    }

    pub fn t_update(&self) -> f64 {
        self.t_update.unwrap_or(self.t_cycle / 2.0)
    }

    pub fn first_cycle_durations(&self) -> [f64; PHASES] {
        self.first_cycle_durations.unwrap_or([self.t_cycle / PHASES as f64; PHASES])
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            v_min: self.v_min,
            v_max: self.v_max,
            u_min: self.u_min,
            u_max: self.u_max,
            reaction_time: self.reaction_time,
        }
    }

    pub fn idm(&self) -> IdmParams {
        IdmParams {
            desired_speed: self.desired_speed,
            max_accel: self.u_max,
            exponent: self.idm_exponent,
            standstill: self.standstill_hdv,
            headway: self.time_headway,
            comfortable_decel: self.comfortable_decel,
            red_light_closing: self.red_light_closing,
        }
    }

    pub fn timing(&self) -> SignalTiming {
        SignalTiming { t_cycle: self.t_cycle, t_min: self.t_min, t_update: self.t_update() }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("zone_length", self.zone_length),
            ("light_offset", self.light_offset),
            ("v_max", self.v_max),
            ("u_max", self.u_max),
            ("reaction_time", self.reaction_time),
            ("standstill_cav", self.standstill_cav),
            ("standstill_hdv", self.standstill_hdv),
            ("desired_speed", self.desired_speed),
            ("time_headway", self.time_headway),
            ("comfortable_decel", self.comfortable_decel),
            ("amber_lookahead", self.amber_lookahead),
            ("deviation_threshold", self.deviation_threshold),
            ("prediction_horizon", self.prediction_horizon),
            ("t_cycle", self.t_cycle),
            ("t_min", self.t_min),
            ("arrival_rate", self.arrival_rate),
            ("step", self.step),
            ("horizon", self.horizon),
            ("search_step", self.search_step),
            ("check_grid", self.check_grid),
            ("exit_time_cap", self.exit_time_cap),
            ("trace_interval", self.trace_interval),
            ("retry_interval", self.retry_interval),
        ];
        for (key, value) in positive {
            // the deviation threshold may be infinite to disable the hook
            if !(value > 0.0) || value.is_nan() || (value.is_infinite() && key != "deviation_threshold") {
                return Err(invalid(key, format!("must be positive and finite, got {value}")));
            }
        }
        if !(self.v_min >= 0.0) {
            return Err(invalid("v_min", format!("must be non-negative, got {}", self.v_min)));
        }
        if !(self.v_min < self.v_max) {
            return Err(invalid("v_min", format!("v_min = {} must be below v_max = {}", self.v_min, self.v_max)));
        }
        if !(self.u_min < 0.0) {
            return Err(invalid("u_min", format!("must be negative, got {}", self.u_min)));
        }
        if self.light_offset >= self.zone_length {
            return Err(invalid("light_offset", "must be shorter than the zone"));
        }
        if !(self.idm_exponent >= 1.0) {
            return Err(invalid("idm_exponent", format!("must be at least 1, got {}", self.idm_exponent)));
        }
        if !(self.hdv_accel_noise >= 0.0) {
            return Err(invalid("hdv_accel_noise", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.penetration) {
            return Err(invalid("penetration", format!("must lie in [0, 1], got {}", self.penetration)));
        }
        if !(self.left_share >= 0.0 && self.right_share >= 0.0 && self.left_share + self.right_share <= 1.0) {
            return Err(invalid("left_share", "turn shares must be non-negative and sum to at most 1"));
        }
        if !(self.entry_speed_min > 0.0 && self.entry_speed_min <= self.entry_speed_max) {
            return Err(invalid("entry_speed_min", "must be positive and not above entry_speed_max"));
        }
        if self.entry_speed_max > self.v_max {
            return Err(invalid("entry_speed_max", "must not exceed v_max"));
        }
        if self.vehicle_count == 0 {
            return Err(invalid("vehicle_count", "must be at least 1"));
        }
        if !(self.t_cycle > PHASES as f64 * self.t_min) {
            return Err(invalid(
                "t_cycle",
                format!("must exceed {PHASES} * t_min = {}, got {}", PHASES as f64 * self.t_min, self.t_cycle),
            ));
        }
        let t_update = self.t_update();
        if !(t_update > 0.0 && t_update < self.t_cycle) {
            return Err(invalid("t_update", format!("must lie strictly inside the cycle, got {t_update}")));
        }
        let mut seen = [false; PHASES];
        for &p in &self.first_cycle_order {
            if p >= PHASES || seen[p] {
                return Err(invalid("first_cycle_order", "must be a permutation of 0..4"));
            }
            seen[p] = true;
        }
        let durations = self.first_cycle_durations();
        let sum: f64 = durations.iter().sum();
        if (sum - self.t_cycle).abs() > 1e-9 || durations.iter().any(|d| *d < self.t_min) {
            return Err(invalid("first_cycle_durations", "must each be at least t_min and sum to t_cycle"));
        }
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    ScenarioConfig::from_toml_str(&text)
}
