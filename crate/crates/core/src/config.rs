//! Scenario documents: one JSON object binding every input of a run.
//!
//! ```json
//! {
//!   "v": 1,
//!   "seed": 7,
//!   "goal": { "target": { "x": 0.5, "y": 0.5, "z": 0.3 } },
//!   "physical": { "gain": 8.0 },
//!   "virtual": { "gain": 10.0 },
//!   "bounds": { "delta_q": 0.15, "delta_alpha": 5.0, "delta_b": 0.05 },
//!   "max_ticks": 60000
//! }
//! ```
//!
//! Unknown fields are rejected. `TWINSYNC_SEED` overrides `seed`; channel
//! seeds that are not given explicitly are derived from the scenario seed.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::control::monitor::Bounds;
use crate::kinematics::{forward_kinematics, solve_ik, JointVector, KinematicChain, Pose, PANDA_HOME};
use crate::robotsim::RobotConfig;
use crate::trajectory::{Obstacle, TrajectoryGoal};
use crate::twinlink::{ChannelConfig, LinkMode};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "TWINSYNC_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("{field}: {msg}")]
    Invalid { field: String, msg: String },
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HitlMode {
    #[default]
    Gate,
    AutoApprove,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwinSpec {
    /// First-order tracking gain, 1/s.
    pub gain: f64,
    #[serde(default)]
    pub clock_offset_ms: f64,
    #[serde(default)]
    pub actuation_latency_ms: f64,
    #[serde(default)]
    pub clock_drift_ppm: f64,
}

impl TwinSpec {
    pub fn new(gain: f64) -> Self {
        Self {
            gain,
            clock_offset_ms: 0.0,
            actuation_latency_ms: 0.0,
            clock_drift_ppm: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    #[serde(default)]
    pub latency_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub drop_prob: f64,
    #[serde(default)]
    pub mode: LinkMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channels {
    #[serde(default)]
    pub cmd_physical: ChannelSpec,
    #[serde(default)]
    pub cmd_virtual: ChannelSpec,
    #[serde(default)]
    pub state_physical: ChannelSpec,
    #[serde(default)]
    pub state_virtual: ChannelSpec,
}

impl Channels {
    fn named(&self) -> [(&'static str, &ChannelSpec); 4] {
        [
            ("cmd_physical", &self.cmd_physical),
            ("cmd_virtual", &self.cmd_virtual),
            ("state_physical", &self.state_physical),
            ("state_virtual", &self.state_virtual),
        ]
    }
}

/// An obstacle plus the tick at which the control block learns about it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    pub cx: f64,
    pub cy: f64,
    pub sx: f64,
    pub sy: f64,
    pub h: f64,
    #[serde(default)]
    pub detect_tick: u64,
}

impl ObstacleSpec {
    pub fn obstacle(&self) -> Obstacle {
        Obstacle {
            center_x: self.cx,
            center_y: self.cy,
            size_x: self.sx,
            size_y: self.sy,
            height: self.h,
        }
    }
}

fn default_tick_ms() -> f64 {
    1.0
}
fn default_cruise_speed() -> f64 {
    0.2
}
fn default_link_timeout() -> f64 {
    250.0
}
fn default_margin() -> f64 {
    0.05
}
fn default_goal_tol() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub v: u32,
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<KinematicChain>,
    /// Initial joints of both twins; defaults to the built-in home pose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_joints: Option<JointVector>,
    /// Start pose; when given, both twins start at its IK solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Pose>,
    pub goal: TrajectoryGoal,
    /// Cartesian pacing of waypoint commands, m/s.
    #[serde(default = "default_cruise_speed")]
    pub cruise_speed: f64,
    #[serde(default = "default_tick_ms")]
    pub tick_ms: f64,
    pub physical: TwinSpec,
    #[serde(rename = "virtual")]
    pub virtual_twin: TwinSpec,
    #[serde(default)]
    pub channels: Channels,
    pub bounds: Bounds,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub hitl_mode: HitlMode,
    pub max_ticks: u64,
    #[serde(default = "default_link_timeout")]
    pub link_timeout_ms: f64,
    /// Extra clearance added to `delta_b` when replanning around obstacles.
    #[serde(default = "default_margin")]
    pub avoidance_margin: f64,
    #[serde(default = "default_goal_tol")]
    pub goal_tolerance: f64,
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be > 0 (got {v})")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be >= 0 (got {v})")))
    }
}

impl ScenarioConfig {
    /// Minimal scenario: Panda chain from home to `target`, ideal links, no obstacles.
    pub fn new(seed: u64, target: Pose, bounds: Bounds) -> Self {
        Self {
            v: SCHEMA_VERSION,
            name: String::new(),
            seed,
            chain: None,
            home_joints: None,
            start: None,
            goal: TrajectoryGoal {
                target,
                max_step: crate::trajectory::DEFAULT_MAX_STEP,
            },
            cruise_speed: default_cruise_speed(),
            tick_ms: default_tick_ms(),
            physical: TwinSpec::new(10.0),
            virtual_twin: TwinSpec::new(10.0),
            channels: Channels::default(),
            bounds,
            obstacles: Vec::new(),
            hitl_mode: HitlMode::Gate,
            max_ticks: 600_000,
            link_timeout_ms: default_link_timeout(),
            avoidance_margin: default_margin(),
            goal_tolerance: default_goal_tol(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, applies the `TWINSYNC_SEED` override, and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| invalid(SEED_ENV, format!("not an unsigned integer: {s:?}")))?;
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.v != SCHEMA_VERSION {
            return Err(invalid("v", format!("unsupported schema version {} (expected 1)", self.v)));
        }
        let chain = self.chain();
        if let Some(h) = &self.home_joints {
            if h.len() != chain.dof() {
                return Err(invalid(
                    "home_joints",
                    format!("{} entries for a {}-joint chain", h.len(), chain.dof()),
                ));
            }
            if !chain.within_limits(h) {
                return Err(invalid("home_joints", "outside joint limits"));
            }
        }
        if let Some(s) = &self.start {
            if !s.is_finite() {
                return Err(invalid("start", "not finite"));
            }
        }
        if !self.goal.target.is_finite() {
            return Err(invalid("goal.target", "not finite"));
        }
        positive("goal.max_step", self.goal.max_step)?;
        positive("cruise_speed", self.cruise_speed)?;
        positive("tick_ms", self.tick_ms)?;
        for (name, t) in [("physical", &self.physical), ("virtual", &self.virtual_twin)] {
            positive(&format!("{name}.gain"), t.gain)?;
            if t.gain * self.tick_ms * 1e-3 >= 1.0 {
                return Err(invalid(
                    format!("{name}.gain"),
                    format!("gain * tick must be < 1 for a stable lag (got {})", t.gain * self.tick_ms * 1e-3),
                ));
            }
            non_negative(&format!("{name}.actuation_latency_ms"), t.actuation_latency_ms)?;
            if !t.clock_offset_ms.is_finite() {
                return Err(invalid(format!("{name}.clock_offset_ms"), "not finite"));
            }
            if !t.clock_drift_ppm.is_finite() {
                return Err(invalid(format!("{name}.clock_drift_ppm"), "not finite"));
            }
        }
        for (name, c) in self.channels.named() {
            non_negative(&format!("channels.{name}.latency_ms"), c.latency_ms)?;
            non_negative(&format!("channels.{name}.jitter_ms"), c.jitter_ms)?;
            if c.jitter_ms > c.latency_ms {
                return Err(invalid(
                    format!("channels.{name}.jitter_ms"),
                    format!("must not exceed latency_ms ({} > {})", c.jitter_ms, c.latency_ms),
                ));
            }
            if !(0.0..=1.0).contains(&c.drop_prob) {
                return Err(invalid(
                    format!("channels.{name}.drop_prob"),
                    format!("must be in [0, 1] (got {})", c.drop_prob),
                ));
            }
        }
        self.bounds
            .validate()
            .map_err(|(f, m)| invalid(format!("bounds.{f}"), m))?;
        for (i, o) in self.obstacles.iter().enumerate() {
            o.obstacle()
                .validate()
                .map_err(|e| invalid(format!("obstacles[{i}]"), e.to_string()))?;
        }
        if self.max_ticks == 0 {
            return Err(invalid("max_ticks", "must be > 0"));
        }
        positive("link_timeout_ms", self.link_timeout_ms)?;
        non_negative("avoidance_margin", self.avoidance_margin)?;
        positive("goal_tolerance", self.goal_tolerance)?;
        Ok(())
    }

    pub fn chain(&self) -> KinematicChain {
        self.chain.clone().unwrap_or_else(KinematicChain::panda)
    }

    /// Joints both twins start from.
    pub fn initial_joints(&self) -> Result<JointVector, ConfigError> {
        let chain = self.chain();
        let home = match &self.home_joints {
            Some(h) => h.clone(),
            None if chain.dof() == PANDA_HOME.len() => JointVector(PANDA_HOME.to_vec()),
            None => JointVector::zeros(chain.dof()),
        };
        match &self.start {
            None => Ok(home),
            Some(p) => solve_ik(&chain, p, &home, 1e-6, 500).map_err(|e| invalid("start", format!("unreachable: {e}"))),
        }
    }

    pub fn start_pose(&self) -> Result<Pose, ConfigError> {
        let q = self.initial_joints()?;
        forward_kinematics(&self.chain(), &q).map_err(|e| invalid("home_joints", e.to_string()))
    }

    pub fn robot_config(&self, twin: &TwinSpec) -> RobotConfig {
        RobotConfig {
            chain: self.chain(),
            gain: twin.gain,
            clock_offset_ms: twin.clock_offset_ms,
            tick_ms: self.tick_ms,
            actuation_latency_ms: twin.actuation_latency_ms,
            clock_drift_ppm: twin.clock_drift_ppm,
        }
    }

    /// Channel configurations in the order cmd_physical, cmd_virtual,
    /// state_physical, state_virtual.
    pub fn channel_configs(&self) -> [ChannelConfig; 4] {
        let derive = |k: u64| {
            self.seed
                .wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
                .rotate_left(17)
        };
        let mut i = 0u64;
        self.channels.named().map(|(_, c)| {
            i += 1;
            ChannelConfig {
                latency_mean_ms: c.latency_ms,
                jitter_ms: c.jitter_ms,
                drop_prob: c.drop_prob,
                mode: c.mode,
                seed: c.seed.unwrap_or_else(|| derive(i)),
            }
        })
    }

    pub fn obstacle_list(&self) -> Vec<Obstacle> {
        self.obstacles.iter().map(ObstacleSpec::obstacle).collect()
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "v": 1, "seed": 3,
        "goal": {"target": {"x": 0.5, "y": 0.1, "z": 0.3}},
        "physical": {"gain": 8.0},
        "virtual": {"gain": 10.0},
        "bounds": {"delta_q": 0.15, "delta_alpha": 5.0, "delta_b": 0.05},
        "max_ticks": 1000
    }"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.goal.max_step, 0.01);
        assert_eq!(c.tick_ms, 1.0);
        assert_eq!(c.hitl_mode, HitlMode::Gate);
        assert_eq!(c.link_timeout_ms, 250.0);
        assert_eq!(c.channels.cmd_physical, ChannelSpec::default());
        assert_eq!(c.chain().dof(), 7);
        assert_eq!(c.fingerprint().len(), 64);
    }

    #[test]
    fn negative_gain_names_the_field() {
        let text = MINIMAL.replace("\"gain\": 8.0", "\"gain\": -1.0");
        match ScenarioConfig::from_json(&text) {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "physical.gain"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_field_reports_position() {
        let text = MINIMAL.replace("\"seed\": 3", "\"seed\": 3, \"sede\": 4");
        match ScenarioConfig::from_json(&text) {
            Err(ConfigError::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("sede"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn channel_seeds_derive_from_scenario_seed() {
        let a = ScenarioConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seed = 4;
        let sa = a.channel_configs().map(|c| c.seed);
        let sb = b.channel_configs().map(|c| c.seed);
        assert_ne!(sa, sb);
        assert_eq!(sa, a.channel_configs().map(|c| c.seed));
        let distinct: std::collections::HashSet<_> = sa.iter().collect();
        assert_eq!(distinct.len(), 4);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn jitter_above_latency_rejected() {
        let mut c = ScenarioConfig::from_json(MINIMAL).unwrap();
        c.channels.state_virtual.jitter_ms = 2.0;
        match c.validate() {
            Err(ConfigError::Invalid { field, .. }) => assert_eq!(field, "channels.state_virtual.jitter_ms"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let c = ScenarioConfig::from_json(MINIMAL).unwrap();
        assert_eq!(ScenarioConfig::from_json(&c.to_json()).unwrap(), c);
    }
}
