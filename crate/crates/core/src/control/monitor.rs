//! Bound checks applied to every pair of acquired twin states.
//!
//! Deviations are compared with inclusive `>=`: the position deviation as a
//! Euclidean norm and the timestamp deviation as an absolute difference, so an
//! alert fires whichever twin is ahead.
//!
//! The obstacle check fires on *proximity*: when the smaller of the two
//! clearances is at or below `delta_b`. Read literally, the control loop's
//! obstacle condition tests the difference against `delta_b` with `>=`, which
//! would alert when the arm is far away; since its consequence is "take
//! obstacle avoidance measures", the condition is inverted here.

use serde::{Deserialize, Serialize};

use crate::kinematics::{wrap_finite, Pose};
use crate::robotsim::TwinState;
use crate::trajectory::{clearance, Obstacle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    /// Position deviation bound, m.
    pub delta_q: f64,
    /// Timestamp deviation bound, ms.
    pub delta_alpha: f64,
    /// Obstacle clearance bound, m.
    pub delta_b: f64,
    /// Optional orientation deviation bound, rad.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_rot: Option<f64>,
}

impl Bounds {
    pub fn new(delta_q: f64, delta_alpha: f64, delta_b: f64) -> Self {
        Self {
            delta_q,
            delta_alpha,
            delta_b,
            delta_rot: None,
        }
    }

    /// Returns `(field, message)` for the first invalid bound.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for (name, v) in [
            ("delta_q", self.delta_q),
            ("delta_alpha", self.delta_alpha),
            ("delta_b", self.delta_b),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err((name, format!("must be > 0 (got {v})")));
            }
        }
        if let Some(r) = self.delta_rot {
            if !(r > 0.0 && r.is_finite()) {
                return Err(("delta_rot", format!("must be > 0 (got {r})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncidentKind {
    PoseDeviation,
    TimingDeviation,
    ObstacleProximity,
    /// The remaining plan passes within `delta_b` of a newly known obstacle.
    ObstacleForecast,
    LinkTimeout,
}

impl IncidentKind {
    pub const ALL: [IncidentKind; 5] = [
        IncidentKind::PoseDeviation,
        IncidentKind::TimingDeviation,
        IncidentKind::ObstacleProximity,
        IncidentKind::ObstacleForecast,
        IncidentKind::LinkTimeout,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            IncidentKind::PoseDeviation => "pose-deviation",
            IncidentKind::TimingDeviation => "timing-deviation",
            IncidentKind::ObstacleProximity => "obstacle-proximity",
            IncidentKind::ObstacleForecast => "obstacle-forecast",
            IncidentKind::LinkTimeout => "link-timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Kinds computed from a single row of paired states.
    pub fn is_per_tick(&self) -> bool {
        matches!(
            self,
            IncidentKind::PoseDeviation | IncidentKind::TimingDeviation | IncidentKind::ObstacleProximity
        )
    }

    /// Kinds that block the run and go through the approval gate.
    pub fn is_blocking(&self) -> bool {
        matches!(
            self,
            IncidentKind::ObstacleProximity | IncidentKind::ObstacleForecast | IncidentKind::LinkTimeout
        )
    }
}

impl std::fmt::Display for IncidentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub value: f64,
    pub unit: Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    M,
    Rad,
    Ms,
}

/// Outcome of a single bound check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: IncidentKind,
    pub measured: Measure,
    pub bound: Measure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incident {
    pub kind: IncidentKind,
    pub tick: u64,
    pub measured: Measure,
    pub bound: Measure,
    pub twin_states: (TwinState, TwinState),
}

impl Incident {
    pub fn from_violation(v: Violation, tick: u64, states: (TwinState, TwinState)) -> Self {
        Self {
            kind: v.kind,
            tick,
            measured: v.measured,
            bound: v.bound,
            twin_states: states,
        }
    }
}

fn m(value: f64) -> Measure {
    Measure { value, unit: Unit::M }
}

pub fn check_pose_deviation(pr: &Pose, pv: &Pose, delta_q: f64) -> Option<Violation> {
    let d = pr.distance(pv);
    (d >= delta_q).then(|| Violation {
        kind: IncidentKind::PoseDeviation,
        measured: m(d),
        bound: m(delta_q),
    })
}

/// Largest wrapped roll/pitch/yaw difference.
pub fn orientation_deviation(pr: &Pose, pv: &Pose) -> f64 {
    [
        (pr.roll, pv.roll),
        (pr.pitch, pv.pitch),
        (pr.yaw, pv.yaw),
    ]
    .iter()
    .map(|(a, b)| wrap_finite(a - b).abs())
    .fold(0.0, f64::max)
}

pub fn check_orientation_deviation(pr: &Pose, pv: &Pose, delta_rot: f64) -> Option<Violation> {
    let d = orientation_deviation(pr, pv);
    (d >= delta_rot).then_some(Violation {
        kind: IncidentKind::PoseDeviation,
        measured: Measure { value: d, unit: Unit::Rad },
        bound: Measure {
            value: delta_rot,
            unit: Unit::Rad,
        },
    })
}

pub fn check_timing(ts_r: f64, ts_v: f64, delta_alpha: f64) -> Option<Violation> {
    let d = (ts_r - ts_v).abs();
    (d >= delta_alpha).then_some(Violation {
        kind: IncidentKind::TimingDeviation,
        measured: Measure { value: d, unit: Unit::Ms },
        bound: Measure {
            value: delta_alpha,
            unit: Unit::Ms,
        },
    })
}

/// Smallest clearance of either twin to any of the obstacles; infinite when
/// there are none.
pub fn min_pair_clearance(pr: &Pose, pv: &Pose, obstacles: &[Obstacle]) -> f64 {
    obstacles
        .iter()
        .map(|o| clearance(pr, o).min(clearance(pv, o)))
        .fold(f64::INFINITY, f64::min)
}

pub fn check_obstacle(pr: &Pose, pv: &Pose, obstacles: &[Obstacle], delta_b: f64) -> Option<Violation> {
    let c = min_pair_clearance(pr, pv, obstacles);
    (c <= delta_b).then(|| Violation {
        kind: IncidentKind::ObstacleProximity,
        measured: m(c),
        bound: m(delta_b),
    })
}

/// Runs every per-tick check in a fixed order.
pub fn check_all(r: &TwinState, v: &TwinState, obstacles: &[Obstacle], bounds: &Bounds) -> Vec<Violation> {
    let mut out = Vec::new();
    if let Some(x) = check_pose_deviation(&r.pose, &v.pose, bounds.delta_q) {
        out.push(x);
    } else if let Some(x) = bounds
        .delta_rot
        .and_then(|b| check_orientation_deviation(&r.pose, &v.pose, b))
    {
        out.push(x);
    }
    out.extend(check_timing(r.timestamp_ms, v.timestamp_ms, bounds.delta_alpha));
    out.extend(check_obstacle(&r.pose, &v.pose, obstacles, bounds.delta_b));
    out
}
