//! Cartesian waypoint planning and lift-over obstacle avoidance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{wrap_finite, Pose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("invalid {0}")]
    Invalid(String),
    #[error("replan infeasible: {0}")]
    ReplanInfeasible(String),
}

/// A user trajectory request: reach `target` with waypoints at most `max_step` apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryGoal {
    pub target: Pose,
    #[serde(default = "default_max_step")]
    pub max_step: f64,
}

pub const DEFAULT_MAX_STEP: f64 = 0.01;

fn default_max_step() -> f64 {
    DEFAULT_MAX_STEP
}

impl TrajectoryGoal {
    pub fn new(target: Pose, max_step: f64) -> Result<Self, TrajectoryError> {
        if !(max_step > 0.0 && max_step.is_finite()) {
            return Err(TrajectoryError::Invalid(format!("max_step must be > 0 (got {max_step})")));
        }
        if !target.is_finite() {
            return Err(TrajectoryError::Invalid("goal target is not finite".into()));
        }
        Ok(Self { target, max_step })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Direct,
    AvoidanceReplanned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointPlan {
    pub waypoints: Vec<Pose>,
    pub provenance: Provenance,
    pub max_step: f64,
}

impl WaypointPlan {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn last(&self) -> Option<&Pose> {
        self.waypoints.last()
    }

    /// Cumulative path length at each waypoint (first entry is 0).
    pub fn arc_lengths(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.waypoints.len());
        for (i, w) in self.waypoints.iter().enumerate() {
            if i > 0 {
                acc += w.distance(&self.waypoints[i - 1]);
            }
            out.push(acc);
        }
        out
    }

    pub fn path_length(&self) -> f64 {
        self.arc_lengths().last().copied().unwrap_or(0.0)
    }

    /// Largest distance between consecutive waypoints.
    pub fn max_spacing(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|w| w[0].distance(&w[1]))
            .fold(0.0, f64::max)
    }
}

/// Axis-aligned box standing on the floor: footprint centred at
/// `(center_x, center_y)`, extending from z = 0 to z = `height`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    #[serde(rename = "cx")]
    pub center_x: f64,
    #[serde(rename = "cy")]
    pub center_y: f64,
    #[serde(rename = "sx")]
    pub size_x: f64,
    #[serde(rename = "sy")]
    pub size_y: f64,
    #[serde(rename = "h")]
    pub height: f64,
}

impl Obstacle {
    pub fn new(center_x: f64, center_y: f64, size_x: f64, size_y: f64, height: f64) -> Result<Self, TrajectoryError> {
        let o = Self {
            center_x,
            center_y,
            size_x,
            size_y,
            height,
        };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let all = [self.center_x, self.center_y, self.size_x, self.size_y, self.height];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(TrajectoryError::Invalid("obstacle has non-finite fields".into()));
        }
        if !(self.size_x > 0.0 && self.size_y > 0.0) {
            return Err(TrajectoryError::Invalid(format!(
                "obstacle sizes must be > 0 (got {} x {})",
                self.size_x, self.size_y
            )));
        }
        if self.height < 0.0 {
            return Err(TrajectoryError::Invalid(format!("obstacle height must be >= 0 (got {})", self.height)));
        }
        Ok(())
    }

    /// Per-axis horizontal gap from the footprint edge (0 when within it).
    fn footprint_gaps(&self, p: &Pose) -> (f64, f64) {
        let gx = ((p.x - self.center_x).abs() - 0.5 * self.size_x).max(0.0);
        let gy = ((p.y - self.center_y).abs() - 0.5 * self.size_y).max(0.0);
        (gx, gy)
    }

    fn in_inflated_footprint(&self, p: &Pose, margin: f64) -> bool {
        let (gx, gy) = self.footprint_gaps(p);
        gx <= margin && gy <= margin
    }
}

fn lerp_pose(a: &Pose, b: &Pose, t: f64) -> Pose {
    let ang = |from: f64, to: f64| wrap_finite(from + wrap_finite(to - from) * t);
    Pose {
        x: a.x + (b.x - a.x) * t,
        y: a.y + (b.y - a.y) * t,
        z: a.z + (b.z - a.z) * t,
        roll: ang(a.roll, b.roll),
        pitch: ang(a.pitch, b.pitch),
        yaw: ang(a.yaw, b.yaw),
    }
}

/// Number of equal segments needed so each is at most `max_step` long.
fn segments(dist: f64, max_step: f64) -> usize {
    ((dist / max_step) - 1e-9).ceil().max(1.0) as usize
}

/// Straight-line plan from `start` to the goal target, both endpoints included.
pub fn plan_waypoints(start: &Pose, goal: &TrajectoryGoal) -> Result<WaypointPlan, TrajectoryError> {
    if !start.is_finite() || !goal.target.is_finite() {
        return Err(TrajectoryError::Invalid("start or target pose is not finite".into()));
    }
    if !(goal.max_step > 0.0) {
        return Err(TrajectoryError::Invalid(format!("max_step must be > 0 (got {})", goal.max_step)));
    }
    let dist = start.distance(&goal.target);
    let waypoints = if dist == 0.0 {
        vec![goal.target]
    } else {
        let n = segments(dist, goal.max_step);
        let mut w: Vec<Pose> = (0..=n).map(|i| lerp_pose(start, &goal.target, i as f64 / n as f64)).collect();
        w[0] = *start;
        w[n] = goal.target;
        w
    };
    Ok(WaypointPlan {
        waypoints,
        provenance: Provenance::Direct,
        max_step: goal.max_step,
    })
}

/// Euclidean distance from the pose position to the nearest point of the box;
/// zero inside or on the surface.
pub fn clearance(p: &Pose, obs: &Obstacle) -> f64 {
    let (gx, gy) = obs.footprint_gaps(p);
    let gz = if p.z > obs.height {
        p.z - obs.height
    } else if p.z < 0.0 {
        -p.z
    } else {
        0.0
    };
    (gx * gx + gy * gy + gz * gz).sqrt()
}

/// Minimum clearance over every waypoint; infinite for an empty plan.
pub fn min_clearance(plan: &WaypointPlan, obs: &Obstacle) -> f64 {
    plan.waypoints.iter().map(|w| clearance(w, obs)).fold(f64::INFINITY, f64::min)
}

/// Raises `p` so that it sits at least `delta_b` above the obstacle top when its
/// X-Y lies inside the footprint inflated by `delta_b`. Returns `None` if no lift
/// is needed.
fn lifted(p: &Pose, obs: &Obstacle, delta_b: f64) -> Option<Pose> {
    if !obs.in_inflated_footprint(p, delta_b) {
        return None;
    }
    let mut z = p.z.max(obs.height + delta_b);
    while z - obs.height < delta_b || clearance(&Pose { z, ..*p }, obs) < delta_b {
        z = z.next_up();
    }
    if z == p.z {
        return None;
    }
    Some(Pose { z, ..*p })
}

fn push_vertical(out: &mut Vec<Pose>, from: &Pose, to_z: f64, max_step: f64) {
    let rise = to_z - from.z;
    let n = segments(rise.abs(), max_step);
    for i in 1..=n {
        let z = if i == n { to_z } else { from.z + rise * (i as f64 / n as f64) };
        out.push(Pose { z, ..*from });
    }
}

/// Lift-over avoidance. Waypoints whose X-Y lies within the obstacle footprint
/// inflated by `delta_b` are raised to `height + delta_b`; wherever that opens a
/// gap wider than the plan's `max_step`, vertical ramp waypoints are inserted,
/// climbing before moving inward and descending after moving outward.
pub fn replan_avoid(plan: &WaypointPlan, obs: &Obstacle, delta_b: f64) -> Result<WaypointPlan, TrajectoryError> {
    if !(delta_b > 0.0 && delta_b.is_finite()) {
        return Err(TrajectoryError::Invalid(format!("delta_b must be > 0 (got {delta_b})")));
    }
    obs.validate()?;
    let Some(goal) = plan.last() else {
        return Err(TrajectoryError::Invalid("plan has no waypoints".into()));
    };
    if lifted(goal, obs, delta_b).is_some() {
        return Err(TrajectoryError::ReplanInfeasible(format!(
            "goal ({:.3}, {:.3}, {:.3}) lies within {delta_b} m of the obstacle",
            goal.x, goal.y, goal.z
        )));
    }

    let raised: Vec<Pose> = plan
        .waypoints
        .iter()
        .map(|w| lifted(w, obs, delta_b).unwrap_or(*w))
        .collect();

    let mut out = Vec::with_capacity(raised.len());
    out.push(raised[0]);
    for pair in raised.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if a.distance(&b) <= plan.max_step + 1e-12 {
            out.push(b);
            continue;
        }
        if a.z == b.z {
            out.push(b);
        } else if a.z < b.z {
            push_vertical(&mut out, &a, b.z, plan.max_step);
            out.push(b);
        } else {
            let corner = Pose { z: a.z, ..b };
            out.push(corner);
            push_vertical(&mut out, &corner, b.z, plan.max_step);
        }
    }
    Ok(WaypointPlan {
        waypoints: out,
        provenance: Provenance::AvoidanceReplanned,
        max_step: plan.max_step,
    })
}
