//! Human-in-the-loop approval gate.
//!
//! On an anomaly the physical twin is held, a candidate plan is computed and
//! rehearsed on a fresh virtual twin, and only an explicit approval lets the
//! candidate reach the physical twin. Each plan moves strictly along
//! awaiting-rehearsal -> awaiting-decision -> approved -> deployed, or ends in
//! rejected. An infeasible replan skips rehearsal with an empty candidate.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::monitor::{Bounds, Incident};
use crate::control::{dispatch_schedule, solve_plan};
use crate::kinematics::{JointVector, Pose};
use crate::robotsim::{CommandMsg, RobotConfig, SimRobot, TwinId};
use crate::trajectory::{clearance, min_clearance, replan_avoid, Obstacle, TrajectoryError, WaypointPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HitlError {
    #[error("no pending plan with id {0}")]
    NotFound(String),
    #[error("plan {id} already decided ({verdict:?})")]
    Conflict { id: String, verdict: Verdict },
    #[error("plan {id} cannot move from {from:?} to {to:?}")]
    InvalidTransition { id: String, from: PlanStatus, to: PlanStatus },
    #[error("plan {0} has an empty candidate; nothing to rehearse")]
    UndefinedRehearsal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanStatus {
    AwaitingRehearsal,
    AwaitingDecision,
    Approved,
    Rejected,
    Deployed,
}

impl PlanStatus {
    pub fn can_move_to(self, to: PlanStatus) -> bool {
        use PlanStatus::*;
        matches!(
            (self, to),
            (AwaitingRehearsal, AwaitingDecision)
                | (AwaitingDecision, Approved)
                | (AwaitingDecision, Rejected)
                | (Approved, Deployed)
        )
    }

    pub fn is_open(self) -> bool {
        matches!(self, PlanStatus::AwaitingRehearsal | PlanStatus::AwaitingDecision)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Approve,
    Reject,
}

impl std::str::FromStr for Verdict {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "approve" => Ok(Verdict::Approve),
            "reject" => Ok(Verdict::Reject),
            _ => Err(format!("verdict must be approve or reject (got {s:?})")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub plan_id: String,
    pub verdict: Verdict,
    pub actor: String,
    /// Simulated time of the decision, ms.
    pub time_ms: f64,
    /// Approval of a plan whose rehearsal did not complete cleanly.
    #[serde(rename = "override")]
    pub override_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RehearsalReport {
    #[serde(with = "crate::serde_util::inf_as_null")]
    pub min_clearance: f64,
    /// Largest distance of the virtual end effector from the candidate path.
    pub max_pose_deviation: f64,
    pub completed: bool,
    pub log_ref: String,
    pub ticks: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingPlan {
    pub id: String,
    pub trigger: Incident,
    pub candidate: WaypointPlan,
    pub rehearsal: Option<RehearsalReport>,
    pub status: PlanStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replan_error: Option<String>,
}

impl PendingPlan {
    fn set_status(&mut self, to: PlanStatus) -> Result<(), HitlError> {
        if !self.status.can_move_to(to) {
            return Err(HitlError::InvalidTransition {
                id: self.id.clone(),
                from: self.status,
                to,
            });
        }
        self.status = to;
        Ok(())
    }
}

/// Everything a rehearsal needs besides the candidate.
#[derive(Debug, Clone)]
pub struct RehearsalSetup {
    pub robot: RobotConfig,
    pub initial_joints: JointVector,
    pub obstacles: Vec<Obstacle>,
    pub bounds: Bounds,
    pub cruise_speed: f64,
    pub goal_tolerance: f64,
    pub max_ticks: u64,
}

/// Applies lift-over avoidance for every obstacle the plan comes within
/// `delta_b` of. Returns the plan unchanged when none does.
pub fn avoid_all(plan: &WaypointPlan, obstacles: &[Obstacle], delta_b: f64) -> Result<WaypointPlan, TrajectoryError> {
    let mut out = plan.clone();
    for o in obstacles {
        if min_clearance(&out, o) <= delta_b {
            out = replan_avoid(&out, o, delta_b)?;
        }
    }
    for o in obstacles {
        let c = min_clearance(&out, o);
        if c < delta_b {
            return Err(TrajectoryError::ReplanInfeasible(format!(
                "obstacles overlap: clearance {c} m after lifting"
            )));
        }
    }
    Ok(out)
}

fn distance_to_segment(p: &Pose, a: &Pose, b: &Pose) -> f64 {
    let (pa, ab) = (p.position() - a.position(), b.position() - a.position());
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { (pa.dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (pa - ab * t).norm()
}

fn distance_to_path(p: &Pose, path: &[Pose]) -> f64 {
    match path {
        [] => f64::INFINITY,
        [only] => p.distance(only),
        _ => path
            .windows(2)
            .map(|w| distance_to_segment(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Runs `candidate` on a fresh virtual-only twin with an ideal link.
pub fn rehearse_plan(candidate: &WaypointPlan, setup: &RehearsalSetup, log_ref: String) -> RehearsalReport {
    let failed = |msg: String| RehearsalReport {
        min_clearance: f64::INFINITY,
        max_pose_deviation: 0.0,
        completed: false,
        log_ref: log_ref.clone(),
        ticks: 0,
        failure: Some(msg),
    };
    let mut robot = match SimRobot::new(TwinId::Virtual, setup.robot.clone(), setup.initial_joints.clone()) {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    let joints = match solve_plan(&setup.robot.chain, &candidate.waypoints, &setup.initial_joints) {
        Ok(j) => j,
        Err(e) => return failed(format!("candidate not reachable: {e}")),
    };
    let tick = setup.robot.tick_ms;
    let due = dispatch_schedule(candidate, setup.cruise_speed, 0.0);
    let goal = *candidate.last().expect("non-empty candidate");
    let nominal_ticks = (due.last().copied().unwrap_or(0.0) + 1000.0) / tick;
    let limit = ((10.0 * nominal_ticks).ceil() as u64).min(setup.max_ticks);

    let mut min_c = f64::INFINITY;
    let mut max_dev: f64 = 0.0;
    let mut next = 0;
    let mut reached = false;
    let mut k = 0u64;
    while k <= limit {
        let t = k as f64 * tick;
        let pose = robot.snapshot().pose;
        for o in &setup.obstacles {
            min_c = min_c.min(clearance(&pose, o));
        }
        max_dev = max_dev.max(distance_to_path(&pose, &candidate.waypoints));
        if next == joints.len() && pose.distance(&goal) <= setup.goal_tolerance {
            reached = true;
            break;
        }
        let mut latest = None;
        while next < joints.len() && due[next] <= t + 1e-9 {
            latest = Some(next);
            next += 1;
        }
        if let Some(i) = latest {
            let cmd = CommandMsg {
                target_joints: joints[i].clone(),
                issue_time_ms: t,
                sequence: i as u64 + 1,
            };
            if let Err(e) = robot.apply_command(cmd, t) {
                return failed(e.to_string());
            }
        }
        if let Err(e) = robot.step(tick) {
            return failed(e.to_string());
        }
        k += 1;
    }
    let mut failure = None;
    if !reached {
        failure = Some(format!("goal not reached within {limit} ticks"));
    } else if min_c <= setup.bounds.delta_b {
        failure = Some(format!("clearance {min_c} m within bound {} m", setup.bounds.delta_b));
    } else if max_dev >= setup.bounds.delta_q {
        failure = Some(format!("path deviation {max_dev} m reached bound {} m", setup.bounds.delta_q));
    }
    RehearsalReport {
        min_clearance: min_c,
        max_pose_deviation: max_dev,
        completed: failure.is_none(),
        log_ref,
        ticks: k,
        failure,
    }
}

/// Registry of pending plans with a FIFO of unresolved ones.
#[derive(Debug, Clone, Default)]
pub struct HitlGate {
    prefix: String,
    plans: Vec<PendingPlan>,
    queue: VecDeque<String>,
}

impl HitlGate {
    /// Plan ids are `<prefix>-<n>` with n counting from 1.
    pub fn new(prefix: impl Into<String>) -> Self {
        Self {
            prefix: prefix.into(),
            ..Self::default()
        }
    }

    pub fn plans(&self) -> &[PendingPlan] {
        &self.plans
    }

    pub fn get(&self, id: &str) -> Option<&PendingPlan> {
        self.plans.iter().find(|p| p.id == id)
    }

    fn get_mut(&mut self, id: &str) -> Result<&mut PendingPlan, HitlError> {
        self.plans
            .iter_mut()
            .find(|p| p.id == id)
            .ok_or_else(|| HitlError::NotFound(id.to_string()))
    }

    /// Unresolved plans in arrival order.
    pub fn queue(&self) -> impl Iterator<Item = &PendingPlan> {
        self.queue.iter().filter_map(|id| self.get(id))
    }

    pub fn head(&self) -> Option<&PendingPlan> {
        self.queue().next()
    }

    /// Records an anomaly. The candidate avoids every listed obstacle at
    /// `delta_b`; with no obstacle in the way it equals `current_plan`.
    pub fn raise_anomaly(
        &mut self,
        incident: Incident,
        current_plan: &WaypointPlan,
        obstacles: &[Obstacle],
        delta_b: f64,
    ) -> &PendingPlan {
        let id = format!("{}-{}", self.prefix, self.plans.len() + 1);
        let (candidate, status, replan_error) = match avoid_all(current_plan, obstacles, delta_b) {
            Ok(c) => (c, PlanStatus::AwaitingRehearsal, None),
            Err(e) => (
                WaypointPlan {
                    waypoints: Vec::new(),
                    provenance: current_plan.provenance,
                    max_step: current_plan.max_step,
                },
                PlanStatus::AwaitingDecision,
                Some(e.to_string()),
            ),
        };
        self.plans.push(PendingPlan {
            id: id.clone(),
            trigger: incident,
            candidate,
            rehearsal: None,
            status,
            decision: None,
            replan_error,
        });
        self.queue.push_back(id);
        self.plans.last().expect("just pushed")
    }

    pub fn rehearse(&mut self, id: &str, setup: &RehearsalSetup) -> Result<&PendingPlan, HitlError> {
        let plan = self.get_mut(id)?;
        if plan.status != PlanStatus::AwaitingRehearsal {
            if plan.candidate.is_empty() {
                return Err(HitlError::UndefinedRehearsal(id.to_string()));
            }
            return Err(HitlError::InvalidTransition {
                id: id.to_string(),
                from: plan.status,
                to: PlanStatus::AwaitingDecision,
            });
        }
        if plan.candidate.is_empty() {
            return Err(HitlError::UndefinedRehearsal(id.to_string()));
        }
        let report = rehearse_plan(&plan.candidate, setup, format!("{id}/rehearsal"));
        plan.rehearsal = Some(report);
        plan.set_status(PlanStatus::AwaitingDecision)?;
        Ok(plan)
    }

    pub fn decide(&mut self, id: &str, verdict: Verdict, actor: &str, time_ms: f64) -> Result<&PendingPlan, HitlError> {
        let plan = self.get_mut(id)?;
        if let Some(d) = &plan.decision {
            return Err(HitlError::Conflict {
                id: id.to_string(),
                verdict: d.verdict,
            });
        }
        let to = match verdict {
            Verdict::Approve => PlanStatus::Approved,
            Verdict::Reject => PlanStatus::Rejected,
        };
        plan.set_status(to)?;
        let clean = plan.rehearsal.as_ref().is_some_and(|r| r.completed);
        plan.decision = Some(Decision {
            plan_id: id.to_string(),
            verdict,
            actor: actor.to_string(),
            time_ms,
            override_flag: verdict == Verdict::Approve && !clean,
        });
        self.queue.retain(|q| q != id);
        Ok(self.get(id).expect("exists"))
    }

    pub fn mark_deployed(&mut self, id: &str) -> Result<&PendingPlan, HitlError> {
        self.get_mut(id)?.set_status(PlanStatus::Deployed)?;
        Ok(self.get(id).expect("exists"))
    }
}

/// Where the run loop gets operator verdicts. `None` means no decision will
/// come and the run ends blocked.
pub trait DecisionSource {
    fn decide(&mut self, plan: &PendingPlan) -> Option<(Verdict, String)>;
}

/// No operator: every gated plan leaves the run blocked.
pub struct NoDecisions;

impl DecisionSource for NoDecisions {
    fn decide(&mut self, _plan: &PendingPlan) -> Option<(Verdict, String)> {
        None
    }
}

/// Approves plans whose rehearsal completed and rejects the rest. A lost link
/// cannot be validated on the virtual twin, so link timeouts are rejected.
pub struct AutoApprove;

pub const AUTO_ACTOR: &str = "auto-approve";

impl DecisionSource for AutoApprove {
    fn decide(&mut self, plan: &PendingPlan) -> Option<(Verdict, String)> {
        let ok = plan.trigger.kind != crate::control::monitor::IncidentKind::LinkTimeout
            && plan.rehearsal.as_ref().is_some_and(|r| r.completed);
        let verdict = if ok { Verdict::Approve } else { Verdict::Reject };
        Some((verdict, AUTO_ACTOR.to_string()))
    }
}

/// Decisions recorded ahead of time, keyed by plan id.
#[derive(Debug, Clone, Default)]
pub struct RecordedDecisions(pub std::collections::BTreeMap<String, (Verdict, String)>);

impl DecisionSource for RecordedDecisions {
    fn decide(&mut self, plan: &PendingPlan) -> Option<(Verdict, String)> {
        self.0.get(&plan.id).cloned()
    }
}
