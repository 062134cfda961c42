//! The control block: plans the goal, commands both twins through their
//! links, acquires their reported states, checks the bounds every tick and
//! routes blocking incidents through the approval gate.
//!
//! Simulated time advances in fixed ticks. Each tick, in order: deliver
//! upstream state reports, learn about newly detected obstacles, run the
//! per-tick checks and link supervision, handle a blocking incident, test the
//! goal and the watchdog, dispatch the next paced waypoint command, log the
//! row, deliver downstream commands, and step both plants.

pub mod metrics;
pub mod monitor;
pub mod runlog;

use thiserror::Error;

use crate::config::{ConfigError, HitlMode, ScenarioConfig};
use crate::hitl::{AutoApprove, DecisionSource, HitlGate, NoDecisions, PendingPlan, PlanStatus, RehearsalSetup, Verdict};
use crate::kinematics::{forward_kinematics, solve_ik, JointVector, KinematicChain, KinematicsError, Pose};
use crate::robotsim::{CommandMsg, SimRobot, TwinId, TwinState, TIME_EPS};
use crate::trajectory::{min_clearance, plan_waypoints, Obstacle, TrajectoryGoal, WaypointPlan};
use crate::twinlink::{Channel, LinkMode};

use monitor::{check_all, min_pair_clearance, Incident, IncidentKind, Measure, Unit};
use runlog::{GateWindow, IssuedCommand, RunAudit, RunLog, TerminalState, TraceRow};

/// Fraction of the link timeout after which an unacknowledged command is resent.
const RESEND_FRACTION: f64 = 0.2;
/// Settling allowance added to the nominal plan duration, ms.
const SETTLE_MS: f64 = 1000.0;
const WATCHDOG_FACTOR: f64 = 10.0;
const IK_TOL: f64 = 1e-7;
const IK_ITERS: usize = 300;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("plan not reachable: {0}")]
    Unreachable(String),
    #[error("setup failed: {0}")]
    Setup(String),
}

/// Receives the run's events as they happen. All methods default to no-ops.
pub trait Observer {
    fn on_row(&mut self, _row: &TraceRow) {}
    fn on_incident(&mut self, _incident: &Incident) {}
    fn on_pending(&mut self, _plan: &PendingPlan) {}
    fn on_terminal(&mut self, _state: TerminalState) {}
}

pub struct NullObserver;
impl Observer for NullObserver {}

/// Due time of each waypoint, ms, when traversed at `speed` m/s from `t_base`.
pub(crate) fn dispatch_schedule(plan: &WaypointPlan, speed: f64, t_base: f64) -> Vec<f64> {
    plan.arc_lengths()
        .into_iter()
        .map(|s| t_base + s / speed * 1000.0)
        .collect()
}

/// IK for every waypoint, each warm-started from the previous solution.
pub(crate) fn solve_plan(
    chain: &KinematicChain,
    poses: &[Pose],
    seed: &JointVector,
) -> Result<Vec<JointVector>, KinematicsError> {
    let mut out = Vec::with_capacity(poses.len());
    let mut q = seed.clone();
    for p in poses {
        q = solve_ik(chain, p, &q, IK_TOL, IK_ITERS)?;
        out.push(q.clone());
    }
    Ok(out)
}

struct Twin {
    robot: SimRobot,
    down: Channel<CommandMsg>,
    up: Channel<TwinState>,
    latest: TwinState,
    last_sent: Option<(CommandMsg, f64)>,
    unacked_since: Option<f64>,
}

impl Twin {
    fn acquire(&mut self, t: f64) {
        for s in self.up.deliver_due(t) {
            self.latest = s;
        }
        if let (Some((cmd, _)), Some(a)) = (&self.last_sent, self.latest.ack_seq) {
            if a >= cmd.sequence {
                self.unacked_since = None;
            }
        }
    }

    fn send(&mut self, cmd: CommandMsg, t: f64) {
        self.down.send(cmd.clone(), t).expect("sends are issued in time order");
        if self.unacked_since.is_none() {
            self.unacked_since = Some(t);
        }
        self.last_sent = Some((cmd, t));
    }

    fn resend_stale(&mut self, t: f64, after_ms: f64) {
        if self.unacked_since.is_none() {
            return;
        }
        if let Some((cmd, sent)) = self.last_sent.clone() {
            if t - sent >= after_ms - TIME_EPS {
                self.down.send(cmd.clone(), t).expect("sends are issued in time order");
                self.last_sent = Some((cmd, t));
            }
        }
    }

    fn forget_commands(&mut self) {
        self.last_sent = None;
        self.unacked_since = None;
    }
}

struct ActivePlan {
    plan: WaypointPlan,
    joints: Vec<JointVector>,
    due: Vec<f64>,
    next: usize,
}

impl ActivePlan {
    fn done(&self) -> bool {
        self.next >= self.plan.len()
    }
}

enum GateOutcome {
    Resumed,
    Blocked,
}

struct Run<'a> {
    cfg: &'a ScenarioConfig,
    chain: KinematicChain,
    tick: f64,
    goal: Pose,
    physical: Twin,
    virt: Twin,
    active: ActivePlan,
    deadline_tick: u64,
    next_seq: u64,
    known: Vec<Obstacle>,
    detected: Vec<bool>,
    gate: HitlGate,
    gate_windows: Vec<GateWindow>,
    commands: Vec<IssuedCommand>,
    incidents: Vec<Incident>,
    rows: Vec<TraceRow>,
    synchronous: bool,
}

impl Run<'_> {
    fn watchdog_ticks(&self, plan: &WaypointPlan) -> u64 {
        let nominal = plan.path_length() / self.cfg.cruise_speed * 1000.0 + SETTLE_MS;
        (WATCHDOG_FACTOR * nominal / self.tick).ceil() as u64
    }

    fn activate(&mut self, plan: WaypointPlan, joints: Vec<JointVector>, k: u64) {
        let t = k as f64 * self.tick;
        let due = dispatch_schedule(&plan, self.cfg.cruise_speed, t);
        let here = self.physical.robot.snapshot().pose;
        let next = usize::from(plan.waypoints.first().is_some_and(|w| w.distance(&here) < 1e-9));
        self.deadline_tick = k.saturating_add(self.watchdog_ticks(&plan));
        self.active = ActivePlan { plan, joints, due, next };
    }

    /// The part of the active plan not yet reached, starting at `from`.
    fn remaining_plan(&self, from: &Pose) -> WaypointPlan {
        let wp = &self.active.plan.waypoints;
        let resume = self.active.next.saturating_sub(1).min(wp.len().saturating_sub(1));
        let head_goal = TrajectoryGoal {
            target: wp.get(resume).copied().unwrap_or(self.goal),
            max_step: self.cfg.goal.max_step,
        };
        let mut waypoints = plan_waypoints(from, &head_goal)
            .map(|p| p.waypoints)
            .unwrap_or_else(|_| vec![*from]);
        if resume + 1 < wp.len() {
            waypoints.extend_from_slice(&wp[resume + 1..]);
        }
        WaypointPlan {
            waypoints,
            provenance: self.active.plan.provenance,
            max_step: self.cfg.goal.max_step,
        }
    }

    fn incident(&self, kind: IncidentKind, k: u64, measured: Measure, bound: Measure) -> Incident {
        Incident {
            kind,
            tick: k,
            measured,
            bound,
            twin_states: (self.physical.latest.clone(), self.virt.latest.clone()),
        }
    }

    fn detect_obstacles(&mut self, k: u64) -> Option<Incident> {
        let mut fresh = false;
        for (i, spec) in self.cfg.obstacles.iter().enumerate() {
            if !self.detected[i] && spec.detect_tick <= k {
                self.detected[i] = true;
                self.known.push(spec.obstacle());
                fresh = true;
            }
        }
        if !fresh {
            return None;
        }
        let remaining = self.remaining_plan(&self.physical.latest.pose);
        let c = self
            .known
            .iter()
            .map(|o| min_clearance(&remaining, o))
            .fold(f64::INFINITY, f64::min);
        let b = self.cfg.bounds.delta_b;
        (c <= b).then(|| {
            self.incident(
                IncidentKind::ObstacleForecast,
                k,
                Measure { value: c, unit: Unit::M },
                Measure { value: b, unit: Unit::M },
            )
        })
    }

    fn link_timeout(&self, t: f64, k: u64) -> Option<Incident> {
        let limit = self.cfg.link_timeout_ms;
        [&self.physical, &self.virt].iter().find_map(|tw| {
            let age = t - tw.unacked_since?;
            (age >= limit - TIME_EPS).then(|| {
                self.incident(
                    IncidentKind::LinkTimeout,
                    k,
                    Measure { value: age, unit: Unit::Ms },
                    Measure { value: limit, unit: Unit::Ms },
                )
            })
        })
    }

    fn gate_flow(
        &mut self,
        trigger: &Incident,
        k: u64,
        decisions: &mut dyn DecisionSource,
        observer: &mut dyn Observer,
    ) -> GateOutcome {
        let t = k as f64 * self.tick;
        let fence = self.next_seq.checked_sub(1).filter(|s| *s > 0);
        let physical_applied_before = self.physical.robot.applied().len();
        self.physical.robot.hold(fence);
        self.virt.robot.hold(fence);
        self.physical.forget_commands();
        self.virt.forget_commands();

        let here = self.physical.robot.snapshot().pose;
        let remaining = self.remaining_plan(&here);
        let replan_bound = self.cfg.bounds.delta_b + self.cfg.avoidance_margin;
        let id = self
            .gate
            .raise_anomaly(trigger.clone(), &remaining, &self.known, replan_bound)
            .id
            .clone();
        let mut window = GateWindow {
            plan_id: id.clone(),
            raised_tick: k,
            physical_applied_before,
            fence_seq: fence,
            deployed_tick: None,
        };
        if self.gate.get(&id).is_some_and(|p| p.status == PlanStatus::AwaitingRehearsal) {
            let setup = RehearsalSetup {
                robot: self.cfg.robot_config(&self.cfg.virtual_twin),
                initial_joints: self.virt.robot.joints().clone(),
                obstacles: self.known.clone(),
                bounds: self.cfg.bounds,
                cruise_speed: self.cfg.cruise_speed,
                goal_tolerance: self.cfg.goal_tolerance,
                max_ticks: self.cfg.max_ticks,
            };
            self.gate.rehearse(&id, &setup).expect("fresh plan awaits rehearsal");
        }
        let plan = self.gate.get(&id).expect("raised").clone();
        observer.on_pending(&plan);

        let outcome = match decisions.decide(&plan) {
            None => GateOutcome::Blocked,
            Some((verdict, actor)) => {
                let decided = self.gate.decide(&id, verdict, &actor, t).expect("open plan").clone();
                observer.on_pending(&decided);
                match verdict {
                    Verdict::Reject => GateOutcome::Blocked,
                    Verdict::Approve => {
                        let candidate = if decided.candidate.is_empty() {
                            remaining
                        } else {
                            decided.candidate.clone()
                        };
                        match solve_plan(&self.chain, &candidate.waypoints, self.physical.robot.joints()) {
                            Ok(joints) => {
                                self.activate(candidate, joints, k);
                                let deployed = self.gate.mark_deployed(&id).expect("approved").clone();
                                observer.on_pending(&deployed);
                                window.deployed_tick = Some(k);
                                GateOutcome::Resumed
                            }
                            Err(_) => GateOutcome::Blocked,
                        }
                    }
                }
            }
        };
        self.gate_windows.push(window);
        outcome
    }

    fn dispatch(&mut self, t: f64, k: u64) {
        let resend_after = self.cfg.link_timeout_ms * RESEND_FRACTION;
        self.physical.resend_stale(t, resend_after);
        self.virt.resend_stale(t, resend_after);
        if self.synchronous && (self.physical.unacked_since.is_some() || self.virt.unacked_since.is_some()) {
            return;
        }
        let a = &mut self.active;
        let mut latest = None;
        while a.next < a.plan.len() && a.due[a.next] <= t + TIME_EPS {
            latest = Some(a.next);
            a.next += 1;
        }
        let Some(i) = latest else { return };
        let cmd = CommandMsg {
            target_joints: a.joints[i].clone(),
            issue_time_ms: t,
            sequence: self.next_seq,
        };
        self.next_seq += 1;
        for (twin, tw) in [(TwinId::Physical, &mut self.physical), (TwinId::Virtual, &mut self.virt)] {
            tw.send(cmd.clone(), t);
            self.commands.push(IssuedCommand {
                tick: k,
                twin,
                sequence: cmd.sequence,
            });
        }
    }
}

/// Runs a scenario with decisions taken from its `hitl_mode`: auto-approve, or
/// no operator at all (every gated plan leaves the run blocked).
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunLog, RunError> {
    match cfg.hitl_mode {
        HitlMode::AutoApprove => run_scenario_with(cfg, &mut AutoApprove, &mut NullObserver),
        HitlMode::Gate => run_scenario_with(cfg, &mut NoDecisions, &mut NullObserver),
    }
}

pub fn run_scenario_with(
    cfg: &ScenarioConfig,
    decisions: &mut dyn DecisionSource,
    observer: &mut dyn Observer,
) -> Result<RunLog, RunError> {
    cfg.validate()?;
    let chain = cfg.chain();
    let tick = cfg.tick_ms;
    let q0 = cfg.initial_joints()?;
    let start = forward_kinematics(&chain, &q0).map_err(|e| RunError::Setup(e.to_string()))?;
    let plan = plan_waypoints(&start, &cfg.goal).map_err(|e| RunError::Setup(e.to_string()))?;
    let joints = solve_plan(&chain, &plan.waypoints, &q0).map_err(|e| RunError::Unreachable(e.to_string()))?;

    let [cp, cv, sp, sv] = cfg.channel_configs();
    let setup = |e: &dyn std::fmt::Display| RunError::Setup(e.to_string());
    let make_twin = |id: TwinId, spec, down, up| -> Result<Twin, RunError> {
        let robot = SimRobot::new(id, cfg.robot_config(spec), q0.clone()).map_err(|e| setup(&e))?;
        Ok(Twin {
            latest: robot.snapshot(),
            robot,
            down: Channel::new(down).map_err(|e| setup(&e))?,
            up: Channel::new(up).map_err(|e| setup(&e))?,
            last_sent: None,
            unacked_since: None,
        })
    };
    let physical = make_twin(TwinId::Physical, &cfg.physical, cp, sp)?;
    let virt = make_twin(TwinId::Virtual, &cfg.virtual_twin, cv, sv)?;
    let fingerprint = cfg.fingerprint();

    let mut run = Run {
        cfg,
        chain,
        tick,
        goal: cfg.goal.target,
        physical,
        virt,
        active: ActivePlan {
            plan: WaypointPlan {
                waypoints: vec![],
                provenance: plan.provenance,
                max_step: plan.max_step,
            },
            joints: vec![],
            due: vec![],
            next: 0,
        },
        deadline_tick: 0,
        next_seq: 1,
        known: Vec::new(),
        detected: vec![false; cfg.obstacles.len()],
        gate: HitlGate::new(&fingerprint[..8]),
        gate_windows: Vec::new(),
        commands: Vec::new(),
        incidents: Vec::new(),
        rows: Vec::new(),
        synchronous: cp.mode == LinkMode::Synchronous || cv.mode == LinkMode::Synchronous,
    };
    run.activate(plan, joints, 0);

    let mut prev_proximity = false;
    let mut k: u64 = 0;
    let terminal = loop {
        let t = k as f64 * tick;
        run.physical.acquire(t);
        run.virt.acquire(t);

        let mut incidents: Vec<Incident> = Vec::new();
        incidents.extend(run.detect_obstacles(k));
        let (r, v) = (&run.physical.latest, &run.virt.latest);
        for viol in check_all(r, v, &run.known, &cfg.bounds) {
            incidents.push(Incident::from_violation(viol, k, (r.clone(), v.clone())));
        }
        incidents.extend(run.link_timeout(t, k));

        let row = TraceRow {
            tick: k,
            ts_r_ms: r.timestamp_ms,
            ts_v_ms: v.timestamp_ms,
            pr: r.pose,
            pv: v.pose,
            dev_pos_m: r.pose.distance(&v.pose),
            dev_ts_ms: (r.timestamp_ms - v.timestamp_ms).abs(),
            clearance_min_m: min_pair_clearance(&r.pose, &v.pose, &run.known),
            incidents: incidents.iter().map(|i| i.kind).collect(),
        };
        for i in &incidents {
            observer.on_incident(i);
        }

        let proximity = incidents.iter().any(|i| i.kind == IncidentKind::ObstacleProximity);
        let trigger = incidents
            .iter()
            .find(|i| i.kind.is_blocking() && (i.kind != IncidentKind::ObstacleProximity || !prev_proximity))
            .cloned();
        prev_proximity = proximity;
        run.incidents.extend(incidents);

        let mut end = None;
        if let Some(trigger) = trigger {
            if let GateOutcome::Blocked = run.gate_flow(&trigger, k, decisions, observer) {
                end = Some(TerminalState::Blocked);
            }
        }
        if end.is_none()
            && run.active.done()
            && run.physical.latest.pose.distance(&run.goal) <= cfg.goal_tolerance
            && run.virt.latest.pose.distance(&run.goal) <= cfg.goal_tolerance
        {
            end = Some(TerminalState::Completed);
        }
        if end.is_none() && (k >= run.deadline_tick || k >= cfg.max_ticks) {
            end = Some(TerminalState::WatchdogTimeout);
        }
        if end.is_none() {
            run.dispatch(t, k);
        }
        observer.on_row(&row);
        run.rows.push(row);
        if let Some(state) = end {
            break state;
        }

        for tw in [&mut run.physical, &mut run.virt] {
            for c in tw.down.deliver_due(t) {
                // rejections are recorded by the plant and surface in the audit
                let _ = tw.robot.apply_command(c, t);
            }
            tw.robot.step(tick).expect("plant tick matches the scenario tick");
        }
        k += 1;
        let t_next = k as f64 * tick;
        for tw in [&mut run.physical, &mut run.virt] {
            let s = tw.robot.snapshot();
            tw.up.send(s, t_next).expect("sends are issued in time order");
        }
    };
    observer.on_terminal(terminal);

    let audit = RunAudit {
        v: 1,
        fingerprint,
        tick_ms: tick,
        terminal_state: terminal,
        incidents: run.incidents,
        commands: run.commands,
        applied_physical: run.physical.robot.applied().to_vec(),
        applied_virtual: run.virt.robot.applied().to_vec(),
        rejected_physical: run.physical.robot.rejected().to_vec(),
        plans: run.gate.plans().to_vec(),
        gate_windows: run.gate_windows,
        channel_stats: vec![
            ("cmd_physical".into(), run.physical.down.stats()),
            ("cmd_virtual".into(), run.virt.down.stats()),
            ("state_physical".into(), run.physical.up.stats()),
            ("state_virtual".into(), run.virt.up.stats()),
        ],
    };
    Ok(RunLog { rows: run.rows, audit })
}
