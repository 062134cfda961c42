//! Simulated robot twin: a per-joint first-order tracking controller, a local
//! clock and a queue of commands waiting out the actuation latency.
//!
//! The same model stands in for both the physical arm and its digital
//! replica; the two differ only in configuration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{forward_kinematics, JointVector, KinematicChain, Pose};

/// Tolerance used when comparing simulated times, ms.
pub(crate) const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobotError {
    #[error("invalid robot configuration: {0}")]
    InvalidConfig(String),
    #[error("command {seq} rejected: {reason}")]
    RejectedCommand { seq: u64, reason: String },
    #[error("step of {got} ms does not match the configured tick of {expected} ms")]
    TickMismatch { expected: f64, got: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TwinId {
    Physical,
    Virtual,
}

impl TwinId {
    pub fn as_str(&self) -> &'static str {
        match self {
            TwinId::Physical => "physical",
            TwinId::Virtual => "virtual",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotConfig {
    pub chain: KinematicChain,
    /// First-order tracking gain, 1/s.
    pub gain: f64,
    pub clock_offset_ms: f64,
    pub tick_ms: f64,
    pub actuation_latency_ms: f64,
    /// Local clock rate error, parts per million.
    pub clock_drift_ppm: f64,
}

impl RobotConfig {
    pub fn new(chain: KinematicChain, gain: f64) -> Self {
        Self {
            chain,
            gain,
            clock_offset_ms: 0.0,
            tick_ms: 1.0,
            actuation_latency_ms: 0.0,
            clock_drift_ppm: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), RobotError> {
        let bad = |m: String| Err(RobotError::InvalidConfig(m));
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return bad(format!("gain must be > 0 (got {})", self.gain));
        }
        if !(self.tick_ms > 0.0 && self.tick_ms.is_finite()) {
            return bad(format!("tick_ms must be > 0 (got {})", self.tick_ms));
        }
        if !(self.actuation_latency_ms >= 0.0 && self.actuation_latency_ms.is_finite()) {
            return bad(format!(
                "actuation_latency_ms must be >= 0 (got {})",
                self.actuation_latency_ms
            ));
        }
        if !self.clock_offset_ms.is_finite() || !self.clock_drift_ppm.is_finite() {
            return bad("clock parameters must be finite".into());
        }
        Ok(())
    }
}

/// One twin's snapshot as reported upstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinState {
    pub twin: TwinId,
    pub pose: Pose,
    pub joints: JointVector,
    /// Local clock reading at emission, ms.
    pub timestamp_ms: f64,
    /// Sequence number of the command currently being tracked.
    pub ack_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandMsg {
    pub target_joints: JointVector,
    pub issue_time_ms: f64,
    pub sequence: u64,
}

/// Audit record of a command that became the active tracking target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppliedCommand {
    pub sequence: u64,
    pub issue_time_ms: f64,
    pub received_ms: f64,
    pub activated_ms: f64,
}

#[derive(Debug, Clone)]
struct Queued {
    effective_ms: f64,
    received_ms: f64,
    cmd: CommandMsg,
}

#[derive(Debug, Clone)]
pub struct SimRobot {
    id: TwinId,
    config: RobotConfig,
    joints: JointVector,
    target: JointVector,
    active_seq: Option<u64>,
    queue: Vec<Queued>,
    steps: u64,
    fence: Option<u64>,
    applied: Vec<AppliedCommand>,
    rejected: Vec<(u64, String)>,
}

impl SimRobot {
    pub fn new(id: TwinId, config: RobotConfig, initial: JointVector) -> Result<Self, RobotError> {
        config.validate()?;
        if initial.len() != config.chain.dof() {
            return Err(RobotError::InvalidConfig(format!(
                "initial joint vector has {} entries, chain has {} joints",
                initial.len(),
                config.chain.dof()
            )));
        }
        Ok(Self {
            id,
            target: initial.clone(),
            joints: initial,
            config,
            active_seq: None,
            queue: Vec::new(),
            steps: 0,
            fence: None,
            applied: Vec::new(),
            rejected: Vec::new(),
        })
    }

    pub fn id(&self) -> TwinId {
        self.id
    }

    pub fn config(&self) -> &RobotConfig {
        &self.config
    }

    pub fn joints(&self) -> &JointVector {
        &self.joints
    }

    pub fn target(&self) -> &JointVector {
        &self.target
    }

    pub fn active_seq(&self) -> Option<u64> {
        self.active_seq
    }

    /// Global simulated time, ms.
    pub fn now(&self) -> f64 {
        self.steps as f64 * self.config.tick_ms
    }

    /// Local clock: global time scaled by drift plus the constant offset.
    pub fn local_clock(&self) -> f64 {
        self.now() * (1.0 + self.config.clock_drift_ppm * 1e-6) + self.config.clock_offset_ms
    }

    pub fn applied(&self) -> &[AppliedCommand] {
        &self.applied
    }

    pub fn rejected(&self) -> &[(u64, String)] {
        &self.rejected
    }

    pub fn pending_commands(&self) -> usize {
        self.queue.len()
    }

    /// Queues a command to take effect `actuation_latency_ms` after `now`.
    pub fn apply_command(&mut self, cmd: CommandMsg, now: f64) -> Result<(), RobotError> {
        let reject = |this: &mut Self, reason: String| {
            this.rejected.push((cmd.sequence, reason.clone()));
            Err(RobotError::RejectedCommand {
                seq: cmd.sequence,
                reason,
            })
        };
        if let Some(fence) = self.fence {
            if cmd.sequence <= fence {
                return reject(self, format!("issued before hold fence {fence}"));
            }
        }
        if !self.config.chain.within_limits(&cmd.target_joints) {
            return reject(self, "target outside joint limits".into());
        }
        self.queue.push(Queued {
            effective_ms: now + self.config.actuation_latency_ms,
            received_ms: now,
            cmd,
        });
        self.activate_due(now);
        Ok(())
    }

    /// Among queued commands whose latency has elapsed, the highest sequence
    /// number becomes the target; older ones are discarded.
    fn activate_due(&mut self, now: f64) {
        let mut best: Option<Queued> = None;
        let mut i = 0;
        while i < self.queue.len() {
            if self.queue[i].effective_ms <= now + TIME_EPS {
                let q = self.queue.swap_remove(i);
                if best.as_ref().is_none_or(|b| q.cmd.sequence > b.cmd.sequence) {
                    best = Some(q);
                }
            } else {
                i += 1;
            }
        }
        if let Some(q) = best {
            if self.active_seq.is_none_or(|a| q.cmd.sequence > a) {
                self.active_seq = Some(q.cmd.sequence);
                self.target = q.cmd.target_joints.clone();
                self.applied.push(AppliedCommand {
                    sequence: q.cmd.sequence,
                    issue_time_ms: q.cmd.issue_time_ms,
                    received_ms: q.received_ms,
                    activated_ms: now,
                });
            }
        }
    }

    /// Integrates one tick of first-order lag, then activates commands whose
    /// latency expires at the new time.
    pub fn step(&mut self, dt_ms: f64) -> Result<(), RobotError> {
        if (dt_ms - self.config.tick_ms).abs() > TIME_EPS {
            return Err(RobotError::TickMismatch {
                expected: self.config.tick_ms,
                got: dt_ms,
            });
        }
        let k = self.config.gain * dt_ms * 1e-3;
        for (q, t) in self.joints.0.iter_mut().zip(&self.target.0) {
            *q += k * (t - *q);
        }
        self.steps += 1;
        let now = self.now();
        self.activate_due(now);
        Ok(())
    }

    pub fn snapshot(&self) -> TwinState {
        let pose = forward_kinematics(&self.config.chain, &self.joints).expect("joint vector matches chain by construction");
        TwinState {
            twin: self.id,
            pose,
            joints: self.joints.clone(),
            timestamp_ms: self.local_clock(),
            ack_seq: self.active_seq,
        }
    }

    /// Safety hold: drop queued commands, track the current joints, and refuse
    /// any command with sequence `<= fence`.
    pub fn hold(&mut self, fence: Option<u64>) {
        self.queue.clear();
        self.target = self.joints.clone();
        if let Some(f) = fence {
            self.fence = Some(self.fence.map_or(f, |old| old.max(f)));
        }
    }
}
