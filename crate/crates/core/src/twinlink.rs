//! Simulated lossy links between the control block and each twin.
//!
//! Each direction of each twin gets its own [`Channel`] with a private seeded
//! generator, so a scenario's delivery schedule depends only on its seeds.
//! Due times are made non-decreasing, which keeps delivery in send order even
//! when jitter would otherwise reorder messages.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robotsim::{CommandMsg, SimRobot, TwinState, TIME_EPS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkError {
    #[error("invalid channel configuration: {0}")]
    InvalidConfig(String),
    #[error("send at {now} ms precedes an earlier send at {last} ms")]
    NonMonotonicSend { now: f64, last: f64 },
    #[error("blocking round trip requires a synchronous channel")]
    NotSynchronous,
    #[error("no acknowledgement for command {seq} within {timeout_ms} ms")]
    Timeout { seq: u64, timeout_ms: f64 },
    #[error("plant rejected command: {0}")]
    Plant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkMode {
    #[default]
    Synchronous,
    Asynchronous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub latency_mean_ms: f64,
    /// Half-width of the uniform jitter, ms.
    pub jitter_ms: f64,
    pub drop_prob: f64,
    pub mode: LinkMode,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn ideal(seed: u64) -> Self {
        Self {
            latency_mean_ms: 0.0,
            jitter_ms: 0.0,
            drop_prob: 0.0,
            mode: LinkMode::Synchronous,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let bad = |m: String| Err(LinkError::InvalidConfig(m));
        if !(self.latency_mean_ms >= 0.0 && self.latency_mean_ms.is_finite()) {
            return bad(format!("latency must be >= 0 (got {})", self.latency_mean_ms));
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms <= self.latency_mean_ms) {
            return bad(format!(
                "jitter must lie in [0, latency] (got {} with latency {})",
                self.jitter_ms, self.latency_mean_ms
            ));
        }
        // 1.0 is accepted so a severed link can be modelled.
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return bad(format!("drop_prob must lie in [0, 1] (got {})", self.drop_prob));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InFlightMsg<T> {
    pub payload: T,
    pub send_time: f64,
    pub due_time: f64,
    pub dropped: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone)]
pub struct Channel<T> {
    config: ChannelConfig,
    rng: ChaCha8Rng,
    in_flight: VecDeque<InFlightMsg<T>>,
    last_send: f64,
    last_due: f64,
    stats: ChannelStats,
}

impl<T> Channel<T> {
    pub fn new(config: ChannelConfig) -> Result<Self, LinkError> {
        config.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            in_flight: VecDeque::new(),
            last_send: f64::NEG_INFINITY,
            last_due: f64::NEG_INFINITY,
            stats: ChannelStats::default(),
        })
    }

    pub fn config(&self) -> &ChannelConfig {
        &self.config
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn in_flight(&self) -> impl Iterator<Item = &InFlightMsg<T>> {
        self.in_flight.iter()
    }

    /// Schedules `payload` for delivery. Every send draws exactly one jitter
    /// sample and one drop sample, whatever the configuration.
    pub fn send(&mut self, payload: T, now: f64) -> Result<(), LinkError> {
        if now < self.last_send {
            return Err(LinkError::NonMonotonicSend {
                now,
                last: self.last_send,
            });
        }
        let u: f64 = self.rng.random();
        let drop_draw: f64 = self.rng.random();
        let jitter = (2.0 * u - 1.0) * self.config.jitter_ms;
        let due = (now + self.config.latency_mean_ms + jitter).max(self.last_due).max(now);
        let dropped = drop_draw < self.config.drop_prob;
        self.last_send = now;
        self.last_due = due;
        self.stats.sent += 1;
        if dropped {
            self.stats.dropped += 1;
        }
        self.in_flight.push_back(InFlightMsg {
            payload,
            send_time: now,
            due_time: due,
            dropped,
        });
        Ok(())
    }

    /// Removes and returns every non-dropped message due by `now`, in due order.
    pub fn deliver_due(&mut self, now: f64) -> Vec<T> {
        let mut out = Vec::new();
        while self
            .in_flight
            .front()
            .is_some_and(|m| m.due_time <= now + TIME_EPS)
        {
            let msg = self.in_flight.pop_front().expect("front checked");
            if !msg.dropped {
                self.stats.delivered += 1;
                out.push(msg.payload);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrip {
    pub state: TwinState,
    /// Simulated time at which the acknowledging report arrived, ms.
    pub returned_at_ms: f64,
}

/// Sends `cmd` down a synchronous link and advances the plant until a state
/// report acknowledging it comes back up. The plant's clock must read `now`.
/// The acknowledging report is emitted the instant the command becomes active.
pub fn sync_round_trip(
    down: &mut Channel<CommandMsg>,
    up: &mut Channel<TwinState>,
    robot: &mut SimRobot,
    cmd: CommandMsg,
    now: f64,
    timeout_ms: f64,
) -> Result<RoundTrip, LinkError> {
    if down.config.mode != LinkMode::Synchronous || up.config.mode != LinkMode::Synchronous {
        return Err(LinkError::NotSynchronous);
    }
    let seq = cmd.sequence;
    let tick = robot.config().tick_ms;
    let acked = |s: &TwinState| s.ack_seq.is_some_and(|a| a >= seq);
    down.send(cmd, now)?;
    let mut t = now;
    let mut reported = false;
    loop {
        for c in down.deliver_due(t) {
            robot.apply_command(c, t).map_err(|e| LinkError::Plant(e.to_string()))?;
        }
        if !reported && robot.active_seq().is_some_and(|a| a >= seq) {
            up.send(robot.snapshot(), t)?;
            reported = true;
        }
        if let Some(state) = up.deliver_due(t).into_iter().find(|s| acked(s)) {
            return Ok(RoundTrip {
                state,
                returned_at_ms: t,
            });
        }
        if t - now >= timeout_ms - TIME_EPS {
            return Err(LinkError::Timeout { seq, timeout_ms });
        }
        robot.step(tick).map_err(|e| LinkError::Plant(e.to_string()))?;
        t = robot.now();
        if !reported {
            up.send(robot.snapshot(), t)?;
            reported = robot.active_seq().is_some_and(|a| a >= seq);
        }
    }
}
