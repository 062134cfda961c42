//! Per-tick trace of a run and its CSV form.
//!
//! Column contract (header required, one row per tick):
//!
//! ```text
//! tick,ts_r_ms,ts_v_ms,pr_x,pr_y,pr_z,pr_roll,pr_pitch,pr_yaw,
//! pv_x,pv_y,pv_z,pv_roll,pv_pitch,pv_yaw,dev_pos_m,dev_ts_ms,clearance_min_m,incident_kind
//! ```
//!
//! Floats are written in shortest round-trip form, so parsing a log yields
//! bit-identical values. `clearance_min_m` is `inf` when no obstacle is known.
//! `incident_kind` lists every incident raised at that tick, joined by `|`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::monitor::{Incident, IncidentKind};
use crate::hitl::PendingPlan;
use crate::kinematics::Pose;
use crate::robotsim::{AppliedCommand, TwinId};
use crate::twinlink::ChannelStats;

pub const CSV_HEADER: [&str; 19] = [
    "tick",
    "ts_r_ms",
    "ts_v_ms",
    "pr_x",
    "pr_y",
    "pr_z",
    "pr_roll",
    "pr_pitch",
    "pr_yaw",
    "pv_x",
    "pv_y",
    "pv_z",
    "pv_roll",
    "pv_pitch",
    "pv_yaw",
    "dev_pos_m",
    "dev_ts_ms",
    "clearance_min_m",
    "incident_kind",
];

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed log at line {line}: {msg}")]
    Malformed { line: u64, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub tick: u64,
    pub ts_r_ms: f64,
    pub ts_v_ms: f64,
    pub pr: Pose,
    pub pv: Pose,
    pub dev_pos_m: f64,
    pub dev_ts_ms: f64,
    pub clearance_min_m: f64,
    pub incidents: Vec<IncidentKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalState {
    Completed,
    Blocked,
    WatchdogTimeout,
}

impl TerminalState {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminalState::Completed => "completed",
            TerminalState::Blocked => "blocked",
            TerminalState::WatchdogTimeout => "watchdog-timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IssuedCommand {
    pub tick: u64,
    pub twin: TwinId,
    pub sequence: u64,
}

/// Interval during which the physical twin must not apply any command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateWindow {
    pub plan_id: String,
    pub raised_tick: u64,
    /// Number of physical applications recorded before the hold.
    pub physical_applied_before: usize,
    /// Highest sequence issued before the hold.
    pub fence_seq: Option<u64>,
    pub deployed_tick: Option<u64>,
}

/// Everything about a run except the per-tick rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    pub v: u32,
    pub fingerprint: String,
    pub tick_ms: f64,
    pub terminal_state: TerminalState,
    pub incidents: Vec<Incident>,
    pub commands: Vec<IssuedCommand>,
    pub applied_physical: Vec<AppliedCommand>,
    pub applied_virtual: Vec<AppliedCommand>,
    pub rejected_physical: Vec<(u64, String)>,
    pub plans: Vec<PendingPlan>,
    pub gate_windows: Vec<GateWindow>,
    pub channel_stats: Vec<(String, ChannelStats)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub rows: Vec<TraceRow>,
    pub audit: RunAudit,
}

impl RunLog {
    pub fn terminal(&self) -> TerminalState {
        self.audit.terminal_state
    }

    pub fn incident_ticks(&self, kind: IncidentKind) -> Vec<u64> {
        self.rows
            .iter()
            .filter(|r| r.incidents.contains(&kind))
            .map(|r| r.tick)
            .collect()
    }

    /// Physical-twin activity the gate should have prevented: applications
    /// after a hold of commands issued before it, any application after a
    /// hold that was never lifted, and commands issued to the physical twin
    /// after such a hold. Zero for a sound gate.
    pub fn gate_violations(&self) -> usize {
        let applied = &self.audit.applied_physical;
        self.audit
            .gate_windows
            .iter()
            .map(|w| {
                let after = &applied[w.physical_applied_before.min(applied.len())..];
                let stale = after
                    .iter()
                    .filter(|a| w.deployed_tick.is_none() || w.fence_seq.is_some_and(|f| a.sequence <= f))
                    .count();
                let issued = if w.deployed_tick.is_none() {
                    self.audit
                        .commands
                        .iter()
                        .filter(|c| c.twin == TwinId::Physical && c.tick >= w.raised_tick)
                        .count()
                } else {
                    0
                };
                stale + issued
            })
            .sum()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), LogError> {
        write_csv(&self.rows, out)
    }
}

fn f(v: f64) -> String {
    format!("{v}")
}

pub fn write_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<(), LogError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        let kinds: Vec<&str> = r.incidents.iter().map(|k| k.as_str()).collect();
        let mut rec = Vec::with_capacity(CSV_HEADER.len());
        rec.push(r.tick.to_string());
        rec.push(f(r.ts_r_ms));
        rec.push(f(r.ts_v_ms));
        for p in [&r.pr, &r.pv] {
            rec.extend([p.x, p.y, p.z, p.roll, p.pitch, p.yaw].map(f));
        }
        rec.push(f(r.dev_pos_m));
        rec.push(f(r.dev_ts_ms));
        rec.push(f(r.clearance_min_m));
        rec.push(kinds.join("|"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TraceRow>, LogError> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(LogError::Malformed {
            line: 1,
            msg: format!("header must be `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut rows: Vec<TraceRow> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| LogError::Malformed { line, msg };
        let num = |i: usize| -> Result<f64, LogError> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("column {} is not a number: {:?}", CSV_HEADER[i], &rec[i])))
        };
        let tick: u64 = rec[0]
            .parse()
            .map_err(|_| bad(format!("tick is not an integer: {:?}", &rec[0])))?;
        if let Some(prev) = rows.last() {
            if tick <= prev.tick {
                return Err(bad(format!("tick {tick} does not follow tick {}", prev.tick)));
            }
        }
        let pose = |o: usize| -> Result<Pose, LogError> {
            Ok(Pose {
                x: num(o)?,
                y: num(o + 1)?,
                z: num(o + 2)?,
                roll: num(o + 3)?,
                pitch: num(o + 4)?,
                yaw: num(o + 5)?,
            })
        };
        let incidents = if rec[18].is_empty() {
            Vec::new()
        } else {
            rec[18]
                .split('|')
                .map(|s| IncidentKind::parse(s).ok_or_else(|| bad(format!("unknown incident kind {s:?}"))))
                .collect::<Result<_, _>>()?
        };
        rows.push(TraceRow {
            tick,
            ts_r_ms: num(1)?,
            ts_v_ms: num(2)?,
            pr: pose(3)?,
            pv: pose(9)?,
            dev_pos_m: num(15)?,
            dev_ts_ms: num(16)?,
            clearance_min_m: num(17)?,
            incidents,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(tick: u64) -> TraceRow {
        TraceRow {
            tick,
            ts_r_ms: tick as f64,
            ts_v_ms: tick as f64 + 3.0,
            pr: Pose::at(0.1, 0.2, 0.3),
            pv: Pose::at(0.1, 0.2, 0.31),
            dev_pos_m: 0.01,
            dev_ts_ms: 3.0,
            clearance_min_m: f64::INFINITY,
            incidents: vec![IncidentKind::TimingDeviation],
        }
    }

    #[test]
    fn header_and_infinity() {
        let mut buf = Vec::new();
        write_csv(&[row(0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert!(text.contains(",inf,timing-deviation"));
        assert_eq!(read_csv(text.as_bytes()).unwrap(), vec![row(0)]);
    }

    #[test]
    fn rejects_bad_header_and_order() {
        assert!(matches!(
            read_csv("a,b\n1,2\n".as_bytes()),
            Err(LogError::Malformed { line: 1, .. })
        ));
        let mut buf = Vec::new();
        write_csv(&[row(2), row(1)], &mut buf).unwrap();
        assert!(matches!(read_csv(&buf[..]), Err(LogError::Malformed { .. })));
        let mut buf = Vec::new();
        write_csv(&[row(1)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("timing-deviation", "bogus");
        assert!(read_csv(text.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_bit_exact(
            vals in proptest::collection::vec(-1e6f64..1e6, 17),
            kinds in proptest::collection::vec(0usize..5, 0..4),
        ) {
            let pose = |o: usize| Pose { x: vals[o], y: vals[o+1], z: vals[o+2], roll: vals[o+3], pitch: vals[o+4], yaw: vals[o+5] };
            let r = TraceRow {
                tick: 7,
                ts_r_ms: vals[0],
                ts_v_ms: vals[1],
                pr: pose(2),
                pv: pose(8),
                dev_pos_m: vals[14],
                dev_ts_ms: vals[15],
                clearance_min_m: vals[16],
                incidents: kinds.iter().map(|i| IncidentKind::ALL[*i]).collect(),
            };
            let mut buf = Vec::new();
            write_csv(std::slice::from_ref(&r), &mut buf).unwrap();
            let back = read_csv(&buf[..]).unwrap();
            prop_assert_eq!(back, vec![r]);
        }
    }
}
