//! Metrics computed from the logged rows alone.
//!
//! Motion onsets are read from the logged poses: a twin starts moving when its
//! pose changes by more than `MOTION_EPS` after at least `REST_ROWS` unchanged
//! rows (or from the start of the log). The k-th onset of one twin is paired
//! with the k-th onset of the other.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::monitor::IncidentKind;
use crate::control::runlog::{TerminalState, TraceRow};
use crate::kinematics::{wrap_finite, Pose};

pub const MOTION_EPS: f64 = 1e-9;
pub const REST_ROWS: usize = 50;

pub const AXES: [&str; 6] = ["x", "y", "z", "roll", "pitch", "yaw"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("undefined metric: {0}")]
    Undefined(&'static str),
}

fn axis_diff(pr: &Pose, pv: &Pose, axis: usize) -> f64 {
    let d = pr.component(axis) - pv.component(axis);
    if axis >= 3 {
        wrap_finite(d).abs()
    } else {
        d.abs()
    }
}

/// Mean over rows of |axis_r - axis_v|; axes 3..5 use the wrapped angle difference.
pub fn mae(rows: &[TraceRow], axis: usize) -> Result<f64, MetricsError> {
    assert!(axis < 6, "axis index {axis} out of range");
    if rows.is_empty() {
        return Err(MetricsError::Undefined("mean absolute error of an empty log"));
    }
    let sum: f64 = rows.iter().map(|r| axis_diff(&r.pr, &r.pv, axis)).sum();
    Ok(sum / rows.len() as f64)
}

fn moved(a: &Pose, b: &Pose) -> bool {
    (0..6).any(|i| axis_diff(a, b, i) > MOTION_EPS)
}

/// Row indices at which a twin's pose starts changing after rest.
pub fn motion_onsets<F: Fn(&TraceRow) -> &Pose>(rows: &[TraceRow], pose: F) -> Vec<u64> {
    let mut out = Vec::new();
    let mut still = usize::MAX;
    for w in rows.windows(2) {
        if moved(pose(&w[0]), pose(&w[1])) {
            if still >= REST_ROWS {
                out.push(w[1].tick);
            }
            still = 0;
        } else {
            still = still.saturating_add(1);
        }
    }
    out
}

/// Mean |onset_r - onset_v| over paired onsets, in ms.
pub fn actuation_delta(rows: &[TraceRow], tick_ms: f64) -> Result<f64, MetricsError> {
    let r = motion_onsets(rows, |row| &row.pr);
    let v = motion_onsets(rows, |row| &row.pv);
    let n = r.len().min(v.len());
    if n == 0 {
        return Err(MetricsError::Undefined("actuation delta without motion onsets for both twins"));
    }
    let sum: f64 = r.iter().zip(&v).map(|(a, b)| a.abs_diff(*b) as f64).sum();
    Ok(sum / n as f64 * tick_ms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub v: u32,
    pub rows: usize,
    /// Per-axis MAE in the order x, y, z (m), roll, pitch, yaw (rad).
    pub mae: [f64; 6],
    pub actuation_delta_ms: Option<f64>,
    /// Number of rows flagged with each incident kind.
    pub incident_counts: BTreeMap<IncidentKind, u64>,
    #[serde(with = "crate::serde_util::inf_as_null")]
    pub min_clearance_m: f64,
    pub max_dev_pos_m: f64,
    pub terminal_state: Option<TerminalState>,
}

impl MetricsReport {
    pub fn from_rows(
        rows: &[TraceRow],
        tick_ms: f64,
        terminal_state: Option<TerminalState>,
    ) -> Result<Self, MetricsError> {
        let mut mae_all = [0.0; 6];
        for (i, m) in mae_all.iter_mut().enumerate() {
            *m = mae(rows, i)?;
        }
        let mut incident_counts = BTreeMap::new();
        for r in rows {
            for k in &r.incidents {
                *incident_counts.entry(*k).or_insert(0) += 1;
            }
        }
        Ok(Self {
            v: 1,
            rows: rows.len(),
            mae: mae_all,
            actuation_delta_ms: actuation_delta(rows, tick_ms).ok(),
            incident_counts,
            min_clearance_m: rows.iter().map(|r| r.clearance_min_m).fold(f64::INFINITY, f64::min),
            max_dev_pos_m: rows.iter().map(|r| r.dev_pos_m).fold(0.0, f64::max),
            terminal_state,
        })
    }

    pub fn mae_x(&self) -> f64 {
        self.mae[0]
    }
    pub fn mae_y(&self) -> f64 {
        self.mae[1]
    }
    pub fn mae_z(&self) -> f64 {
        self.mae[2]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("rows                 {}\n", self.rows));
        for (name, v) in AXES.iter().zip(self.mae) {
            s.push_str(&format!("mae_{name:<17}{v}\n"));
        }
        match self.actuation_delta_ms {
            Some(d) => s.push_str(&format!("actuation_delta_ms   {d}\n")),
            None => s.push_str("actuation_delta_ms   undefined\n"),
        }
        s.push_str(&format!("min_clearance_m      {}\n", self.min_clearance_m));
        s.push_str(&format!("max_dev_pos_m        {}\n", self.max_dev_pos_m));
        for (k, n) in &self.incident_counts {
            s.push_str(&format!("{:<20} {n}\n", format!("incidents.{}", k.as_str())));
        }
        if let Some(t) = self.terminal_state {
            s.push_str(&format!("terminal_state       {}\n", t.as_str()));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(tick: u64, pr: Pose, pv: Pose) -> TraceRow {
        TraceRow {
            tick,
            ts_r_ms: tick as f64,
            ts_v_ms: tick as f64,
            pr,
            pv,
            dev_pos_m: pr.distance(&pv),
            dev_ts_ms: 0.0,
            clearance_min_m: f64::INFINITY,
            incidents: vec![],
        }
    }

    #[test]
    fn identical_traces_have_zero_error() {
        let rows: Vec<_> = (0..10).map(|t| row(t, Pose::at(0.1, 0.2, 0.3), Pose::at(0.1, 0.2, 0.3))).collect();
        for a in 0..6 {
            assert_eq!(mae(&rows, a).unwrap(), 0.0);
        }
    }

    #[test]
    fn constant_offset() {
        let rows: Vec<_> = (0..100).map(|t| row(t, Pose::at(1.0, 0.0, 0.0), Pose::at(0.9, 0.0, 0.0))).collect();
        assert!((mae(&rows, 0).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(mae(&[], 0), Err(MetricsError::Undefined(_))));
    }

    #[test]
    fn rotational_axes_wrap() {
        let a = Pose::new(0.0, 0.0, 0.0, 3.1, 0.0, 0.0).unwrap();
        let b = Pose::new(0.0, 0.0, 0.0, -3.1, 0.0, 0.0).unwrap();
        let m = mae(&[row(0, a, b)], 3).unwrap();
        assert!((m - (2.0 * std::f64::consts::PI - 6.2)).abs() < 1e-12);
    }

    fn ramp(start: u64, t: u64) -> Pose {
        Pose::at(if t > start { (t - start) as f64 * 1e-3 } else { 0.0 }, 0.0, 0.0)
    }

    #[test]
    fn onset_difference() {
        let rows: Vec<_> = (0..200).map(|t| row(t, ramp(26, t), ramp(10, t))).collect();
        assert_eq!(motion_onsets(&rows, |r| &r.pr), vec![27]);
        assert_eq!(actuation_delta(&rows, 1.0).unwrap(), 16.0);
        assert_eq!(actuation_delta(&rows, 2.0).unwrap(), 32.0);
    }

    #[test]
    fn no_motion_is_undefined() {
        let rows: Vec<_> = (0..10).map(|t| row(t, Pose::at(0.0, 0.0, 0.0), Pose::at(0.0, 0.0, 0.0))).collect();
        assert!(actuation_delta(&rows, 1.0).is_err());
        let report = MetricsReport::from_rows(&rows, 1.0, None).unwrap();
        assert_eq!(report.actuation_delta_ms, None);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"min_clearance_m\":null"));
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn second_onset_after_rest() {
        let pose = |t: u64| {
            let x = if t < 10 {
                0.0
            } else if t < 20 {
                (t - 10) as f64
            } else if t < 100 {
                10.0
            } else {
                10.0 + (t - 100) as f64
            };
            Pose::at(x, 0.0, 0.0)
        };
        let rows: Vec<_> = (0..150).map(|t| row(t, pose(t), pose(t))).collect();
        assert_eq!(motion_onsets(&rows, |r| &r.pr), vec![11, 101]);
    }
}
