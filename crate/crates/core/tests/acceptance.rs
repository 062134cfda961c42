//! One pass/fail line per acceptance criterion, written straight to stdout so
//! it shows up without `--nocapture`. Fails at the end if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinsync::config::{HitlMode, ObstacleSpec, ScenarioConfig};
use twinsync::control::metrics::{actuation_delta, MetricsReport};
use twinsync::control::monitor::IncidentKind;
use twinsync::control::runlog::{read_csv, RunAudit, RunLog, TerminalState};
use twinsync::control::{run_scenario, run_scenario_with, NullObserver};
use twinsync::hitl::{NoDecisions, PlanStatus, RecordedDecisions, Verdict};
use twinsync::kinematics::{forward_kinematics, forward_transform, geometric_jacobian, solve_ik, JointVector, KinematicChain, PANDA_HOME};
use twinsync::robotsim::TwinId;
use twinsync::twinlink::{Channel, ChannelConfig, LinkMode};

use common::{bin, box_distance, dist3, load_scenario, offline_flags, panda_fk_oracle, position, random_scenario, scenario_path};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn csv_bytes(log: &RunLog) -> Vec<u8> {
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    buf
}

fn free_motion() -> Outcome {
    let cfg = load_scenario("free_motion.json");
    let start = Instant::now();
    let log = run_scenario(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let r = MetricsReport::from_rows(&log.rows, cfg.tick_ms, Some(log.terminal())).unwrap();
    let worst = r.mae_x().max(r.mae_y()).max(r.mae_z());
    outcome(
        worst < 0.05 && secs < 10.0 && log.terminal() == TerminalState::Completed,
        format!(
            "mae x={:.4} y={:.4} z={:.4} m, {secs:.2} s, {}",
            r.mae_x(),
            r.mae_y(),
            r.mae_z(),
            log.terminal().as_str()
        ),
    )
}

fn actuation() -> Outcome {
    let mut cfg = load_scenario("free_motion.json");
    cfg.physical.actuation_latency_ms = 16.0;
    cfg.virtual_twin.actuation_latency_ms = 0.0;
    let log = run_scenario(&cfg).unwrap();
    // measured from the parsed log only
    let rows = read_csv(&csv_bytes(&log)[..]).unwrap();
    match actuation_delta(&rows, cfg.tick_ms) {
        Ok(d) => outcome((d - 16.0).abs() <= cfg.tick_ms, format!("delta {d} ms")),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn sweep_case(base: &ScenarioConfig, cx: f64, cy: f64, h: f64) -> Result<String, String> {
    let mut cfg = base.clone();
    cfg.hitl_mode = HitlMode::AutoApprove;
    cfg.obstacles = vec![ObstacleSpec { cx, cy, sx: 0.1, sy: 0.1, h, detect_tick: 0 }];
    let log = run_scenario(&cfg).unwrap();
    let r = MetricsReport::from_rows(&log.rows, cfg.tick_ms, Some(log.terminal())).unwrap();
    let clearance = log
        .rows
        .iter()
        .flat_map(|row| [row.pr, row.pv])
        .map(|p| box_distance([p.x, p.y, p.z], cx, cy, 0.1, 0.1, h))
        .fold(f64::INFINITY, f64::min);
    let (x, y, z) = (r.mae_x(), r.mae_y(), r.mae_z());
    let line = format!("({cx}, {cy}, h={h}) clearance {clearance:.4} mae x={x:.4} y={y:.4} z={z:.4}");
    let ok = log.terminal() == TerminalState::Completed
        && clearance >= cfg.bounds.delta_b
        && y > x.max(z)
        && y <= 0.12;
    if ok { Ok(line) } else { Err(line) }
}

fn sweep(cases: &[(f64, f64, f64)]) -> Outcome {
    let base = load_scenario("obstacle_sweep.json");
    let results: Vec<_> = cases.iter().map(|&(cx, cy, h)| sweep_case(&base, cx, cy, h)).collect();
    let failed: Vec<_> = results.iter().filter_map(|r| r.as_ref().err().cloned()).collect();
    if failed.is_empty() {
        let last = results.iter().flatten().last().unwrap();
        outcome(true, format!("{} cases; last: {last}", cases.len()))
    } else {
        outcome(false, format!("failing: {}", failed.join("; ")))
    }
}

fn position_sweep() -> Outcome {
    let mut cases = Vec::new();
    for cx in [0.45, 0.5, 0.55] {
        for cy in [-0.1, 0.0, 0.1] {
            cases.push((cx, cy, 0.4));
        }
    }
    sweep(&cases)
}

fn height_sweep() -> Outcome {
    let cases: Vec<_> = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6].iter().map(|&h| (0.5, 0.0, h)).collect();
    sweep(&cases)
}

fn monitor_oracle() -> Outcome {
    let mut mismatches = 0;
    let mut flagged = 0;
    for seed in 100..120 {
        let cfg = random_scenario(seed);
        let log = run_scenario(&cfg).unwrap();
        let rows = read_csv(&csv_bytes(&log)[..]).unwrap();
        for row in &rows {
            let (pose, timing, obstacle) = offline_flags(row, &cfg);
            let has = |k| row.incidents.contains(&k);
            flagged += pose as usize + timing as usize + obstacle as usize;
            if has(IncidentKind::PoseDeviation) != pose
                || has(IncidentKind::TimingDeviation) != timing
                || has(IncidentKind::ObstacleProximity) != obstacle
            {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0 && flagged > 0, format!("20 scenarios, {flagged} flags, {mismatches} mismatched rows"))
}

fn kinematics() -> Outcome {
    let chain = KinematicChain::panda();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let sample = |rng: &mut ChaCha8Rng| JointVector(chain.joint_limits().iter().map(|l| rng.random_range(l.min..l.max)).collect());
    let (mut fk_err, mut jac_err, mut ik_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let q = sample(&mut rng);
        let t = forward_transform(&chain, &q).unwrap();
        let o = panda_fk_oracle(&q.0);
        for r in 0..3 {
            fk_err = fk_err.max((t[(r, 3)] - o[r][3]).abs());
        }
        let j = geometric_jacobian(&chain, &q).unwrap();
        let h = 1e-6;
        for i in 0..7 {
            let (mut qp, mut qm) = (q.0.clone(), q.0.clone());
            qp[i] += h;
            qm[i] -= h;
            let (pp, pm) = (position(&panda_fk_oracle(&qp)), position(&panda_fk_oracle(&qm)));
            for r in 0..3 {
                jac_err = jac_err.max((j[(r, i)] - (pp[r] - pm[r]) / (2.0 * h)).abs());
            }
        }
    }
    let home = JointVector(PANDA_HOME.to_vec());
    let mut unsolved = 0;
    for _ in 0..1000 {
        let target = forward_kinematics(&chain, &sample(&mut rng)).unwrap();
        match solve_ik(&chain, &target, &home, 1e-6, 3000) {
            Ok(q) => ik_err = ik_err.max(dist3(position(&panda_fk_oracle(&q.0)), [target.x, target.y, target.z])),
            Err(_) => unsolved += 1,
        }
    }
    outcome(
        fk_err <= 1e-9 && jac_err <= 1e-5 && ik_err <= 1e-4 && unsolved == 0,
        format!("fk {fk_err:.1e} m, jacobian {jac_err:.1e}, fk(ik) {ik_err:.1e} m, {unsolved}/1000 unsolved"),
    )
}

fn determinism() -> Outcome {
    let mut cfgs = vec![load_scenario("free_motion.json"), load_scenario("obstacle_sweep.json")];
    let mut auto = load_scenario("obstacle_sweep.json");
    auto.hitl_mode = HitlMode::AutoApprove;
    cfgs.push(auto);
    cfgs.extend((300..305).map(random_scenario));
    let differing = cfgs
        .iter()
        .filter(|c| csv_bytes(&run_scenario(c).unwrap()) != csv_bytes(&run_scenario(c).unwrap()))
        .count();
    outcome(differing == 0, format!("{} scenarios run twice, {differing} differ", cfgs.len()))
}

/// Physical applications or issues between the hold and the deploy (or the end).
fn held_activity(log: &RunLog) -> usize {
    let w = &log.audit.gate_windows[0];
    let end = w.deployed_tick.unwrap_or(u64::MAX);
    let tick_ms = log.audit.tick_ms;
    let applied = log
        .audit
        .applied_physical
        .iter()
        .filter(|a| a.activated_ms >= w.raised_tick as f64 * tick_ms && a.activated_ms < end as f64 * tick_ms)
        .count();
    let issued = log
        .audit
        .commands
        .iter()
        .filter(|c| c.twin == TwinId::Physical && c.tick >= w.raised_tick && c.tick < end)
        .count();
    applied + issued
}

fn hitl_gate() -> Outcome {
    let cfg = load_scenario("obstacle_sweep.json");
    let undecided = run_scenario_with(&cfg, &mut NoDecisions, &mut NullObserver).unwrap();
    let id = undecided.audit.plans[0].id.clone();
    let decided = |v| {
        let mut src = RecordedDecisions(BTreeMap::from([(id.clone(), (v, "acceptance".to_string()))]));
        run_scenario_with(&cfg, &mut src, &mut NullObserver).unwrap()
    };
    let (approved, rejected) = (decided(Verdict::Approve), decided(Verdict::Reject));
    let leaks = held_activity(&undecided) + held_activity(&approved) + held_activity(&rejected);
    let reject_ok = rejected.terminal() == TerminalState::Blocked && rejected.audit.plans[0].status == PlanStatus::Rejected;

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let session = dir.path().join("session.json");
    let code = |args: &[&std::ffi::OsStr]| Command::new(bin()).args(args).output().unwrap().status.code();
    let run_code = code(&[
        "run".as_ref(),
        "--config".as_ref(),
        scenario_path("obstacle_sweep.json").as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
        "--session".as_ref(),
        session.as_os_str(),
    ]);
    let decide_code = code(&[
        "decide".as_ref(),
        id.as_ref(),
        "approve".as_ref(),
        "--actor".as_ref(),
        "acceptance".as_ref(),
        "--session".as_ref(),
        session.as_os_str(),
    ]);
    let audit: RunAudit =
        serde_json::from_str(&std::fs::read_to_string(twinsync::cli::sidecar(&out, ".audit.json")).unwrap()).unwrap();
    let cli_ok = run_code == Some(2) && decide_code == Some(0) && audit.terminal_state == TerminalState::Completed;
    outcome(
        leaks == 0 && reject_ok && cli_ok,
        format!(
            "held-window physical activity {leaks}, reject -> {}, cli run/decide exit {run_code:?}/{decide_code:?} -> {}",
            rejected.terminal().as_str(),
            audit.terminal_state.as_str()
        ),
    )
}

fn channel_drops() -> Outcome {
    let (n, p) = (10_000u64, 0.1);
    let mut ch = Channel::new(ChannelConfig {
        latency_mean_ms: 0.0,
        jitter_ms: 0.0,
        drop_prob: p,
        mode: LinkMode::Asynchronous,
        seed: 7,
    })
    .unwrap();
    for i in 0..n {
        ch.send(i, i as f64).unwrap();
    }
    let dropped = ch.stats().dropped as f64;
    let mean = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    outcome(
        (dropped - mean).abs() <= 3.0 * sigma,
        format!("dropped {dropped}, mean {mean}, 3 sigma {:.1}", 3.0 * sigma),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("free-motion MAE", free_motion),
        ("actuation delta", actuation),
        ("obstacle sweep: positions", position_sweep),
        ("obstacle sweep: heights", height_sweep),
        ("monitor-oracle equivalence", monitor_oracle),
        ("kinematics suite", kinematics),
        ("determinism", determinism),
        ("HITL safety gate", hitl_gate),
        ("channel drop statistics", channel_drops),
    ];
    let mut stdout = std::io::stdout();
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        writeln!(stdout, "[{tag}] {name}: {}", o.detail).unwrap();
        if !o.pass {
            failed.push(name);
        }
    }
    stdout.flush().unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
