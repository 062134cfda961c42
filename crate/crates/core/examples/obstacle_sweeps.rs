//! Obstacle sweeps: a fixed 0.4 m box at nine X-Y positions, then boxes of
//! increasing height at (0.5, 0). Every gated plan is auto-approved.

use twinsync::config::{HitlMode, ObstacleSpec, ScenarioConfig};
use twinsync::control::metrics::MetricsReport;
use twinsync::control::run_scenario;

fn run(base: &ScenarioConfig, cx: f64, cy: f64, h: f64) {
    let mut cfg = base.clone();
    cfg.hitl_mode = HitlMode::AutoApprove;
    cfg.obstacles = vec![ObstacleSpec { cx, cy, sx: 0.1, sy: 0.1, h, detect_tick: 0 }];
    let log = run_scenario(&cfg).expect("scenario runs");
    let r = MetricsReport::from_rows(&log.rows, cfg.tick_ms, Some(log.terminal())).unwrap();
    println!(
        "obstacle ({cx:5.2}, {cy:5.2}) h={h:.1}  mae x={:.4} y={:.4} z={:.4}  min_clearance={:.4}  delta={:?} ms  {}",
        r.mae_x(),
        r.mae_y(),
        r.mae_z(),
        r.min_clearance_m,
        r.actuation_delta_ms,
        log.terminal().as_str()
    );
}

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/obstacle_sweep.json");
    let base = ScenarioConfig::load(std::path::Path::new(path)).expect("bundled scenario");
    println!("fixed height, varying position");
    for cx in [0.45, 0.5, 0.55] {
        for cy in [-0.1, 0.0, 0.1] {
            run(&base, cx, cy, 0.4);
        }
    }
    println!("fixed position, varying height");
    for h in [0.1, 0.2, 0.3, 0.4, 0.5, 0.6] {
        run(&base, 0.5, 0.0, h);
    }
}
