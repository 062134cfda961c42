//! The safety gate in action: a box appears across the path, the run holds
//! both twins, rehearses a lift-over on a fresh virtual twin and waits. The
//! same run is then replayed with an approval and with a rejection.

use std::collections::BTreeMap;

use twinsync::config::ScenarioConfig;
use twinsync::control::{run_scenario_with, NullObserver};
use twinsync::hitl::{NoDecisions, RecordedDecisions, Verdict};

fn main() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/obstacle_sweep.json");
    let cfg = ScenarioConfig::load(std::path::Path::new(path)).expect("bundled scenario");

    let held = run_scenario_with(&cfg, &mut NoDecisions, &mut NullObserver).unwrap();
    let plan = &held.audit.plans[0];
    let r = plan.rehearsal.as_ref().unwrap();
    println!("plan {} raised by {} at tick {}", plan.id, plan.trigger.kind, plan.trigger.tick);
    println!(
        "  rehearsal: completed {} min clearance {:.4} m max deviation {:.4} m over {} ticks",
        r.completed, r.min_clearance, r.max_pose_deviation, r.ticks
    );
    println!("  undecided: {} after {} ticks", held.terminal().as_str(), held.rows.len());

    for verdict in [Verdict::Approve, Verdict::Reject] {
        let mut src = RecordedDecisions(BTreeMap::from([(plan.id.clone(), (verdict, "operator".to_string()))]));
        let log = run_scenario_with(&cfg, &mut src, &mut NullObserver).unwrap();
        println!(
            "  {verdict:?}: {} after {} ticks, gate violations {}",
            log.terminal().as_str(),
            log.rows.len(),
            log.gate_violations()
        );
    }
}
