//! Straight-line waypoint planning and the lift-over avoidance replan.

use twinsync::kinematics::Pose;
use twinsync::trajectory::{min_clearance, plan_waypoints, replan_avoid, Obstacle, TrajectoryGoal};

fn main() {
    let start = Pose::at(0.5, -0.5, 0.3);
    let goal = TrajectoryGoal::new(Pose::at(0.5, 0.5, 0.3), 0.01).unwrap();
    let plan = plan_waypoints(&start, &goal).unwrap();
    let obstacle = Obstacle::new(0.5, 0.0, 0.1, 0.1, 0.4).unwrap();
    println!(
        "straight plan: {} waypoints, {:.3} m, min clearance {:.3} m",
        plan.len(),
        plan.path_length(),
        min_clearance(&plan, &obstacle)
    );
    for delta_b in [0.05, 0.1] {
        let avoided = replan_avoid(&plan, &obstacle, delta_b).unwrap();
        let peak = avoided.waypoints.iter().map(|w| w.z).fold(f64::MIN, f64::max);
        println!(
            "delta_b {delta_b}: {} waypoints, {:.3} m, min clearance {:.3} m, peak z {:.3} m",
            avoided.len(),
            avoided.path_length(),
            min_clearance(&avoided, &obstacle),
            peak
        );
    }
    // a goal inside the inflated footprint cannot be reached
    let inside = TrajectoryGoal::new(Pose::at(0.5, 0.02, 0.3), 0.01).unwrap();
    let blocked = plan_waypoints(&start, &inside).unwrap();
    println!("goal over the obstacle: {:?}", replan_avoid(&blocked, &obstacle, 0.05).err());
}
