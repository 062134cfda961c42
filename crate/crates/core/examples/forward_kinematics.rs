//! Forward kinematics and the geometric Jacobian of the Panda arm.

use twinsync::kinematics::{forward_kinematics, geometric_jacobian, JointVector, KinematicChain, PANDA_HOME};

fn main() {
    let chain = KinematicChain::panda();
    for q in [vec![0.0; 7], PANDA_HOME.to_vec(), vec![0.1, -0.2, 0.3, -1.5, 0.4, 1.2, -0.6]] {
        let q = JointVector(q);
        let p = forward_kinematics(&chain, &q).unwrap();
        println!(
            "q = {:?}\n  position ({:.4}, {:.4}, {:.4}) m  rpy ({:.4}, {:.4}, {:.4}) rad",
            q.as_slice(),
            p.x,
            p.y,
            p.z,
            p.roll,
            p.pitch,
            p.yaw
        );
        let j = geometric_jacobian(&chain, &q).unwrap();
        println!("  jacobian linear rows:");
        for r in 0..3 {
            let row: Vec<String> = (0..7).map(|c| format!("{:7.3}", j[(r, c)])).collect();
            println!("    {}", row.join(" "));
        }
    }
}
