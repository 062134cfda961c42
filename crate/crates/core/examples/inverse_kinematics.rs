//! Damped-least-squares IK: random reachable targets solved from the home pose.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinsync::kinematics::{forward_kinematics, solve_ik, JointVector, KinematicChain, PANDA_HOME};

fn main() {
    let chain = KinematicChain::panda();
    let home = JointVector(PANDA_HOME.to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1000;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..n {
        let q: Vec<f64> = chain.joint_limits().iter().map(|l| rng.random_range(l.min..l.max)).collect();
        let target = forward_kinematics(&chain, &JointVector(q)).unwrap();
        match solve_ik(&chain, &target, &home, 1e-6, 3000) {
            Ok(sol) => {
                let r = forward_kinematics(&chain, &sol).unwrap().distance(&target);
                worst = worst.max(r);
            }
            Err(_) => failures += 1,
        }
    }
    println!("{n} targets, {failures} unsolved, worst residual {worst:e} m");
}
