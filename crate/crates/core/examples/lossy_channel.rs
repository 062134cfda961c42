//! A lossy, jittery command link feeding a simulated arm.

use twinsync::kinematics::{JointVector, KinematicChain, PANDA_HOME};
use twinsync::robotsim::{CommandMsg, RobotConfig, SimRobot, TwinId};
use twinsync::twinlink::{Channel, ChannelConfig, LinkMode};

fn main() {
    let mut link = Channel::new(ChannelConfig {
        latency_mean_ms: 8.0,
        jitter_ms: 4.0,
        drop_prob: 0.1,
        mode: LinkMode::Asynchronous,
        seed: 5,
    })
    .unwrap();
    let mut robot = SimRobot::new(
        TwinId::Physical,
        RobotConfig::new(KinematicChain::panda(), 8.0),
        JointVector(PANDA_HOME.to_vec()),
    )
    .unwrap();
    for tick in 0..1000u64 {
        let now = tick as f64;
        if tick % 20 == 0 {
            let mut q = PANDA_HOME.to_vec();
            q[0] += 0.001 * tick as f64;
            let cmd = CommandMsg { target_joints: JointVector(q), issue_time_ms: now, sequence: tick / 20 };
            link.send(cmd, now).unwrap();
        }
        for cmd in link.deliver_due(now) {
            robot.apply_command(cmd, now).unwrap();
        }
        robot.step(1.0).unwrap();
    }
    let s = link.stats();
    println!("sent {} delivered {} dropped {}", s.sent, s.delivered, s.dropped);
    for a in robot.applied().iter().take(5) {
        println!(
            "seq {:2} issued {:6.1} received {:6.1} active {:6.1} ms",
            a.sequence, a.issue_time_ms, a.received_ms, a.activated_ms
        );
    }
    println!("joint 0 now {:.4} rad", robot.joints().as_slice()[0]);
}
