//! Independent oracles shared by the integration tests. Nothing here calls the
//! library's geometry: transforms, clearances and bound checks are recomputed
//! from scratch with plain arrays.

#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinsync::config::{HitlMode, ObstacleSpec, ScenarioConfig};
use twinsync::control::monitor::Bounds;
use twinsync::kinematics::Pose;
use twinsync::control::runlog::TraceRow;

pub type M4 = [[f64; 4]; 4];

fn mul(a: &M4, b: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// Standard DH link transform written out as a single matrix.
pub fn dh(a: f64, alpha: f64, d: f64, theta: f64) -> M4 {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    [
        [ct, -st * ca, st * sa, a * ct],
        [st, ct * ca, -ct * sa, a * st],
        [0.0, sa, ca, d],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

/// Panda link table as (a, alpha, d).
pub const PANDA_DH: [(f64, f64, f64); 7] = [
    (0.0, -std::f64::consts::FRAC_PI_2, 0.333),
    (0.0, std::f64::consts::FRAC_PI_2, 0.0),
    (0.0825, std::f64::consts::FRAC_PI_2, 0.316),
    (-0.0825, -std::f64::consts::FRAC_PI_2, 0.0),
    (0.0, std::f64::consts::FRAC_PI_2, 0.384),
    (0.088, std::f64::consts::FRAC_PI_2, 0.0),
    (0.0, 0.0, 0.107),
];

pub fn panda_fk_oracle(q: &[f64]) -> M4 {
    let mut t = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
    for ((a, alpha, d), th) in PANDA_DH.iter().zip(q) {
        t = mul(&t, &dh(*a, *alpha, *d, *th));
    }
    t
}

pub fn position(t: &M4) -> [f64; 3] {
    [t[0][3], t[1][3], t[2][3]]
}

pub fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Distance from a point to an axis-aligned box standing on z = 0.
pub fn box_distance(p: [f64; 3], cx: f64, cy: f64, sx: f64, sy: f64, h: f64) -> f64 {
    let lo = [cx - sx / 2.0, cy - sy / 2.0, 0.0];
    let hi = [cx + sx / 2.0, cy + sy / 2.0, h];
    let mut s = 0.0;
    for i in 0..3 {
        let d = if p[i] < lo[i] {
            lo[i] - p[i]
        } else if p[i] > hi[i] {
            p[i] - hi[i]
        } else {
            0.0
        };
        s += d * d;
    }
    s.sqrt()
}

/// Per-tick flags recomputed from one logged row: (pose, timing, obstacle).
pub fn offline_flags(row: &TraceRow, cfg: &ScenarioConfig) -> (bool, bool, bool) {
    let pr = [row.pr.x, row.pr.y, row.pr.z];
    let pv = [row.pv.x, row.pv.y, row.pv.z];
    let pose = dist3(pr, pv) >= cfg.bounds.delta_q;
    let timing = (row.ts_r_ms - row.ts_v_ms).abs() >= cfg.bounds.delta_alpha;
    let obstacle = cfg
        .obstacles
        .iter()
        .filter(|o| o.detect_tick <= row.tick)
        .any(|o| {
            let c = box_distance(pr, o.cx, o.cy, o.sx, o.sy, o.h).min(box_distance(pv, o.cx, o.cy, o.sx, o.sy, o.h));
            c <= cfg.bounds.delta_b
        });
    (pose, timing, obstacle)
}

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

pub fn load_scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenario_path(name)).expect("bundled scenario loads")
}

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_twinsync"))
}

/// Random bounds, offsets, latencies, gains and obstacles.
pub fn random_scenario(seed: u64) -> ScenarioConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = rng.random_range(-0.35..-0.1);
    let y1 = rng.random_range(0.1..0.35);
    let x = rng.random_range(0.35..0.6);
    let z = rng.random_range(0.2..0.5);
    let mut c = ScenarioConfig::new(
        seed,
        Pose::at(x, y1, z),
        Bounds::new(rng.random_range(0.002..0.02), rng.random_range(0.5..6.0), rng.random_range(0.02..0.1)),
    );
    c.start = Some(Pose::at(x, y0, z));
    c.physical.gain = rng.random_range(5.0..15.0);
    c.virtual_twin.gain = rng.random_range(5.0..15.0);
    c.physical.clock_offset_ms = rng.random_range(-4.0..4.0);
    c.virtual_twin.clock_drift_ppm = rng.random_range(-500.0..500.0);
    c.physical.actuation_latency_ms = rng.random_range(0..20) as f64;
    for ch in [&mut c.channels.state_physical, &mut c.channels.state_virtual] {
        ch.latency_ms = rng.random_range(0.0..10.0);
        ch.jitter_ms = ch.latency_ms * rng.random_range(0.0..1.0);
        ch.drop_prob = rng.random_range(0.0..0.2);
    }
    if rng.random_bool(0.6) {
        c.obstacles.push(ObstacleSpec {
            cx: x + rng.random_range(-0.1..0.1),
            cy: rng.random_range(-0.05..0.05),
            sx: rng.random_range(0.05..0.15),
            sy: rng.random_range(0.05..0.15),
            h: rng.random_range(0.05..z + 0.1),
            detect_tick: rng.random_range(0..400),
        });
    }
    c.hitl_mode = HitlMode::AutoApprove;
    c
}

