//! Serial kinematic chains described by standard Denavit-Hartenberg parameters.
//!
//! Every link transform is `Rz(theta + theta_offset) * Tz(d) * Tx(a) * Rx(alpha)`.
//! Orientation is reported as roll/pitch/yaw in the Z-Y-X convention with all
//! angles wrapped to `(-pi, pi]`.
//!
//! The default chain is a 7-DOF arm with the published Franka Emika Panda link
//! geometry, rewritten from the manufacturer's modified-DH table into standard
//! DH form (the flange offset is folded into link 7):
//!
//! | link | a (m)   | alpha (rad) | d (m) | theta_offset |
//! |------|---------|-------------|-------|--------------|
//! | 1    | 0       | -pi/2       | 0.333 | 0            |
//! | 2    | 0       | pi/2        | 0     | 0            |
//! | 3    | 0.0825  | pi/2        | 0.316 | 0            |
//! | 4    | -0.0825 | -pi/2       | 0     | 0            |
//! | 5    | 0       | pi/2        | 0.384 | 0            |
//! | 6    | 0.088   | pi/2        | 0     | 0            |
//! | 7    | 0       | 0           | 0.107 | 0            |

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use nalgebra::{Matrix3, Matrix4, Matrix6xX, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("non-finite value: {0}")]
    NonFinite(&'static str),
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("target unreachable (best position residual {residual:.6} m)")]
    Unreachable { residual: f64, best: JointVector },
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> Result<f64, KinematicsError> {
    if !theta.is_finite() {
        return Err(KinematicsError::NonFinite("angle"));
    }
    Ok(wrap_finite(theta))
}

pub(crate) fn wrap_finite(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Joint positions in radians, ordered base to tip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn new(angles: Vec<f64>) -> Result<Self, KinematicsError> {
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(KinematicsError::NonFinite("joint angle"));
        }
        Ok(Self(angles))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Largest absolute per-joint difference.
    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// One Denavit-Hartenberg link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParam {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

impl LinkParam {
    pub const fn new(a: f64, alpha: f64, d: f64, theta_offset: f64) -> Self {
        Self {
            a,
            alpha,
            d,
            theta_offset,
        }
    }

    fn transform(&self, q: f64) -> Matrix4<f64> {
        let (st, ct) = (q + self.theta_offset).sin_cos();
        let (sa, ca) = self.alpha.sin_cos();
        Matrix4::new(
            ct,
            -st * ca,
            st * sa,
            self.a * ct,
            st,
            ct * ca,
            -ct * sa,
            self.a * st,
            0.0,
            sa,
            ca,
            self.d,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl From<[f64; 2]> for JointLimit {
    fn from([min, max]: [f64; 2]) -> Self {
        Self { min, max }
    }
}

impl From<JointLimit> for [f64; 2] {
    fn from(l: JointLimit) -> Self {
        [l.min, l.max]
    }
}

impl JointLimit {
    pub fn contains(&self, q: f64) -> bool {
        q >= self.min && q <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChainSpec", into = "ChainSpec")]
pub struct KinematicChain {
    links: Vec<LinkParam>,
    joint_limits: Vec<JointLimit>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainSpec {
    links: Vec<LinkParam>,
    joint_limits: Vec<JointLimit>,
}

impl TryFrom<ChainSpec> for KinematicChain {
    type Error = KinematicsError;
    fn try_from(s: ChainSpec) -> Result<Self, Self::Error> {
        KinematicChain::new(s.links, s.joint_limits)
    }
}

impl From<KinematicChain> for ChainSpec {
    fn from(c: KinematicChain) -> Self {
        ChainSpec {
            links: c.links,
            joint_limits: c.joint_limits,
        }
    }
}

/// Home configuration of the default 7-DOF chain.
pub const PANDA_HOME: [f64; 7] = [0.0, -FRAC_PI_4, 0.0, -3.0 * FRAC_PI_4, 0.0, FRAC_PI_2, FRAC_PI_4];

impl KinematicChain {
    pub fn new(links: Vec<LinkParam>, joint_limits: Vec<JointLimit>) -> Result<Self, KinematicsError> {
        if links.is_empty() {
            return Err(KinematicsError::InvalidChain("at least one link required".into()));
        }
        if links.len() != joint_limits.len() {
            return Err(KinematicsError::InvalidChain(format!(
                "{} links but {} joint limits",
                links.len(),
                joint_limits.len()
            )));
        }
        for (i, l) in links.iter().enumerate() {
            if ![l.a, l.alpha, l.d, l.theta_offset].iter().all(|v| v.is_finite()) {
                return Err(KinematicsError::InvalidChain(format!("link {i} has a non-finite parameter")));
            }
        }
        for (i, lim) in joint_limits.iter().enumerate() {
            if !(lim.min.is_finite() && lim.max.is_finite() && lim.min < lim.max) {
                return Err(KinematicsError::InvalidChain(format!(
                    "joint {i} limits must satisfy min < max (got [{}, {}])",
                    lim.min, lim.max
                )));
            }
        }
        Ok(Self { links, joint_limits })
    }

    /// Franka Emika Panda geometry in standard DH form; see the module docs.
    pub fn panda() -> Self {
        let links = vec![
            LinkParam::new(0.0, -FRAC_PI_2, 0.333, 0.0),
            LinkParam::new(0.0, FRAC_PI_2, 0.0, 0.0),
            LinkParam::new(0.0825, FRAC_PI_2, 0.316, 0.0),
            LinkParam::new(-0.0825, -FRAC_PI_2, 0.0, 0.0),
            LinkParam::new(0.0, FRAC_PI_2, 0.384, 0.0),
            LinkParam::new(0.088, FRAC_PI_2, 0.0, 0.0),
            LinkParam::new(0.0, 0.0, 0.107, 0.0),
        ];
        let limits = [
            [-2.8973, 2.8973],
            [-1.7628, 1.7628],
            [-2.8973, 2.8973],
            [-3.0718, -0.0698],
            [-2.8973, 2.8973],
            [-0.0175, 3.7525],
            [-2.8973, 2.8973],
        ]
        .into_iter()
        .map(JointLimit::from)
        .collect();
        Self::new(links, limits).expect("built-in chain is valid")
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[LinkParam] {
        &self.links
    }

    pub fn joint_limits(&self) -> &[JointLimit] {
        &self.joint_limits
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.len() == self.dof() && q.0.iter().zip(&self.joint_limits).all(|(v, l)| l.contains(*v))
    }

    pub fn clamp(&self, q: &mut JointVector) {
        for (v, l) in q.0.iter_mut().zip(&self.joint_limits) {
            *v = v.clamp(l.min, l.max);
        }
    }

    fn check_dim(&self, q: &JointVector) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Base-to-frame transforms `T_0^1 .. T_0^n`.
    fn frames(&self, q: &JointVector) -> Vec<Matrix4<f64>> {
        let mut acc = Matrix4::identity();
        self.links
            .iter()
            .zip(&q.0)
            .map(|(link, qi)| {
                acc *= link.transform(*qi);
                acc
            })
            .collect()
    }
}

/// End-effector pose: position in metres, Z-Y-X roll/pitch/yaw in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub roll: f64,
    #[serde(default)]
    pub pitch: f64,
    #[serde(default)]
    pub yaw: f64,
}

impl Pose {
    /// Builds a pose, wrapping the angles.
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Result<Self, KinematicsError> {
        if ![x, y, z].iter().all(|v| v.is_finite()) {
            return Err(KinematicsError::NonFinite("position"));
        }
        Ok(Self {
            x,
            y,
            z,
            roll: wrap_angle(roll)?,
            pitch: wrap_angle(pitch)?,
            yaw: wrap_angle(yaw)?,
        })
    }

    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            ..Self::default()
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw]
            .iter()
            .all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &Pose) -> f64 {
        (self.position() - other.position()).norm()
    }

    /// Rotation matrix `Rz(yaw) * Ry(pitch) * Rx(roll)`.
    pub fn rotation(&self) -> Matrix3<f64> {
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        Matrix3::new(
            cy * cp,
            cy * sp * sr - sy * cr,
            cy * sp * cr + sy * sr,
            sy * cp,
            sy * sp * sr + cy * cr,
            sy * sp * cr - cy * sr,
            -sp,
            cp * sr,
            cp * cr,
        )
    }

    /// Component by axis index: x, y, z, roll, pitch, yaw.
    pub fn component(&self, axis: usize) -> f64 {
        [self.x, self.y, self.z, self.roll, self.pitch, self.yaw][axis]
    }

    fn from_transform(t: &Matrix4<f64>) -> Self {
        let r = t.fixed_view::<3, 3>(0, 0);
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        let pitch = (-r[(2, 0)]).atan2(r[(0, 0)].hypot(r[(1, 0)]));
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        Self {
            x: t[(0, 3)],
            y: t[(1, 3)],
            z: t[(2, 3)],
            roll: wrap_finite(roll),
            pitch: wrap_finite(pitch),
            yaw: wrap_finite(yaw),
        }
    }
}

/// Homogeneous base-to-end transform.
pub fn forward_transform(chain: &KinematicChain, q: &JointVector) -> Result<Matrix4<f64>, KinematicsError> {
    chain.check_dim(q)?;
    Ok(chain.frames(q).pop().unwrap_or_else(Matrix4::identity))
}

pub fn forward_kinematics(chain: &KinematicChain, q: &JointVector) -> Result<Pose, KinematicsError> {
    forward_transform(chain, q).map(|t| Pose::from_transform(&t))
}

/// Geometric Jacobian; rows 0..3 are linear velocity, rows 3..6 angular velocity,
/// both expressed in the base frame.
pub fn geometric_jacobian(chain: &KinematicChain, q: &JointVector) -> Result<Matrix6xX<f64>, KinematicsError> {
    chain.check_dim(q)?;
    let frames = chain.frames(q);
    let end = frames[frames.len() - 1].fixed_view::<3, 1>(0, 3).into_owned();
    let mut jac = Matrix6xX::zeros(chain.dof());
    let mut prev = Matrix4::identity();
    for (i, frame) in frames.iter().enumerate() {
        // joint i rotates about z of frame i-1
        let axis: Vector3<f64> = prev.fixed_view::<3, 1>(0, 2).into_owned();
        let origin: Vector3<f64> = prev.fixed_view::<3, 1>(0, 3).into_owned();
        let lin = axis.cross(&(end - origin));
        jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
        jac.fixed_view_mut::<3, 1>(3, i).copy_from(&axis);
        prev = *frame;
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    pub damping: f64,
    /// Track orientation as well as position.
    pub orientation: bool,
    /// Largest joint-space step norm per iteration, radians.
    pub max_step: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        Self {
            damping: 0.05,
            orientation: false,
            max_step: 0.5,
        }
    }
}

/// Damped-least-squares IK with the default options (position only, lambda = 0.05).
pub fn solve_ik(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointVector,
    tol: f64,
    max_iter: usize,
) -> Result<JointVector, KinematicsError> {
    solve_ik_with(chain, target, seed, tol, max_iter, &IkOptions::default())
}

pub fn solve_ik_with(
    chain: &KinematicChain,
    target: &Pose,
    seed: &JointVector,
    tol: f64,
    max_iter: usize,
    opts: &IkOptions,
) -> Result<JointVector, KinematicsError> {
    chain.check_dim(seed)?;
    if !target.is_finite() {
        return Err(KinematicsError::NonFinite("target pose"));
    }
    if !(tol > 0.0) {
        return Err(KinematicsError::InvalidChain(format!("IK tolerance must be > 0 (got {tol})")));
    }
    let target_pos = target.position();
    let target_rot = target.rotation();
    let lambda2 = opts.damping * opts.damping;
    let n = chain.dof();

    let mut q = seed.clone();
    let mut best = (f64::INFINITY, q.clone());
    for _ in 0..=max_iter {
        let t = forward_transform(chain, &q)?;
        let pos_err = target_pos - t.fixed_view::<3, 1>(0, 3);
        let residual = pos_err.norm();
        let rot_err = if opts.orientation {
            let r: Matrix3<f64> = t.fixed_view::<3, 3>(0, 0).into_owned();
            rotation_error(&target_rot, &r)
        } else {
            Vector3::zeros()
        };
        let err_norm = residual.max(rot_err.norm());
        if err_norm < best.0 {
            best = (err_norm, q.clone());
        }
        if residual <= tol && (!opts.orientation || rot_err.norm() <= tol) {
            return Ok(q);
        }

        let jac = geometric_jacobian(chain, &q)?;
        let dq = if opts.orientation {
            let mut e = nalgebra::Vector6::zeros();
            e.fixed_rows_mut::<3>(0).copy_from(&pos_err);
            e.fixed_rows_mut::<3>(3).copy_from(&rot_err);
            let jjt = &jac * jac.transpose() + nalgebra::Matrix6::identity() * lambda2;
            let y = jjt.lu().solve(&e).ok_or_else(|| KinematicsError::Unreachable {
                residual,
                best: best.1.clone(),
            })?;
            jac.transpose() * y
        } else {
            let jv = jac.fixed_rows::<3>(0);
            let jjt = jv * jv.transpose() + Matrix3::identity() * lambda2;
            let y = jjt.lu().solve(&pos_err).ok_or_else(|| KinematicsError::Unreachable {
                residual,
                best: best.1.clone(),
            })?;
            jv.transpose() * y
        };
        let norm = dq.norm();
        let scale = if norm > opts.max_step { opts.max_step / norm } else { 1.0 };
        for i in 0..n {
            q.0[i] += dq[i] * scale;
        }
        chain.clamp(&mut q);
    }
    Err(KinematicsError::Unreachable {
        residual: best.0,
        best: best.1,
    })
}

/// Axis-angle vector rotating `current` onto `target`.
fn rotation_error(target: &Matrix3<f64>, current: &Matrix3<f64>) -> Vector3<f64> {
    let r = nalgebra::Rotation3::from_matrix_unchecked(target * current.transpose());
    r.scaled_axis()
}
