//! Rigid-body primitives for the tool center point (TCP).
//!
//! Poses are unit quaternions plus a base-frame position. Per-step motion is
//! expressed as a [`DeltaMotion`]: translation in the base frame, rotation as
//! an axis-angle vector composed on the body side.

use std::f64::consts::PI;

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// 6-DoF rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Builds a pose, renormalizing the quaternion.
    pub fn new(position: Vec3, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation: renormalize(orientation),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self {
            position: Vec3::new(x, y, z),
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Pose from a position and a raw `(w, x, y, z)` quaternion. Returns
    /// `None` for non-finite input or a (near) zero quaternion.
    pub fn from_parts(position: [f64; 3], quat_wxyz: [f64; 4]) -> Option<Self> {
        if position.iter().chain(quat_wxyz.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        let q = Quaternion::new(quat_wxyz[0], quat_wxyz[1], quat_wxyz[2], quat_wxyz[3]);
        if q.norm() < 1e-12 {
            return None;
        }
        // already-unit input is kept bit-exact so serialized poses round-trip
        let orientation = if (q.norm() - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Some(Self {
            position: Vec3::from(position),
            orientation,
        })
    }

    /// Rotation about the base z axis placed at `(x, y, z)`.
    pub fn from_xyz_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            position: Vec3::new(x, y, z),
            orientation: UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw),
        }
    }

    pub fn position_array(&self) -> [f64; 3] {
        [self.position.x, self.position.y, self.position.z]
    }

    pub fn quat_wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn inverse(&self) -> Self {
        let inv = self.orientation.inverse();
        Self {
            position: -(inv * self.position),
            orientation: inv,
        }
    }

    /// Rigid composition `self ∘ other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.orientation * p
    }

    /// Yaw of the orientation about the base z axis.
    pub fn yaw(&self) -> f64 {
        self.orientation.euler_angles().2
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite()) && self.orientation.coords.iter().all(|v| v.is_finite())
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// `a ∘ b`: apply `b` in the frame of `a`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        position: a.position + a.orientation * b.position,
        orientation: renormalize(a.orientation * b.orientation),
    }
}

/// Advance a pose by one motion increment. Translation is applied in the base
/// frame; rotation is composed on the right (body frame).
pub fn apply_delta(p: &Pose, d: &DeltaMotion) -> Pose {
    let orientation = if d.rotation == Vec3::zeros() {
        p.orientation
    } else {
        renormalize(p.orientation * rotation_from_axis_angle(&d.rotation))
    };
    Pose {
        position: p.position + d.translation,
        orientation,
    }
}

/// `(translational meters, rotational radians in [0, π])`.
pub fn pose_distance(a: &Pose, b: &Pose) -> (f64, f64) {
    ((a.position - b.position).norm(), rotation_angle(a, b))
}

fn rotation_angle(a: &Pose, b: &Pose) -> f64 {
    let rel = a.orientation.inverse() * b.orientation;
    let q = rel.quaternion();
    2.0 * q.imag().norm().atan2(q.w.abs())
}

pub fn rotation_from_axis_angle(v: &Vec3) -> UnitQuaternion<f64> {
    let angle = v.norm();
    if angle < 1e-15 {
        return UnitQuaternion::identity();
    }
    UnitQuaternion::from_axis_angle(&Unit::new_unchecked(v / angle), angle)
}

/// Axis-angle vector of the shortest rotation equivalent to `q`.
pub fn axis_angle_of(q: &UnitQuaternion<f64>) -> Vec3 {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 { (-q.w, -q.imag()) } else { (q.w, q.imag()) };
    let s = v.norm();
    if s < 1e-15 {
        return Vec3::zeros();
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

/// Motion increment that carries `from` onto `to` under [`apply_delta`].
pub fn delta_between(from: &Pose, to: &Pose) -> DeltaMotion {
    DeltaMotion {
        translation: to.position - from.position,
        rotation: axis_angle_of(&(from.orientation.inverse() * to.orientation)),
    }
}

/// Per-step TCP increment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DeltaMotion {
    pub translation: Vec3,
    /// Axis-angle, magnitude ≤ π.
    pub rotation: Vec3,
}

impl DeltaMotion {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Rejects non-finite components and rotations beyond π.
    pub fn new(translation: Vec3, rotation: Vec3) -> Option<Self> {
        let finite = translation.iter().chain(rotation.iter()).all(|v| v.is_finite());
        if !finite || rotation.norm() > PI + 1e-12 {
            return None;
        }
        Some(Self { translation, rotation })
    }

    pub fn translation_only(x: f64, y: f64, z: f64) -> Self {
        Self {
            translation: Vec3::new(x, y, z),
            rotation: Vec3::zeros(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.translation == Vec3::zeros() && self.rotation == Vec3::zeros()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            translation: self.translation * k,
            rotation: self.rotation * k,
        }
    }

    /// Scale each part down so translation ≤ `max_lin` and rotation ≤ `max_ang`.
    pub fn clipped(&self, max_lin: f64, max_ang: f64) -> Self {
        let mut out = *self;
        let t = out.translation.norm();
        if t > max_lin {
            out.translation *= max_lin / t;
        }
        let r = out.rotation.norm();
        if r > max_ang {
            out.rotation *= max_ang / r;
        }
        out
    }
}

/// Serialized form of a pose: unit-suffixed position and `(w, x, y, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub pos_m: [f64; 3],
    pub quat_wxyz: [f64; 4],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        Self {
            pos_m: p.position_array(),
            quat_wxyz: p.quat_wxyz(),
        }
    }
}

impl PoseRecord {
    pub fn to_pose(&self) -> Option<Pose> {
        Pose::from_parts(self.pos_m, self.quat_wxyz)
    }
}
