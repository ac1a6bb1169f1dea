//! The 263-wide per-frame motion representation.
//!
//! | Columns   | Width | Content                                             |
//! |-----------|-------|-----------------------------------------------------|
//! | 0         | 1     | root yaw angular velocity (rad/frame)               |
//! | 1..3      | 2     | root ground velocity in the heading frame (fwd, lat)|
//! | 3         | 1     | root height                                         |
//! | 4..67     | 63    | joints 1..21 relative to the root, heading frame    |
//! | 67..193   | 126   | 6D local bone rotations, joints 1..21               |
//! | 193..259  | 66    | joint velocities in the heading frame, all 22       |
//! | 259..263  | 4     | foot contacts (l_ankle, l_foot, r_ankle, r_foot)    |
//!
//! Feature row `k` describes frame `k + 1` of the source clip; every
//! velocity is the difference between frames `k + 1` and `k`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use ndarray::{s, Array2, Array3, ArrayView1};

use super::clip::{MotionClip, RootPose};
use super::skeleton::{Skeleton, NUM_JOINTS};
use crate::error::{Error, Result};

pub const FEATURE_WIDTH: usize = 263;
pub const YAW_VEL: usize = 0;
pub const ROOT_VEL: std::ops::Range<usize> = 1..3;
pub const ROOT_HEIGHT: usize = 3;
pub const RIC: std::ops::Range<usize> = 4..67;
pub const ROT6D: std::ops::Range<usize> = 67..193;
pub const LOCAL_VEL: std::ops::Range<usize> = 193..259;
pub const CONTACTS: std::ops::Range<usize> = 259..263;

/// Foot speed (m/frame) below which a contact is flagged.
pub const CONTACT_SPEED: f64 = 0.002;
const FACING_EPS: f64 = 1e-6;

/// `F × 263` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFeatures {
    values: Array2<f64>,
}

impl MotionFeatures {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() != FEATURE_WIDTH {
            return Err(Error::Shape(format!(
                "features must be {FEATURE_WIDTH} wide, got {}",
                values.ncols()
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }
}

/// Rotation about +y taking the local x axis to `(cos yaw, 0, sin yaw)`.
pub fn yaw_rotation(yaw: f64) -> Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Heading from hip and shoulder across-vectors projected to the ground.
pub fn facing_yaw(clip: &MotionClip, frame: usize, skeleton: &Skeleton) -> Result<f64> {
    let [r_hip, l_hip, r_sho, l_sho] = skeleton.face_joints();
    let across = (clip.joint(frame, r_hip) - clip.joint(frame, l_hip))
        + (clip.joint(frame, r_sho) - clip.joint(frame, l_sho));
    let forward = Vector3::y().cross(&across);
    let (fx, fz) = (forward.x, forward.z);
    if (fx * fx + fz * fz).sqrt() < FACING_EPS {
        return Err(Error::DegenerateFacing { frame });
    }
    Ok(fz.atan2(fx))
}

fn swing(rest: &Vector3<f64>, current: &Vector3<f64>) -> Rotation3<f64> {
    if current.norm() < 1e-12 || rest.norm() < 1e-12 {
        return Rotation3::identity();
    }
    Rotation3::rotation_between(rest, current).unwrap_or_else(|| {
        // Antiparallel: half turn about any axis orthogonal to the rest bone.
        let helper = if rest.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let axis = Unit::new_normalize(rest.cross(&helper));
        Rotation3::from_axis_angle(&axis, PI)
    })
}

/// Converts one clip into `F - 1` feature rows.
pub fn encode_features(clip: &MotionClip, skeleton: &Skeleton) -> Result<MotionFeatures> {
    let frames = clip.num_frames();
    if frames < 2 {
        return Err(Error::InvalidArgument(format!(
            "encoding needs at least 2 frames, clip {} has {frames}",
            clip.id
        )));
    }
    let yaws = (0..frames)
        .map(|f| facing_yaw(clip, f, skeleton))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Array2::zeros((frames - 1, FEATURE_WIDTH));
    let feet = skeleton.foot_joints();
    for k in 0..frames - 1 {
        let f = k + 1;
        let mut row = out.row_mut(k);
        let to_local = yaw_rotation(yaws[f]).transpose();
        let root = clip.joint(f, 0);
        let root_prev = clip.joint(k, 0);

        row[YAW_VEL] = wrap_angle(yaws[f] - yaws[k]);
        let v = to_local * (root - root_prev);
        row[ROOT_VEL.start] = v.x;
        row[ROOT_VEL.start + 1] = v.z;
        row[ROOT_HEIGHT] = root.y;

        // Bone swings are expressed in the heading frame and then made local
        // to the parent bone's swing; the root contributes identity.
        let mut global: Vec<Rotation3<f64>> = vec![Rotation3::identity(); NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            let p = skeleton.parent(j).expect("non-root joint has a parent");
            let rel = to_local * (clip.joint(f, j) - root);
            let base = RIC.start + (j - 1) * 3;
            row[base] = rel.x;
            row[base + 1] = rel.y;
            row[base + 2] = rel.z;

            let bone = to_local * (clip.joint(f, j) - clip.joint(f, p));
            global[j] = swing(&skeleton.offset(j), &bone);
            let local = global[p].inverse() * global[j];
            let m = local.matrix();
            let base = ROT6D.start + (j - 1) * 6;
            for (i, v) in [
                m[(0, 0)],
                m[(1, 0)],
                m[(2, 0)],
                m[(0, 1)],
                m[(1, 1)],
                m[(2, 1)],
            ]
            .into_iter()
            .enumerate()
            {
                row[base + i] = v;
            }
        }
        for j in 0..NUM_JOINTS {
            let v = to_local * (clip.joint(f, j) - clip.joint(k, j));
            let base = LOCAL_VEL.start + j * 3;
            row[base] = v.x;
            row[base + 1] = v.y;
            row[base + 2] = v.z;
        }
        for (i, &j) in feet.iter().enumerate() {
            let speed = (clip.joint(f, j) - clip.joint(k, j)).norm();
            row[CONTACTS.start + i] = if speed < CONTACT_SPEED { 1.0 } else { 0.0 };
        }
    }
    MotionFeatures::new(out)
}

/// Integrated root trajectory: per feature row, `(x, height, z, yaw)`.
pub fn integrate_root(values: &Array2<f64>, initial: RootPose) -> Vec<(Vector3<f64>, f64)> {
    let mut yaw = initial.yaw;
    let (mut x, mut z) = (initial.x, initial.z);
    values
        .outer_iter()
        .map(|row| {
            yaw += row[YAW_VEL];
            let step = yaw_rotation(yaw)
                * Vector3::new(row[ROOT_VEL.start], 0.0, row[ROOT_VEL.start + 1]);
            x += step.x;
            z += step.z;
            (Vector3::new(x, row[ROOT_HEIGHT], z), yaw)
        })
        .collect()
}

/// Rebuilds global joint positions from the root channels and the
/// root-relative positions; rotation and contact channels are ignored.
pub fn decode_features(
    features: &MotionFeatures,
    initial: RootPose,
    id: impl Into<String>,
    label: usize,
) -> Result<MotionClip> {
    let values = features.values();
    if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "feature entry {} of row {} is not finite",
            idx % FEATURE_WIDTH,
            idx / FEATURE_WIDTH
        )));
    }
    let trajectory = integrate_root(values, initial);
    let mut positions = Array3::zeros((values.nrows(), NUM_JOINTS, 3));
    for (k, (row, (root, yaw))) in values.outer_iter().zip(trajectory).enumerate() {
        let to_world = yaw_rotation(yaw);
        positions
            .slice_mut(s![k, 0, ..])
            .assign(&ndarray::arr1(&[root.x, root.y, root.z]));
        for j in 1..NUM_JOINTS {
            let base = RIC.start + (j - 1) * 3;
            let rel = Vector3::new(row[base], row[base + 1], row[base + 2]);
            let p = root + to_world * rel;
            positions
                .slice_mut(s![k, j, ..])
                .assign(&ndarray::arr1(&[p.x, p.y, p.z]));
        }
    }
    MotionClip::new(id, label, positions)
}

/// Gram-Schmidt re-orthonormalization of a 6D rotation (two stacked
/// columns) into a full rotation matrix.
pub fn rot6d_to_matrix(six: ArrayView1<f64>) -> Matrix3<f64> {
    let a = Vector3::new(six[0], six[1], six[2]);
    let b = Vector3::new(six[3], six[4], six[5]);
    let c0 = a.normalize();
    let c1 = (b - c0 * c0.dot(&b)).normalize();
    let c2 = c0.cross(&c1);
    Matrix3::from_columns(&[c0, c1, c2])
}
