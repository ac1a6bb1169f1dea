use nalgebra::Vector3;
use ndarray::{s, Array3};

use super::features::facing_yaw;
use super::skeleton::{Skeleton, NUM_JOINTS};
use crate::error::{Error, Result};

/// One skeleton sequence: `F × 22 × 3` global joint positions in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub id: String,
    pub label: usize,
    positions: Array3<f64>,
}

/// Ground-plane root placement and heading used to anchor decoding.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct RootPose {
    pub x: f64,
    pub z: f64,
    /// Heading angle: the facing direction is `(cos yaw, 0, sin yaw)`.
    pub yaw: f64,
}

impl MotionClip {
    pub fn new(id: impl Into<String>, label: usize, positions: Array3<f64>) -> Result<Self> {
        let (f, j, c) = positions.dim();
        if f == 0 || j != NUM_JOINTS || c != 3 {
            return Err(Error::Shape(format!(
                "clip positions must be F x {NUM_JOINTS} x 3 with F >= 1, got {f} x {j} x {c}"
            )));
        }
        if let Some(idx) = positions.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "clip coordinate {idx} is not finite"
            )));
        }
        Ok(Self {
            id: id.into(),
            label,
            positions,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.positions.dim().0
    }

    pub fn positions(&self) -> &Array3<f64> {
        &self.positions
    }

    pub fn into_positions(self) -> Array3<f64> {
        self.positions
    }

    pub fn joint(&self, frame: usize, joint: usize) -> Vector3<f64> {
        let p = self.positions.slice(s![frame, joint, ..]);
        Vector3::new(p[0], p[1], p[2])
    }

    /// Root ground position and heading at `frame`.
    pub fn root_pose(&self, frame: usize, skeleton: &Skeleton) -> Result<RootPose> {
        let root = self.joint(frame, 0);
        let yaw = facing_yaw(self, frame, skeleton)?;
        Ok(RootPose {
            x: root.x,
            z: root.z,
            yaw,
        })
    }

    /// The first `len` frames, padded by repeating the last frame.
    pub fn leading_window(&self, len: usize) -> Self {
        let f = self.num_frames();
        let positions = if f >= len {
            self.positions.slice(s![..len, .., ..]).to_owned()
        } else {
            let mut p = Array3::zeros((len, NUM_JOINTS, 3));
            p.slice_mut(s![..f, .., ..]).assign(&self.positions);
            for t in f..len {
                p.slice_mut(s![t, .., ..])
                    .assign(&self.positions.slice(s![f - 1, .., ..]));
            }
            p
        };
        Self {
            id: self.id.clone(),
            label: self.label,
            positions,
        }
    }

    /// Frames `start..end` as a new clip with the same id and label.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Self> {
        Self::new(
            self.id.clone(),
            self.label,
            self.positions.slice(s![start..end, .., ..]).to_owned(),
        )
    }
}
