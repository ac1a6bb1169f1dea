use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 22;

/// 22-joint SMPL-style kinematic tree, y up, rest pose facing +z.
///
/// Joint order: pelvis, l_hip, r_hip, spine1, l_knee, r_knee, spine2,
/// l_ankle, r_ankle, spine3, l_foot, r_foot, neck, l_collar, r_collar, head,
/// l_shoulder, r_shoulder, l_elbow, r_elbow, l_wrist, r_wrist.
const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(0),
    Some(0),
    Some(0),
    Some(1),
    Some(2),
    Some(3),
    Some(4),
    Some(5),
    Some(6),
    Some(7),
    Some(8),
    Some(9),
    Some(9),
    Some(9),
    Some(12),
    Some(13),
    Some(14),
    Some(16),
    Some(17),
    Some(18),
    Some(19),
];

const OFFSETS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.06, -0.09, 0.0],
    [-0.06, -0.09, 0.0],
    [0.0, 0.11, -0.02],
    [0.04, -0.38, 0.0],
    [-0.04, -0.38, 0.0],
    [0.0, 0.13, 0.0],
    [-0.01, -0.40, -0.04],
    [0.01, -0.40, -0.04],
    [0.0, 0.05, 0.02],
    [0.04, -0.06, 0.12],
    [-0.04, -0.06, 0.12],
    [0.0, 0.21, -0.03],
    [0.08, 0.11, -0.01],
    [-0.08, 0.11, -0.01],
    [0.0, 0.09, 0.05],
    [0.12, 0.04, -0.01],
    [-0.12, 0.04, -0.01],
    [0.26, 0.0, -0.02],
    [-0.26, 0.0, -0.02],
    [0.25, 0.0, 0.0],
    [-0.25, 0.0, 0.0],
];

pub const PELVIS: usize = 0;
pub const L_HIP: usize = 1;
pub const R_HIP: usize = 2;
pub const SPINE1: usize = 3;
pub const L_KNEE: usize = 4;
pub const R_KNEE: usize = 5;
pub const SPINE2: usize = 6;
pub const SPINE3: usize = 9;
pub const NECK: usize = 12;
pub const L_SHOULDER: usize = 16;
pub const R_SHOULDER: usize = 17;
pub const L_ELBOW: usize = 18;
pub const R_ELBOW: usize = 19;

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    parents: [Option<usize>; NUM_JOINTS],
    offsets: [Vector3<f64>; NUM_JOINTS],
    /// Left ankle, left foot, right ankle, right foot.
    foot_joints: [usize; 4],
    /// Right hip, left hip, right shoulder, left shoulder.
    face_joints: [usize; 4],
    rest_root_height: f64,
}

impl Default for Skeleton {
    fn default() -> Self {
        Self::smpl22()
    }
}

impl Skeleton {
    pub fn smpl22() -> Self {
        let offsets = OFFSETS.map(|o| Vector3::new(o[0], o[1], o[2]));
        let skeleton = Self {
            parents: PARENTS,
            offsets,
            foot_joints: [7, 10, 8, 11],
            face_joints: [R_HIP, L_HIP, R_SHOULDER, L_SHOULDER],
            rest_root_height: 0.93,
        };
        skeleton
            .validate()
            .expect("built-in skeleton must be valid");
        skeleton
    }

    /// Checks the single-rooted tree and positive bone lengths.
    pub fn validate(&self) -> Result<()> {
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(Error::Data(format!("skeleton has {roots} roots")));
        }
        for j in 0..NUM_JOINTS {
            let mut cur = j;
            let mut hops = 0;
            while let Some(p) = self.parents[cur] {
                if p >= NUM_JOINTS {
                    return Err(Error::Data(format!("joint {cur} has invalid parent {p}")));
                }
                cur = p;
                hops += 1;
                if hops > NUM_JOINTS {
                    return Err(Error::Data(format!("cycle through joint {j}")));
                }
            }
            if self.parents[j].is_some() && self.offsets[j].norm() <= 0.0 {
                return Err(Error::Data(format!("joint {j} has a zero-length bone")));
            }
        }
        Ok(())
    }

    pub fn joint_count(&self) -> usize {
        NUM_JOINTS
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn parents(&self) -> &[Option<usize>; NUM_JOINTS] {
        &self.parents
    }

    pub fn offset(&self, joint: usize) -> Vector3<f64> {
        self.offsets[joint]
    }

    pub fn foot_joints(&self) -> [usize; 4] {
        self.foot_joints
    }

    pub fn face_joints(&self) -> [usize; 4] {
        self.face_joints
    }

    pub fn rest_root_height(&self) -> f64 {
        self.rest_root_height
    }

    /// Undirected bone list `(parent, child)`.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        (0..NUM_JOINTS)
            .filter_map(|j| self.parents[j].map(|p| (p, j)))
            .collect()
    }
}
