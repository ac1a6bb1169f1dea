use nalgebra::{Rotation3, Vector3};
use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::{MotionClip, NUM_JOINTS};

/// Training-set augmentation strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugPolicy {
    None,
    /// i.i.d. noise on every coordinate, `sigma` in meters.
    GaussianNoise { sigma: f64 },
    /// Uniform scale factor about the first frame's root ground point.
    Scaling { min: f64, max: f64 },
    /// Uniform yaw in `[-max_yaw, max_yaw]` about the vertical axis through
    /// the first frame's root.
    Rotating { max_yaw: f64 },
    /// Adds `multiplier` generated clips per real clip.
    Synthetic { multiplier: usize },
}

impl AugPolicy {
    pub fn gaussian_noise() -> Self {
        Self::GaussianNoise { sigma: 0.01 }
    }

    pub fn scaling() -> Self {
        Self::Scaling { min: 0.9, max: 1.1 }
    }

    pub fn rotating() -> Self {
        Self::Rotating {
            max_yaw: std::f64::consts::PI,
        }
    }

    pub fn synthetic() -> Self {
        Self::Synthetic { multiplier: 5 }
    }

    /// Parses the CLI names `none`, `gaussian_noise`, `scaling`, `rotating`
    /// and `synthetic` into default-parameter policies.
    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim() {
            "none" => Ok(Self::None),
            "gaussian_noise" | "noise" => Ok(Self::gaussian_noise()),
            "scaling" => Ok(Self::scaling()),
            "rotating" | "rotation" => Ok(Self::rotating()),
            "synthetic" => Ok(Self::synthetic()),
            other => Err(Error::InvalidArgument(format!("unknown augmentation policy `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::GaussianNoise { .. } => "gaussian_noise",
            Self::Scaling { .. } => "scaling",
            Self::Rotating { .. } => "rotating",
            Self::Synthetic { .. } => "synthetic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::None => true,
            Self::GaussianNoise { sigma } => sigma >= 0.0 && sigma.is_finite(),
            Self::Scaling { min, max } => min > 0.0 && min <= max && max.is_finite(),
            Self::Rotating { max_yaw } => max_yaw >= 0.0 && max_yaw.is_finite(),
            Self::Synthetic { multiplier } => multiplier >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid augmentation parameters {self:?}")))
        }
    }

    pub fn is_classical(&self) -> bool {
        matches!(
            self,
            Self::GaussianNoise { .. } | Self::Scaling { .. } | Self::Rotating { .. }
        )
    }
}

fn map_points(clip: &MotionClip, f: impl Fn(Vector3<f64>) -> Vector3<f64>) -> MotionClip {
    let frames = clip.num_frames();
    let mut out = Array3::zeros((frames, NUM_JOINTS, 3));
    for t in 0..frames {
        for j in 0..NUM_JOINTS {
            let p = f(clip.joint(t, j));
            out[[t, j, 0]] = p.x;
            out[[t, j, 1]] = p.y;
            out[[t, j, 2]] = p.z;
        }
    }
    MotionClip::new(clip.id.clone(), clip.label, out).expect("finite transform of a finite clip")
}

/// Uniform scaling about the first frame's root ground point.
pub fn scale_clip(clip: &MotionClip, factor: f64) -> MotionClip {
    let r = clip.joint(0, 0);
    let pivot = Vector3::new(r.x, 0.0, r.z);
    map_points(clip, |p| pivot + (p - pivot) * factor)
}

/// Rotation by `yaw` about the vertical axis through the first frame's root.
pub fn rotate_clip(clip: &MotionClip, yaw: f64) -> MotionClip {
    let r = clip.joint(0, 0);
    let pivot = Vector3::new(r.x, 0.0, r.z);
    let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
    map_points(clip, |p| pivot + rot * (p - pivot))
}

/// Applies one random draw of a classical policy. Other policies return the
/// clip unchanged.
pub fn classical_augment<R: Rng + ?Sized>(clip: &MotionClip, policy: &AugPolicy, rng: &mut R) -> MotionClip {
    match *policy {
        AugPolicy::GaussianNoise { sigma } if sigma > 0.0 => {
            let normal = Normal::new(0.0, sigma).expect("validated sigma");
            let mut p = clip.positions().clone();
            p.mapv_inplace(|v| v + normal.sample(rng));
            MotionClip::new(clip.id.clone(), clip.label, p).expect("finite")
        }
        AugPolicy::Scaling { min, max } => {
            let factor = if max > min { rng.random_range(min..=max) } else { min };
            scale_clip(clip, factor)
        }
        AugPolicy::Rotating { max_yaw } if max_yaw > 0.0 => {
            rotate_clip(clip, rng.random_range(-max_yaw..=max_yaw))
        }
        _ => clip.clone(),
    }
}
