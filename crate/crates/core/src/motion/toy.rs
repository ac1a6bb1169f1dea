//! Procedural motion generator standing in for captured datasets.
//!
//! Every clip shares nuisance motion (random heading, walking speed, turn
//! rate, gait and arm swing) and carries one class gesture at high amplitude
//! plus a gesture from another class at lower amplitude. Classes are
//! separable by which gesture dominates, but a handful of examples per class
//! does not pin the decision down.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::clip::MotionClip;
use super::dataset::{ClipEntry, Dataset, DatasetManifest};
use super::skeleton::*;
use crate::error::{Error, Result};

/// Shortest raw clip accepted by the generator and loaders.
pub const MIN_RAW_FRAMES: usize = 8;

const FAMILIES: [&str; 5] = ["wave_right", "wave_left", "squat", "bow", "kick"];

#[derive(Debug, Clone, Copy)]
struct Gesture {
    family: usize,
    amplitude: f64,
    omega: f64,
    phase: f64,
}

#[derive(Debug, Clone)]
struct ClipParams {
    heading: f64,
    start: (f64, f64),
    speed: f64,
    turn: f64,
    gait_omega: f64,
    gait_phase: f64,
    arm_swing: f64,
    main: Gesture,
    distractor: Gesture,
}

fn rx(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a)
}

fn rz(a: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a)
}

fn family_omega(class: usize) -> f64 {
    let variant = class / FAMILIES.len();
    2.0 * PI / 40.0 * (1.0 + 0.4 * variant as f64)
}

pub fn class_name(class: usize) -> String {
    let family = FAMILIES[class % FAMILIES.len()];
    match class / FAMILIES.len() {
        0 => family.to_string(),
        v => format!("{family}_v{v}"),
    }
}

/// Local joint rotations for one frame.
fn local_rotations(p: &ClipParams, t: f64) -> [Rotation3<f64>; NUM_JOINTS] {
    let mut local = [Rotation3::identity(); NUM_JOINTS];
    // Gait: alternating hip flexion with knee bend on the swing leg.
    let amp = 0.12 + 6.0 * p.speed;
    let g = (p.gait_omega * t + p.gait_phase).sin();
    let mut hip = [amp * g, -amp * g];
    let mut knee = [amp * (g.max(0.0)) * 1.2, amp * ((-g).max(0.0)) * 1.2];
    // Arms hang by the sides and swing against the legs.
    let mut abduct = [-1.3, 1.3];
    let swing = p.arm_swing * g;
    let mut elbow = [0.0, 0.0];
    let mut spine = 0.0;

    for gesture in [&p.main, &p.distractor] {
        let a = gesture.amplitude;
        let s = (gesture.omega * t + gesture.phase).sin();
        let bump = 0.5 * (1.0 - (gesture.omega * t + gesture.phase).cos());
        match gesture.family {
            0 => {
                abduct[1] -= a * (2.3 + 0.2 * s);
                elbow[1] += a * 0.7 * s;
            }
            1 => {
                abduct[0] += a * (2.3 + 0.2 * s);
                elbow[0] += a * 0.7 * s;
            }
            2 => {
                for side in 0..2 {
                    hip[side] += a * 1.1 * bump;
                    knee[side] += a * 2.0 * bump;
                }
            }
            3 => spine += a * 0.8 * bump,
            _ => {
                let kick = a * 1.3 * s.max(0.0).powi(2);
                hip[1] += kick;
                knee[1] += 0.4 * kick;
            }
        }
    }

    local[PELVIS] = Rotation3::identity();
    local[L_HIP] = rx(-hip[0]);
    local[R_HIP] = rx(-hip[1]);
    local[L_KNEE] = rx(knee[0]);
    local[R_KNEE] = rx(knee[1]);
    local[SPINE1] = rx(spine * 0.5);
    local[SPINE2] = rx(spine * 0.3);
    local[SPINE3] = rx(spine * 0.2);
    local[NECK] = rx(0.1 * spine);
    local[L_SHOULDER] = rx(-swing) * rz(abduct[0]);
    local[R_SHOULDER] = rx(swing) * rz(abduct[1]);
    local[L_ELBOW] = rz(elbow[0]);
    local[R_ELBOW] = rz(-elbow[1]);
    local
}

/// Forward kinematics. `heading` is the facing angle: the body's +z axis maps
/// to `(cos heading, 0, sin heading)`.
fn forward_kinematics(
    skeleton: &Skeleton,
    root: Vector3<f64>,
    heading: f64,
    local: &[Rotation3<f64>; NUM_JOINTS],
) -> [Vector3<f64>; NUM_JOINTS] {
    let yaw = Rotation3::from_axis_angle(&Vector3::y_axis(), -(heading - PI / 2.0));
    let mut global = [Rotation3::identity(); NUM_JOINTS];
    let mut pos = [Vector3::zeros(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        match skeleton.parent(j) {
            None => {
                global[j] = yaw * local[j];
                pos[j] = root;
            }
            Some(p) => {
                pos[j] = pos[p] + global[p] * skeleton.offset(j);
                global[j] = global[p] * local[j];
            }
        }
    }
    pos
}

fn render(skeleton: &Skeleton, p: &ClipParams, frames: usize) -> Array3<f64> {
    let mut out = Array3::zeros((frames, NUM_JOINTS, 3));
    let feet = skeleton.foot_joints();
    let mut heading = p.heading;
    let (mut x, mut z) = p.start;
    for f in 0..frames {
        let t = f as f64;
        let local = local_rotations(p, t);
        let mut pos = forward_kinematics(
            skeleton,
            Vector3::new(x, skeleton.rest_root_height(), z),
            heading,
            &local,
        );
        // Keep the lowest foot joint on the ground.
        let lowest = feet
            .iter()
            .map(|&j| pos[j].y)
            .fold(f64::INFINITY, f64::min);
        for (j, q) in pos.iter_mut().enumerate() {
            q.y -= lowest;
            out[[f, j, 0]] = q.x;
            out[[f, j, 1]] = q.y;
            out[[f, j, 2]] = q.z;
        }
        heading += p.turn;
        x += p.speed * heading.cos();
        z += p.speed * heading.sin();
    }
    out
}

fn sample_params(class: usize, num_classes: usize, rng: &mut ChaCha8Rng) -> ClipParams {
    let gesture = |class: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng| Gesture {
        family: class % FAMILIES.len(),
        amplitude: rng.random_range(lo..hi),
        omega: family_omega(class) * rng.random_range(0.9..1.1),
        phase: rng.random_range(0.0..2.0 * PI),
    };
    let main = gesture(class, 0.55, 1.0, rng);
    let mut other = rng.random_range(0..num_classes - 1);
    if other >= class {
        other += 1;
    }
    let distractor = gesture(other, 0.0, 0.45, rng);
    ClipParams {
        heading: rng.random_range(-PI..PI),
        start: (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
        speed: rng.random_range(0.0..0.025),
        turn: rng.random_range(-0.015..0.015),
        gait_omega: 2.0 * PI * rng.random_range(0.025..0.04),
        gait_phase: rng.random_range(0.0..2.0 * PI),
        arm_swing: rng.random_range(0.05..0.35),
        main,
        distractor,
    }
}

/// Deterministic procedural dataset: `num_classes × clips_per_class` clips of
/// `frames` frames each.
pub fn generate_toy_dataset(
    num_classes: usize,
    clips_per_class: usize,
    frames: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "toy dataset needs at least 2 classes, got {num_classes}"
        )));
    }
    if clips_per_class == 0 {
        return Err(Error::InvalidArgument(
            "clips_per_class = 0 would leave every class empty".into(),
        ));
    }
    if frames < MIN_RAW_FRAMES {
        return Err(Error::InvalidArgument(format!(
            "clips need at least {MIN_RAW_FRAMES} frames, got {frames}"
        )));
    }
    let skeleton = Skeleton::smpl22();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clips = Vec::with_capacity(num_classes * clips_per_class);
    let mut entries = Vec::with_capacity(num_classes * clips_per_class);
    for class in 0..num_classes {
        for i in 0..clips_per_class {
            let params = sample_params(class, num_classes, &mut rng);
            let id = format!("c{class:02}_{i:04}");
            let clip = MotionClip::new(id.clone(), class, render(&skeleton, &params, frames))?;
            entries.push(ClipEntry {
                path: format!("{id}.f32"),
                id,
                label: class,
                num_frames: frames,
            });
            clips.push(clip);
        }
    }
    let manifest = DatasetManifest {
        num_classes,
        class_names: (0..num_classes).map(class_name).collect(),
        clips: entries,
    };
    Dataset::new(manifest, clips)
}

/// A motionless rest-pose clip facing +z with the root at `height`.
pub fn rest_pose_clip(frames: usize, height: f64) -> MotionClip {
    let skeleton = Skeleton::smpl22();
    let local = [Rotation3::identity(); NUM_JOINTS];
    let pos = forward_kinematics(&skeleton, Vector3::new(0.0, height, 0.0), PI / 2.0, &local);
    let mut out = Array3::zeros((frames, NUM_JOINTS, 3));
    for f in 0..frames {
        for (j, q) in pos.iter().enumerate() {
            out[[f, j, 0]] = q.x;
            out[[f, j, 1]] = q.y;
            out[[f, j, 2]] = q.z;
        }
    }
    MotionClip::new("rest", 0, out).expect("rest pose is finite")
}

/// Rest pose translated by `step` per frame along a fixed heading.
pub fn translating_clip(frames: usize, heading: f64, step: f64) -> MotionClip {
    let skeleton = Skeleton::smpl22();
    let local = [Rotation3::identity(); NUM_JOINTS];
    let mut out = Array3::zeros((frames, NUM_JOINTS, 3));
    for f in 0..frames {
        let d = step * f as f64;
        let root = Vector3::new(d * heading.cos(), 0.9, d * heading.sin());
        let pos = forward_kinematics(&skeleton, root, heading, &local);
        for (j, q) in pos.iter().enumerate() {
            out[[f, j, 0]] = q.x;
            out[[f, j, 1]] = q.y;
            out[[f, j, 2]] = q.z;
        }
    }
    MotionClip::new("translate", 0, out).expect("finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::features::facing_yaw;

    #[test]
    fn forward_kinematics_heading_matches_facing() {
        let clip = translating_clip(3, 0.7, 0.01);
        let yaw = facing_yaw(&clip, 1, &Skeleton::smpl22()).unwrap();
        assert!((yaw - 0.7).abs() < 1e-12, "{yaw}");
    }

    #[test]
    fn degenerate_inputs_rejected() {
        assert!(generate_toy_dataset(1, 5, 32, 0).is_err());
        assert!(generate_toy_dataset(3, 0, 32, 0).is_err());
        assert!(generate_toy_dataset(3, 2, 4, 0).is_err());
    }

    #[test]
    fn feet_touch_the_ground() {
        let ds = generate_toy_dataset(3, 2, 20, 5).unwrap();
        let feet = Skeleton::smpl22().foot_joints();
        for clip in &ds.clips {
            for f in 0..clip.num_frames() {
                let low = feet
                    .iter()
                    .map(|&j| clip.joint(f, j).y)
                    .fold(f64::INFINITY, f64::min);
                assert!(low.abs() < 1e-12);
            }
        }
    }
}
