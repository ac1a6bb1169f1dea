use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skelforge::motion::{generate_toy_dataset, MotionClip, Skeleton, NUM_JOINTS};
use skelforge::recognizer::*;
use skelforge::Result;

fn tiny(k: usize) -> RecognizerConfig {
    RecognizerConfig {
        channels: vec![8, 8],
        epochs: 2,
        window: 16,
        batch_size: 4,
        ..RecognizerConfig::desk(k)
    }
}

#[test]
fn adjacency_rows_sum_to_one_with_symmetric_pattern() {
    let a = normalized_adjacency(&Skeleton::smpl22());
    for row in a.outer_iter() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
    }
    for i in 0..NUM_JOINTS {
        assert!(a[[i, i]] > 0.0);
        for j in 0..NUM_JOINTS {
            assert_eq!(a[[i, j]] > 0.0, a[[j, i]] > 0.0);
        }
    }
}

#[test]
fn canonicalization_ignores_ground_translation_and_yaw() {
    let ds = generate_toy_dataset(2, 1, 20, 5).unwrap();
    let clip = &ds.clips[0];
    let skel = Skeleton::smpl22();
    let base = canonicalize(clip, &skel).unwrap();
    let moved = rotate_clip(clip, 1.1);
    let mut p = moved.positions().clone();
    p.index_axis_mut(Axis(2), 0).mapv_inplace(|v| v + 3.0);
    p.index_axis_mut(Axis(2), 2).mapv_inplace(|v| v - 2.0);
    let moved = MotionClip::new("m", clip.label, p).unwrap();
    let other = canonicalize(&moved, &skel).unwrap();
    let d = (&base - &other).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
    assert!(d < 1e-9, "max deviation {d}");
}

#[test]
fn augmentations_preserve_labels_and_shape() {
    let ds = generate_toy_dataset(2, 1, 20, 6).unwrap();
    let clip = &ds.clips[1];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for name in ["none", "gaussian_noise", "scaling", "rotating", "synthetic"] {
        let policy = AugPolicy::from_name(name).unwrap();
        assert_eq!(policy.name(), name);
        let out = classical_augment(clip, &policy, &mut rng);
        assert_eq!(out.label, clip.label);
        assert_eq!(out.positions().dim(), clip.positions().dim());
        if !policy.is_classical() {
            assert_eq!(out.positions(), clip.positions());
        }
    }
    assert!(AugPolicy::from_name("mixup").is_err());
    assert!(AugPolicy::Scaling { min: 1.2, max: 1.1 }.validate().is_err());
    assert!(AugPolicy::GaussianNoise { sigma: -1.0 }.validate().is_err());
}

#[test]
fn scaling_and_rotation_keep_the_pivot() {
    let ds = generate_toy_dataset(2, 1, 10, 7).unwrap();
    let clip = &ds.clips[0];
    let r = clip.joint(0, 0);
    let s = scale_clip(clip, 1.5);
    assert!((s.joint(0, 0).x - r.x).abs() < 1e-12);
    assert!((s.joint(0, 0).z - r.z).abs() < 1e-12);
    assert!((s.joint(0, 0).y - 1.5 * r.y).abs() < 1e-12);
    let q = rotate_clip(clip, 0.7);
    for t in 0..clip.num_frames() {
        for j in 0..NUM_JOINTS {
            assert!((q.joint(t, j).y - clip.joint(t, j).y).abs() < 1e-12);
            let a = clip.joint(t, j) - r;
            let b = q.joint(t, j) - r;
            assert!((a.x.hypot(a.z) - b.x.hypot(b.z)).abs() < 1e-9);
        }
    }
}

#[test]
fn training_rejects_missing_classes_and_bad_labels() {
    let ds = generate_toy_dataset(3, 2, 20, 8).unwrap();
    let two: Vec<MotionClip> = ds.clips.iter().filter(|c| c.label < 2).cloned().collect();
    let err = train_recognizer(&two, tiny(3), &AugPolicy::None, |_| {}).unwrap_err();
    assert!(err.to_string().contains("[2]"), "{err}");
    assert!(train_recognizer(&ds.clips, tiny(2), &AugPolicy::None, |_| {}).is_err());
}

#[test]
fn untrained_recognizer_refuses_to_embed() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let r = Recognizer::init(tiny(2), &mut rng).unwrap();
    let ds = generate_toy_dataset(2, 1, 20, 9).unwrap();
    let refs: Vec<&MotionClip> = ds.clips.iter().collect();
    assert!(r.embed(&refs).is_err());
    assert!(r.predict(&refs).is_err());
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let ds = generate_toy_dataset(2, 3, 20, 10).unwrap();
    let mut epochs = Vec::new();
    let a = train_recognizer(&ds.clips, tiny(2), &AugPolicy::scaling(), |e| epochs.push(e.clone())).unwrap();
    let b = train_recognizer(&ds.clips, tiny(2), &AugPolicy::scaling(), |_| {}).unwrap();
    assert_eq!(epochs.len(), 2);
    let refs: Vec<&MotionClip> = ds.clips.iter().collect();
    let ea = a.embed(&refs).unwrap();
    assert_eq!(ea, b.embed(&refs).unwrap());
    assert_eq!(ea.dim(), (6, 8));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.skdf");
    a.save(&path).unwrap();
    let back = Recognizer::load(&path).unwrap();
    assert!(back.is_trained());
    assert_eq!(back.config(), a.config());
    let eb = back.embed(&refs).unwrap();
    assert!(ea.iter().zip(&eb).all(|(x, y)| x.to_bits() == y.to_bits()));
}

struct Fixed(Vec<usize>);

impl Classifier for Fixed {
    fn num_classes(&self) -> usize {
        3
    }

    fn predict(&self, clips: &[&MotionClip]) -> Result<Vec<usize>> {
        Ok(self.0[..clips.len()].to_vec())
    }
}

#[test]
fn evaluation_builds_confusion_matrix() {
    let ds = generate_toy_dataset(3, 2, 10, 11).unwrap();
    let truth: Vec<usize> = ds.clips.iter().map(|c| c.label).collect();
    let mut predicted = truth.clone();
    predicted[0] = (truth[0] + 1) % 3;
    let e = evaluate(&Fixed(predicted), &ds.clips).unwrap();
    assert!((e.accuracy - 5.0 / 6.0).abs() < 1e-12);
    assert_eq!(e.confusion.iter().flatten().sum::<usize>(), 6);
    assert_eq!(e.confusion[truth[0]][(truth[0] + 1) % 3], 1);
    assert_eq!(e.per_class_accuracy[truth[0]], Some(0.5));
    assert!(evaluate(&Fixed(vec![]), &[]).is_err());
}
