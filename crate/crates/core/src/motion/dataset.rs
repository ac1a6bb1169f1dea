//! On-disk dataset directories and stratified splitting.
//!
//! A dataset directory holds `manifest.json` plus one `.f32` file per clip:
//! raw little-endian `f32`, row-major `[frames][22][3]`. Feature caches use the
//! same container with rows of 263.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::clip::MotionClip;
use super::features::{encode_features, MotionFeatures, FEATURE_WIDTH};
use super::skeleton::{Skeleton, NUM_JOINTS};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CACHE_ENV: &str = "SKELFORGE_CACHE";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub id: String,
    pub label: usize,
    pub num_frames: usize,
    /// Relative to the dataset directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub clips: Vec<ClipEntry>,
}

/// Manifest plus the clips it describes, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub clips: Vec<MotionClip>,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, clips: Vec<MotionClip>) -> Result<Self> {
        if manifest.clips.len() != clips.len() {
            return Err(Error::Data(format!(
                "manifest lists {} clips but {} were supplied",
                manifest.clips.len(),
                clips.len()
            )));
        }
        if manifest.class_names.len() != manifest.num_classes {
            return Err(Error::Data(format!(
                "{} class names for {} classes",
                manifest.class_names.len(),
                manifest.num_classes
            )));
        }
        for (entry, clip) in manifest.clips.iter().zip(&clips) {
            if entry.label >= manifest.num_classes || clip.label != entry.label {
                return Err(Error::LabelOutOfRange {
                    label: entry.label.max(clip.label),
                    num_classes: manifest.num_classes,
                });
            }
            if entry.num_frames != clip.num_frames() || entry.id != clip.id {
                return Err(Error::Data(format!(
                    "manifest entry {} disagrees with its clip",
                    entry.id
                )));
            }
        }
        Ok(Self { manifest, clips })
    }

    /// Builds a manifest from clips, naming files after clip ids.
    pub fn from_clips(
        num_classes: usize,
        class_names: Vec<String>,
        clips: Vec<MotionClip>,
    ) -> Result<Self> {
        let entries = clips
            .iter()
            .map(|c| ClipEntry {
                id: c.id.clone(),
                label: c.label,
                num_frames: c.num_frames(),
                path: format!("{}.f32", c.id),
            })
            .collect();
        Self::new(
            DatasetManifest {
                num_classes,
                class_names,
                clips: entries,
            },
            clips,
        )
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clips.iter().map(|c| c.label).collect()
    }

    /// The clips at `indices`, keeping class metadata.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let manifest = DatasetManifest {
            num_classes: self.manifest.num_classes,
            class_names: self.manifest.class_names.clone(),
            clips: indices.iter().map(|&i| self.manifest.clips[i].clone()).collect(),
        };
        let clips = indices.iter().map(|&i| self.clips[i].clone()).collect();
        Self { manifest, clips }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        for (entry, clip) in self.manifest.clips.iter().zip(&self.clips) {
            let flat = clip
                .positions()
                .as_standard_layout()
                .iter()
                .copied()
                .collect::<Vec<_>>();
            write_f32(&dir.join(&entry.path), &flat)?;
        }
        let json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| Error::json("dataset manifest", e))?;
        write_bytes(&dir.join(MANIFEST_FILE), json.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&manifest_path)
            .map_err(|e| Error::io(format!("reading {}", manifest_path.display()), e))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::json(manifest_path.display().to_string(), e))?;
        let mut clips = Vec::with_capacity(manifest.clips.len());
        for entry in &manifest.clips {
            let path = dir.join(&entry.path);
            let data = read_f32(&path)?;
            let expected = entry.num_frames * NUM_JOINTS * 3;
            if data.len() != expected {
                return Err(Error::Data(format!(
                    "{}: expected {expected} floats ({} frames), found {}",
                    path.display(),
                    entry.num_frames,
                    data.len()
                )));
            }
            let positions = Array3::from_shape_vec((entry.num_frames, NUM_JOINTS, 3), data)
                .map_err(|e| Error::Shape(e.to_string()))?;
            clips.push(MotionClip::new(entry.id.clone(), entry.label, positions)?);
        }
        Self::new(manifest, clips)
    }

    /// Content digest over the manifest and every clip's coordinates.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.manifest).unwrap_or_default());
        for clip in &self.clips {
            for v in clip.positions().iter() {
                h.update((*v as f32).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    f.write_all(bytes)
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Writes values as little-endian `f32`.
pub fn write_f32(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    write_bytes(path, &bytes)
}

pub fn read_f32(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Data(format!(
            "{}: length {} is not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write_features(path: &Path, features: &Array2<f64>) -> Result<()> {
    let flat: Vec<f64> = features.as_standard_layout().iter().copied().collect();
    write_f32(path, &flat)
}

pub fn read_features(path: &Path) -> Result<Array2<f64>> {
    let data = read_f32(path)?;
    if data.len() % FEATURE_WIDTH != 0 {
        return Err(Error::Data(format!(
            "{}: {} floats is not a multiple of {FEATURE_WIDTH}",
            path.display(),
            data.len()
        )));
    }
    Array2::from_shape_vec((data.len() / FEATURE_WIDTH, FEATURE_WIDTH), data)
        .map_err(|e| Error::Shape(e.to_string()))
}

/// Content-addressed feature cache, by default rooted at `$SKELFORGE_CACHE`.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    root: Option<PathBuf>,
}

impl FeatureCache {
    pub fn from_env() -> Self {
        Self {
            root: std::env::var_os(CACHE_ENV).map(PathBuf::from),
        }
    }

    pub fn at(root: impl Into<PathBuf>) -> Self {
        Self {
            root: Some(root.into()),
        }
    }

    pub fn disabled() -> Self {
        Self { root: None }
    }

    fn key(clip: &MotionClip) -> String {
        let mut h = Sha256::new();
        for v in clip.positions().iter() {
            h.update((*v as f32).to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Cached features when present, otherwise encodes (and stores) them.
    /// Cached values round through `f32`.
    pub fn features(&self, clip: &MotionClip, skeleton: &Skeleton) -> Result<MotionFeatures> {
        let Some(root) = &self.root else {
            return encode_features(clip, skeleton);
        };
        let path = root.join(format!("{}.f32", Self::key(clip)));
        if path.exists() {
            let values = read_features(&path)?;
            if values.nrows() + 1 == clip.num_frames() {
                return MotionFeatures::new(values);
            }
        }
        let features = encode_features(clip, skeleton)?;
        write_features(&path, features.values())?;
        Ok(features)
    }
}

/// Result of [`split_fraction`]: clip indices into the source dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub subset: Vec<usize>,
    pub remainder: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Stratified sampling: every class keeps `ceil(fraction × class size)` clips.
pub fn split_fraction(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut subset = Vec::new();
    let mut remainder = Vec::new();
    let mut warnings = Vec::new();
    for class in 0..manifest.num_classes {
        let mut members: Vec<usize> = manifest
            .clips
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label == class)
            .map(|(i, _)| i)
            .collect();
        // Guard against 0.3 * 10 = 3.0000000000000004 rounding up.
        let keep = ((fraction * members.len() as f64) - 1e-9).ceil().max(0.0) as usize;
        let keep = keep.min(members.len());
        if keep == 0 {
            warnings.push(format!("class {class} has no clips after the split"));
        }
        members.shuffle(&mut rng);
        subset.extend_from_slice(&members[..keep]);
        remainder.extend_from_slice(&members[keep..]);
    }
    subset.sort_unstable();
    remainder.sort_unstable();
    Ok(Split {
        subset,
        remainder,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::toy::generate_toy_dataset;

    #[test]
    fn full_fraction_keeps_everything() {
        let ds = generate_toy_dataset(3, 4, 10, 1).unwrap();
        let s = split_fraction(&ds.manifest, 1.0, 0).unwrap();
        assert_eq!(s.subset, (0..12).collect::<Vec<_>>());
        assert!(s.remainder.is_empty());
    }

    #[test]
    fn half_of_ten_is_five_per_class() {
        let ds = generate_toy_dataset(3, 10, 10, 1).unwrap();
        let s = split_fraction(&ds.manifest, 0.5, 7).unwrap();
        for class in 0..3 {
            let n = s.subset.iter().filter(|&&i| ds.clips[i].label == class).count();
            assert_eq!(n, 5);
        }
    }

    #[test]
    fn split_partitions_and_is_deterministic() {
        let ds = generate_toy_dataset(4, 7, 10, 3).unwrap();
        let a = split_fraction(&ds.manifest, 0.3, 11).unwrap();
        let b = split_fraction(&ds.manifest, 0.3, 11).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.subset.iter().chain(&a.remainder).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..28).collect::<Vec<_>>());
        assert!(a.subset.iter().all(|i| !a.remainder.contains(i)));
    }

    #[test]
    fn empty_class_is_a_warning() {
        let ds = generate_toy_dataset(3, 2, 10, 3).unwrap();
        let mut m = ds.manifest.clone();
        m.num_classes = 4;
        m.class_names.push("missing".into());
        let s = split_fraction(&m, 0.5, 0).unwrap();
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn bad_fraction_rejected() {
        let ds = generate_toy_dataset(2, 2, 10, 3).unwrap();
        assert!(split_fraction(&ds.manifest, 0.0, 0).is_err());
        assert!(split_fraction(&ds.manifest, 1.5, 0).is_err());
    }
}
