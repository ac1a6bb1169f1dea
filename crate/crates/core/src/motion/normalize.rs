use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::features::FEATURE_WIDTH;
use crate::error::{Error, Result};

/// Floor applied to per-channel standard deviations.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl NormalizationStats {
    /// Pools every frame of every clip.
    pub fn fit<'a, I>(features: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Array2<f64>>,
    {
        let mut sum = Array1::<f64>::zeros(FEATURE_WIDTH);
        let mut count = 0usize;
        let all: Vec<&Array2<f64>> = features.into_iter().collect();
        for f in &all {
            if f.ncols() != FEATURE_WIDTH {
                return Err(Error::Shape(format!("expected width {FEATURE_WIDTH}")));
            }
            sum += &f.sum_axis(Axis(0));
            count += f.nrows();
        }
        if count == 0 {
            return Err(Error::InvalidArgument(
                "normalization needs at least one frame".into(),
            ));
        }
        let mean = sum / count as f64;
        let mut sq = Array1::<f64>::zeros(FEATURE_WIDTH);
        for f in &all {
            for row in f.outer_iter() {
                let d = &row - &mean;
                sq += &(&d * &d);
            }
        }
        let std = (sq / count as f64).mapv(|v| v.sqrt().max(STD_FLOOR));
        Ok(Self { mean, std })
    }

    pub fn identity() -> Self {
        Self {
            mean: Array1::zeros(FEATURE_WIDTH),
            std: Array1::ones(FEATURE_WIDTH),
        }
    }

    pub fn normalize(&self, features: &Array2<f64>) -> Array2<f64> {
        (features - &self.mean) / &self.std
    }

    pub fn denormalize(&self, normalized: &Array2<f64>) -> Array2<f64> {
        normalized * &self.std + &self.mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_channels_hit_the_floor() {
        let f = Array2::from_elem((5, FEATURE_WIDTH), 3.5);
        let stats = NormalizationStats::fit([&f]).unwrap();
        assert!(stats.std.iter().all(|&s| s == STD_FLOOR));
        assert!(stats.normalize(&f).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_clip_hand_example() {
        let a = Array2::zeros((1, FEATURE_WIDTH));
        let b = Array2::from_elem((1, FEATURE_WIDTH), 2.0);
        let stats = NormalizationStats::fit([&a, &b]).unwrap();
        assert!(stats.mean.iter().all(|&m| (m - 1.0).abs() < 1e-15));
        assert!(stats.std.iter().all(|&s| (s - 1.0).abs() < 1e-15));
        assert!(stats.normalize(&a).iter().all(|&v| (v + 1.0).abs() < 1e-15));
        assert!(stats.normalize(&b).iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn empty_collection_rejected() {
        assert!(NormalizationStats::fit(std::iter::empty()).is_err());
    }

    proptest! {
        #[test]
        fn denormalize_inverts_normalize(
            vals in proptest::collection::vec(-100.0f64..100.0, 3 * FEATURE_WIDTH),
        ) {
            let f = Array2::from_shape_vec((3, FEATURE_WIDTH), vals).unwrap();
            let stats = NormalizationStats::fit([&f]).unwrap();
            let back = stats.denormalize(&stats.normalize(&f));
            for (x, y) in f.iter().zip(back.iter()) {
                prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0));
            }
        }
    }
}
