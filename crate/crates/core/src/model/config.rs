use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::FEATURE_WIDTH;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub feed_forward_dim: usize,
    pub max_frames: usize,
    pub num_classes: usize,
    /// Training-time dropout inside both stacks.
    pub internal_dropout: f64,
    pub feature_width: usize,
    pub classifier_hidden: usize,
}

impl ModelConfig {
    /// Full-size model: 256-wide, 0.1 internal dropout.
    pub fn full(num_classes: usize) -> Self {
        Self {
            d_model: 256,
            layers: 4,
            heads: 4,
            feed_forward_dim: 1024,
            max_frames: 64,
            num_classes,
            internal_dropout: 0.1,
            feature_width: FEATURE_WIDTH,
            classifier_hidden: 256,
        }
    }

    pub fn desk(num_classes: usize) -> Self {
        Self {
            d_model: 64,
            layers: 4,
            heads: 4,
            feed_forward_dim: 256,
            max_frames: 64,
            num_classes,
            internal_dropout: 0.0,
            feature_width: FEATURE_WIDTH,
            classifier_hidden: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: format!("model.{key}"),
                message,
            })
        };
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return bad(
                "heads",
                format!("d_model {} is not divisible by {} heads", self.d_model, self.heads),
            );
        }
        if self.d_model % 2 != 0 {
            return bad("d_model", "must be even for the sinusoidal tables".into());
        }
        if self.layers == 0 {
            return bad("layers", "need at least one layer".into());
        }
        if !(0.0..1.0).contains(&self.internal_dropout) {
            return bad("internal_dropout", format!("{} is outside [0, 1)", self.internal_dropout));
        }
        if self.num_classes == 0 {
            return bad("num_classes", "need at least one class".into());
        }
        if self.max_frames == 0 || self.feed_forward_dim == 0 || self.classifier_hidden == 0 {
            return bad("max_frames", "sizes must be positive".into());
        }
        if self.feature_width != FEATURE_WIDTH {
            return bad("feature_width", format!("must be {FEATURE_WIDTH}"));
        }
        Ok(())
    }
}
