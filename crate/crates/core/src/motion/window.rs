use ndarray::{s, Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

/// Random contiguous window of `len` rows. Shorter inputs are padded by
/// repeating their final row.
pub fn crop_window<R: Rng + ?Sized>(features: &Array2<f64>, len: usize, rng: &mut R) -> Array2<f64> {
    assert!(len >= 1, "window length must be positive");
    let frames = features.nrows();
    if frames >= len {
        let start = rng.random_range(0..=frames - len);
        features.slice(s![start..start + len, ..]).to_owned()
    } else {
        pad_to(features, len)
    }
}

/// Window starting at frame 0, padded like [`crop_window`].
pub fn leading_window(features: &Array2<f64>, len: usize) -> Array2<f64> {
    if features.nrows() >= len {
        features.slice(s![..len, ..]).to_owned()
    } else {
        pad_to(features, len)
    }
}

fn pad_to(features: &Array2<f64>, len: usize) -> Array2<f64> {
    let frames = features.nrows();
    assert!(frames >= 1, "cannot pad an empty sequence");
    let mut out = Array2::zeros((len, features.ncols()));
    out.slice_mut(s![..frames, ..]).assign(features);
    let last = features.row(frames - 1);
    for mut row in out.slice_mut(s![frames.., ..]).outer_iter_mut() {
        row.assign(&last);
    }
    out
}

pub fn one_hot(label: usize, num_classes: usize) -> Result<Array1<f64>> {
    if label >= num_classes {
        return Err(Error::LabelOutOfRange { label, num_classes });
    }
    let mut v = Array1::zeros(num_classes);
    v[label] = 1.0;
    Ok(v)
}
