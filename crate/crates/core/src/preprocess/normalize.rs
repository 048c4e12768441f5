//! Per-channel Standard / MinMax scaling fitted on training windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    Standard,
    MinMax,
}

/// Fitted scaling: `y = (x - offset) / scale` per channel. Constant channels pass through.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mode: Normalization,
    /// Mean (Standard) or minimum (MinMax).
    pub offset: Vec<f64>,
    /// Standard deviation (Standard) or range (MinMax).
    pub scale: Vec<f64>,
    pub constant: Vec<bool>,
}

impl NormStats {
    pub fn channels(&self) -> usize {
        self.offset.len()
    }
}

/// Fits statistics over all samples of all `[C, N]` windows.
pub fn fit_normalizer<T: Scalar>(windows: &[Tensor<T>], mode: Normalization) -> Result<NormStats> {
    if mode == Normalization::None {
        return Err(Error::Config("cannot fit a normalizer in mode None".into()));
    }
    let first = windows
        .first()
        .ok_or_else(|| Error::InvalidDataset("normalizer needs a non-empty training set".into()))?;
    let c = first.rows();
    if windows.iter().any(|w| w.ndim() != 2 || w.rows() != c) {
        return Err(Error::Shape("training windows disagree on channel count".into()));
    }
    let mut offset = vec![0.0; c];
    let mut scale = vec![0.0; c];
    for ch in 0..c {
        let vals = || windows.iter().flat_map(|w| w.row(ch).iter().map(|v| v.to_f64_lossy()));
        match mode {
            Normalization::Standard => {
                let n = vals().count() as f64;
                let mean = vals().sum::<f64>() / n;
                let var = vals().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                offset[ch] = mean;
                scale[ch] = var.sqrt();
            }
            Normalization::MinMax => {
                let (lo, hi) = vals().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                offset[ch] = lo;
                scale[ch] = hi - lo;
            }
            Normalization::None => unreachable!(),
        }
    }
    let constant = offset
        .iter()
        .zip(&scale)
        .map(|(o, s)| !(*s > 1e-12 * o.abs().max(1.0)))
        .collect();
    Ok(NormStats {
        mode,
        offset,
        scale,
        constant,
    })
}

pub fn apply_normalizer<T: Scalar>(x: &Tensor<T>, stats: &NormStats) -> Result<Tensor<T>> {
    if x.ndim() != 2 || x.rows() != stats.channels() {
        return Err(Error::Shape(format!(
            "normalizer fitted on {} channels, input is {:?}",
            stats.channels(),
            x.shape()
        )));
    }
    let mut out = x.clone();
    for c in 0..x.rows() {
        if stats.constant[c] {
            continue;
        }
        let o = T::of(stats.offset[c]);
        let s = T::of(stats.scale[c]);
        out.row_mut(c).iter_mut().for_each(|v| *v = (*v - o) / s);
    }
    Ok(out)
}
