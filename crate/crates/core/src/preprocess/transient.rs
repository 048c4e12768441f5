//! Main-transient isolation: short-time energy, multi-threshold crossing
//! indices, onset selection and fixed-length window extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Trailing-window energy of the selected channels.
///
/// `e[i] = Σ_{j=i-window+1..=i} Σ_c x[c, j]²`, with the window truncated at the start.
pub fn short_time_energy<T: Scalar>(x: &Tensor<T>, window: usize, channels: &[usize]) -> Result<Vec<T>> {
    if channels.is_empty() {
        return Err(Error::Config("energy needs at least one channel".into()));
    }
    if x.ndim() != 2 {
        return Err(Error::Shape(format!("expected [C, N], got {:?}", x.shape())));
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= x.rows()) {
        return Err(Error::OutOfRange { index: c, len: x.rows() });
    }
    let n = x.cols();
    if window == 0 || window > n {
        return Err(Error::Config(format!("energy window {window} must be in 1..={n}")));
    }
    let power: Vec<f64> = (0..n)
        .map(|i| {
            channels
                .iter()
                .map(|&c| {
                    let v = x.at2(c, i).to_f64_lossy();
                    v * v
                })
                .sum()
        })
        .collect();
    // Running sum, recomputed exactly every `window` steps to bound drift.
    let mut e = Vec::with_capacity(n);
    let mut acc = 0.0f64;
    for i in 0..n {
        if i % window == 0 && i >= window {
            acc = power[i + 1 - window..i].iter().sum();
            acc += power[i];
        } else {
            acc += power[i];
            if i >= window {
                acc -= power[i - window];
            }
        }
        e.push(T::of(acc.max(0.0)));
    }
    Ok(e)
}

/// Energy fractions used to locate crossing indices, highest first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub hi: f64,
    pub mid: f64,
    pub lo: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            hi: 0.38,
            mid: 0.22,
            lo: 0.12,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.lo && self.lo < self.mid && self.mid < self.hi && self.hi < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "thresholds must satisfy 0 < lo < mid < hi < 1, got ({}, {}, {})",
                self.hi, self.mid, self.lo
            )))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossingIndices {
    pub hi: usize,
    pub mid: usize,
    pub lo: usize,
}

/// First index at which the energy reaches each fraction of its maximum.
pub fn threshold_indices<T: Scalar>(e: &[T], thresholds: Thresholds) -> Result<CrossingIndices> {
    let max = e
        .iter()
        .map(|v| v.to_f64_lossy())
        .fold(0.0f64, f64::max);
    if !(max > 0.0) {
        return Err(Error::NoTransient { record: None });
    }
    let first = |frac: f64| {
        let level = frac * max;
        e.iter()
            .position(|v| v.to_f64_lossy() >= level)
            .expect("maximum always crosses")
    };
    Ok(CrossingIndices {
        hi: first(thresholds.hi),
        mid: first(thresholds.mid),
        lo: first(thresholds.lo),
    })
}

/// Which rule of the selection criteria produced the onset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnsetRule {
    /// All crossings within `proximity`: middle index.
    Clustered,
    /// High crossing more than `far_gap` past the low one: earlier crossings treated as disturbances.
    FarHigh,
    /// Otherwise: the lowest-threshold crossing.
    Earliest,
}

/// Picks the window start from the three crossing indices.
pub fn select_onset(idx: CrossingIndices, proximity: usize, far_gap: usize) -> (usize, OnsetRule) {
    let max = idx.hi.max(idx.mid).max(idx.lo);
    let min = idx.hi.min(idx.mid).min(idx.lo);
    if max - min <= proximity {
        (idx.mid, OnsetRule::Clustered)
    } else if idx.hi.saturating_sub(idx.lo) > far_gap {
        (idx.hi, OnsetRule::FarHigh)
    } else {
        (idx.lo, OnsetRule::Earliest)
    }
}

/// Copies `[start, start + len)` of every row, replicating the last sample past the end.
pub fn extract_window<T: Scalar>(x: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    if x.ndim() != 2 {
        return Err(Error::Shape(format!("expected [C, N], got {:?}", x.shape())));
    }
    let n = x.cols();
    if start >= n {
        return Err(Error::OutOfRange { index: start, len: n });
    }
    if len == 0 {
        return Err(Error::Config("window length must be positive".into()));
    }
    let mut out = Vec::with_capacity(x.rows() * len);
    for c in 0..x.rows() {
        let row = x.row(c);
        out.extend((start..start + len).map(|i| row[i.min(n - 1)]));
    }
    Tensor::from_vec(&[x.rows(), len], out)
}
