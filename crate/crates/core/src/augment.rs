//! Label-preserving augmentation: time dilation, translation and additive
//! white noise, plus minority-class balancing.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::record::{ActionRecord, AugmentOp, Provenance};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub dilation_range: (f64, f64),
    /// Maximum absolute shift in samples.
    pub translation_range: i64,
    pub noise_std_fraction: f64,
    pub seed: u64,
    /// Cap on `augmented size / original size`.
    pub target_multiplier: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            dilation_range: (0.9, 1.1),
            translation_range: 40,
            noise_std_fraction: 0.02,
            seed: 0,
            target_multiplier: 1.5,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.dilation_range;
        if !(0.0 < lo && lo <= 1.0 && 1.0 <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("dilation range must satisfy 0 < lo <= 1 <= hi, got ({lo}, {hi})")));
        }
        if self.translation_range < 0 {
            return Err(Error::Config("translation range must be non-negative".into()));
        }
        if !(self.noise_std_fraction >= 0.0 && self.noise_std_fraction.is_finite()) {
            return Err(Error::Config("noise fraction must be finite and non-negative".into()));
        }
        if !(1.0..=1.5).contains(&self.target_multiplier) {
            return Err(Error::Config(format!(
                "target multiplier must lie in [1, 1.5], got {}",
                self.target_multiplier
            )));
        }
        Ok(())
    }
}

fn check_2d<T: Scalar>(x: &Tensor<T>) -> Result<()> {
    if x.ndim() == 2 {
        Ok(())
    } else {
        Err(Error::Shape(format!("expected [C, N], got {:?}", x.shape())))
    }
}

/// Stretches every row about its centre by `ratio` (> 1 slows the signal down),
/// keeping the original length; samples mapped outside the record take the edge value.
pub fn time_dilate<T: Scalar>(x: &Tensor<T>, ratio: f64) -> Result<Tensor<T>> {
    check_2d(x)?;
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::Config(format!("dilation ratio must be positive, got {ratio}")));
    }
    let n = x.cols();
    let centre = (n - 1) as f64 / 2.0;
    let mut out = x.clone();
    for c in 0..x.rows() {
        let src = x.row(c);
        for (i, v) in out.row_mut(c).iter_mut().enumerate() {
            let pos = (centre + (i as f64 - centre) / ratio).clamp(0.0, (n - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let w = T::of(pos - lo as f64);
            *v = src[lo] * (T::one() - w) + src[hi] * w;
        }
    }
    Ok(out)
}

/// `y[i] = x[i - shift]`, replicating the edge sample into the vacated part.
pub fn translate<T: Scalar>(x: &Tensor<T>, shift: i64) -> Result<Tensor<T>> {
    check_2d(x)?;
    let n = x.cols() as i64;
    if shift.abs() >= n {
        return Err(Error::Config(format!("shift {shift} must be smaller than the length {n}")));
    }
    let mut out = x.clone();
    for c in 0..x.rows() {
        let src = x.row(c);
        for (i, v) in out.row_mut(c).iter_mut().enumerate() {
            *v = src[(i as i64 - shift).clamp(0, n - 1) as usize];
        }
    }
    Ok(out)
}

/// Adds zero-mean Gaussian noise whose per-row std is `std_fraction` times the row's std.
pub fn add_noise<T: Scalar>(x: &Tensor<T>, std_fraction: f64, seed: u64) -> Result<Tensor<T>> {
    check_2d(x)?;
    if !(std_fraction >= 0.0) {
        return Err(Error::Config(format!("noise fraction must be non-negative, got {std_fraction}")));
    }
    let mut out = x.clone();
    if std_fraction == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..x.rows() {
        let row = x.row(c);
        let n = row.len() as f64;
        let mean = row.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / n;
        let var = row.iter().map(|v| (v.to_f64_lossy() - mean).powi(2)).sum::<f64>() / n;
        let sigma = std_fraction * var.sqrt();
        if sigma == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, sigma).expect("sigma is positive and finite");
        for v in out.row_mut(c) {
            *v += T::of(dist.sample(&mut rng));
        }
    }
    Ok(out)
}

/// Applies a sequence of recorded operations to a record; the rotation track follows
/// the time warps but receives no noise.
pub fn apply_ops(rec: &ActionRecord, ops: &[AugmentOp]) -> Result<ActionRecord> {
    let mut channels = rec.channels.clone();
    let mut rot = rec.tcp_rotvec.clone();
    for op in ops {
        match *op {
            AugmentOp::Dilate { ratio } => {
                channels = time_dilate(&channels, ratio)?;
                rot = time_dilate(&rot, ratio)?;
            }
            AugmentOp::Translate { shift } => {
                channels = translate(&channels, shift)?;
                rot = translate(&rot, shift)?;
            }
            AugmentOp::Noise { std_fraction, seed } => channels = add_noise(&channels, std_fraction, seed)?,
        }
    }
    let mut out = rec.clone();
    out.channels = channels;
    out.tcp_rotvec = rot;
    Ok(out)
}

fn random_ops(policy: &AugmentPolicy, rng: &mut ChaCha8Rng) -> Vec<AugmentOp> {
    let (lo, hi) = policy.dilation_range;
    let ratio = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let r = policy.translation_range;
    let shift = if r > 0 { rng.random_range(-r..=r) } else { 0 };
    vec![
        AugmentOp::Dilate { ratio },
        AugmentOp::Translate { shift },
        AugmentOp::Noise {
            std_fraction: policy.noise_std_fraction,
            seed: rng.random(),
        },
    ]
}

/// How many synthetic copies each class receives: the budget
/// `floor((multiplier - 1) · total)` is spent one record at a time on the
/// currently smallest class (ties to the lower class id) until parity.
pub fn augmentation_plan(counts: &BTreeMap<u32, usize>, target_multiplier: f64) -> BTreeMap<u32, usize> {
    let total: usize = counts.values().sum();
    let mut budget = ((target_multiplier - 1.0) * total as f64 + 1e-9).floor() as usize;
    let max = counts.values().copied().max().unwrap_or(0);
    let mut current = counts.clone();
    let mut extra: BTreeMap<u32, usize> = counts.keys().map(|&k| (k, 0)).collect();
    while budget > 0 {
        let Some((&k, &n)) = current.iter().min_by_key(|(&k, &n)| (n, k)) else { break };
        if n >= max {
            break;
        }
        *current.get_mut(&k).unwrap() += 1;
        *extra.get_mut(&k).unwrap() += 1;
        budget -= 1;
    }
    extra
}

/// Adds flagged synthetic copies of minority-class records; originals are kept untouched
/// and augmented inputs are never used as sources.
pub fn balance_dataset(d: &Dataset, policy: &AugmentPolicy) -> Result<Dataset> {
    policy.validate()?;
    let originals: Vec<&ActionRecord> = d.records().iter().filter(|r| !r.is_augmented()).collect();
    let mut by_class: BTreeMap<u32, Vec<&ActionRecord>> = d.class_map().keys().map(|&k| (k, Vec::new())).collect();
    for r in &originals {
        by_class.entry(r.label.class_id).or_default().push(r);
    }
    if let Some((&k, _)) = by_class.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::ClassTooSmall {
            class_id: k,
            class_name: d.class_map()[&k].clone(),
            count: 0,
            needed: 1,
        });
    }
    let counts: BTreeMap<u32, usize> = by_class.iter().map(|(&k, v)| (k, v.len())).collect();
    let plan = augmentation_plan(&counts, policy.target_multiplier);
    let mut out = d.records().to_vec();
    for (&class_id, &extra) in &plan {
        let sources = &by_class[&class_id];
        for j in 0..extra {
            // Per-copy stream so each copy depends only on (seed, class, index).
            let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
            rng.set_stream(((class_id as u64) << 32) | j as u64);
            let src = sources[j % sources.len()];
            let ops = random_ops(policy, &mut rng);
            let mut rec = apply_ops(src, &ops)?;
            rec.id = format!("{}_aug{j}", src.id);
            rec.augmented = Some(Provenance {
                source_id: src.id.clone(),
                ops,
            });
            out.push(rec);
        }
    }
    d.with_records(out)
}
