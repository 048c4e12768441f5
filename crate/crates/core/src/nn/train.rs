//! Mini-batch training with early stopping on validation macro-F1.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{softmax_cross_entropy, ModelGraph, ModelInput, Mode};
use super::optim::{Adam, AdamConfig};
use crate::error::{Error, Result};
use crate::metrics::{f1_scores, ConfusionMatrix};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: AdamConfig::default(),
            batch_size: 16,
            epochs: 60,
            patience: 15,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.optimizer.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// A prepared input with its dense class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub input: ModelInput<T>,
    pub target: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_macro_f1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_macro_f1: Option<f64>,
    pub stopped_early: bool,
}

impl History {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let mut f = std::fs::File::create(path).map_err(io)?;
        writeln!(f, "epoch,train_loss,train_accuracy,val_loss,val_macro_f1").map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            writeln!(
                f,
                "{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                opt(e.val_loss),
                opt(e.val_macro_f1)
            )
            .map_err(io)?;
        }
        Ok(())
    }
}

/// Confusion matrix and mean cross-entropy in eval mode.
pub fn evaluate<T: Scalar>(model: &ModelGraph<T>, samples: &[Sample<T>]) -> Result<(ConfusionMatrix, f64)> {
    let mut cm = ConfusionMatrix::new(model.num_classes());
    let mut loss = 0.0;
    for s in samples {
        let cache = model.forward(&s.input, Mode::Eval)?;
        let (l, _) = softmax_cross_entropy(cache.logits(), s.target);
        let p = super::model::softmax(cache.logits());
        cm.record(s.target, super::model::argmax_lowest(&p))?;
        loss += l;
    }
    Ok((cm, loss / samples.len().max(1) as f64))
}

fn derive_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    // SplitMix64 finaliser over the packed tuple.
    let mut z = seed ^ ((epoch as u64) << 32 ^ index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains with Adam on softmax cross-entropy. With a non-empty validation set
/// the weights of the best validation macro-F1 epoch (ties: lower validation
/// loss) are returned; otherwise the final weights are.
pub fn train<T: Scalar>(
    mut model: ModelGraph<T>,
    train: &[Sample<T>],
    val: &[Sample<T>],
    cfg: &TrainConfig,
) -> Result<(ModelGraph<T>, History)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidDataset("training set is empty".into()));
    }
    if let Some(s) = train.iter().chain(val).find(|s| s.target >= model.num_classes()) {
        return Err(Error::OutOfRange {
            index: s.target,
            len: model.num_classes(),
        });
    }
    let mut opt = Adam::new(cfg.optimizer, model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, f64, Vec<Tensor<T>>)> = None;
    let mut since_best = 0;
    let mut last_finite = None;
    let inv_batch_cache: Vec<T> = (0..=cfg.batch_size).map(|n| T::one() / T::of(n.max(1) as f64)).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch, usize::MAX));
        order.shuffle(&mut rng);
        let mut total_loss = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = model.zero_grads();
            for &i in batch {
                let s = &train[i];
                let cache = model.forward(&s.input, Mode::Train { seed: derive_seed(cfg.seed, epoch, i) })?;
                let (loss, d) = softmax_cross_entropy(cache.logits(), s.target);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, last_finite });
                }
                let p = super::model::softmax(cache.logits());
                correct += (super::model::argmax_lowest(&p) == s.target) as usize;
                total_loss += loss;
                model.accumulate_gradients(&cache, &d, &mut grads)?;
            }
            let scale = inv_batch_cache[batch.len()];
            grads.iter_mut().for_each(|g| g.scale(scale));
            opt.step(model.params_mut(), &grads);
        }
        if model.params().iter().any(|p| !p.all_finite()) {
            return Err(Error::Divergence { epoch, last_finite });
        }
        let train_loss = total_loss / train.len() as f64;
        let mut stats = EpochStats {
            epoch,
            train_loss,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss: None,
            val_macro_f1: None,
        };
        if !val.is_empty() {
            let (cm, vl) = evaluate(&model, val)?;
            if !vl.is_finite() {
                return Err(Error::Divergence { epoch, last_finite });
            }
            let f1 = f1_scores(&cm).macro_f1;
            stats.val_loss = Some(vl);
            stats.val_macro_f1 = Some(f1);
            let improved = match &best {
                None => true,
                Some((bf, bl, _)) => f1 > *bf || (f1 == *bf && vl < *bl),
            };
            if improved {
                best = Some((f1, vl, model.params().to_vec()));
                history.best_epoch = epoch;
                history.best_val_macro_f1 = Some(f1);
                since_best = 0;
            } else {
                since_best += 1;
            }
        } else {
            history.best_epoch = epoch;
        }
        last_finite = Some(epoch);
        history.epochs.push(stats);
        if !val.is_empty() && since_best >= cfg.patience {
            history.stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }
    if let Some((_, _, params)) = best {
        model.params_mut().clone_from_slice(&params);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::{Architecture, BranchSpec, InputSelector};
    use crate::nn::layers::LayerSpec;
    use crate::nn::model::tests::{classes, meta_for};
    use rand::Rng;

    fn toy_model(seed: u64) -> ModelGraph<f64> {
        let arch = Architecture {
            branches: vec![BranchSpec {
                name: "x".into(),
                input: InputSelector::Signals1d(vec![0, 1]),
                layers: vec![LayerSpec::Flatten],
            }],
            head: vec![LayerSpec::Dense { units: 8 }, LayerSpec::Relu, LayerSpec::Dense { units: 2 }],
            input_len: 4,
            scaleogram_height: 128,
        };
        ModelGraph::new(arch, classes(2), meta_for(4), seed).unwrap()
    }

    fn separable(n: usize, seed: u64) -> Vec<Sample<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let target = i % 2;
                let sign = if target == 0 { 1.0 } else { -1.0 };
                let data = (0..8).map(|_| sign * rng.random_range(0.5..1.5)).collect();
                Sample {
                    input: ModelInput::raw(vec![Tensor::from_vec(&[2, 4], data).unwrap()]),
                    target,
                }
            })
            .collect()
    }

    #[test]
    fn separable_set_reaches_full_accuracy() {
        let data = separable(40, 1);
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 8,
            ..Default::default()
        };
        let (m, h) = train(toy_model(2), &data, &[], &cfg).unwrap();
        let (cm, _) = evaluate(&m, &data).unwrap();
        assert_eq!(cm.accuracy(), 1.0);
        assert_eq!(h.epochs.len(), 50);
        // Loss is non-increasing over the first five epochs.
        let l: Vec<f64> = h.epochs.iter().take(5).map(|e| e.train_loss).collect();
        assert!(l.windows(2).all(|w| w[1] <= w[0]), "{l:?}");
    }

    #[test]
    fn same_seed_same_weights() {
        let data = separable(20, 3);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            seed: 11,
            ..Default::default()
        };
        let (a, ha) = train(toy_model(1), &data, &data[..6], &cfg).unwrap();
        let (b, hb) = train(toy_model(1), &data, &data[..6], &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ha, hb);
    }

    #[test]
    fn divergence_is_reported() {
        let data = separable(8, 3);
        let cfg = TrainConfig {
            optimizer: AdamConfig {
                lr: 1e300,
                ..Default::default()
            },
            epochs: 5,
            ..Default::default()
        };
        assert!(matches!(train(toy_model(1), &data, &[], &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let data = separable(20, 5);
        let cfg = TrainConfig {
            epochs: 200,
            patience: 3,
            batch_size: 4,
            optimizer: AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
            ..Default::default()
        };
        // Partly mislabelled validation data: its loss rises once training fits the clean set.
        let mut val = data[..10].to_vec();
        val.iter_mut().step_by(3).for_each(|s| s.target = 1 - s.target);
        let (m, h) = train(toy_model(4), &data, &val, &cfg).unwrap();
        assert!(h.stopped_early);
        assert_eq!(h.epochs.len(), h.best_epoch + 1 + 3);
        let (cm, _) = evaluate(&m, &val).unwrap();
        assert_eq!(Some(f1_scores(&cm).macro_f1), h.best_val_macro_f1);
    }

    #[test]
    fn history_csv() {
        let dir = tempfile::tempdir().unwrap();
        let h = History {
            epochs: vec![EpochStats {
                epoch: 0,
                train_loss: 0.5,
                train_accuracy: 0.75,
                val_loss: None,
                val_macro_f1: Some(0.8),
            }],
            ..Default::default()
        };
        let p = dir.path().join("h.csv");
        h.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "0,0.5,0.75,,0.8");
    }
}
