//! Finite-difference verification of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::arch::{Architecture, BranchSpec, InputSelector};
use super::layers::LayerSpec;
use super::model::{softmax_cross_entropy, Mode, ModelGraph, ModelInput, ModelMeta};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Coordinates whose ±eps perturbation crosses a ReLU or pooling boundary.
    pub skipped: usize,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the largest error.
    pub worst: Option<(String, usize)>,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares backprop against central differences of the cross-entropy loss for
/// every parameter. Training mode with a fixed seed keeps dropout masks identical
/// across perturbations.
pub fn check_gradients(
    model: &ModelGraph<f64>,
    input: &ModelInput<f64>,
    target: usize,
    seed: u64,
    eps: f64,
) -> Result<GradCheckReport> {
    let mode = Mode::Train { seed };
    let cache = model.forward(input, mode)?;
    let base_sig = model.region_signature(&cache);
    let (_, d_logits) = softmax_cross_entropy(cache.logits(), target);
    let grads = model.backward(&cache, &d_logits)?.params;

    let mut probe = model.clone();
    let mut eval = |p: usize, i: usize, v: f64| -> Result<(f64, bool)> {
        probe.params_mut()[p].data_mut()[i] = v;
        let c = probe.forward(input, mode)?;
        let same = probe.region_signature(&c) == base_sig;
        Ok((softmax_cross_entropy(c.logits(), target).0, same))
    };
    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        worst: None,
    };
    for (p, g) in grads.iter().enumerate() {
        for i in 0..g.len() {
            let w = model.params()[p].data()[i];
            let (lp, sp) = eval(p, i, w + eps)?;
            let (lm, sm) = eval(p, i, w - eps)?;
            eval(p, i, w)?;
            if !(sp && sm) {
                report.skipped += 1;
                continue;
            }
            let e = rel_err(g.data()[i], (lp - lm) / (2.0 * eps));
            report.checked += 1;
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = Some((model.names()[p].clone(), i));
            }
        }
    }
    Ok(report)
}

/// A small random network using every layer kind, with a matching input and target.
pub fn random_case(seed: u64) -> Result<(ModelGraph<f64>, ModelInput<f64>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(24..40);
    let height = rng.random_range(5..9);
    let classes = rng.random_range(2..4);

    let k1 = rng.random_range(2..6);
    let conv1d = BranchSpec {
        name: "sig".into(),
        input: InputSelector::Signals1d(vec![0, 4]),
        layers: vec![
            LayerSpec::MaxPool1d { size: 2 },
            LayerSpec::Conv1d {
                filters: rng.random_range(2..4),
                kernel: k1,
                stride: rng.random_range(1..3),
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool1d { size: 2 },
            LayerSpec::Conv1d {
                filters: 3,
                kernel: 2,
                stride: 1,
            },
            LayerSpec::Relu,
            LayerSpec::GlobalMaxPool,
        ],
    };
    let conv2d = BranchSpec {
        name: "scalo".into(),
        input: InputSelector::Scaleograms2d(vec![1]),
        layers: vec![
            LayerSpec::MaxPool2d { size: [1, 2] },
            LayerSpec::Conv2d {
                filters: 2,
                kernel: [rng.random_range(2..4), rng.random_range(2..4)],
                stride: [1, rng.random_range(1..3)],
            },
            LayerSpec::Relu,
            LayerSpec::MaxPool2d { size: [2, 2] },
            LayerSpec::Flatten,
        ],
    };
    let dense = BranchSpec {
        name: "flat".into(),
        input: InputSelector::Signals1d(vec![7]),
        layers: vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 4 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.3 },
        ],
    };
    let arch = Architecture {
        branches: vec![conv1d, conv2d, dense],
        head: vec![
            LayerSpec::Concat,
            LayerSpec::Dense { units: 6 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Dense { units: classes },
        ],
        input_len: len,
        scaleogram_height: height,
    };
    let class_map = (0..classes as u32).map(|c| (c, format!("class{c}"))).collect();
    let model = ModelGraph::new(arch, class_map, ModelMeta::default(), rng.random())?;
    let branches = (0..3)
        .map(|b| {
            let shape = model.arch().branch_input_shape(b);
            let n = shape.iter().product();
            Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let target = rng.random_range(0..classes);
    Ok((model, ModelInput::raw(branches), target))
}
