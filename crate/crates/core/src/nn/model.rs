//! Parameterised multi-branch network: initialisation, forward pass with
//! activation cache, reverse-mode gradients and prediction.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::arch::{Architecture, Preset};
use super::layers::{self, Aux, LayerSpec};
use crate::dataset::ClassMap;
use crate::error::{Error, Result};
use crate::preprocess::{NormStats, PipelineConfig};
use crate::record::ActionKind;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::wavelet::CwtConfig;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Everything besides the weights needed to reproduce inference on a raw record.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelMeta {
    pub preset: Option<Preset>,
    pub action_kind: Option<ActionKind>,
    pub pipeline: PipelineConfig,
    /// Normalizer fitted on the training split.
    pub norm: Option<NormStats>,
    pub cwt: CwtConfig,
}

#[derive(Clone, Debug, PartialEq)]
struct LayerInfo {
    input: Vec<usize>,
    output: Vec<usize>,
    /// Index of the weight tensor; the bias follows it.
    param: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout active, masks drawn from a generator seeded with `seed`.
    Train { seed: u64 },
}

/// Per-branch input tensors. `stems[b]` layers of branch `b` have already been
/// applied (see [`ModelGraph::stem_len`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    pub branches: Vec<Tensor<T>>,
    pub stems: Vec<usize>,
}

impl<T> ModelInput<T> {
    pub fn raw(branches: Vec<Tensor<T>>) -> Self {
        let stems = vec![0; branches.len()];
        ModelInput { branches, stems }
    }
}

#[derive(Clone, Debug)]
struct StageCache<T> {
    start: usize,
    /// `acts[0]` is the stage input; `acts[j + 1]` the output of layer `start + j`.
    acts: Vec<Tensor<T>>,
    aux: Vec<Aux<T>>,
}

/// Activations of one forward pass, tied to the parameter version that produced them.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    version: u64,
    branches: Vec<StageCache<T>>,
    head: StageCache<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn logits(&self) -> &[T] {
        self.head.acts.last().expect("head output").data()
    }

    /// Output of layer `layer` of branch `b`, if that layer ran in this pass.
    pub fn branch_activation(&self, b: usize, layer: usize) -> Option<&Tensor<T>> {
        let st = &self.branches[b];
        layer.checked_sub(st.start).and_then(|j| st.acts.get(j + 1))
    }

    pub fn branch_output(&self, b: usize) -> &Tensor<T> {
        self.branches[b].acts.last().expect("branch output")
    }
}

#[derive(Clone, Debug)]
pub struct Gradients<T> {
    /// Same order and shapes as [`ModelGraph::params`].
    pub params: Vec<Tensor<T>>,
    /// `activations[b][i]`: gradient with respect to the output of layer `i` of
    /// branch `b` (`None` for stem layers that did not run).
    pub activations: Vec<Vec<Option<Tensor<T>>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub class_id: u32,
    pub probabilities: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ModelGraph<T> {
    arch: Architecture,
    class_map: ClassMap,
    meta: ModelMeta,
    branch_layout: Vec<Vec<LayerInfo>>,
    head_layout: Vec<LayerInfo>,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    version: u64,
}

type Layout = (Vec<Vec<LayerInfo>>, Vec<LayerInfo>, Vec<(String, Vec<usize>)>);

fn shape_error(branch: &str, i: usize, l: &LayerSpec, detail: impl Into<String>) -> Error {
    Error::LayerShape {
        branch: branch.into(),
        layer: format!("{i}:{}", l.kind_name()),
        detail: detail.into(),
    }
}

fn build_layout(arch: &Architecture, meta: &ModelMeta) -> Result<Layout> {
    if arch.branches.is_empty() {
        return Err(Error::Config("model needs at least one branch".into()));
    }
    let out_channels = meta.pipeline.output_channels();
    let mut params = Vec::new();
    let mut stage = |name: &str, layers: &[LayerSpec], mut shape: Vec<usize>| -> Result<(Vec<LayerInfo>, Vec<usize>)> {
        let mut infos = Vec::with_capacity(layers.len());
        for (i, l) in layers.iter().enumerate() {
            if *l == LayerSpec::Concat && !(name == "head" && i == 0) {
                return Err(shape_error(name, i, l, "concat is only valid as the first head layer"));
            }
            let output = l.output_shape(&shape).map_err(|d| shape_error(name, i, l, d))?;
            let param = l.param_shapes(&shape).map(|(w, b)| {
                let p = params.len();
                params.push((format!("{name}.{i}.{}.weight", l.kind_name()), w));
                params.push((format!("{name}.{i}.{}.bias", l.kind_name()), b));
                p
            });
            infos.push(LayerInfo {
                input: shape,
                output: output.clone(),
                param,
            });
            shape = output;
        }
        Ok((infos, shape))
    };
    let mut branch_layout = Vec::new();
    let mut head_in = 0;
    for (b, br) in arch.branches.iter().enumerate() {
        if br.layers.is_empty() || br.input.channels().is_empty() {
            return Err(Error::Config(format!("branch {} needs layers and input channels", br.name)));
        }
        for &c in br.input.channels() {
            let Some(ch) = out_channels.get(c) else {
                return Err(Error::Config(format!(
                    "branch {} selects channel {c}, but the pipeline yields {}",
                    br.name,
                    out_channels.len()
                )));
            };
            if br.input.is_2d() && !ch.is_wrench() {
                return Err(Error::Config(format!(
                    "branch {}: scaleograms are only defined for force/torque channels, not {}",
                    br.name,
                    ch.name()
                )));
            }
        }
        let (infos, out) = stage(&br.name, &br.layers, arch.branch_input_shape(b))?;
        if out.len() != 1 {
            return Err(Error::LayerShape {
                branch: br.name.clone(),
                layer: "output".into(),
                detail: format!("branch output {out:?} must be a vector; end with global_max_pool or flatten"),
            });
        }
        head_in += out[0];
        branch_layout.push(infos);
    }
    let (head_layout, out) = stage("head", &arch.head, vec![head_in])?;
    if out.len() != 1 {
        return Err(Error::Config(format!("head output {out:?} must be a vector")));
    }
    Ok((branch_layout, head_layout, params))
}

impl<T: Scalar> ModelGraph<T> {
    /// Builds a model with He-normal weights and zero biases drawn from `seed`.
    pub fn new(arch: Architecture, class_map: ClassMap, meta: ModelMeta, seed: u64) -> Result<Self> {
        let (branch_layout, head_layout, shapes) = build_layout(&arch, &meta)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(shapes.len());
        let mut params = Vec::with_capacity(shapes.len());
        for (name, shape) in shapes {
            let t = if name.ends_with(".weight") {
                let fan_in: usize = shape[1..].iter().product();
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let n = shape.iter().product();
                Tensor::from_vec(&shape, (0..n).map(|_| T::of(dist.sample(&mut rng))).collect())?
            } else {
                Tensor::zeros(&shape)
            };
            names.push(name);
            params.push(t);
        }
        let g = ModelGraph {
            arch,
            class_map,
            meta,
            branch_layout,
            head_layout,
            names,
            params,
            version: next_version(),
        };
        g.check_classes()?;
        Ok(g)
    }

    /// Assembles a model from stored parameters, checking every shape.
    pub fn from_parts(arch: Architecture, class_map: ClassMap, meta: ModelMeta, params: Vec<Tensor<T>>) -> Result<Self> {
        let (branch_layout, head_layout, shapes) = build_layout(&arch, &meta)?;
        if shapes.len() != params.len() {
            return Err(Error::Shape(format!("expected {} parameter tensors, got {}", shapes.len(), params.len())));
        }
        for ((name, shape), p) in shapes.iter().zip(&params) {
            if p.shape() != shape.as_slice() {
                return Err(Error::Shape(format!("{name}: expected {shape:?}, got {:?}", p.shape())));
            }
        }
        let g = ModelGraph {
            arch,
            class_map,
            meta,
            branch_layout,
            head_layout,
            names: shapes.into_iter().map(|(n, _)| n).collect(),
            params,
            version: next_version(),
        };
        g.check_classes()?;
        Ok(g)
    }

    fn check_classes(&self) -> Result<()> {
        let width = self.head_layout.last().map(|l| l.output[0]).unwrap_or(0);
        if width != self.class_map.len() {
            return Err(Error::ClassMapMismatch(format!(
                "head produces {width} outputs for {} classes",
                self.class_map.len()
            )));
        }
        Ok(())
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn class_map(&self) -> &ClassMap {
        &self.class_map
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut ModelMeta {
        &mut self.meta
    }

    pub fn num_classes(&self) -> usize {
        self.class_map.len()
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.class_map.keys().copied().collect()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    /// Mutable parameters; invalidates every outstanding forward cache.
    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        self.version = next_version();
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn cast<U: Scalar>(&self) -> ModelGraph<U> {
        ModelGraph {
            arch: self.arch.clone(),
            class_map: self.class_map.clone(),
            meta: self.meta.clone(),
            branch_layout: self.branch_layout.clone(),
            head_layout: self.head_layout.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            version: next_version(),
        }
    }

    /// Number of leading parameter-free pooling layers of branch `b`; these may be
    /// applied once when inputs are prepared.
    pub fn stem_len(&self, b: usize) -> usize {
        self.arch.branches[b]
            .layers
            .iter()
            .take_while(|l| matches!(l, LayerSpec::MaxPool1d { .. } | LayerSpec::MaxPool2d { .. }))
            .count()
    }

    /// Shape expected for branch `b` after `stem` layers.
    pub fn branch_shape_at(&self, b: usize, stem: usize) -> &[usize] {
        let infos = &self.branch_layout[b];
        if stem < infos.len() {
            &infos[stem].input
        } else {
            &infos.last().expect("non-empty branch").output
        }
    }

    /// Index of the last convolution of branch `b` and of the layer whose output
    /// serves as its activation map (the following ReLU when present).
    pub fn last_conv(&self, b: usize) -> Option<(usize, usize)> {
        let layers = &self.arch.branches[b].layers;
        let c = layers.iter().rposition(LayerSpec::is_conv)?;
        let a = if layers.get(c + 1) == Some(&LayerSpec::Relu) { c + 1 } else { c };
        Some((c, a))
    }

    /// Zeroes every parameter of branch `b`, making its output identically zero.
    pub fn zero_branch(&mut self, b: usize) {
        let idx: Vec<usize> = self.branch_layout[b].iter().filter_map(|l| l.param).collect();
        let params = self.params_mut();
        for p in idx {
            params[p].fill(T::zero());
            params[p + 1].fill(T::zero());
        }
    }

    /// Applies layers `[from, to)` of branch `b` in eval mode.
    pub fn run_branch_prefix(&self, b: usize, x: &Tensor<T>, from: usize, to: usize) -> Result<Tensor<T>> {
        let br = &self.arch.branches[b];
        let mut x = x.clone();
        for i in from..to {
            let (y, _) = self.apply(&br.layers[i], &self.branch_layout[b][i], &x, None)?;
            x = y;
        }
        Ok(x)
    }

    fn apply(&self, spec: &LayerSpec, info: &LayerInfo, x: &Tensor<T>, rng: Option<&mut ChaCha8Rng>) -> Result<(Tensor<T>, Aux<T>)> {
        let p = info.param;
        let wb = |p: Option<usize>| {
            let p = p.expect("parametric layer");
            (&self.params[p], &self.params[p + 1])
        };
        Ok(match *spec {
            LayerSpec::Dense { .. } => {
                let (w, b) = wb(p);
                (layers::dense_forward(x, w, b)?, Aux::None)
            }
            LayerSpec::Conv1d { stride, .. } => {
                let (w, b) = wb(p);
                (layers::conv1d_forward(x, w, b, stride)?, Aux::None)
            }
            LayerSpec::Conv2d { stride, .. } => {
                let (w, b) = wb(p);
                (layers::conv2d_forward(x, w, b, stride)?, Aux::None)
            }
            LayerSpec::MaxPool1d { size } => {
                let (y, idx) = layers::max_pool1d_forward(x, size);
                (y, Aux::Argmax(idx))
            }
            LayerSpec::MaxPool2d { size } => {
                let (y, idx) = layers::max_pool2d_forward(x, size);
                (y, Aux::Argmax(idx))
            }
            LayerSpec::GlobalMaxPool => {
                let (y, idx) = layers::global_max_pool_forward(x);
                (y, Aux::Argmax(idx))
            }
            LayerSpec::Dropout { rate } => match rng {
                Some(rng) => {
                    let mask = layers::dropout_mask(x.len(), rate, rng);
                    (layers::apply_mask(x, &mask), Aux::Mask(mask))
                }
                None => (x.clone(), Aux::None),
            },
            LayerSpec::Relu => (layers::relu_forward(x), Aux::None),
            LayerSpec::Flatten => (x.clone().reshape(&[x.len()])?, Aux::None),
            LayerSpec::Concat => (x.clone(), Aux::None),
        })
    }

    fn run_stage(
        &self,
        name: &str,
        specs: &[LayerSpec],
        infos: &[LayerInfo],
        start: usize,
        x: Tensor<T>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<StageCache<T>> {
        let mut acts = Vec::with_capacity(specs.len() + 1 - start);
        let mut aux = Vec::with_capacity(specs.len() - start);
        acts.push(x);
        for i in start..specs.len() {
            let (y, a) = self
                .apply(&specs[i], &infos[i], acts.last().expect("input"), rng.as_deref_mut())
                .map_err(|e| match e {
                    Error::LayerShape { detail, .. } => shape_error(name, i, &specs[i], detail),
                    other => other,
                })?;
            acts.push(y);
            aux.push(a);
        }
        Ok(StageCache { start, acts, aux })
    }

    pub fn forward(&self, input: &ModelInput<T>, mode: Mode) -> Result<ForwardCache<T>> {
        let nb = self.arch.branches.len();
        if input.branches.len() != nb || input.stems.len() != nb {
            return Err(Error::Shape(format!(
                "model has {nb} branches, input provides {}",
                input.branches.len()
            )));
        }
        let mut rng = match mode {
            Mode::Eval => None,
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        };
        let mut branches = Vec::with_capacity(nb);
        let mut head_in = Vec::new();
        for (b, br) in self.arch.branches.iter().enumerate() {
            let stem = input.stems[b];
            let x = &input.branches[b];
            if stem > br.layers.len() || x.shape() != self.branch_shape_at(b, stem) {
                return Err(Error::LayerShape {
                    branch: br.name.clone(),
                    layer: format!("{stem}"),
                    detail: format!(
                        "input shape {:?} does not match expected {:?}",
                        x.shape(),
                        if stem <= br.layers.len() { self.branch_shape_at(b, stem).to_vec() } else { vec![] }
                    ),
                });
            }
            let st = self.run_stage(&br.name, &br.layers, &self.branch_layout[b], stem, x.clone(), rng.as_mut())?;
            head_in.extend_from_slice(st.acts.last().expect("output").data());
            branches.push(st);
        }
        let n = head_in.len();
        let head_x = Tensor::from_vec(&[n], head_in)?;
        let head = self.run_stage("head", &self.arch.head, &self.head_layout, 0, head_x, rng.as_mut())?;
        Ok(ForwardCache {
            version: self.version,
            branches,
            head,
        })
    }

    /// Discrete state of a pass: ReLU signs and pooling winners. Two passes with
    /// equal signatures lie in the same piecewise-linear region of the network.
    pub(crate) fn region_signature(&self, cache: &ForwardCache<T>) -> Vec<usize> {
        let mut sig = Vec::new();
        let stages = self
            .arch
            .branches
            .iter()
            .map(|b| b.layers.as_slice())
            .zip(&cache.branches)
            .chain(std::iter::once((self.arch.head.as_slice(), &cache.head)));
        for (specs, st) in stages {
            for (j, aux) in st.aux.iter().enumerate() {
                match (aux, &specs[st.start + j]) {
                    (Aux::Argmax(idx), _) => sig.extend_from_slice(idx),
                    (_, LayerSpec::Relu) => sig.extend(st.acts[j + 1].data().iter().map(|v| (*v > T::zero()) as usize)),
                    _ => {}
                }
            }
        }
        sig
    }

    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    /// Full reverse pass returning parameter and activation gradients.
    pub fn backward(&self, cache: &ForwardCache<T>, d_logits: &[T]) -> Result<Gradients<T>> {
        let mut params = self.zero_grads();
        let activations = self.backward_impl(cache, d_logits, &mut params, true)?;
        Ok(Gradients { params, activations })
    }

    /// Adds parameter gradients into `grads` without keeping activation gradients.
    pub fn accumulate_gradients(&self, cache: &ForwardCache<T>, d_logits: &[T], grads: &mut [Tensor<T>]) -> Result<()> {
        self.backward_impl(cache, d_logits, grads, false).map(|_| ())
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache<T>,
        d_logits: &[T],
        grads: &mut [Tensor<T>],
        keep: bool,
    ) -> Result<Vec<Vec<Option<Tensor<T>>>>> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cache: cache.version,
                model: self.version,
            });
        }
        if d_logits.len() != self.num_classes() || grads.len() != self.params.len() {
            return Err(Error::Shape("gradient buffers do not match the model".into()));
        }
        let g = Tensor::from_vec(&[d_logits.len()], d_logits.to_vec())?;
        let (g_head, _) = self.stage_backward(&self.arch.head, &self.head_layout, &cache.head, g, grads, false, true);
        let g_head = g_head.expect("head input gradient");
        let mut act_grads = Vec::with_capacity(self.arch.branches.len());
        let mut offset = 0;
        for (b, br) in self.arch.branches.iter().enumerate() {
            let out_len = cache.branch_output(b).len();
            let g_out = Tensor::from_vec(&[out_len], g_head.data()[offset..offset + out_len].to_vec())?;
            offset += out_len;
            let (_, kept) = self.stage_backward(&br.layers, &self.branch_layout[b], &cache.branches[b], g_out, grads, keep, false);
            act_grads.push(kept);
        }
        Ok(act_grads)
    }

    /// Returns the stage-input gradient (when `need_input`) and, when `keep`, the
    /// gradient with respect to every layer output indexed by absolute layer position.
    #[allow(clippy::too_many_arguments)]
    fn stage_backward(
        &self,
        specs: &[LayerSpec],
        infos: &[LayerInfo],
        st: &StageCache<T>,
        mut g: Tensor<T>,
        grads: &mut [Tensor<T>],
        keep: bool,
        need_input: bool,
    ) -> (Option<Tensor<T>>, Vec<Option<Tensor<T>>>) {
        let mut kept = vec![None; specs.len()];
        for i in (st.start..specs.len()).rev() {
            let j = i - st.start;
            if keep {
                kept[i] = Some(g.clone());
            }
            let need_dx = i > st.start || need_input;
            if !need_dx && !specs[i].has_params() {
                break;
            }
            let x = &st.acts[j];
            let y = &st.acts[j + 1];
            let dx = match (&specs[i], &st.aux[j]) {
                (LayerSpec::Dense { .. }, _) | (LayerSpec::Conv1d { .. }, _) | (LayerSpec::Conv2d { .. }, _) => {
                    let p = infos[i].param.expect("parametric layer");
                    let (lo, hi) = grads.split_at_mut(p + 1);
                    let (dw, db) = (&mut lo[p], &mut hi[0]);
                    let w = &self.params[p];
                    match specs[i] {
                        LayerSpec::Dense { .. } => layers::dense_backward(x, w, &g, dw, db, need_dx),
                        LayerSpec::Conv1d { stride, .. } => layers::conv1d_backward(x, w, stride, &g, dw, db, need_dx),
                        LayerSpec::Conv2d { stride, .. } => layers::conv2d_backward(x, w, stride, &g, dw, db, need_dx),
                        _ => unreachable!(),
                    }
                }
                (_, Aux::Argmax(idx)) => Some(layers::scatter_argmax(x.shape(), idx, &g)),
                (LayerSpec::Dropout { .. }, Aux::Mask(mask)) => Some(layers::apply_mask(&g, mask)),
                (LayerSpec::Relu, _) => Some(layers::relu_backward(y, &g)),
                (LayerSpec::Flatten, _) => Some(g.clone().reshape(x.shape()).expect("flatten inverse")),
                _ => Some(g.clone()),
            };
            match dx {
                Some(d) if need_dx => g = d,
                _ => return (None, kept),
            }
        }
        (need_input.then_some(g), kept)
    }

    pub fn predict(&self, input: &ModelInput<T>) -> Result<Prediction> {
        let cache = self.forward(input, Mode::Eval)?;
        let probabilities = softmax(cache.logits());
        let class_index = argmax_lowest(&probabilities);
        Ok(Prediction {
            class_index,
            class_id: self.class_ids()[class_index],
            probabilities,
        })
    }

    pub fn predict_batch(&self, inputs: &[ModelInput<T>]) -> Result<Vec<Prediction>> {
        inputs.iter().map(|x| self.predict(x)).collect()
    }
}

pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<f64> {
    let z: Vec<f64> = logits.iter().map(|v| v.to_f64_lossy()).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Loss `-log softmax(z)[target]` and its gradient `softmax(z) - one_hot(target)`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &[T], target: usize) -> (f64, Vec<T>) {
    let z: Vec<f64> = logits.iter().map(|v| v.to_f64_lossy()).collect();
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let p = softmax(logits);
    let grad = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| T::of(pi - if i == target { 1.0 } else { 0.0 }))
        .collect();
    (lse - z[target], grad)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nn::arch::{BranchSpec, InputSelector};
    use crate::preprocess::PipelineConfig;
    use rand::Rng;

    pub(crate) fn meta_for(len: usize) -> ModelMeta {
        ModelMeta {
            pipeline: PipelineConfig {
                extract_len: len,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub(crate) fn classes(n: usize) -> ClassMap {
        (0..n as u32).map(|i| (i * 10, format!("c{i}"))).collect()
    }

    fn tiny_arch() -> Architecture {
        Architecture {
            branches: vec![
                BranchSpec {
                    name: "a".into(),
                    input: InputSelector::Signals1d(vec![0, 1]),
                    layers: vec![
                        LayerSpec::Conv1d { filters: 3, kernel: 4, stride: 2 },
                        LayerSpec::Relu,
                        LayerSpec::GlobalMaxPool,
                    ],
                },
                BranchSpec {
                    name: "b".into(),
                    input: InputSelector::Scaleograms2d(vec![2]),
                    layers: vec![
                        LayerSpec::MaxPool2d { size: [2, 2] },
                        LayerSpec::Conv2d { filters: 2, kernel: [2, 3], stride: [1, 2] },
                        LayerSpec::Relu,
                        LayerSpec::Flatten,
                    ],
                },
            ],
            head: vec![LayerSpec::Concat, LayerSpec::Dense { units: 4 }, LayerSpec::Relu, LayerSpec::Dense { units: 3 }],
            input_len: 12,
            scaleogram_height: 6,
        }
    }

    fn random_input(m: &ModelGraph<f64>, seed: u64) -> ModelInput<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let branches = (0..m.arch().branches.len())
            .map(|b| {
                let s = m.branch_shape_at(b, 0).to_vec();
                let n = s.iter().product();
                Tensor::from_vec(&s, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            })
            .collect();
        ModelInput::raw(branches)
    }

    /// Straightforward re-evaluation that shares no code with the cached forward pass.
    fn interpret(m: &ModelGraph<f64>, input: &ModelInput<f64>) -> Vec<f64> {
        let mut p = 0;
        let mut next = || {
            let w = m.params()[p].clone();
            let b = m.params()[p + 1].clone();
            p += 2;
            (w, b)
        };
        let mut feats = Vec::new();
        for (bi, br) in m.arch().branches.iter().enumerate() {
            let mut shape = input.branches[bi].shape().to_vec();
            let mut v = input.branches[bi].data().to_vec();
            for l in &br.layers {
                match *l {
                    LayerSpec::Conv1d { stride, .. } => {
                        let (w, b) = next();
                        let (c, len, f, k) = (shape[0], shape[1], w.shape()[0], w.shape()[2]);
                        let lo = (len - k) / stride + 1;
                        let mut out = vec![0.0; f * lo];
                        for fi in 0..f {
                            for t in 0..lo {
                                let mut acc = b.data()[fi];
                                for ci in 0..c {
                                    for kk in 0..k {
                                        acc += w.data()[(fi * c + ci) * k + kk] * v[ci * len + t * stride + kk];
                                    }
                                }
                                out[fi * lo + t] = acc;
                            }
                        }
                        v = out;
                        shape = vec![f, lo];
                    }
                    LayerSpec::Conv2d { stride, .. } => {
                        let (w, b) = next();
                        let (c, h, wd) = (shape[0], shape[1], shape[2]);
                        let (f, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
                        let (ho, wo) = ((h - kh) / stride[0] + 1, (wd - kw) / stride[1] + 1);
                        let mut out = vec![0.0; f * ho * wo];
                        for fi in 0..f {
                            for i in 0..ho {
                                for j in 0..wo {
                                    let mut acc = b.data()[fi];
                                    for ci in 0..c {
                                        for u in 0..kh {
                                            for q in 0..kw {
                                                acc += w.data()[((fi * c + ci) * kh + u) * kw + q]
                                                    * v[(ci * h + i * stride[0] + u) * wd + j * stride[1] + q];
                                            }
                                        }
                                    }
                                    out[(fi * ho + i) * wo + j] = acc;
                                }
                            }
                        }
                        v = out;
                        shape = vec![f, ho, wo];
                    }
                    LayerSpec::MaxPool2d { size } => {
                        let (c, h, wd) = (shape[0], shape[1], shape[2]);
                        let (ho, wo) = (h / size[0], wd / size[1]);
                        let mut out = Vec::new();
                        for ci in 0..c {
                            for i in 0..ho {
                                for j in 0..wo {
                                    let mut best = f64::NEG_INFINITY;
                                    for u in 0..size[0] {
                                        for q in 0..size[1] {
                                            best = best.max(v[(ci * h + i * size[0] + u) * wd + j * size[1] + q]);
                                        }
                                    }
                                    out.push(best);
                                }
                            }
                        }
                        v = out;
                        shape = vec![c, ho, wo];
                    }
                    LayerSpec::GlobalMaxPool => {
                        let per = v.len() / shape[0];
                        v = v.chunks(per).map(|c| c.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
                        shape = vec![shape[0]];
                    }
                    LayerSpec::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
                    LayerSpec::Flatten => shape = vec![v.len()],
                    _ => unreachable!(),
                }
            }
            feats.extend(v);
        }
        let mut v = feats;
        for l in &m.arch().head {
            match *l {
                LayerSpec::Dense { .. } => {
                    let (w, b) = next();
                    let n = v.len();
                    v = (0..w.shape()[0])
                        .map(|o| b.data()[o] + (0..n).map(|i| w.data()[o * n + i] * v[i]).sum::<f64>())
                        .collect();
                }
                LayerSpec::Relu => v.iter_mut().for_each(|x| *x = x.max(0.0)),
                _ => {}
            }
        }
        v
    }

    fn tiny(seed: u64) -> ModelGraph<f64> {
        ModelGraph::new(tiny_arch(), classes(3), meta_for(12), seed).unwrap()
    }

    #[test]
    fn forward_matches_interpreter() {
        for seed in 0..20 {
            let m = tiny(seed);
            let x = random_input(&m, seed + 100);
            let cache = m.forward(&x, Mode::Eval).unwrap();
            for (a, b) in cache.logits().iter().zip(interpret(&m, &x)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut m = tiny(1);
        m.params_mut().iter_mut().for_each(|p| p.fill(0.0));
        let p = m.predict(&random_input(&m, 2)).unwrap();
        assert!(p.probabilities.iter().all(|&q| (q - 1.0 / 3.0).abs() < 1e-12));
        assert_eq!(p.class_index, 0);
        assert_eq!(p.class_id, 0);
    }

    #[test]
    fn single_dense_identity() {
        let arch = Architecture {
            branches: vec![BranchSpec {
                name: "x".into(),
                input: InputSelector::Signals1d(vec![0]),
                layers: vec![LayerSpec::Flatten],
            }],
            head: vec![LayerSpec::Dense { units: 3 }],
            input_len: 3,
            scaleogram_height: 128,
        };
        let mut m: ModelGraph<f64> = ModelGraph::new(arch, classes(3), meta_for(3), 0).unwrap();
        let eye = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        m.params_mut()[0] = eye;
        let x = ModelInput::raw(vec![Tensor::from_vec(&[1, 3], vec![0.5, -2.0, 7.0]).unwrap()]);
        assert_eq!(m.forward(&x, Mode::Eval).unwrap().logits(), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn shape_mismatch_names_branch_and_layer() {
        let m = tiny(0);
        let mut x = random_input(&m, 0);
        x.branches[1] = Tensor::zeros(&[1, 6, 11]);
        match m.forward(&x, Mode::Eval) {
            Err(Error::LayerShape { branch, .. }) => assert_eq!(branch, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut m = tiny(0);
        let x = random_input(&m, 0);
        let cache = m.forward(&x, Mode::Eval).unwrap();
        m.params_mut()[0].data_mut()[0] += 1.0;
        assert!(matches!(m.backward(&cache, &[1.0, 0.0, 0.0]), Err(Error::StaleCache { .. })));
        let other = tiny(0);
        assert!(matches!(other.backward(&cache, &[1.0, 0.0, 0.0]), Err(Error::StaleCache { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let m = tiny(3);
        let x = random_input(&m, 4);
        let cache = m.forward(&x, Mode::Eval).unwrap();
        let g = m.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.params.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn dead_relu_blocks_gradient() {
        let mut m = tiny(3);
        // Strongly negative first-conv bias: every ReLU in branch a is inactive.
        m.params_mut()[1].fill(-100.0);
        let x = random_input(&m, 4);
        let cache = m.forward(&x, Mode::Eval).unwrap();
        let g = m.backward(&cache, &[1.0, -1.0, 0.5]).unwrap();
        assert!(g.params[0].data().iter().all(|&v| v == 0.0));
        assert!(g.params[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_one_hot() {
        let z = [1.5f64, -0.3, 0.2, 4.0];
        let (loss, g) = softmax_cross_entropy(&z, 2);
        let p = softmax(&z);
        for i in 0..4 {
            let want = p[i] - if i == 2 { 1.0 } else { 0.0 };
            assert!((g[i] - want).abs() < 1e-9);
        }
        assert!((loss + p[2].ln()).abs() < 1e-12);
        let p = softmax(&[10.0f64, -10.0]);
        assert_eq!(argmax_lowest(&p), 0);
        assert!(p[0] > 0.999);
        assert!((softmax(&[1e3f64, 1e3 - 1.0, -1e3]).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn batch_predict_equals_single() {
        let m = tiny(5);
        let xs: Vec<_> = (0..4).map(|s| random_input(&m, s)).collect();
        let batch = m.predict_batch(&xs).unwrap();
        for (x, p) in xs.iter().zip(&batch) {
            assert_eq!(&m.predict(x).unwrap(), p);
            assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn dropout_identity_in_eval_and_seeded_in_train() {
        let mut arch = tiny_arch();
        arch.branches[0].layers.push(LayerSpec::Dropout { rate: 0.3 });
        let m: ModelGraph<f64> = ModelGraph::new(arch, classes(3), meta_for(12), 1).unwrap();
        let x = random_input(&m, 1);
        let a = m.forward(&x, Mode::Train { seed: 9 }).unwrap();
        let b = m.forward(&x, Mode::Train { seed: 9 }).unwrap();
        assert_eq!(a.logits(), b.logits());
        let e = m.forward(&x, Mode::Eval).unwrap();
        assert_eq!(e.branch_output(0), e.branch_activation(0, 2).unwrap());
    }

    #[test]
    fn stem_precompute_matches_full_forward() {
        let m = tiny(8);
        let x = random_input(&m, 3);
        assert_eq!(m.stem_len(1), 1);
        let stemmed = m.run_branch_prefix(1, &x.branches[1], 0, 1).unwrap();
        let y = ModelInput {
            branches: vec![x.branches[0].clone(), stemmed],
            stems: vec![0, 1],
        };
        assert_eq!(m.forward(&x, Mode::Eval).unwrap().logits(), m.forward(&y, Mode::Eval).unwrap().logits());
    }

    #[test]
    fn invalid_architectures() {
        let mut a = tiny_arch();
        a.branches[0].layers.pop();
        assert!(matches!(
            ModelGraph::<f64>::new(a, classes(3), meta_for(12), 0),
            Err(Error::LayerShape { .. })
        ));
        let mut a = tiny_arch();
        a.branches[1].input = InputSelector::Scaleograms2d(vec![7]);
        assert!(ModelGraph::<f64>::new(a, classes(3), meta_for(12), 0).is_err());
        assert!(matches!(
            ModelGraph::<f64>::new(tiny_arch(), classes(2), meta_for(12), 0),
            Err(Error::ClassMapMismatch(_))
        ));
    }
}
