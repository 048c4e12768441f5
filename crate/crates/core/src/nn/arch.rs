//! Multi-branch architecture descriptions, the preset catalogue and the design-rule linter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::LayerSpec;
use crate::error::{Error, Result};
use crate::record::{ActionKind, FORCE_CHANNELS, POSITION_CHANNELS, TORQUE_CHANNELS, WRENCH_CHANNELS};

/// Which view of the preprocessed window a branch consumes. Indices refer to
/// rows of the pipeline output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSelector {
    Signals1d(Vec<usize>),
    Scaleograms2d(Vec<usize>),
}

impl InputSelector {
    pub fn channels(&self) -> &[usize] {
        match self {
            InputSelector::Signals1d(c) | InputSelector::Scaleograms2d(c) => c,
        }
    }

    pub fn is_2d(&self) -> bool {
        matches!(self, InputSelector::Scaleograms2d(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    pub name: String,
    pub input: InputSelector,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub branches: Vec<BranchSpec>,
    /// Applied to the concatenated branch outputs.
    pub head: Vec<LayerSpec>,
    /// Samples per input window.
    pub input_len: usize,
    /// Rows of each scaleogram fed to 2D branches.
    pub scaleogram_height: usize,
}

impl Architecture {
    /// Input shape of a branch before any layer.
    pub fn branch_input_shape(&self, b: usize) -> Vec<usize> {
        let br = &self.branches[b];
        let k = br.input.channels().len();
        if br.input.is_2d() {
            vec![k, self.scaleogram_height, self.input_len]
        } else {
            vec![k, self.input_len]
        }
    }

    /// Number of trainable scalars, computed from the layer shapes.
    pub fn param_count(&self) -> Result<usize> {
        let mut total = 0;
        let mut head_in = 0;
        for (b, br) in self.branches.iter().enumerate() {
            let mut shape = self.branch_input_shape(b);
            for l in &br.layers {
                if let Some((w, bias)) = l.param_shapes(&shape) {
                    total += w.iter().product::<usize>() + bias.iter().product::<usize>();
                }
                shape = l.output_shape(&shape).map_err(Error::Config)?;
            }
            head_in += shape.iter().product::<usize>();
        }
        let mut shape = vec![head_in];
        for l in &self.head {
            if let Some((w, bias)) = l.param_shapes(&shape) {
                total += w.iter().product::<usize>() + bias.iter().product::<usize>();
            }
            shape = l.output_shape(&shape).map_err(Error::Config)?;
        }
        Ok(total)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    FfAnn,
    Cnn1d,
    Cnn2d,
    HybridAll,
    HybridUnitMeasure,
    HybridSpecific,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::FfAnn,
        Preset::Cnn1d,
        Preset::Cnn2d,
        Preset::HybridAll,
        Preset::HybridUnitMeasure,
        Preset::HybridSpecific,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::FfAnn => "ff-ann",
            Preset::Cnn1d => "cnn1d",
            Preset::Cnn2d => "cnn2d",
            Preset::HybridAll => "hybrid-all",
            Preset::HybridUnitMeasure => "hybrid-unit-measure",
            Preset::HybridSpecific => "hybrid-specific",
        }
    }

    pub fn uses_scaleograms(self) -> bool {
        !matches!(self, Preset::FfAnn | Preset::Cnn1d)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str().replace('-', "") == key)
            .ok_or_else(|| Error::Config(format!("unknown preset '{s}'")))
    }
}

fn conv1d_branch(name: &str, channels: &[usize]) -> BranchSpec {
    BranchSpec {
        name: name.into(),
        input: InputSelector::Signals1d(channels.to_vec()),
        layers: vec![
            LayerSpec::Conv1d { filters: 16, kernel: 24, stride: 6 },
            LayerSpec::Relu,
            LayerSpec::Conv1d { filters: 32, kernel: 20, stride: 2 },
            LayerSpec::Relu,
            LayerSpec::GlobalMaxPool,
            LayerSpec::Dropout { rate: 0.3 },
        ],
    }
}

fn conv2d_branch(name: &str, channels: &[usize]) -> BranchSpec {
    BranchSpec {
        name: name.into(),
        input: InputSelector::Scaleograms2d(channels.to_vec()),
        layers: vec![
            LayerSpec::MaxPool2d { size: [4, 4] },
            LayerSpec::Conv2d {
                filters: 8,
                kernel: [4, 20],
                stride: [2, 4],
            },
            LayerSpec::Relu,
            LayerSpec::Conv2d {
                filters: 16,
                kernel: [3, 5],
                stride: [1, 1],
            },
            LayerSpec::Relu,
            LayerSpec::GlobalMaxPool,
            LayerSpec::Dropout { rate: 0.3 },
        ],
    }
}

fn dense_head(num_classes: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Dense { units: 64 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.2 },
        LayerSpec::Dense { units: 32 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: 16 },
        LayerSpec::Relu,
        LayerSpec::Dense { units: num_classes },
    ]
}

/// Architecture for a preset. All action kinds currently share the same layer
/// stacks; the kind is accepted so per-action variants can be introduced
/// without changing callers.
pub fn build_preset(
    _kind: ActionKind,
    preset: Preset,
    num_classes: usize,
    input_len: usize,
    scaleogram_height: usize,
) -> Architecture {
    let all: Vec<usize> = (0..9).collect();
    let branches = match preset {
        Preset::FfAnn => vec![BranchSpec {
            name: "signals".into(),
            input: InputSelector::Signals1d(all),
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 64 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.3 },
            ],
        }],
        Preset::Cnn1d => vec![
            conv1d_branch("forces", &FORCE_CHANNELS),
            conv1d_branch("torques", &TORQUE_CHANNELS),
            conv1d_branch("positions", &POSITION_CHANNELS),
        ],
        Preset::Cnn2d => vec![conv2d_branch("wrench_scaleograms", &WRENCH_CHANNELS)],
        Preset::HybridAll => vec![
            conv1d_branch("signals", &all),
            conv2d_branch("wrench_scaleograms", &WRENCH_CHANNELS),
        ],
        Preset::HybridUnitMeasure => vec![
            conv1d_branch("forces", &FORCE_CHANNELS),
            conv1d_branch("torques", &TORQUE_CHANNELS),
            conv1d_branch("positions", &POSITION_CHANNELS),
            conv2d_branch("force_scaleograms", &FORCE_CHANNELS),
            conv2d_branch("torque_scaleograms", &TORQUE_CHANNELS),
        ],
        Preset::HybridSpecific => vec![
            conv1d_branch("forces", &FORCE_CHANNELS),
            conv1d_branch("torques", &TORQUE_CHANNELS),
            conv1d_branch("positions", &POSITION_CHANNELS),
            conv2d_branch("wrench_scaleograms", &WRENCH_CHANNELS),
        ],
    };
    Architecture {
        branches,
        head: dense_head(num_classes),
        input_len,
        scaleogram_height,
    }
}

pub const DEFAULT_PARAM_CAP: usize = 8_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LintIssue {
    /// `branch/layer` or `head/layer`.
    pub location: String,
    pub rule: String,
    pub detail: String,
}

/// Checks an architecture against the design ranges: Conv1d kernels 20–100 with
/// strides 10–50 % of the kernel, filters doubling with depth, dropout 20–40 %,
/// global max pooling closing every convolutional branch, a non-increasing dense
/// taper with hidden widths ≥ 16 ending in `num_classes`, and a parameter cap.
pub fn lint(arch: &Architecture, num_classes: usize, param_cap: usize) -> Vec<LintIssue> {
    let mut issues = Vec::new();
    let mut push = |location: String, rule: &str, detail: String| {
        issues.push(LintIssue {
            location,
            rule: rule.into(),
            detail,
        })
    };
    let mut dense_paths: Vec<(String, Vec<usize>)> = Vec::new();
    for br in &arch.branches {
        let mut last_filters: Option<usize> = None;
        let mut last_conv = None;
        let mut dense = Vec::new();
        for (i, l) in br.layers.iter().enumerate() {
            let loc = format!("{}/{i}", br.name);
            match *l {
                LayerSpec::Conv1d { filters, kernel, stride } => {
                    if !(20..=100).contains(&kernel) {
                        push(loc.clone(), "conv1d-kernel", format!("kernel {kernel} outside 20..=100"));
                    }
                    let s = stride as f64;
                    if s < 0.1 * kernel as f64 || s > 0.5 * kernel as f64 {
                        push(loc.clone(), "conv1d-stride", format!("stride {stride} outside 10–50% of kernel {kernel}"));
                    }
                    check_doubling(&mut push, &loc, &mut last_filters, filters);
                    last_conv = Some(i);
                }
                LayerSpec::Conv2d { filters, .. } => {
                    check_doubling(&mut push, &loc, &mut last_filters, filters);
                    last_conv = Some(i);
                }
                LayerSpec::Dropout { rate } => check_dropout(&mut push, &loc, rate),
                LayerSpec::Dense { units } => dense.push(units),
                LayerSpec::Concat => push(loc, "concat-position", "concat is only valid at the start of the head".into()),
                _ => {}
            }
        }
        if let Some(c) = last_conv {
            if !br.layers[c..].iter().any(|l| *l == LayerSpec::GlobalMaxPool) {
                push(br.name.clone(), "global-pooling", "no global max pooling after the last convolution".into());
            }
        }
        dense_paths.push((br.name.clone(), dense));
    }
    let mut head_dense = Vec::new();
    for (i, l) in arch.head.iter().enumerate() {
        let loc = format!("head/{i}");
        match *l {
            LayerSpec::Dense { units } => head_dense.push(units),
            LayerSpec::Dropout { rate } => check_dropout(&mut push, &loc, rate),
            LayerSpec::Concat if i == 0 => {}
            LayerSpec::Relu | LayerSpec::Flatten => {}
            ref other => push(loc, "head-layer", format!("{} not allowed in the head", other.kind_name())),
        }
    }
    match head_dense.last() {
        Some(&c) if c == num_classes => {}
        other => push(
            "head".into(),
            "output-width",
            format!("final dense width {other:?} differs from {num_classes} classes"),
        ),
    }
    for (name, mut widths) in dense_paths {
        widths.extend(&head_dense);
        let hidden = &widths[..widths.len().saturating_sub(1)];
        if let Some(&w) = hidden.iter().find(|&&w| w < 16) {
            push(name.clone(), "dense-minimum", format!("hidden width {w} below 16"));
        }
        if hidden.windows(2).any(|p| p[1] > p[0]) {
            push(name, "dense-taper", format!("widths {hidden:?} are not non-increasing"));
        }
    }
    match arch.param_count() {
        Ok(n) if n <= param_cap => {}
        Ok(n) => push("model".into(), "param-cap", format!("{n} parameters exceed {param_cap}")),
        Err(e) => push("model".into(), "shapes", e.to_string()),
    }
    for br in &arch.branches {
        if br.input.is_2d() {
            if let Some(c) = br.input.channels().iter().find(|c| !WRENCH_CHANNELS.contains(c)) {
                push(br.name.clone(), "scaleogram-channels", format!("channel {c} is not a force/torque channel"));
            }
        }
    }
    issues
}

fn check_dropout(push: &mut impl FnMut(String, &str, String), loc: &str, rate: f64) {
    if !(0.2..=0.4).contains(&rate) {
        push(loc.into(), "dropout-rate", format!("rate {rate} outside 0.2..=0.4"));
    }
}

fn check_doubling(push: &mut impl FnMut(String, &str, String), loc: &str, last: &mut Option<usize>, filters: usize) {
    if let Some(prev) = *last {
        if filters != 2 * prev {
            push(loc.into(), "filter-doubling", format!("{filters} filters after {prev}"));
        }
    }
    *last = Some(filters);
}
