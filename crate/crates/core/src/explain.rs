//! Grad-CAM attributions for 1D signal branches and 2D scaleogram branches.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::{softmax, Mode, ModelGraph, ModelInput};
use crate::render;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which class score is differentiated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Logit,
    Probability,
}

/// How per-filter weights are pooled from the activation gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Max,
    Average,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GradCamOptions {
    pub score: ScoreMode,
    pub weighting: Weighting,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attribution {
    /// `[L_in]` for signal branches, `[H, L_in]` for scaleogram branches; values in `[0, 1]`.
    pub heatmap: Tensor<f64>,
    /// Class-weighted activation map at layer resolution, before normalization.
    pub raw: Tensor<f64>,
    pub target_class: u32,
    pub branch: String,
    pub source_layer: String,
}

pub fn gradcam_1d<T: Scalar>(
    model: &ModelGraph<T>,
    input: &ModelInput<T>,
    target_class: u32,
    branch: usize,
    opts: GradCamOptions,
) -> Result<Attribution> {
    check_branch(model, branch, false)?;
    gradcam(model, input, target_class, branch, opts)
}

pub fn gradcam_2d<T: Scalar>(
    model: &ModelGraph<T>,
    input: &ModelInput<T>,
    target_class: u32,
    branch: usize,
    opts: GradCamOptions,
) -> Result<Attribution> {
    check_branch(model, branch, true)?;
    gradcam(model, input, target_class, branch, opts)
}

fn check_branch<T: Scalar>(model: &ModelGraph<T>, branch: usize, want_2d: bool) -> Result<()> {
    let Some(br) = model.arch().branches.get(branch) else {
        return Err(Error::OutOfRange {
            index: branch,
            len: model.arch().branches.len(),
        });
    };
    if br.input.is_2d() != want_2d {
        return Err(Error::Attribution(format!(
            "branch {} takes {} input",
            br.name,
            if br.input.is_2d() { "scaleogram" } else { "signal" }
        )));
    }
    Ok(())
}

/// Grad-CAM for any branch, dispatching on its input kind.
pub fn gradcam<T: Scalar>(
    model: &ModelGraph<T>,
    input: &ModelInput<T>,
    target_class: u32,
    branch: usize,
    opts: GradCamOptions,
) -> Result<Attribution> {
    let arch = model.arch();
    let br = arch.branches.get(branch).ok_or(Error::OutOfRange {
        index: branch,
        len: arch.branches.len(),
    })?;
    let Some((_, act_layer)) = model.last_conv(branch) else {
        return Err(Error::Attribution(format!("branch {} has no convolutional layer", br.name)));
    };
    let target = model
        .class_ids()
        .iter()
        .position(|&c| c == target_class)
        .ok_or_else(|| Error::Attribution(format!("class id {target_class} is not in the model's class map")))?;

    let cache = model.forward(input, Mode::Eval)?;
    let mut d = vec![T::zero(); model.num_classes()];
    match opts.score {
        ScoreMode::Logit => d[target] = T::one(),
        ScoreMode::Probability => {
            let p = softmax(cache.logits());
            for (j, dj) in d.iter_mut().enumerate() {
                let onehot = if j == target { 1.0 } else { 0.0 };
                *dj = T::of(p[target] * (onehot - p[j]));
            }
        }
    }
    let grads = model.backward(&cache, &d)?;
    let a = cache
        .branch_activation(branch, act_layer)
        .ok_or_else(|| Error::Attribution(format!("branch {} activation not recorded", br.name)))?;
    let g = grads.activations[branch][act_layer].as_ref().expect("activation gradient kept");

    let filters = a.shape()[0];
    let per = a.len() / filters;
    let mut cam = vec![0.0; per];
    for k in 0..filters {
        let gk = &g.data()[k * per..(k + 1) * per];
        let alpha = match opts.weighting {
            Weighting::Max => gk.iter().map(|v| v.to_f64_lossy()).fold(f64::NEG_INFINITY, f64::max),
            Weighting::Average => gk.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / per as f64,
        };
        for (c, v) in cam.iter_mut().zip(&a.data()[k * per..(k + 1) * per]) {
            *c += alpha * v.to_f64_lossy();
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));

    let (raw, heatmap) = if br.input.is_2d() {
        let (h, w) = (a.shape()[1], a.shape()[2]);
        let raw = Tensor::from_vec(&[h, w], cam)?;
        let up = resample_bilinear(&raw, arch.scaleogram_height, arch.input_len)?;
        (raw, up)
    } else {
        let raw = Tensor::from_vec(&[per], cam)?;
        let up = Tensor::from_vec(&[arch.input_len], resample_linear(raw.data(), arch.input_len))?;
        (raw, up)
    };
    Ok(Attribution {
        heatmap: normalize_heat(heatmap),
        raw,
        target_class,
        branch: br.name.clone(),
        source_layer: format!("{}.{act_layer}.{}", br.name, br.layers[act_layer].kind_name()),
    })
}

/// Endpoint-aligned linear interpolation to `n` samples.
pub fn resample_linear(x: &[f64], n: usize) -> Vec<f64> {
    match (x.len(), n) {
        (_, 0) | (0, _) => vec![0.0; n],
        (1, _) => vec![x[0]; n],
        (m, 1) => vec![x[m / 2]],
        (m, _) => (0..n)
            .map(|i| {
                let pos = i as f64 * (m - 1) as f64 / (n - 1) as f64;
                let j = (pos.floor() as usize).min(m - 2);
                let t = pos - j as f64;
                x[j] * (1.0 - t) + x[j + 1] * t
            })
            .collect(),
    }
}

/// Bilinear resampling of a `[h, w]` map to `[rows, cols]`.
pub fn resample_bilinear(m: &Tensor<f64>, rows: usize, cols: usize) -> Result<Tensor<f64>> {
    let wide: Vec<Vec<f64>> = (0..m.rows()).map(|r| resample_linear(m.row(r), cols)).collect();
    let mut out = Tensor::zeros(&[rows, cols]);
    for c in 0..cols {
        let col: Vec<f64> = wide.iter().map(|r| r[c]).collect();
        for (r, v) in resample_linear(&col, rows).into_iter().enumerate() {
            out.set2(r, c, v);
        }
    }
    Ok(out)
}

/// Min-max scaling to `[0, 1]`. An all-zero map stays zero; a constant positive
/// map becomes all ones.
pub fn normalize_heat(mut h: Tensor<f64>) -> Tensor<f64> {
    let (lo, hi) = (h.min(), h.max());
    if hi <= 0.0 {
        h.fill(0.0);
    } else if hi - lo <= hi * 1e-12 {
        h.fill(1.0);
    } else {
        let span = hi - lo;
        h.data_mut().iter_mut().for_each(|v| *v = (*v - lo) / span);
    }
    h
}

/// Writes `{stem}.csv` and `{stem}.png`.
///
/// `window` holds the `[C, L_in]` signals the attribution refers to. For 1D
/// attributions the CSV has `time_s`, one column per channel and `heat`; the PNG
/// plots the signals over the heat strip. For 2D attributions the CSV has one
/// `heat_r{row}` column per scaleogram row and the PNG overlays the heat on
/// `background` (`[H, L_in]`, required).
pub fn export_attribution(
    att: &Attribution,
    window: &Tensor<f64>,
    channel_names: &[String],
    sample_rate_hz: f64,
    background: Option<&Tensor<f64>>,
    dir: &Path,
    stem: &str,
) -> Result<(PathBuf, PathBuf)> {
    let n = *att.heatmap.shape().last().expect("non-empty shape");
    if window.ndim() != 2 || window.cols() != n || channel_names.len() != window.rows() {
        return Err(Error::Shape(format!(
            "attribution length {n} does not match window {:?} with {} channel names",
            window.shape(),
            channel_names.len()
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let png_path = dir.join(format!("{stem}.png"));
    let two_d = att.heatmap.ndim() == 2;

    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["time_s".to_string()];
    header.extend(channel_names.iter().cloned());
    if two_d {
        header.extend((0..att.heatmap.rows()).map(|r| format!("heat_r{r}")));
    } else {
        header.push("heat".into());
    }
    let csv_err = |e: csv::Error| Error::parse(&csv_path, e);
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..n {
        let mut row = vec![format!("{}", t as f64 / sample_rate_hz)];
        row.extend((0..window.rows()).map(|c| format!("{}", window.at2(c, t))));
        if two_d {
            row.extend((0..att.heatmap.rows()).map(|r| format!("{}", att.heatmap.at2(r, t))));
        } else {
            row.push(format!("{}", att.heatmap.data()[t]));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::io(&csv_path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(&csv_path, e))?;

    if two_d {
        let bg = background.ok_or_else(|| Error::Attribution("2D attribution export needs a scaleogram background".into()))?;
        render::overlay_png(bg, &att.heatmap, &png_path)?;
    } else {
        let rows: Vec<&[f64]> = (0..window.rows()).map(|c| window.row(c)).collect();
        render::signal_heat_png(&rows, att.heatmap.data(), 200, &png_path)?;
    }
    Ok((csv_path, png_path))
}

/// Reads the heat column(s) back from an exported CSV as `[rows, L]`.
pub fn read_attribution_csv(path: &Path) -> Result<Tensor<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let header = r.headers().map_err(|e| Error::parse(path, e))?.clone();
    let cols: Vec<usize> = header
        .iter()
        .enumerate()
        .filter(|(_, h)| *h == "heat" || h.starts_with("heat_r"))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        return Err(Error::parse(path, "no heat column"));
    }
    let mut per_col = vec![Vec::new(); cols.len()];
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(path, e))?;
        for (k, &c) in cols.iter().enumerate() {
            let v: f64 = rec.get(c).unwrap_or("").parse().map_err(|e| Error::parse(path, e))?;
            per_col[k].push(v);
        }
    }
    let n = per_col[0].len();
    Tensor::from_vec(&[cols.len(), n], per_col.concat())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch::{build_preset, Architecture, BranchSpec, InputSelector, Preset};
    use crate::nn::input::InputBuilder;
    use crate::nn::layers::LayerSpec;
    use crate::nn::model::tests::{classes, meta_for};
    use crate::record::ActionKind;
    use proptest::prelude::*;

    fn single_filter(len: usize, kernel: usize) -> ModelGraph<f64> {
        let arch = Architecture {
            branches: vec![BranchSpec {
                name: "sig".into(),
                input: InputSelector::Signals1d(vec![0]),
                layers: vec![LayerSpec::Conv1d { filters: 1, kernel, stride: 1 }, LayerSpec::GlobalMaxPool],
            }],
            head: vec![LayerSpec::Concat, LayerSpec::Dense { units: 2 }],
            input_len: len,
            scaleogram_height: 128,
        };
        let mut m = ModelGraph::new(arch, classes(2), meta_for(len), 0).unwrap();
        let p = m.params_mut();
        p[0].fill(0.25);
        p[2] = Tensor::from_vec(&[2, 1], vec![2.0, -1.0]).unwrap();
        m
    }

    fn input_1d(x: Vec<f64>) -> ModelInput<f64> {
        let n = x.len();
        ModelInput::raw(vec![Tensor::from_vec(&[1, n], x).unwrap()])
    }

    #[test]
    fn peak_follows_filter_activation() {
        let (len, k) = (60, 4);
        let m = single_filter(len, k);
        let x: Vec<f64> = (0..len).map(|i| (-((i as f64 - 37.0) / 3.0).powi(2)).exp() + 0.1 * (i as f64 * 0.9).sin()).collect();
        // Independent activation: moving sum weighted by 0.25.
        let act: Vec<f64> = (0..=len - k).map(|t| 0.25 * x[t..t + k].iter().sum::<f64>()).collect();
        let amax = act.iter().enumerate().fold(0, |b, (i, v)| if *v > act[b] { i } else { b });
        let att = gradcam_1d(&m, &input_1d(x), 0, 0, GradCamOptions::default()).unwrap();
        let hmax = att.heatmap.data().iter().enumerate().fold(0, |b, (i, v)| if *v > att.heatmap.data()[b] { i } else { b });
        let mapped = amax as f64 * (len - 1) as f64 / (act.len() - 1) as f64;
        let tol = (len as f64 / act.len() as f64).ceil();
        assert!((hmax as f64 - mapped).abs() <= tol, "{hmax} vs {mapped}");
        assert_eq!(att.heatmap.shape(), &[len]);
        assert_eq!(att.source_layer, "sig.0.conv1d");
        assert_eq!(att.target_class, 0);
    }

    #[test]
    fn constant_activation_gives_ones() {
        let m = single_filter(30, 5);
        let att = gradcam_1d(&m, &input_1d(vec![1.5; 30]), 0, 0, GradCamOptions::default()).unwrap();
        assert!(att.heatmap.data().iter().all(|&v| v == 1.0));
        // The negative head weight makes class 10 attribute nothing.
        let neg = gradcam_1d(&m, &input_1d(vec![1.5; 30]), 10, 0, GradCamOptions::default()).unwrap();
        assert!(neg.heatmap.data().iter().all(|&v| v == 0.0));
    }

    fn hybrid() -> (ModelGraph<f64>, ModelInput<f64>) {
        let len = 220;
        let arch = build_preset(ActionKind::Button, Preset::HybridAll, 3, len, 128);
        let m = ModelGraph::new(arch, classes(3), meta_for(len), 5).unwrap();
        let w = Tensor::from_vec(
            &[9, len],
            (0..9 * len).map(|i| ((i % len) as f64 * 0.05 * (1 + i / len) as f64).sin() * (1.0 + (i / len) as f64)).collect(),
        )
        .unwrap();
        let x = InputBuilder::new().from_window(&m, &w).unwrap();
        (m, x)
    }

    #[test]
    fn heatmaps_are_normalized_and_shaped() {
        let (m, x) = hybrid();
        for opts in [
            GradCamOptions::default(),
            GradCamOptions { score: ScoreMode::Probability, weighting: Weighting::Average },
        ] {
            let a1 = gradcam_1d(&m, &x, 20, 0, opts).unwrap();
            assert_eq!(a1.heatmap.shape(), &[220]);
            let a2 = gradcam_2d(&m, &x, 20, 1, opts).unwrap();
            assert_eq!(a2.heatmap.shape(), &[128, 220]);
            for a in [&a1, &a2] {
                assert!(a.heatmap.data().iter().all(|v| (0.0..=1.0).contains(v)));
                assert!(a.raw.data().iter().all(|&v| v >= 0.0));
            }
        }
        assert!(gradcam_2d(&m, &x, 20, 0, GradCamOptions::default()).is_err());
        assert!(gradcam_1d(&m, &x, 5, 0, GradCamOptions::default()).is_err());
    }

    #[test]
    fn invariant_to_positive_head_scaling() {
        let (m, x) = hybrid();
        let mut scaled = m.clone();
        let n = scaled.params().len();
        for p in &mut scaled.params_mut()[n - 2..] {
            p.scale(3.7);
        }
        for b in 0..2 {
            let a = gradcam(&m, &x, 10, b, GradCamOptions::default()).unwrap();
            let s = gradcam(&scaled, &x, 10, b, GradCamOptions::default()).unwrap();
            for (p, q) in a.heatmap.data().iter().zip(s.heatmap.data()) {
                assert!((p - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zeroed_branch_has_zero_heat() {
        let (mut m, x) = hybrid();
        m.zero_branch(0);
        let a = gradcam_1d(&m, &x, 0, 0, GradCamOptions::default()).unwrap();
        assert!(a.heatmap.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gradients_give_zero_map() {
        let (mut m, x) = hybrid();
        let n = m.params().len();
        m.params_mut()[n - 2].fill(0.0);
        let a = gradcam_2d(&m, &x, 0, 1, GradCamOptions::default()).unwrap();
        assert!(a.heatmap.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn branch_without_convolution_is_rejected() {
        let arch = Architecture {
            branches: vec![BranchSpec {
                name: "dense".into(),
                input: InputSelector::Signals1d(vec![0]),
                layers: vec![LayerSpec::Flatten, LayerSpec::Dense { units: 3 }],
            }],
            head: vec![LayerSpec::Concat, LayerSpec::Dense { units: 2 }],
            input_len: 10,
            scaleogram_height: 128,
        };
        let m: ModelGraph<f64> = ModelGraph::new(arch, classes(2), meta_for(10), 0).unwrap();
        let err = gradcam_1d(&m, &input_1d(vec![0.0; 10]), 0, 0, GradCamOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Attribution(_)), "{err}");
    }

    #[test]
    fn export_round_trip() {
        let (m, x) = hybrid();
        let dir = tempfile::tempdir().unwrap();
        let w = Tensor::from_vec(&[3, 220], (0..660).map(|i| (i as f64 * 0.03).cos()).collect()).unwrap();
        let names: Vec<String> = ["fx", "fy", "fz"].map(String::from).to_vec();
        let a1 = gradcam_1d(&m, &x, 0, 0, GradCamOptions::default()).unwrap();
        let (csv, png) = export_attribution(&a1, &w, &names, 500.0, None, dir.path(), "r1").unwrap();
        let back = read_attribution_csv(&csv).unwrap();
        for (p, q) in back.data().iter().zip(a1.heatmap.data()) {
            assert!((p - q).abs() < 1e-6);
        }
        let img = image::open(&png).unwrap();
        assert_eq!(img.width(), 220);
        let bytes = std::fs::read(&csv).unwrap();
        export_attribution(&a1, &w, &names, 500.0, None, dir.path(), "r1").unwrap();
        assert_eq!(bytes, std::fs::read(&csv).unwrap());

        let a2 = gradcam_2d(&m, &x, 0, 1, GradCamOptions::default()).unwrap();
        assert!(export_attribution(&a2, &w, &names, 500.0, None, dir.path(), "r2").is_err());
        let bg = Tensor::filled(&[128, 220], 0.5);
        let (csv2, png2) = export_attribution(&a2, &w, &names, 500.0, Some(&bg), dir.path(), "r2").unwrap();
        assert_eq!(read_attribution_csv(&csv2).unwrap().shape(), &[128, 220]);
        let img = image::open(&png2).unwrap();
        assert_eq!((img.width(), img.height()), (220, 128));
        assert!(export_attribution(&a1, &w.select_rows(&[0]).unwrap(), &names, 500.0, None, dir.path(), "x").is_err());
    }

    #[test]
    fn normalization_cases() {
        assert!(normalize_heat(Tensor::zeros(&[5])).data().iter().all(|&v| v == 0.0));
        assert!(normalize_heat(Tensor::filled(&[5], 0.3)).data().iter().all(|&v| v == 1.0));
        let h = normalize_heat(Tensor::from_vec(&[3], vec![1.0, 3.0, 2.0]).unwrap());
        assert_eq!(h.data(), &[0.0, 1.0, 0.5]);
    }

    proptest! {
        #[test]
        fn upsampling_keeps_argmax_close(
            mut x in proptest::collection::vec(0.0f64..1.0, 2..60),
            peak in any::<prop::sample::Index>(),
            extra in 0usize..400,
        ) {
            // The nearest output sample keeps at least half the peak height.
            let m = x.len();
            x[peak.index(m)] = 2.5;
            let n = m + extra;
            let am = x.iter().enumerate().fold(0, |b, (i, v)| if *v > x[b] { i } else { b });
            let y = resample_linear(&x, n);
            prop_assert_eq!(y.len(), n);
            let ay = y.iter().enumerate().fold(0, |b, (i, v)| if *v > y[b] { i } else { b });
            let mapped = am as f64 * (n - 1) as f64 / (m - 1) as f64;
            prop_assert!((ay as f64 - mapped).abs() <= (n as f64 / m as f64).ceil());
            prop_assert_eq!(y[0], x[0]);
            prop_assert!((y[n - 1] - x[m - 1]).abs() < 1e-12);
        }
    }
}
