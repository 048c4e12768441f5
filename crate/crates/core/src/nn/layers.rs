//! Layer specifications, shape inference and the per-sample forward/backward kernels.
//!
//! Activations carry no batch dimension: `[C, L]` for 1D feature maps,
//! `[C, H, W]` for 2D maps and `[n]` for feature vectors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Dense { units: usize },
    /// Valid-padding cross-correlation over `[C, L]`.
    Conv1d { filters: usize, kernel: usize, stride: usize },
    /// Valid-padding cross-correlation over `[C, H, W]`; kernel and stride are `[h, w]`.
    Conv2d {
        filters: usize,
        kernel: [usize; 2],
        stride: [usize; 2],
    },
    /// Non-overlapping pooling along time; a trailing partial window is dropped.
    MaxPool1d { size: usize },
    MaxPool2d { size: [usize; 2] },
    /// Per-channel maximum over all non-channel axes.
    GlobalMaxPool,
    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during training.
    Dropout { rate: f64 },
    Relu,
    Flatten,
    /// Merge point of the branch outputs; only valid as the first head layer.
    Concat,
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool1d { .. } => "max_pool1d",
            LayerSpec::MaxPool2d { .. } => "max_pool2d",
            LayerSpec::GlobalMaxPool => "global_max_pool",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Relu => "relu",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Concat => "concat",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv1d { .. } | LayerSpec::Conv2d { .. })
    }

    pub fn is_conv(&self) -> bool {
        matches!(self, LayerSpec::Conv1d { .. } | LayerSpec::Conv2d { .. })
    }

    /// Output shape for a given input shape, or a description of the mismatch.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let want = |n: usize| {
            if input.len() == n {
                Ok(())
            } else {
                Err(format!("{} expects a {n}-d input, got {input:?}", self.kind_name()))
            }
        };
        match *self {
            LayerSpec::Dense { units } => {
                want(1)?;
                if units == 0 {
                    return Err("dense layer needs at least one unit".into());
                }
                Ok(vec![units])
            }
            LayerSpec::Conv1d { filters, kernel, stride } => {
                want(2)?;
                if filters == 0 || stride == 0 || kernel == 0 {
                    return Err("conv1d filters, kernel and stride must be positive".into());
                }
                if kernel > input[1] {
                    return Err(format!("kernel {kernel} exceeds input length {}", input[1]));
                }
                Ok(vec![filters, (input[1] - kernel) / stride + 1])
            }
            LayerSpec::Conv2d { filters, kernel, stride } => {
                want(3)?;
                if filters == 0 || kernel.contains(&0) || stride.contains(&0) {
                    return Err("conv2d filters, kernel and stride must be positive".into());
                }
                if kernel[0] > input[1] || kernel[1] > input[2] {
                    return Err(format!("kernel {kernel:?} exceeds input {:?}", &input[1..]));
                }
                Ok(vec![
                    filters,
                    (input[1] - kernel[0]) / stride[0] + 1,
                    (input[2] - kernel[1]) / stride[1] + 1,
                ])
            }
            LayerSpec::MaxPool1d { size } => {
                want(2)?;
                if size == 0 || size > input[1] {
                    return Err(format!("pool size {size} invalid for length {}", input[1]));
                }
                Ok(vec![input[0], input[1] / size])
            }
            LayerSpec::MaxPool2d { size } => {
                want(3)?;
                if size.contains(&0) || size[0] > input[1] || size[1] > input[2] {
                    return Err(format!("pool size {size:?} invalid for {:?}", &input[1..]));
                }
                Ok(vec![input[0], input[1] / size[0], input[2] / size[1]])
            }
            LayerSpec::GlobalMaxPool => {
                if input.len() < 2 {
                    return Err(format!("global max pool needs a feature map, got {input:?}"));
                }
                Ok(vec![input[0]])
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(format!("dropout rate {rate} outside [0, 1)"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Relu | LayerSpec::Concat => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Weight and bias shapes for a given input shape.
    pub fn param_shapes(&self, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { units } => Some((vec![units, input[0]], vec![units])),
            LayerSpec::Conv1d { filters, kernel, .. } => Some((vec![filters, input[0], kernel], vec![filters])),
            LayerSpec::Conv2d { filters, kernel, .. } => {
                Some((vec![filters, input[0], kernel[0], kernel[1]], vec![filters]))
            }
            _ => None,
        }
    }
}

/// Per-layer state needed by the backward pass beyond the activations themselves.
#[derive(Clone, Debug, PartialEq)]
pub enum Aux<T> {
    None,
    /// Flat input index of each output element.
    Argmax(Vec<usize>),
    /// Multiplicative dropout mask (0 or `1 / (1 - rate)`).
    Mask(Vec<T>),
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (v, &u) in y.iter_mut().zip(x) {
        *v += alpha * u;
    }
}

fn shape_err(detail: String) -> Error {
    Error::LayerShape {
        branch: String::new(),
        layer: String::new(),
        detail,
    }
}

/// `y[f, t] = b[f] + Σ_c Σ_k w[f, c, k] x[c, t·stride + k]`.
pub fn conv1d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 3 || ws[1] != xs[0] || b.len() != ws[0] || stride == 0 {
        return Err(shape_err(format!("conv1d: input {xs:?}, weight {ws:?}, bias {:?}", b.shape())));
    }
    let (c_in, l, f, k) = (xs[0], xs[1], ws[0], ws[2]);
    if k > l {
        return Err(shape_err(format!("conv1d kernel {k} longer than input {l}")));
    }
    let lo = (l - k) / stride + 1;
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![T::zero(); f * lo];
    for fi in 0..f {
        let orow = &mut out[fi * lo..(fi + 1) * lo];
        orow.fill(b.data()[fi]);
        for ci in 0..c_in {
            let wk = &wd[(fi * c_in + ci) * k..(fi * c_in + ci + 1) * k];
            let xr = &xd[ci * l..(ci + 1) * l];
            for (t, o) in orow.iter_mut().enumerate() {
                *o += dot(wk, &xr[t * stride..t * stride + k]);
            }
        }
    }
    Tensor::from_vec(&[f, lo], out)
}

/// Accumulates weight/bias gradients and optionally returns the input gradient.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    g: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let (c_in, l) = (x.shape()[0], x.shape()[1]);
    let (f, k) = (w.shape()[0], w.shape()[2]);
    let lo = g.shape()[1];
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let mut dx = need_dx.then(|| vec![T::zero(); c_in * l]);
    for fi in 0..f {
        let grow = &gd[fi * lo..(fi + 1) * lo];
        db.data_mut()[fi] += grow.iter().copied().sum::<T>();
        for ci in 0..c_in {
            let base = (fi * c_in + ci) * k;
            let xr = &xd[ci * l..(ci + 1) * l];
            let dwk = &mut dw.data_mut()[base..base + k];
            for (t, &gv) in grow.iter().enumerate() {
                if gv != T::zero() {
                    axpy(gv, &xr[t * stride..t * stride + k], dwk);
                }
            }
            if let Some(dx) = dx.as_mut() {
                let wk = &wd[base..base + k];
                let dxr = &mut dx[ci * l..(ci + 1) * l];
                for (t, &gv) in grow.iter().enumerate() {
                    if gv != T::zero() {
                        axpy(gv, wk, &mut dxr[t * stride..t * stride + k]);
                    }
                }
            }
        }
    }
    dx.map(|d| Tensor::from_vec(&[c_in, l], d).expect("input shape"))
}

/// `y[f, i, j] = b[f] + Σ_c Σ_u Σ_v w[f, c, u, v] x[c, i·sh + u, j·sw + v]`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: [usize; 2],
) -> Result<Tensor<T>> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] || b.len() != ws[0] || stride.contains(&0) {
        return Err(shape_err(format!("conv2d: input {xs:?}, weight {ws:?}, bias {:?}", b.shape())));
    }
    let (c_in, h, wd_) = (xs[0], xs[1], xs[2]);
    let (f, kh, kw) = (ws[0], ws[2], ws[3]);
    if kh > h || kw > wd_ {
        return Err(shape_err(format!("conv2d kernel [{kh}, {kw}] exceeds input [{h}, {wd_}]")));
    }
    let (ho, wo) = ((h - kh) / stride[0] + 1, (wd_ - kw) / stride[1] + 1);
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![T::zero(); f * ho * wo];
    for fi in 0..f {
        let omap = &mut out[fi * ho * wo..(fi + 1) * ho * wo];
        omap.fill(b.data()[fi]);
        for ci in 0..c_in {
            for u in 0..kh {
                let wrow = &wdat[((fi * c_in + ci) * kh + u) * kw..][..kw];
                for i in 0..ho {
                    let xrow = &xd[(ci * h + i * stride[0] + u) * wd_..][..wd_];
                    let orow = &mut omap[i * wo..(i + 1) * wo];
                    for (j, o) in orow.iter_mut().enumerate() {
                        *o += dot(wrow, &xrow[j * stride[1]..j * stride[1] + kw]);
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[f, ho, wo], out)
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: [usize; 2],
    g: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let (c_in, h, wd_) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (f, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (g.shape()[1], g.shape()[2]);
    let (xd, wdat, gd) = (x.data(), w.data(), g.data());
    let mut dx = need_dx.then(|| vec![T::zero(); c_in * h * wd_]);
    for fi in 0..f {
        let gmap = &gd[fi * ho * wo..(fi + 1) * ho * wo];
        db.data_mut()[fi] += gmap.iter().copied().sum::<T>();
        for ci in 0..c_in {
            for u in 0..kh {
                let wbase = ((fi * c_in + ci) * kh + u) * kw;
                for i in 0..ho {
                    let xoff = (ci * h + i * stride[0] + u) * wd_;
                    let grow = &gmap[i * wo..(i + 1) * wo];
                    {
                        let xrow = &xd[xoff..xoff + wd_];
                        let dwr = &mut dw.data_mut()[wbase..wbase + kw];
                        for (j, &gv) in grow.iter().enumerate() {
                            if gv != T::zero() {
                                axpy(gv, &xrow[j * stride[1]..j * stride[1] + kw], dwr);
                            }
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        let wrow = &wdat[wbase..wbase + kw];
                        let dxr = &mut dx[xoff..xoff + wd_];
                        for (j, &gv) in grow.iter().enumerate() {
                            if gv != T::zero() {
                                axpy(gv, wrow, &mut dxr[j * stride[1]..j * stride[1] + kw]);
                            }
                        }
                    }
                }
            }
        }
    }
    dx.map(|d| Tensor::from_vec(&[c_in, h, wd_], d).expect("input shape"))
}

/// `y = W x + b` for a vector input.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ws = w.shape();
    if x.ndim() != 1 || ws.len() != 2 || ws[1] != x.len() || b.len() != ws[0] {
        return Err(shape_err(format!("dense: input {:?}, weight {ws:?}", x.shape())));
    }
    let n = ws[1];
    let out = (0..ws[0])
        .map(|o| b.data()[o] + dot(&w.data()[o * n..(o + 1) * n], x.data()))
        .collect();
    Tensor::from_vec(&[ws[0]], out)
}

pub fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let n = x.len();
    let mut dx = need_dx.then(|| vec![T::zero(); n]);
    for (o, &gv) in g.data().iter().enumerate() {
        db.data_mut()[o] += gv;
        if gv == T::zero() {
            continue;
        }
        axpy(gv, x.data(), &mut dw.data_mut()[o * n..(o + 1) * n]);
        if let Some(dx) = dx.as_mut() {
            axpy(gv, &w.data()[o * n..(o + 1) * n], dx);
        }
    }
    dx.map(|d| Tensor::from_vec(&[n], d).expect("input shape"))
}

/// First index of the maximum; NaNs never win.
fn argmax_of<T: Scalar>(it: impl Iterator<Item = (usize, T)>) -> usize {
    let mut best = (usize::MAX, T::neg_infinity());
    for (i, v) in it {
        if best.0 == usize::MAX || v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn max_pool1d_forward<T: Scalar>(x: &Tensor<T>, size: usize) -> (Tensor<T>, Vec<usize>) {
    let (c, l) = (x.shape()[0], x.shape()[1]);
    let lo = l / size;
    let xd = x.data();
    let mut idx = Vec::with_capacity(c * lo);
    for ci in 0..c {
        for t in 0..lo {
            let start = ci * l + t * size;
            idx.push(argmax_of((start..start + size).map(|i| (i, xd[i]))));
        }
    }
    let out = idx.iter().map(|&i| xd[i]).collect();
    (Tensor::from_vec(&[c, lo], out).expect("pool shape"), idx)
}

pub fn max_pool2d_forward<T: Scalar>(x: &Tensor<T>, size: [usize; 2]) -> (Tensor<T>, Vec<usize>) {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ho, wo) = (h / size[0], w / size[1]);
    let xd = x.data();
    let mut idx = Vec::with_capacity(c * ho * wo);
    for ci in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let cells = (0..size[0]).flat_map(|u| {
                    let row = (ci * h + i * size[0] + u) * w + j * size[1];
                    (row..row + size[1]).map(|p| (p, xd[p]))
                });
                idx.push(argmax_of(cells));
            }
        }
    }
    let out = idx.iter().map(|&i| xd[i]).collect();
    (Tensor::from_vec(&[c, ho, wo], out).expect("pool shape"), idx)
}

pub fn global_max_pool_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let c = x.shape()[0];
    let per = x.len() / c;
    let xd = x.data();
    let idx: Vec<usize> = (0..c)
        .map(|ci| argmax_of((ci * per..(ci + 1) * per).map(|i| (i, xd[i]))))
        .collect();
    let out = idx.iter().map(|&i| xd[i]).collect();
    (Tensor::from_vec(&[c], out).expect("pool shape"), idx)
}

/// Routes each output gradient back to the input element that produced it.
pub fn scatter_argmax<T: Scalar>(input_shape: &[usize], idx: &[usize], g: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&i, &gv) in idx.iter().zip(g.data()) {
        d[i] += gv;
    }
    dx
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient through ReLU given its output; the derivative at zero is taken as zero.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data()
        .iter()
        .zip(g.data())
        .map(|(&yv, &gv)| if yv > T::zero() { gv } else { T::zero() })
        .collect();
    Tensor::from_vec(g.shape(), data).expect("same shape")
}

pub fn dropout_mask<T: Scalar>(n: usize, rate: f64, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::of(1.0 / (1.0 - rate));
    (0..n)
        .map(|_| if rng.random::<f64>() >= rate { keep } else { T::zero() })
        .collect()
}

pub fn apply_mask<T: Scalar>(x: &Tensor<T>, mask: &[T]) -> Tensor<T> {
    let data = x.data().iter().zip(mask).map(|(&v, &m)| v * m).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};

    fn naive_conv1d(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize) -> Vec<f64> {
        let (c, l) = (x.shape()[0], x.shape()[1]);
        let (f, k) = (w.shape()[0], w.shape()[2]);
        let lo = (l - k) / s + 1;
        let mut out = vec![0.0; f * lo];
        for fi in 0..f {
            for t in 0..lo {
                let mut acc = b.data()[fi];
                for ci in 0..c {
                    for kk in 0..k {
                        acc += w.data()[(fi * c + ci) * k + kk] * x.data()[ci * l + t * s + kk];
                    }
                }
                out[fi * lo + t] = acc;
            }
        }
        out
    }

    fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: [usize; 2]) -> Vec<f64> {
        let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (f, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let (ho, wo) = ((h - kh) / s[0] + 1, (wd - kw) / s[1] + 1);
        let mut out = Vec::new();
        for fi in 0..f {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = b.data()[fi];
                    for ci in 0..c {
                        for u in 0..kh {
                            for v in 0..kw {
                                acc += w.data()[((fi * c + ci) * kh + u) * kw + v]
                                    * x.data()[(ci * h + i * s[0] + u) * wd + j * s[1] + v];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
        out
    }

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv1d_identity_and_dc() {
        let x = Tensor::from_vec(&[1, 5], vec![1.0, -2.0, 3.0, 0.5, 4.0]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let y = conv1d_forward(&x, &w, &Tensor::zeros(&[1]), 1).unwrap();
        assert_eq!(y.data(), x.data());
        let c = Tensor::filled(&[2, 40], 3.0f64);
        let avg = Tensor::filled(&[1, 2, 8], 1.0 / 16.0);
        let y = conv1d_forward(&c, &avg, &Tensor::zeros(&[1]), 3).unwrap();
        assert_eq!(y.shape(), &[1, 11]);
        assert!(y.data().iter().all(|v| (v - 3.0).abs() < 1e-12));
        assert!(conv1d_forward(&x, &Tensor::zeros(&[1, 1, 6]), &Tensor::zeros(&[1]), 1).is_err());
    }

    #[test]
    fn spec_parses_tagged_json() {
        let l: LayerSpec = serde_json::from_str(r#"{"kind":"conv1d","filters":16,"kernel":24,"stride":6}"#).unwrap();
        assert_eq!(l, LayerSpec::Conv1d { filters: 16, kernel: 24, stride: 6 });
        assert!(serde_json::from_str::<LayerSpec>(r#"{"kind":"attention","heads":4}"#).is_err());
        assert_eq!(serde_json::to_string(&LayerSpec::GlobalMaxPool).unwrap(), r#"{"kind":"global_max_pool"}"#);
    }

    #[test]
    fn shape_inference() {
        let c = LayerSpec::Conv1d { filters: 16, kernel: 24, stride: 6 };
        assert_eq!(c.output_shape(&[3, 800]).unwrap(), vec![16, 130]);
        let p = LayerSpec::MaxPool2d { size: [4, 4] };
        assert_eq!(p.output_shape(&[6, 128, 800]).unwrap(), vec![6, 32, 200]);
        assert!(LayerSpec::Dense { units: 4 }.output_shape(&[3, 5]).is_err());
        assert!(LayerSpec::Dropout { rate: 1.0 }.output_shape(&[3]).is_err());
        assert_eq!(LayerSpec::Flatten.output_shape(&[3, 5]).unwrap(), vec![15]);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m: Vec<f64> = dropout_mask(100_000, 0.3, &mut rng);
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn pooling_picks_first_maximum() {
        let x = Tensor::from_vec(&[1, 6], vec![1.0, 3.0, 3.0, 0.0, -1.0, -2.0]).unwrap();
        let (y, idx) = max_pool1d_forward(&x, 3);
        assert_eq!((y.data(), idx.as_slice()), (&[3.0, 0.0][..], &[1, 3][..]));
        let (g, gi) = global_max_pool_forward(&x);
        assert_eq!((g.data()[0], gi[0]), (3.0, 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn conv1d_matches_triple_loop(seed in any::<u64>(), c in 1usize..4, f in 1usize..4, k in 1usize..9, s in 1usize..4, extra in 0usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = k + extra;
            let x = rand_tensor(&[c, l], &mut rng);
            let w = rand_tensor(&[f, c, k], &mut rng);
            let b = rand_tensor(&[f], &mut rng);
            let fast = conv1d_forward(&x, &w, &b, s).unwrap();
            for (p, q) in fast.data().iter().zip(naive_conv1d(&x, &w, &b, s)) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }

        #[test]
        fn conv2d_matches_loops(seed in any::<u64>(), c in 1usize..3, f in 1usize..3, kh in 1usize..4, kw in 1usize..5, sh in 1usize..3, sw in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_tensor(&[c, kh + 4, kw + 6], &mut rng);
            let w = rand_tensor(&[f, c, kh, kw], &mut rng);
            let b = rand_tensor(&[f], &mut rng);
            let fast = conv2d_forward(&x, &w, &b, [sh, sw]).unwrap();
            for (p, q) in fast.data().iter().zip(naive_conv2d(&x, &w, &b, [sh, sw])) {
                prop_assert!((p - q).abs() < 1e-9);
            }
        }
    }
}
