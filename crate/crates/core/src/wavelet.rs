//! Continuous wavelet transform with the Morlet wavelet, producing fixed-height
//! scaleograms (rows = scale, columns = time).
//!
//! The transform evaluates, for every scale `a` and shift `b`,
//! `W[a, b] = Σ_n x[n] ψ*((n - b) / a) / √a` on the mean-removed signal. It is
//! computed as one FFT-based linear correlation per scale, which is exact (no
//! circular wrap) because the FFT length is at least `2N - 1`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::Channel;
use crate::render;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CwtConfig {
    pub n_scales: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub omega0: f64,
    pub output_height: usize,
    /// Divide by `√a`. Disable for the unnormalized sum.
    pub amplitude_normalization: bool,
}

impl Default for CwtConfig {
    fn default() -> Self {
        CwtConfig {
            n_scales: 128,
            scale_min: 1.0,
            scale_max: 256.0,
            omega0: 6.0,
            output_height: 128,
            amplitude_normalization: true,
        }
    }
}

impl CwtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min < self.scale_max) {
            return Err(Error::Config(format!(
                "scales must satisfy 0 < scale_min < scale_max, got {} and {}",
                self.scale_min, self.scale_max
            )));
        }
        if self.n_scales < 2 || self.output_height < 2 {
            return Err(Error::Config("need at least two scales and two output rows".into()));
        }
        if !self.omega0.is_finite() {
            return Err(Error::Config("omega0 must be finite".into()));
        }
        Ok(())
    }

    /// Geometrically spaced scales in samples.
    pub fn scales(&self) -> Vec<f64> {
        let ratio = (self.scale_max / self.scale_min).ln() / (self.n_scales - 1) as f64;
        (0..self.n_scales)
            .map(|i| self.scale_min * (ratio * i as f64).exp())
            .collect()
    }
}

/// `π^(-1/4) exp(i ω₀ t) exp(-t²/2)`.
pub fn morlet<T: Scalar>(t: T, omega0: T) -> Complex<T> {
    let norm = T::of(std::f64::consts::PI.powf(-0.25));
    let env = norm * (-(t * t) / T::of(2.0)).exp();
    let (s, c) = (omega0 * t).sin_cos();
    Complex::new(env * c, env * s)
}

/// Normalized magnitude scaleogram of one channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaleogram<T> {
    /// `[output_height, N]`, values in `[0, 1]`.
    pub values: Tensor<T>,
    pub source_channel: usize,
    pub scales: Vec<f64>,
}

/// Precomputed kernel spectra for a fixed signal length and configuration.
pub struct CwtPlan<T: Scalar> {
    cfg: CwtConfig,
    len: usize,
    fft_len: usize,
    scales: Vec<f64>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    kernels: Vec<Vec<Complex<T>>>,
}

impl<T: Scalar> CwtPlan<T> {
    pub fn new(len: usize, cfg: &CwtConfig) -> Result<Self> {
        cfg.validate()?;
        if len < 8 {
            return Err(Error::SignalTooShort { len, needed: 7 });
        }
        let fft_len = (2 * len - 1).next_power_of_two();
        let mut planner = FftPlanner::<T>::new();
        let forward = planner.plan_fft_forward(fft_len);
        let inverse = planner.plan_fft_inverse(fft_len);
        let scales = cfg.scales();
        let omega0 = T::of(cfg.omega0);
        let inv_m = T::one() / T::of_usize(fft_len);
        let kernels = scales
            .iter()
            .map(|&a| {
                let gain = if cfg.amplitude_normalization { 1.0 / a.sqrt() } else { 1.0 };
                let gain = T::of(gain);
                let inv_a = T::of(1.0 / a);
                // g[j] = h[-j] with h[m] = conj(ψ(m / a)) · gain, stored circularly.
                let mut g = vec![Complex::new(T::zero(), T::zero()); fft_len];
                for j in -(len as i64 - 1)..=(len as i64 - 1) {
                    let t = T::of(-(j as f64)) * inv_a;
                    let v = morlet(t, omega0).conj() * gain;
                    g[j.rem_euclid(fft_len as i64) as usize] = v;
                }
                forward.process(&mut g);
                // Fold the inverse-FFT normalization into the kernel.
                g.iter_mut().for_each(|z| *z = *z * inv_m);
                g
            })
            .collect();
        Ok(CwtPlan {
            cfg: cfg.clone(),
            len,
            fft_len,
            scales,
            forward,
            inverse,
            kernels,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn config(&self) -> &CwtConfig {
        &self.cfg
    }

    /// Complex coefficients `[scale][shift]` of the mean-removed signal.
    pub fn coefficients(&self, x: &[T]) -> Result<Vec<Vec<Complex<T>>>> {
        let mut out = Vec::with_capacity(self.scales.len());
        self.for_each_scale(x, |_, row| out.push(row.to_vec()))?;
        Ok(out)
    }

    fn for_each_scale(&self, x: &[T], mut f: impl FnMut(usize, &[Complex<T>])) -> Result<()> {
        if x.len() != self.len {
            return Err(Error::Shape(format!("plan built for {} samples, got {}", self.len, x.len())));
        }
        let mean = x.iter().copied().sum::<T>() / T::of_usize(x.len());
        let mut spectrum = vec![Complex::new(T::zero(), T::zero()); self.fft_len];
        for (s, &v) in spectrum.iter_mut().zip(x) {
            s.re = v - mean;
        }
        self.forward.process(&mut spectrum);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.fft_len];
        let mut scratch = vec![Complex::new(T::zero(), T::zero()); self.inverse.get_inplace_scratch_len()];
        for (k, kernel) in self.kernels.iter().enumerate() {
            for ((b, &s), &g) in buf.iter_mut().zip(&spectrum).zip(kernel) {
                *b = s * g;
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            f(k, &buf[..self.len]);
        }
        Ok(())
    }

    /// `|W|` as a `[n_scales, N]` tensor, before normalization.
    pub fn magnitude(&self, x: &[T]) -> Result<Tensor<T>> {
        let mut data = Vec::with_capacity(self.scales.len() * self.len);
        self.for_each_scale(x, |_, row| data.extend(row.iter().map(|z| z.norm())))?;
        Tensor::from_vec(&[self.scales.len(), self.len], data)
    }

    /// Normalized scaleogram with `output_height` rows.
    pub fn scaleogram(&self, x: &[T], source_channel: usize) -> Result<Scaleogram<T>> {
        let h = self.cfg.output_height;
        let peak = x.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let lo = x.iter().fold(T::infinity(), |m, &v| m.min(v));
        let hi = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        // A flat signal is zero after mean removal; rounding residue must not be stretched to [0, 1].
        if hi - lo <= T::epsilon() * T::of(8.0) * peak {
            return Ok(Scaleogram {
                values: Tensor::zeros(&[h, self.len]),
                source_channel,
                scales: self.scales.clone(),
            });
        }
        let mag = self.magnitude(x)?;
        let resized = resize_rows(&mag, self.cfg.output_height)?;
        Ok(Scaleogram {
            values: min_max_normalize(resized),
            source_channel,
            scales: self.scales.clone(),
        })
    }

    /// Stacks one normalized scaleogram per listed channel of a `[C, N]` tensor.
    pub fn stack(&self, x: &Tensor<T>, channels: &[usize]) -> Result<Tensor<T>> {
        if channels.is_empty() {
            return Err(Error::Config("scaleogram stack needs at least one channel".into()));
        }
        let h = self.cfg.output_height;
        let mut data = Vec::with_capacity(channels.len() * h * self.len);
        for &c in channels {
            if c >= x.rows() {
                return Err(Error::OutOfRange { index: c, len: x.rows() });
            }
            data.extend_from_slice(self.scaleogram(x.row(c), c)?.values.data());
        }
        Tensor::from_vec(&[channels.len(), h, self.len], data)
    }
}

fn resize_rows<T: Scalar>(m: &Tensor<T>, height: usize) -> Result<Tensor<T>> {
    let (rows, cols) = (m.rows(), m.cols());
    if rows == height {
        return Ok(m.clone());
    }
    let mut data = Vec::with_capacity(height * cols);
    for r in 0..height {
        let pos = r as f64 * (rows - 1) as f64 / (height - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(rows - 1);
        let w = T::of(pos - lo as f64);
        data.extend((0..cols).map(|c| m.at2(lo, c) * (T::one() - w) + m.at2(hi, c) * w));
    }
    Tensor::from_vec(&[height, cols], data)
}

/// Global min-max scaling to `[0, 1]`; a flat matrix maps to zeros.
fn min_max_normalize<T: Scalar>(mut m: Tensor<T>) -> Tensor<T> {
    let (lo, hi) = (m.min(), m.max());
    let range = hi - lo;
    if !(range > T::zero()) {
        m.fill(T::zero());
        return m;
    }
    m.data_mut().iter_mut().for_each(|v| *v = (*v - lo) / range);
    m
}

/// One-shot transform of a single channel.
pub fn cwt<T: Scalar>(x: &[T], cfg: &CwtConfig) -> Result<Scaleogram<T>> {
    CwtPlan::new(x.len(), cfg)?.scaleogram(x, 0)
}

/// `[K, output_height, N]` stack of normalized scaleograms for the listed channels.
pub fn scaleogram_stack<T: Scalar>(x: &Tensor<T>, cfg: &CwtConfig, channels: &[usize]) -> Result<Tensor<T>> {
    if x.ndim() != 2 {
        return Err(Error::Shape(format!("expected [C, N], got {:?}", x.shape())));
    }
    CwtPlan::new(x.cols(), cfg)?.stack(x, channels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleogramHeader {
    pub shape: Vec<usize>,
    pub scales: Vec<f64>,
    pub channel: String,
}

/// Writes `<stem>.bin` (row-major little-endian f32), `<stem>.json` and `<stem>.png`.
pub fn export_scaleogram<T: Scalar>(s: &Scaleogram<T>, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bin = dir.join(format!("{stem}.bin"));
    let json = dir.join(format!("{stem}.json"));
    let png = dir.join(format!("{stem}.png"));
    let bytes: Vec<u8> = s
        .values
        .data()
        .iter()
        .flat_map(|v| (v.to_f64_lossy() as f32).to_le_bytes())
        .collect();
    fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let header = ScaleogramHeader {
        shape: s.values.shape().to_vec(),
        scales: s.scales.clone(),
        channel: Channel::from_index(s.source_channel)
            .map(|c| c.name().to_string())
            .unwrap_or_else(|| s.source_channel.to_string()),
    };
    fs::write(&json, serde_json::to_string_pretty(&header)?).map_err(|e| Error::io(&json, e))?;
    render::heatmap_png(&s.values.cast::<f64>(), &png)?;
    Ok(vec![bin, json, png])
}

/// Reads a scaleogram written by [`export_scaleogram`].
pub fn read_scaleogram_bin(bin: &Path) -> Result<(ScaleogramHeader, Tensor<f32>)> {
    let json = bin.with_extension("json");
    let header: ScaleogramHeader = serde_json::from_str(&fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?)
        .map_err(|e| Error::parse(&json, e))?;
    let bytes = fs::read(bin).map_err(|e| Error::io(bin, e))?;
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let t = Tensor::from_vec_finite(&header.shape, data)?;
    Ok((header, t))
}
