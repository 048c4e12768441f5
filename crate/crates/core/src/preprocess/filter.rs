//! Butterworth low-pass design (bilinear transform with prewarping) and
//! zero-phase forward-backward application.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Second-order section `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad<T> {
    pub b: [T; 3],
    pub a: [T; 2],
}

impl<T: Scalar> Biquad<T> {
    /// DF-II transposed state for a constant input `u` held forever.
    fn steady_state(&self, u: T) -> [T; 2] {
        let dc = (self.b[0] + self.b[1] + self.b[2]) / (T::one() + self.a[0] + self.a[1]);
        let y = dc * u;
        let s2 = self.b[2] * u - self.a[1] * y;
        let s1 = self.b[1] * u - self.a[0] * y + s2;
        [s1, s2]
    }

    #[inline]
    fn step(&self, x: T, s: &mut [T; 2]) -> T {
        let y = self.b[0] * x + s[0];
        s[0] = self.b[1] * x - self.a[0] * y + s[1];
        s[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn response(&self, omega: f64) -> Complex<f64> {
        let z1 = Complex::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let f = |v: T| v.to_f64_lossy();
        let num = f(self.b[0]) + z1 * f(self.b[1]) + z2 * f(self.b[2]);
        let den = 1.0 + z1 * f(self.a[0]) + z2 * f(self.a[1]);
        num / den
    }
}

/// Cascade of second-order sections implementing an even-order Butterworth low-pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Butterworth<T> {
    pub sections: Vec<Biquad<T>>,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
}

impl<T: Scalar> Butterworth<T> {
    pub fn lowpass(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<Self> {
        if order == 0 || order % 2 != 0 {
            return Err(Error::Config(format!("filter order must be even and positive, got {order}")));
        }
        let nyquist = sample_rate_hz / 2.0;
        if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
            return Err(Error::Config(format!(
                "cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) for fs = {sample_rate_hz} Hz"
            )));
        }
        let k = 2.0 * sample_rate_hz;
        // Prewarped analog cutoff.
        let wc = k * (std::f64::consts::PI * cutoff_hz / sample_rate_hz).tan();
        let wc2 = wc * wc;
        let sections = (0..order / 2)
            .map(|i| {
                // Conjugate pole pair at angle (2i + 1 + n) π / 2n; damping = -Re(p).
                let angle = std::f64::consts::PI * (2 * i + 1 + order) as f64 / (2 * order) as f64;
                let zeta = -angle.cos();
                let a0 = k * k + 2.0 * zeta * wc * k + wc2;
                let a1 = 2.0 * (wc2 - k * k);
                let a2 = k * k - 2.0 * zeta * wc * k + wc2;
                Biquad {
                    b: [T::of(wc2 / a0), T::of(2.0 * wc2 / a0), T::of(wc2 / a0)],
                    a: [T::of(a1 / a0), T::of(a2 / a0)],
                }
            })
            .collect();
        Ok(Butterworth {
            sections,
            cutoff_hz,
            sample_rate_hz,
        })
    }

    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    /// Complex single-pass response at frequency `hz`.
    pub fn frequency_response(&self, hz: f64) -> Complex<f64> {
        let omega = 2.0 * std::f64::consts::PI * hz / self.sample_rate_hz;
        self.sections
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    /// One causal pass; each section starts in the steady state for the first input sample.
    pub fn filter_forward(&self, x: &[T]) -> Vec<T> {
        let mut y = x.to_vec();
        for sec in &self.sections {
            let Some(&first) = y.first() else { break };
            let mut s = sec.steady_state(first);
            for v in y.iter_mut() {
                *v = sec.step(*v, &mut s);
            }
        }
        y
    }

    /// Forward pass, then a pass over the reversed output, reversed back.
    pub fn filtfilt(&self, x: &[T]) -> Vec<T> {
        let mut y = self.filter_forward(x);
        y.reverse();
        let mut y = self.filter_forward(&y);
        y.reverse();
        y
    }
}

/// Minimum length accepted by [`lowpass_filter`] for a given order.
pub fn min_filter_len(order: usize) -> usize {
    3 * order
}

/// Zero-phase Butterworth low-pass of every row of a `[C, N]` tensor.
pub fn lowpass_filter<T: Scalar>(
    x: &Tensor<T>,
    cutoff_hz: f64,
    order: usize,
    sample_rate_hz: f64,
) -> Result<Tensor<T>> {
    if x.ndim() != 2 {
        return Err(Error::Shape(format!("expected [C, N], got {:?}", x.shape())));
    }
    let n = x.cols();
    if n <= min_filter_len(order) {
        return Err(Error::SignalTooShort {
            len: n,
            needed: min_filter_len(order),
        });
    }
    let filt = Butterworth::<T>::lowpass(order, cutoff_hz, sample_rate_hz)?;
    let mut out = x.clone();
    for c in 0..x.rows() {
        let y = filt.filtfilt(x.row(c));
        out.row_mut(c).copy_from_slice(&y);
    }
    Ok(out)
}
