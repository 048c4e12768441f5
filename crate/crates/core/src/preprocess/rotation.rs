//! Rotation vectors and the base-to-TCP wrench transform.

use crate::error::{Error, Result};
use crate::record::ActionRecord;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub type Mat3<T> = [[T; 3]; 3];

/// Axis-angle exponential map (Rodrigues). A zero vector yields the identity.
pub fn rotvec_to_matrix<T: Scalar>(r: [T; 3]) -> Mat3<T> {
    let theta = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
    let one = T::one();
    let zero = T::zero();
    if theta == zero {
        return [[one, zero, zero], [zero, one, zero], [zero, zero, one]];
    }
    let (kx, ky, kz) = (r[0] / theta, r[1] / theta, r[2] / theta);
    let (s, c) = theta.sin_cos();
    let v = one - c;
    [
        [c + kx * kx * v, kx * ky * v - kz * s, kx * kz * v + ky * s],
        [ky * kx * v + kz * s, c + ky * ky * v, ky * kz * v - kx * s],
        [kz * kx * v - ky * s, kz * ky * v + kx * s, c + kz * kz * v],
    ]
}

/// `Rᵀ v`.
#[inline]
pub fn rotate_transposed<T: Scalar>(m: &Mat3<T>, v: [T; 3]) -> [T; 3] {
    std::array::from_fn(|i| m[0][i] * v[0] + m[1][i] * v[1] + m[2][i] * v[2])
}

/// Expresses a base-frame force and torque in the TCP frame: `(Rᵀ f, Rᵀ t)`.
pub fn wrench_to_tcp<T: Scalar>(f_base: [T; 3], t_base: [T; 3], r: [T; 3]) -> ([T; 3], [T; 3]) {
    let m = rotvec_to_matrix(r);
    (rotate_transposed(&m, f_base), rotate_transposed(&m, t_base))
}

/// Applies [`wrench_to_tcp`] sample by sample to the force and torque rows of
/// a `[9, N]` channel tensor. Position rows are left untouched.
pub fn channels_to_tcp<T: Scalar>(channels: &Tensor<T>, rotvec: &Tensor<T>) -> Result<Tensor<T>> {
    if channels.ndim() != 2 || channels.rows() < 6 || rotvec.shape() != [3, channels.cols()] {
        return Err(Error::Shape(format!(
            "expected channels [>=6, N] and rotation vectors [3, N], got {:?} and {:?}",
            channels.shape(),
            rotvec.shape()
        )));
    }
    let n = channels.cols();
    let mut out = channels.clone();
    for i in 0..n {
        let r = [rotvec.at2(0, i), rotvec.at2(1, i), rotvec.at2(2, i)];
        let f = [channels.at2(0, i), channels.at2(1, i), channels.at2(2, i)];
        let t = [channels.at2(3, i), channels.at2(4, i), channels.at2(5, i)];
        let (ft, tt) = wrench_to_tcp(f, t, r);
        for k in 0..3 {
            out.set2(k, i, ft[k]);
            out.set2(3 + k, i, tt[k]);
        }
    }
    Ok(out)
}

pub fn record_to_tcp(rec: &ActionRecord) -> Result<Tensor<f64>> {
    channels_to_tcp(&rec.channels, &rec.tcp_rotvec)
}
