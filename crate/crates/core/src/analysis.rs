//! Channel analysis used to pick inputs and group branches: correlation
//! matrix, max-energy ranking and first-principal-component ranking.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::record::{Channel, NUM_CHANNELS};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMethod {
    MaxEnergy,
    PcaVariance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    /// `[9, 9]` Pearson correlation.
    pub matrix: Tensor<f64>,
    /// Channels with zero variance; their rows and columns are 0 except the unit diagonal.
    pub constant: Vec<Channel>,
}

fn channel_moments(d: &Dataset) -> Result<([f64; NUM_CHANNELS], [[f64; NUM_CHANNELS]; NUM_CHANNELS], usize)> {
    if d.is_empty() {
        return Err(Error::InvalidDataset("dataset is empty".into()));
    }
    let mut mean = [0.0; NUM_CHANNELS];
    let mut n = 0usize;
    for r in d.records() {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += r.channels.row(c).iter().sum::<f64>();
        }
        n += r.len();
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = [[0.0; NUM_CHANNELS]; NUM_CHANNELS];
    let mut centered = vec![0.0; NUM_CHANNELS];
    for r in d.records() {
        for i in 0..r.len() {
            for c in 0..NUM_CHANNELS {
                centered[c] = r.channels.at2(c, i) - mean[c];
            }
            for a in 0..NUM_CHANNELS {
                for b in a..NUM_CHANNELS {
                    cov[a][b] += centered[a] * centered[b];
                }
            }
        }
    }
    for a in 0..NUM_CHANNELS {
        for b in a..NUM_CHANNELS {
            cov[a][b] /= n as f64;
            cov[b][a] = cov[a][b];
        }
    }
    Ok((mean, cov, n))
}

/// Pearson correlation over all samples of all records, concatenated.
pub fn compute_correlation_matrix(d: &Dataset) -> Result<Correlation> {
    let (mean, cov, _) = channel_moments(d)?;
    let constant_flags: Vec<bool> = (0..NUM_CHANNELS)
        .map(|c| cov[c][c].sqrt() <= 1e-12 * mean[c].abs().max(1.0))
        .collect();
    let mut m = Tensor::zeros(&[NUM_CHANNELS, NUM_CHANNELS]);
    for a in 0..NUM_CHANNELS {
        for b in 0..NUM_CHANNELS {
            let v = if a == b {
                1.0
            } else if constant_flags[a] || constant_flags[b] {
                0.0
            } else {
                (cov[a][b] / (cov[a][a] * cov[b][b]).sqrt()).clamp(-1.0, 1.0)
            };
            m.set2(a, b, v);
        }
    }
    let constant = constant_flags
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(c, _)| Channel::ALL[c])
        .collect();
    Ok(Correlation { matrix: m, constant })
}

/// Channel indices ordered from most to least informative. Ties (relative
/// difference below 1e-9) keep ascending channel order.
pub fn rank_channels(d: &Dataset, method: RankMethod) -> Result<Vec<usize>> {
    if d.is_empty() {
        return Err(Error::InvalidDataset("dataset is empty".into()));
    }
    let scores: Vec<f64> = match method {
        RankMethod::MaxEnergy => {
            let mut s = vec![0.0; NUM_CHANNELS];
            for r in d.records() {
                for (c, v) in s.iter_mut().enumerate() {
                    *v += r.channels.row(c).iter().map(|x| x * x).sum::<f64>();
                }
            }
            s.iter().map(|v| v / d.len() as f64).collect()
        }
        RankMethod::PcaVariance => {
            let (_, cov, _) = channel_moments(d)?;
            let (values, vectors) = symmetric_eigen(&cov);
            let top = (0..NUM_CHANNELS)
                .max_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap().then(b.cmp(&a)))
                .unwrap();
            (0..NUM_CHANNELS).map(|c| vectors[c][top].abs()).collect()
        }
    };
    Ok(rank_by_score(&scores))
}

pub(crate) fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let scale = scores.iter().fold(0.0f64, |a, &b| a.max(b.abs())).max(f64::MIN_POSITIVE);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        if (scores[a] - scores[b]).abs() <= 1e-9 * scale {
            a.cmp(&b)
        } else {
            scores[b].partial_cmp(&scores[a]).unwrap()
        }
    });
    order
}

/// Cyclic Jacobi eigen-decomposition of a small symmetric matrix.
/// Returns eigenvalues and eigenvectors stored column-wise (`vectors[row][k]`).
pub fn symmetric_eigen<const N: usize>(a: &[[f64; N]; N]) -> ([f64; N], [[f64; N]; N]) {
    let mut a = *a;
    let mut v = [[0.0; N]; N];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..N)
            .flat_map(|i| (0..N).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..N).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..N {
            for q in p + 1..N {
                if a[p][q].abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..N {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..N {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut values = [0.0; N];
    for i in 0..N {
        values[i] = a[i][i];
    }
    (values, v)
}
