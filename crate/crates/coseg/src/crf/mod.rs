//! The learning/inference engine: a fully connected CRF over all object
//! proposals in the dataset paired with a diagonal-Gaussian reconstruction
//! model, trained by projected Adagrad on λ and EM on θ.

pub mod learn;
pub mod mean_field;
pub mod train;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::core::{EncoderParams, ImageRecord, ReconstructionParams};
use crate::error::{Error, Result};
use crate::hoi::{augment, gaussian_similarity};
use crate::par;

/// A flattened dataset ready for the engine: augmented feature rows, the
/// reconstruction targets, and the two precomputed N×N similarity channels.
#[derive(Debug, Clone)]
pub struct Instance {
    /// N×(D_f+1) augmented appearance features [f, -1].
    pub f_aug: Array2<f64>,
    /// N×(D_h+1) augmented interaction features [h, -1].
    pub h_aug: Array2<f64>,
    /// N×D_x un-augmented reconstruction targets [f; h].
    pub xhat: Array2<f64>,
    /// Appearance similarity channel, symmetric with unit diagonal.
    pub s_obj: Array2<f64>,
    /// Interaction similarity channel, symmetric with unit diagonal.
    pub s_int: Array2<f64>,
    /// (image index, image_id, proposal_id) per node, in dataset order.
    pub provenance: Vec<(usize, String, String)>,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.f_aug.nrows()
    }

    /// Build from a validated dataset with resolved bandwidths.
    pub fn build(dataset: &[ImageRecord], delta_f: f64, delta_h: f64) -> Result<Self> {
        let mut f_rows: Vec<Vec<f64>> = Vec::new();
        let mut h_rows: Vec<Vec<f64>> = Vec::new();
        let mut provenance = Vec::new();
        for (img_idx, img) in dataset.iter().enumerate() {
            for p in &img.proposals {
                if p.appearance.iter().chain(p.interaction.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite feature in proposal {}/{}",
                        img.image_id, p.proposal_id
                    )));
                }
                f_rows.push(p.appearance.clone());
                h_rows.push(p.interaction.clone());
                provenance.push((img_idx, img.image_id.clone(), p.proposal_id.clone()));
            }
        }
        let n = f_rows.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset has no proposals".into()));
        }
        let d_f = f_rows[0].len();
        let d_h = h_rows[0].len();
        if f_rows.iter().any(|r| r.len() != d_f) || h_rows.iter().any(|r| r.len() != d_h) {
            return Err(Error::DimensionMismatch("inconsistent feature dimensions".into()));
        }

        let s_obj = similarity_matrix(&f_rows, delta_f)?;
        let s_int = similarity_matrix(&h_rows, delta_h)?;

        let mut f_aug = Array2::zeros((n, d_f + 1));
        let mut h_aug = Array2::zeros((n, d_h + 1));
        let mut xhat = Array2::zeros((n, d_f + d_h));
        for i in 0..n {
            for (j, &v) in augment(&f_rows[i]).iter().enumerate() {
                f_aug[[i, j]] = v;
            }
            for (j, &v) in augment(&h_rows[i]).iter().enumerate() {
                h_aug[[i, j]] = v;
            }
            for (j, &v) in f_rows[i].iter().chain(h_rows[i].iter()).enumerate() {
                xhat[[i, j]] = v;
            }
        }
        Ok(Instance { f_aug, h_aug, xhat, s_obj, s_int, provenance })
    }

    /// N×K table of unary scores λ^(u)(k)·x'_i.
    pub fn unary_table(&self, params: &EncoderParams) -> Array2<f64> {
        let n = self.n();
        let k = params.k;
        let rows = par::map_indices(n, |i| {
            let fi = self.f_aug.row(i);
            let hi = self.h_aug.row(i);
            (0..k)
                .map(|c| {
                    let uo: f64 = fi.iter().zip(&params.lambda_uo[c]).map(|(a, b)| a * b).sum();
                    let uh: f64 = hi.iter().zip(&params.lambda_uh[c]).map(|(a, b)| a * b).sum();
                    uo + uh
                })
                .collect::<Vec<f64>>()
        });
        let mut out = Array2::zeros((n, k));
        for (i, row) in rows.into_iter().enumerate() {
            for (c, v) in row.into_iter().enumerate() {
                out[[i, c]] = v;
            }
        }
        out
    }

    /// N×K table of log N(x̂_i | θ_k).
    pub fn log_gaussian_table(&self, theta: &ReconstructionParams) -> Array2<f64> {
        let n = self.n();
        let k = theta.k();
        let rows = par::map_indices(n, |i| {
            let xi: Vec<f64> = self.xhat.row(i).to_vec();
            (0..k).map(|c| log_gaussian(&xi, c, theta)).collect::<Vec<f64>>()
        });
        let mut out = Array2::zeros((n, k));
        for (i, row) in rows.into_iter().enumerate() {
            for (c, v) in row.into_iter().enumerate() {
                out[[i, c]] = v;
            }
        }
        out
    }
}

fn similarity_matrix(features: &[Vec<f64>], delta: f64) -> Result<Array2<f64>> {
    if delta <= 0.0 {
        return Err(Error::InvalidInput("similarity bandwidth must be > 0".into()));
    }
    let n = features.len();
    let rows = par::map_indices(n, |i| {
        (0..n)
            .map(|j| gaussian_similarity(&features[i], &features[j], delta).unwrap())
            .collect::<Vec<f64>>()
    });
    let mut s = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            s[[i, j]] = v;
        }
    }
    Ok(s)
}

/// Log-density of the diagonal Gaussian reconstruction model.
pub fn log_gaussian(xhat: &[f64], k: usize, theta: &ReconstructionParams) -> f64 {
    let mu = &theta.means[k];
    let var = &theta.variances[k];
    let mut acc = 0.0;
    for d in 0..xhat.len() {
        let diff = xhat[d] - mu[d];
        acc += -0.5 * (2.0 * std::f64::consts::PI * var[d]).ln() - diff * diff / (2.0 * var[d]);
    }
    acc
}

/// CRF energy Φ_λ(X, Y) of one full assignment; the pairwise sum runs over
/// unordered pairs exactly once.
pub fn energy(params: &EncoderParams, assignment: &[usize], instance: &Instance) -> Result<f64> {
    let n = instance.n();
    if assignment.len() != n {
        return Err(Error::DimensionMismatch("assignment length != N".into()));
    }
    if assignment.iter().any(|&y| y >= params.k) {
        return Err(Error::InvalidInput("cluster index out of range".into()));
    }
    let unary = instance.unary_table(params);
    let mut total = 0.0;
    for (i, &y) in assignment.iter().enumerate() {
        total += unary[[i, y]];
    }
    for i in 0..n {
        for j in i + 1..n {
            if assignment[i] == assignment[j] {
                let k = assignment[i];
                let po = &params.lambda_p_obj[k];
                let ph = &params.lambda_p_int[k];
                total += po.weight * instance.s_obj[[i, j]] - po.bias
                    + ph.weight * instance.s_int[[i, j]] - ph.bias;
            }
        }
    }
    Ok(total)
}

/// Per-node marginal tables Q (reconstruction-weighted chain) and Q'
/// (encoder-only chain); every row sums to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    pub q: Array2<f64>,
    pub qp: Array2<f64>,
}

impl MeanFieldState {
    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn k(&self) -> usize {
        self.q.ncols()
    }
}

/// Normalize a score row in place via a max-shifted exponential.
pub(crate) fn softmax_row(row: &mut [f64]) -> Result<()> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("non-finite score row in mean field".into()));
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

/// Entropy of a marginal table, entries floored before the log.
pub(crate) fn entropy(table: &Array1<f64>) -> f64 {
    table.iter().map(|&q| if q > 0.0 { -q * q.max(1e-300).ln() } else { 0.0 }).sum()
}
