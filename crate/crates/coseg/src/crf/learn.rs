//! Parameter updates: analytic gradients of (log Z − log Z') under the
//! factorized marginals, projected Adagrad ascent on λ, and the EM update of
//! the reconstruction Gaussians.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Instance, MeanFieldState};
use crate::core::{EncoderParams, ReconstructionParams};

/// Per-coordinate accumulated squared gradients for the λ vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdagradState {
    pub accumulators: Vec<f64>,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl AdagradState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        AdagradState { accumulators: vec![0.0; len], learning_rate, epsilon: 1e-8 }
    }
}

/// Gradient of (log Z − log Z') with respect to every λ coordinate, in the
/// flat layout of [`EncoderParams::to_flat`]. Pairwise blocks are the exact
/// derivative of the unordered-pair (i<j) energy.
pub fn gradients(state: &MeanFieldState, params: &EncoderParams, instance: &Instance) -> Vec<f64> {
    let n = state.n();
    let k = params.k;
    let diff = &state.q - &state.qp; // N×K
    let mut out = Vec::with_capacity(params.flat_len());

    // unary appearance blocks: Σ_i f'_i (Q_i(k) − Q'_i(k))
    for c in 0..k {
        for d in 0..instance.f_aug.ncols() {
            let mut g = 0.0;
            for i in 0..n {
                g += instance.f_aug[[i, d]] * diff[[i, c]];
            }
            out.push(g);
        }
    }
    // unary interaction blocks
    for c in 0..k {
        for d in 0..instance.h_aug.ncols() {
            let mut g = 0.0;
            for i in 0..n {
                g += instance.h_aug[[i, d]] * diff[[i, c]];
            }
            out.push(g);
        }
    }
    // pairwise blocks: Σ_{i<j} S(i,j)(Q_iQ_j − Q'_iQ'_j); biases with S → −1
    for s in [&instance.s_obj, &instance.s_int] {
        for c in 0..k {
            let q_col: Vec<f64> = state.q.column(c).to_vec();
            let qp_col: Vec<f64> = state.qp.column(c).to_vec();
            let (w_q, b_q) = pair_sums(s, &q_col);
            let (w_qp, b_qp) = pair_sums(s, &qp_col);
            out.push(w_q - w_qp);
            out.push(-(b_q - b_qp));
        }
    }
    out
}

/// (Σ_{i<j} S_ij v_i v_j, Σ_{i<j} v_i v_j) using the unit diagonal of S.
fn pair_sums(s: &Array2<f64>, v: &[f64]) -> (f64, f64) {
    let n = v.len();
    let mut quad = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += s[[i, j]] * v[j];
        }
        quad += v[i] * row;
    }
    let sum: f64 = v.iter().sum();
    let sq: f64 = v.iter().map(|x| x * x).sum();
    (0.5 * (quad - sq), 0.5 * (sum * sum - sq))
}

/// One projected Adagrad ascent step on the L2-regularized objective,
/// followed by projection onto the constraint set.
pub fn adagrad_step(
    params: &EncoderParams,
    grads: &[f64],
    reg_lambda: f64,
    epsilon_p: f64,
    state: &mut AdagradState,
) -> EncoderParams {
    let mut flat = params.to_flat();
    assert_eq!(grads.len(), flat.len());
    assert_eq!(state.accumulators.len(), flat.len());
    for (idx, value) in flat.iter_mut().enumerate() {
        let g = grads[idx] - reg_lambda * *value;
        state.accumulators[idx] += g * g;
        *value += state.learning_rate * g / (state.accumulators[idx] + state.epsilon).sqrt();
    }
    let mut out = params.from_flat(&flat);
    out.project(epsilon_p);
    out
}

/// Weighted-moments EM update of the diagonal Gaussians. Clusters with
/// vanishing responsibility mass are re-seeded to the least-claimed point
/// with the global variance.
pub fn em_update(q: &Array2<f64>, xhat: &Array2<f64>, variance_floor: f64) -> ReconstructionParams {
    let n = q.nrows();
    let k = q.ncols();
    let d = xhat.ncols();

    let global_mean: Vec<f64> = (0..d).map(|j| xhat.column(j).sum() / n as f64).collect();
    let global_var: Vec<f64> = (0..d)
        .map(|j| {
            let v = xhat.column(j).iter().map(|&x| (x - global_mean[j]).powi(2)).sum::<f64>()
                / n as f64;
            v.max(variance_floor)
        })
        .collect();

    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for c in 0..k {
        let mass: f64 = q.column(c).sum();
        if mass < 1e-12 {
            // revival: the point with the lowest maximum responsibility
            let worst = (0..n)
                .min_by(|&a, &b| {
                    let ra = q.row(a).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let rb = q.row(b).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    ra.partial_cmp(&rb).unwrap()
                })
                .unwrap();
            means.push(xhat.row(worst).to_vec());
            variances.push(global_var.clone());
            continue;
        }
        let mu: Vec<f64> = (0..d)
            .map(|j| {
                (0..n).map(|i| q[[i, c]] * xhat[[i, j]]).sum::<f64>() / mass
            })
            .collect();
        let var: Vec<f64> = (0..d)
            .map(|j| {
                let v = (0..n)
                    .map(|i| q[[i, c]] * (xhat[[i, j]] - mu[j]).powi(2))
                    .sum::<f64>()
                    / mass;
                v.max(variance_floor)
            })
            .collect();
        means.push(mu);
        variances.push(var);
    }
    ReconstructionParams { means, variances }
}
