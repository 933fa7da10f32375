//! Dual-chain mean-field approximation: sequential coordinate sweeps over the
//! two factorized distributions Q (with the reconstruction term) and Q'
//! (encoder only), plus the mean-field free-energy estimates of log Z and
//! log Z'. Nodes update in a fixed order within each sweep, so results never
//! depend on the worker count; sequential updates also make every sweep an
//! exact coordinate-ascent step on the free-energy bound, which rules out the
//! oscillation synchronous updates exhibit under strong attractive coupling.

use ndarray::Array2;

use super::{entropy, softmax_row, Instance, MeanFieldState};
use crate::core::{EncoderParams, ReconstructionParams};
use crate::error::{Error, Result};
use crate::par;

/// Outcome of one mean-field run: the state plus the per-sweep max row change
/// (used for convergence monitoring).
#[derive(Debug, Clone)]
pub struct MeanFieldRun {
    pub state: MeanFieldState,
    pub sweep_deltas: Vec<f64>,
}

impl MeanFieldRun {
    pub fn sweeps(&self) -> usize {
        self.sweep_deltas.len()
    }
}

/// Sweep both chains until the max absolute change of both tables drops
/// below `tol` or `max_sweeps` is exhausted.
pub fn mean_field(
    params: &EncoderParams,
    theta: &ReconstructionParams,
    instance: &Instance,
    max_sweeps: usize,
    tol: f64,
) -> Result<MeanFieldRun> {
    let n = instance.n();
    let k = params.k;
    let unary = instance.unary_table(params);
    let log_gauss = instance.log_gaussian_table(theta);

    // initialization: row-softmax of unary (+ reconstruction for Q)
    let mut q = Array2::zeros((n, k));
    let mut qp = Array2::zeros((n, k));
    for i in 0..n {
        let mut row_q: Vec<f64> = (0..k).map(|c| unary[[i, c]] + log_gauss[[i, c]]).collect();
        let mut row_qp: Vec<f64> = (0..k).map(|c| unary[[i, c]]).collect();
        softmax_row(&mut row_q).map_err(|_| non_finite(instance, i))?;
        softmax_row(&mut row_qp).map_err(|_| non_finite(instance, i))?;
        for c in 0..k {
            q[[i, c]] = row_q[c];
            qp[[i, c]] = row_qp[c];
        }
    }

    let mut sweep_deltas = Vec::new();
    for _ in 0..max_sweeps {
        let dq = sweep(params, instance, &unary, Some(&log_gauss), &mut q)?;
        let dqp = sweep(params, instance, &unary, None, &mut qp)?;
        let delta = dq.max(dqp);
        sweep_deltas.push(delta);
        if delta < tol {
            break;
        }
    }
    Ok(MeanFieldRun { state: MeanFieldState { q, qp }, sweep_deltas })
}

/// One Gauss-Seidel sweep: nodes update in index order against the current
/// table; returns the max absolute per-entry change. The per-cluster message
/// sums are data-parallel, the node order is fixed.
fn sweep(
    params: &EncoderParams,
    instance: &Instance,
    unary: &Array2<f64>,
    log_gauss: Option<&Array2<f64>>,
    table: &mut Array2<f64>,
) -> Result<f64> {
    let n = instance.n();
    let k = params.k;
    // running column sums for the pairwise bias contribution
    let mut col_sums: Vec<f64> = (0..k).map(|c| table.column(c).sum()).collect();
    let mut max_delta: f64 = 0.0;

    for i in 0..n {
        let mut row: Vec<f64> = {
            let current = &*table;
            par::map_indices(k, |c| {
                let po = &params.lambda_p_obj[c];
                let ph = &params.lambda_p_int[c];
                let mut msg_obj = 0.0;
                let mut msg_int = 0.0;
                for j in 0..n {
                    if j != i {
                        msg_obj += instance.s_obj[[i, j]] * current[[j, c]];
                        msg_int += instance.s_int[[i, j]] * current[[j, c]];
                    }
                }
                let bias_mass = col_sums[c] - current[[i, c]];
                let mut score = unary[[i, c]] + po.weight * msg_obj + ph.weight * msg_int
                    - (po.bias + ph.bias) * bias_mass;
                if let Some(lg) = log_gauss {
                    score += lg[[i, c]];
                }
                score
            })
        };
        softmax_row(&mut row).map_err(|_| non_finite(instance, i))?;
        for (c, v) in row.into_iter().enumerate() {
            let old = table[[i, c]];
            max_delta = max_delta.max((v - old).abs());
            col_sums[c] += v - old;
            table[[i, c]] = v;
        }
    }
    Ok(max_delta)
}

fn non_finite(instance: &Instance, i: usize) -> Error {
    let (_, img, prop) = &instance.provenance[i];
    Error::Numerical(format!("non-finite mean-field score at node {i} ({img}/{prop})"))
}

/// Mean-field lower bounds on (log Z, log Z'): expected energy (plus expected
/// log-reconstruction for the Q chain) plus entropy.
pub fn free_energy(
    state: &MeanFieldState,
    params: &EncoderParams,
    theta: &ReconstructionParams,
    instance: &Instance,
) -> (f64, f64) {
    let unary = instance.unary_table(params);
    let log_gauss = instance.log_gaussian_table(theta);
    let log_z = bound(&state.q, params, instance, &unary, Some(&log_gauss));
    let log_zp = bound(&state.qp, params, instance, &unary, None);
    (log_z, log_zp)
}

fn bound(
    table: &Array2<f64>,
    params: &EncoderParams,
    instance: &Instance,
    unary: &Array2<f64>,
    log_gauss: Option<&Array2<f64>>,
) -> f64 {
    let n = instance.n();
    let k = params.k;
    let mut total = 0.0;
    for i in 0..n {
        for c in 0..k {
            let mut site = unary[[i, c]];
            if let Some(lg) = log_gauss {
                site += lg[[i, c]];
            }
            total += table[[i, c]] * site;
        }
        total += entropy(&table.row(i).to_owned());
    }
    // pairwise expectation over unordered pairs: ½(qᵀSq − Σᵢ qᵢ²) per channel
    for c in 0..k {
        let col: Vec<f64> = table.column(c).to_vec();
        let sum: f64 = col.iter().sum();
        let sq: f64 = col.iter().map(|v| v * v).sum();
        let quad_obj = quad_form(&instance.s_obj, &col);
        let quad_int = quad_form(&instance.s_int, &col);
        let po = &params.lambda_p_obj[c];
        let ph = &params.lambda_p_int[c];
        total += po.weight * 0.5 * (quad_obj - sq) + ph.weight * 0.5 * (quad_int - sq)
            - (po.bias + ph.bias) * 0.5 * (sum * sum - sq);
    }
    total
}

fn quad_form(s: &Array2<f64>, v: &[f64]) -> f64 {
    let n = v.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += s[[i, j]] * v[j];
        }
        total += v[i] * row;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::PairWeight;
    use crate::crf::tests::toy_dataset;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn rand_params(
        rng: &mut impl Rng,
        k: usize,
        d_f: usize,
        d_h: usize,
        coupling: f64,
    ) -> EncoderParams {
        let mut params = EncoderParams::zeros(k, d_f, d_h);
        for row in &mut params.lambda_uo {
            for v in row.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        for row in &mut params.lambda_uh {
            for v in row.iter_mut() {
                *v = rng.gen_range(0.0..1.0);
            }
        }
        for p in params.lambda_p_obj.iter_mut().chain(params.lambda_p_int.iter_mut()) {
            *p = PairWeight {
                weight: rng.gen_range(0.0..1.0) * coupling,
                bias: rng.gen_range(0.0..0.5) * coupling,
            };
        }
        params
    }

    fn rand_theta(rng: &mut impl Rng, k: usize, d_x: usize) -> ReconstructionParams {
        ReconstructionParams {
            means: (0..k)
                .map(|_| (0..d_x).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
            variances: (0..k)
                .map(|_| (0..d_x).map(|_| rng.gen_range(0.5..2.0)).collect())
                .collect(),
        }
    }

    #[test]
    fn single_node_is_closed_form_softmax() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let ds = toy_dataset(&[(vec![0.7, -0.2], vec![0.3])]);
        let inst = Instance::build(&ds, 1.0, 1.0).unwrap();
        let params = rand_params(&mut rng, 3, 2, 1, 1.0);
        let theta = rand_theta(&mut rng, 3, 3);
        let run = mean_field(&params, &theta, &inst, 20, 1e-6).unwrap();
        let unary = inst.unary_table(&params);
        let lg = inst.log_gaussian_table(&theta);
        let mut expect_q: Vec<f64> = (0..3).map(|c| unary[[0, c]] + lg[[0, c]]).collect();
        let mut expect_qp: Vec<f64> = (0..3).map(|c| unary[[0, c]]).collect();
        softmax_row(&mut expect_q).unwrap();
        softmax_row(&mut expect_qp).unwrap();
        for c in 0..3 {
            assert_relative_eq!(run.state.q[[0, c]], expect_q[c], epsilon = 1e-12);
            assert_relative_eq!(run.state.qp[[0, c]], expect_qp[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn decoupled_nodes_stationary_at_initialization() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let feats: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
            .map(|_| {
                (
                    (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    (0..2).map(|_| rng.gen_range(0.0..1.0)).collect(),
                )
            })
            .collect();
        let inst = Instance::build(&toy_dataset(&feats), 1.0, 1.0).unwrap();
        let params = rand_params(&mut rng, 2, 2, 2, 0.0); // zero coupling
        let theta = rand_theta(&mut rng, 2, 4);
        let run = mean_field(&params, &theta, &inst, 20, 1e-9).unwrap();
        assert_eq!(run.sweeps(), 1);
        assert!(run.sweep_deltas[0] < 1e-12);
    }

    #[test]
    fn rows_stay_stochastic_under_coupling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let feats: Vec<(Vec<f64>, Vec<f64>)> = (0..6)
            .map(|_| {
                (
                    (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    (0..2).map(|_| rng.gen_range(0.0..1.0)).collect(),
                )
            })
            .collect();
        let inst = Instance::build(&toy_dataset(&feats), 1.0, 1.0).unwrap();
        let params = rand_params(&mut rng, 3, 2, 2, 0.8);
        let theta = rand_theta(&mut rng, 3, 4);
        let run = mean_field(&params, &theta, &inst, 30, 1e-8).unwrap();
        for table in [&run.state.q, &run.state.qp] {
            for i in 0..6 {
                let s: f64 = table.row(i).sum();
                assert_relative_eq!(s, 1.0, epsilon = 1e-9);
                assert!(table.row(i).iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn unary_bias_shift_leaves_q_unchanged() {
        // adding a constant to every cluster's unary bias shifts all scores
        // equally; softmax is invariant
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let feats: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
            .map(|_| {
                (
                    (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    (0..2).map(|_| rng.gen_range(0.0..1.0)).collect(),
                )
            })
            .collect();
        let inst = Instance::build(&toy_dataset(&feats), 1.0, 1.0).unwrap();
        let params = rand_params(&mut rng, 2, 2, 2, 0.3);
        let theta = rand_theta(&mut rng, 2, 4);
        let run1 = mean_field(&params, &theta, &inst, 20, 1e-10).unwrap();
        let mut shifted = params.clone();
        for row in &mut shifted.lambda_uo {
            let last = row.len() - 1;
            row[last] += 2.5;
        }
        let run2 = mean_field(&shifted, &theta, &inst, 20, 1e-10).unwrap();
        for (a, b) in run1.state.q.iter().zip(run2.state.q.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn free_energy_exact_at_single_node() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let ds = toy_dataset(&[(vec![0.4], vec![0.6])]);
        let inst = Instance::build(&ds, 1.0, 1.0).unwrap();
        let params = rand_params(&mut rng, 3, 1, 1, 1.0);
        let theta = rand_theta(&mut rng, 3, 2);
        let run = mean_field(&params, &theta, &inst, 10, 1e-12).unwrap();
        let (log_z, log_zp) = free_energy(&run.state, &params, &theta, &inst);
        let unary = inst.unary_table(&params);
        let lg = inst.log_gaussian_table(&theta);
        let lse = |scores: Vec<f64>| {
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
        };
        let expect_z = lse((0..3).map(|c| unary[[0, c]] + lg[[0, c]]).collect());
        let expect_zp = lse((0..3).map(|c| unary[[0, c]]).collect());
        assert_relative_eq!(log_z, expect_z, epsilon = 1e-10);
        assert_relative_eq!(log_zp, expect_zp, epsilon = 1e-10);
    }

    #[test]
    fn free_energy_exact_zero_pairwise_k1() {
        let ds = toy_dataset(&[(vec![0.5], vec![0.1]), (vec![-0.5], vec![0.9])]);
        let inst = Instance::build(&ds, 1.0, 1.0).unwrap();
        let mut params = EncoderParams::zeros(1, 1, 1);
        params.lambda_uo[0] = vec![1.0, 0.2];
        let theta = ReconstructionParams {
            means: vec![vec![0.0, 0.0]],
            variances: vec![vec![1.0, 1.0]],
        };
        let run = mean_field(&params, &theta, &inst, 10, 1e-12).unwrap();
        let (log_z, _) = free_energy(&run.state, &params, &theta, &inst);
        let unary = inst.unary_table(&params);
        let lg = inst.log_gaussian_table(&theta);
        let expected = unary[[0, 0]] + unary[[1, 0]] + lg[[0, 0]] + lg[[1, 0]];
        assert_relative_eq!(log_z, expected, epsilon = 1e-10);
    }
}
