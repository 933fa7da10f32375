//! Brute-force exact computations on small instances: partition functions,
//! node marginals, and finite-difference derivatives. This is the independent
//! ground truth the mean-field engine is checked against; it never calls into
//! the mean-field code path.

use ndarray::Array2;

use crate::core::{EncoderParams, ReconstructionParams};
use crate::crf::{energy, log_gaussian, Instance};
use crate::error::{Error, Result};

const GUARD: f64 = 1e7;

/// Exact partition functions and node marginals of the two distributions.
#[derive(Debug, Clone)]
pub struct ExactResult {
    pub log_z: f64,
    pub log_zprime: f64,
    /// N×K marginals under the reconstruction-weighted distribution.
    pub marginals: Array2<f64>,
    /// N×K marginals under the encoder-only distribution.
    pub marginals_prime: Array2<f64>,
}

fn check_guard(n: usize, k: usize) -> Result<()> {
    if (k as f64).powi(n as i32) > GUARD {
        return Err(Error::InvalidInput(format!("instance too large for enumeration: {k}^{n}")));
    }
    Ok(())
}

/// Visit every assignment in mixed-radix order, maintaining the energy and
/// reconstruction sums incrementally (O(N) per digit change).
fn enumerate<F: FnMut(&[usize], f64, f64)>(
    params: &EncoderParams,
    theta: &ReconstructionParams,
    instance: &Instance,
    mut visit: F,
) {
    let n = instance.n();
    let k = params.k;
    let unary = instance.unary_table(params);
    let log_gauss = instance.log_gaussian_table(theta);

    let pair_term = |i: usize, j: usize, c: usize| -> f64 {
        let po = &params.lambda_p_obj[c];
        let ph = &params.lambda_p_int[c];
        po.weight * instance.s_obj[[i, j]] - po.bias + ph.weight * instance.s_int[[i, j]] - ph.bias
    };

    let mut assignment = vec![0usize; n];
    let mut phi: f64 = (0..n).map(|i| unary[[i, 0]]).sum();
    for i in 0..n {
        for j in i + 1..n {
            phi += pair_term(i, j, 0);
        }
    }
    let mut gauss: f64 = (0..n).map(|i| log_gauss[[i, 0]]).sum();

    loop {
        visit(&assignment, phi, phi + gauss);
        // increment with carries, updating sums per digit change
        let mut pos = 0;
        loop {
            if pos == n {
                return;
            }
            let old = assignment[pos];
            let new = if old + 1 == k { 0 } else { old + 1 };
            phi += unary[[pos, new]] - unary[[pos, old]];
            gauss += log_gauss[[pos, new]] - log_gauss[[pos, old]];
            for j in 0..n {
                if j != pos {
                    let (a, b) = if j < pos { (j, pos) } else { (pos, j) };
                    if assignment[j] == old {
                        phi -= pair_term(a, b, old);
                    }
                    if assignment[j] == new {
                        phi += pair_term(a, b, new);
                    }
                }
            }
            assignment[pos] = new;
            if new != 0 {
                break;
            }
            pos += 1;
        }
    }
}

/// Exhaustive sum over all K^N assignments with log-sum-exp accumulation;
/// marginals by exact conditioning.
pub fn enumerate_exact(
    params: &EncoderParams,
    theta: &ReconstructionParams,
    instance: &Instance,
) -> Result<ExactResult> {
    let n = instance.n();
    let k = params.k;
    check_guard(n, k)?;

    // pass 1: max exponents for stable exponentiation
    let mut max_full = f64::NEG_INFINITY;
    let mut max_phi = f64::NEG_INFINITY;
    enumerate(params, theta, instance, |_, phi, full| {
        max_phi = max_phi.max(phi);
        max_full = max_full.max(full);
    });

    // pass 2: accumulate partition sums and marginal masses
    let mut z = 0.0;
    let mut zp = 0.0;
    let mut marg = Array2::zeros((n, k));
    let mut marg_p = Array2::zeros((n, k));
    enumerate(params, theta, instance, |assignment, phi, full| {
        let w = (full - max_full).exp();
        let wp = (phi - max_phi).exp();
        z += w;
        zp += wp;
        for (i, &y) in assignment.iter().enumerate() {
            marg[[i, y]] += w;
            marg_p[[i, y]] += wp;
        }
    });
    marg /= z;
    marg_p /= zp;
    Ok(ExactResult {
        log_z: max_full + z.ln(),
        log_zprime: max_phi + zp.ln(),
        marginals: marg,
        marginals_prime: marg_p,
    })
}

/// Second, independently coded enumerator: recomputes the full energy from
/// scratch for every assignment. Used to cross-check [`enumerate_exact`].
pub fn enumerate_exact_naive(
    params: &EncoderParams,
    theta: &ReconstructionParams,
    instance: &Instance,
) -> Result<ExactResult> {
    let n = instance.n();
    let k = params.k;
    check_guard(n, k)?;
    let total = (k as u64).pow(n as u32);

    let mut exps_full = Vec::with_capacity(total as usize);
    let mut exps_phi = Vec::with_capacity(total as usize);
    let mut assignments = Vec::with_capacity(total as usize);
    for code in 0..total {
        let mut rem = code;
        let assignment: Vec<usize> = (0..n)
            .map(|_| {
                let digit = (rem % k as u64) as usize;
                rem /= k as u64;
                digit
            })
            .collect();
        let phi = energy(params, &assignment, instance)?;
        let gauss: f64 = assignment
            .iter()
            .enumerate()
            .map(|(i, &y)| log_gaussian(&instance.xhat.row(i).to_vec(), y, theta))
            .sum();
        exps_full.push(phi + gauss);
        exps_phi.push(phi);
        assignments.push(assignment);
    }

    let lse_norm = |exps: &[f64]| {
        let m = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = exps.iter().map(|e| (e - m).exp()).sum();
        (m + s.ln(), m)
    };
    let (log_z, m_full) = lse_norm(&exps_full);
    let (log_zprime, m_phi) = lse_norm(&exps_phi);

    let mut marg = Array2::zeros((n, k));
    let mut marg_p = Array2::zeros((n, k));
    for (idx, assignment) in assignments.iter().enumerate() {
        for (i, &y) in assignment.iter().enumerate() {
            marg[[i, y]] += (exps_full[idx] - m_full).exp();
            marg_p[[i, y]] += (exps_phi[idx] - m_phi).exp();
        }
    }
    marg /= (log_z - m_full).exp();
    marg_p /= (log_zprime - m_phi).exp();
    Ok(ExactResult { log_z, log_zprime, marginals: marg, marginals_prime: marg_p })
}

/// Central finite difference of (log Z − log Z') on one flattened λ
/// coordinate.
pub fn exact_objective_fd(
    params: &EncoderParams,
    theta: &ReconstructionParams,
    instance: &Instance,
    coordinate: usize,
    step: f64,
) -> Result<f64> {
    let mut flat = params.to_flat();
    let base = flat[coordinate];

    flat[coordinate] = base + step;
    let plus = enumerate_exact(&params.from_flat(&flat), theta, instance)?;
    flat[coordinate] = base - step;
    let minus = enumerate_exact(&params.from_flat(&flat), theta, instance)?;

    Ok(((plus.log_z - plus.log_zprime) - (minus.log_z - minus.log_zprime)) / (2.0 * step))
}
