//! The outer training loop (block-coordinate ascent: one projected Adagrad
//! step on λ, one EM step on θ per iteration), posterior inference, and
//! foreground selection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::learn::{adagrad_step, em_update, gradients, AdagradState};
use super::mean_field::{free_energy, mean_field};
use super::{Instance, MeanFieldState};
use crate::core::{
    Bandwidth, EncoderParams, ForegroundMode, ImageRecord, ReconstructionParams, Region,
    TrainConfig,
};
use crate::error::{Error, Result};
use crate::hoi::{estimate_bandwidth, proposal_region};

/// One outer-iteration record of the machine-readable progress log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub log_z: f64,
    pub log_z_prime: f64,
    pub objective: f64,
    pub max_delta_q: f64,
    pub mf_sweeps: usize,
    /// Per-sweep max row change within this iteration's mean-field run.
    pub sweep_deltas: Vec<f64>,
    pub wall_time_s: f64,
}

/// Everything training produces: parameters, the final mean-field state under
/// them, and the free-energy trace.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoder: EncoderParams,
    pub reconstruction: ReconstructionParams,
    pub config: TrainConfig,
    pub delta_f: f64,
    pub delta_h: f64,
    pub state: MeanFieldState,
    pub trace: Vec<IterationRecord>,
}

const RELATIVE_OBJECTIVE_TOL: f64 = 1e-5;

/// Resolve "auto" bandwidths against the dataset's raw feature vectors.
pub fn resolve_bandwidths(dataset: &[ImageRecord], config: &TrainConfig) -> Result<(f64, f64)> {
    let resolve = |bw: Bandwidth, channel: fn(&crate::core::ProposalRecord) -> &Vec<f64>| match bw {
        Bandwidth::Value(v) => Ok(v),
        Bandwidth::Auto => {
            let feats: Vec<Vec<f64>> = dataset
                .iter()
                .flat_map(|img| img.proposals.iter().map(|p| channel(p).clone()))
                .collect();
            estimate_bandwidth(&feats)
        }
    };
    let delta_f = resolve(config.delta_f, |p| &p.appearance)?;
    let delta_h = resolve(config.delta_h, |p| &p.interaction)?;
    Ok((delta_f, delta_h))
}

/// Greedy max-min (farthest-point) seeding of the Gaussian means on x̂, with
/// per-dimension global variance. The first center is drawn from the seed.
fn init_reconstruction(
    instance: &Instance,
    k: usize,
    variance_floor: f64,
    seed: u64,
) -> ReconstructionParams {
    let n = instance.n();
    let d = instance.xhat.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = rng.gen_range(0..n);

    let dist2 = |a: usize, b: usize| -> f64 {
        (0..d).map(|j| (instance.xhat[[a, j]] - instance.xhat[[b, j]]).powi(2)).sum()
    };
    let mut chosen = vec![first];
    let mut min_dist: Vec<f64> = (0..n).map(|i| dist2(i, first)).collect();
    while chosen.len() < k {
        // ties resolve to the lowest index
        let next = (0..n)
            .max_by(|&a, &b| min_dist[a].partial_cmp(&min_dist[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        chosen.push(next);
        for i in 0..n {
            min_dist[i] = min_dist[i].min(dist2(i, next));
        }
    }

    let global_mean: Vec<f64> = (0..d).map(|j| instance.xhat.column(j).sum() / n as f64).collect();
    let global_var: Vec<f64> = (0..d)
        .map(|j| {
            let v = instance
                .xhat
                .column(j)
                .iter()
                .map(|&x| (x - global_mean[j]).powi(2))
                .sum::<f64>()
                / n as f64;
            v.max(variance_floor)
        })
        .collect();
    ReconstructionParams {
        means: chosen.iter().map(|&i| instance.xhat.row(i).to_vec()).collect(),
        variances: vec![global_var; k],
    }
}

/// Train the fully connected CRF auto-encoder on a validated dataset.
pub fn train(dataset: &[ImageRecord], config: &TrainConfig) -> Result<TrainedModel> {
    config.validate()?;
    let n: usize = dataset.iter().map(|img| img.proposals.len()).sum();
    if n < config.k {
        return Err(Error::InvalidInput(format!(
            "N = {n} proposals is less than K = {} clusters",
            config.k
        )));
    }
    let (delta_f, delta_h) = resolve_bandwidths(dataset, config)?;
    let instance = Instance::build(dataset, delta_f, delta_h)?;
    let d_f = instance.f_aug.ncols() - 1;
    let d_h = instance.h_aug.ncols() - 1;

    let mut theta = init_reconstruction(&instance, config.k, config.variance_floor, config.seed);
    let mut params = EncoderParams::zeros(config.k, d_f, d_h);
    params.project(config.epsilon_p);
    let mut ada = AdagradState::new(params.flat_len(), config.learning_rate);

    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut last_objective = f64::NEG_INFINITY;
    let started = std::time::Instant::now();
    for iteration in 0..config.outer_iters {
        let run = mean_field(&params, &theta, &instance, config.mf_max_sweeps, config.mf_tol)?;
        let (log_z, log_z_prime) = free_energy(&run.state, &params, &theta, &instance);
        let reg: f64 =
            -0.5 * config.reg_lambda * params.to_flat().iter().map(|v| v * v).sum::<f64>();
        let objective = reg + log_z - log_z_prime;

        let grads = gradients(&run.state, &params, &instance);
        params = adagrad_step(&params, &grads, config.reg_lambda, config.epsilon_p, &mut ada);
        theta = em_update(&run.state.q, &instance.xhat, config.variance_floor);

        trace.push(IterationRecord {
            iteration,
            log_z,
            log_z_prime,
            objective,
            max_delta_q: run.sweep_deltas.last().copied().unwrap_or(0.0),
            mf_sweeps: run.sweeps(),
            sweep_deltas: run.sweep_deltas.clone(),
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        if (objective - last_objective).abs() < RELATIVE_OBJECTIVE_TOL * objective.abs() {
            break;
        }
        last_objective = objective;
    }

    // final state under the final parameters, so that inference on the
    // training set reproduces it exactly
    let final_run = mean_field(&params, &theta, &instance, config.mf_max_sweeps, config.mf_tol)?;
    Ok(TrainedModel {
        encoder: params,
        reconstruction: theta,
        config: config.clone(),
        delta_f,
        delta_h,
        state: final_run.state,
        trace,
    })
}

/// Per-proposal posterior cluster distributions on a (possibly new) dataset,
/// by re-running mean field with frozen parameters.
pub fn infer(model: &TrainedModel, dataset: &[ImageRecord]) -> Result<MeanFieldState> {
    let instance = Instance::build(dataset, model.delta_f, model.delta_h)?;
    if instance.f_aug.ncols() - 1 != model.encoder.d_f()
        || instance.h_aug.ncols() - 1 != model.encoder.d_h()
    {
        return Err(Error::DimensionMismatch(
            "dataset feature dimensions differ from the trained model".into(),
        ));
    }
    let run = mean_field(
        &model.encoder,
        &model.reconstruction,
        &instance,
        model.config.mf_max_sweeps,
        model.config.mf_tol,
    )?;
    Ok(run.state)
}

/// One selected region for a cluster within one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedRegion {
    pub cluster: usize,
    pub region: Region,
    pub proposal_ids: Vec<String>,
    /// Q(k) of each selected proposal, in proposal order.
    pub confidences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSelection {
    pub image_id: String,
    pub clusters: Vec<SelectedRegion>,
}

/// Foreground selection from the inferred distributions.
///
/// top1: per image and cluster, the single proposal maximizing Q(k) (ties →
/// lowest proposal index). union: the pixel union of all proposals whose
/// argmax cluster is k (ties → lowest cluster index).
pub fn select_foregrounds(
    q: &MeanFieldState,
    dataset: &[ImageRecord],
    mode: ForegroundMode,
) -> Result<Vec<ImageSelection>> {
    let k = q.k();
    // node index ranges per image, in dataset order
    let mut node = 0usize;
    let mut out = Vec::with_capacity(dataset.len());
    for img in dataset {
        let indices: Vec<usize> = (0..img.proposals.len()).map(|p| node + p).collect();
        node += img.proposals.len();
        let mut clusters = Vec::with_capacity(k);
        for c in 0..k {
            let selected = match mode {
                ForegroundMode::Top1 => {
                    let best = indices
                        .iter()
                        .enumerate()
                        .max_by(|(_, &a), (_, &b)| {
                            q.q[[a, c]].partial_cmp(&q.q[[b, c]]).unwrap().then(
                                // lowest proposal index wins ties
                                b.cmp(&a),
                            )
                        })
                        .map(|(local, _)| local);
                    best.into_iter().collect::<Vec<_>>()
                }
                ForegroundMode::Union => indices
                    .iter()
                    .enumerate()
                    .filter(|(_, &i)| argmax_row(&q.q, i) == c)
                    .map(|(local, _)| local)
                    .collect(),
            };
            let regions: Vec<Region> = selected
                .iter()
                .map(|&local| proposal_region(&img.proposals[local], img.width, img.height))
                .collect();
            let region = if regions.is_empty() {
                Region::empty(img.width, img.height)
            } else {
                Region::union_of(&regions.iter().collect::<Vec<_>>())?
            };
            clusters.push(SelectedRegion {
                cluster: c,
                region,
                proposal_ids: selected
                    .iter()
                    .map(|&local| img.proposals[local].proposal_id.clone())
                    .collect(),
                confidences: selected.iter().map(|&local| q.q[[indices[local], c]]).collect(),
            });
        }
        out.push(ImageSelection { image_id: img.image_id.clone(), clusters });
    }
    Ok(out)
}

fn argmax_row(table: &ndarray::Array2<f64>, i: usize) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (c, &v) in table.row(i).iter().enumerate() {
        if v > best_v {
            best_v = v;
            best = c;
        }
    }
    best
}
