//! Deterministic synthetic datasets with planted cluster structure: appearance
//! features from separated isotropic Gaussians, interaction features from
//! disjoint-support templates, rectangle proposals laid out on image grids.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::core::{BBox, ImageRecord, ProposalRecord, Region, RleMask};
use crate::error::{Error, Result};

pub const IMAGE_WIDTH: u32 = 640;
pub const IMAGE_HEIGHT: u32 = 480;

/// Planted-structure generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub k_true: usize,
    pub per_cluster: usize,
    pub d_f: usize,
    pub d_h: usize,
    /// Distance between appearance cluster centers, in multiples of sigma.
    pub separation: f64,
    pub sigma: f64,
    /// Amplitude of the per-cluster interaction template; 0 disables the
    /// planted interaction signal entirely.
    pub signal_strength: f64,
    pub proposals_per_image: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            k_true: 3,
            per_cluster: 67,
            d_f: 8,
            d_h: 36,
            separation: 6.0,
            sigma: 1.0,
            signal_strength: 0.8,
            proposals_per_image: 6,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.k_true == 0 || self.per_cluster == 0 || self.proposals_per_image == 0 {
            return Err(Error::InvalidInput("counts must be ≥ 1".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidInput("sigma must be > 0".into()));
        }
        if self.d_h < self.k_true {
            return Err(Error::InvalidInput("d_h must be ≥ k_true".into()));
        }
        Ok(())
    }

    /// Appearance cluster centers with equal pairwise distance
    /// separation×sigma.
    pub fn centers(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.separation * self.sigma;
        if self.d_f >= self.k_true {
            // scaled standard basis: ‖s·e_i − s·e_j‖ = s√2
            let s = d / std::f64::consts::SQRT_2;
            Ok((0..self.k_true)
                .map(|k| {
                    let mut c = vec![0.0; self.d_f];
                    c[k] = s;
                    c
                })
                .collect())
        } else if self.k_true == 2 && self.d_f >= 1 {
            let mut a = vec![0.0; self.d_f];
            let mut b = vec![0.0; self.d_f];
            a[0] = -d / 2.0;
            b[0] = d / 2.0;
            Ok(vec![a, b])
        } else {
            Err(Error::InvalidInput("d_f too small for equidistant centers".into()))
        }
    }
}

/// Planted ground truth accompanying a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    /// (image_id, proposal_id, planted cluster) per proposal, dataset order.
    pub labels: Vec<(String, String, usize)>,
    /// Planted foreground cluster (cluster 0) region per image.
    pub foreground: BTreeMap<String, Region>,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per draw keeps the stream simple and seeded
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generate a dataset; fully determined by the seed.
pub fn generate(spec: &SynthSpec) -> Result<(Vec<ImageRecord>, PlantedTruth)> {
    spec.validate()?;
    let centers = spec.centers()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.k_true * spec.per_cluster;
    let n_images = total.div_ceil(spec.proposals_per_image);

    // proposal t gets cluster t % k_true and image t / per_image
    let mut images: Vec<ImageRecord> = (0..n_images)
        .map(|i| ImageRecord {
            image_id: format!("synth_{i:04}"),
            width: IMAGE_WIDTH,
            height: IMAGE_HEIGHT,
            proposals: Vec::new(),
            humans: vec![],
            human_boxes: vec![],
            ground_truth: BTreeMap::new(),
        })
        .collect();
    let mut labels = Vec::with_capacity(total);
    let noise_h = 0.002;

    for t in 0..total {
        let cluster = t % spec.k_true;
        let img_idx = t / spec.proposals_per_image;
        let slot = t % spec.proposals_per_image;

        let appearance: Vec<f64> = centers[cluster]
            .iter()
            .map(|&c| c + spec.sigma * standard_normal(&mut rng))
            .collect();
        // disjoint-support template: one coordinate per cluster
        let mut interaction = vec![0.0; spec.d_h];
        interaction[cluster] = spec.signal_strength.clamp(0.0, 1.0);
        for v in interaction.iter_mut() {
            *v = (*v + rng.gen_range(0.0..noise_h)).clamp(0.0, 1.0);
        }

        // proposals tile a row near the top of the image
        let cols = spec.proposals_per_image as u32;
        let w = IMAGE_WIDTH / cols;
        let bbox = BBox::new(slot as u32 * w, 40, w.min(60), 60);
        let image_id = images[img_idx].image_id.clone();
        let proposal_id = format!("p{slot}");
        images[img_idx].proposals.push(ProposalRecord {
            image_id: image_id.clone(),
            proposal_id: proposal_id.clone(),
            bbox,
            mask: Some(RleMask::from_bbox(IMAGE_WIDTH, IMAGE_HEIGHT, &bbox)),
            appearance,
            interaction,
            points: None,
        });
        labels.push((image_id, proposal_id, cluster));
    }

    // planted foreground: cluster 0's proposals per image
    let mut foreground = BTreeMap::new();
    let mut node = 0usize;
    for img in &mut images {
        let fg: Vec<Region> = img
            .proposals
            .iter()
            .enumerate()
            .filter(|(p, _)| labels[node + p].2 == 0)
            .map(|(_, prop)| Region::rect(IMAGE_WIDTH, IMAGE_HEIGHT, prop.bbox))
            .collect();
        node += img.proposals.len();
        let region = if fg.is_empty() {
            Region::empty(IMAGE_WIDTH, IMAGE_HEIGHT)
        } else {
            Region::union_of(&fg.iter().collect::<Vec<_>>())?
        };
        img.ground_truth.insert("planted".into(), region.clone());
        foreground.insert(img.image_id.clone(), region);
    }

    Ok((images, PlantedTruth { labels, foreground }))
}

/// Monte-Carlo estimate (fixed seed, 10^5 draws) of the optimal classifier
/// accuracy for the planted appearance mixture.
pub fn bayes_accuracy(spec: &SynthSpec) -> Result<f64> {
    spec.validate()?;
    let centers = spec.centers()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5941_4553); // independent stream
    let draws = 100_000;
    let mut correct = 0u64;
    for _ in 0..draws {
        let k = rng.gen_range(0..spec.k_true);
        let x: Vec<f64> =
            centers[k].iter().map(|&c| c + spec.sigma * standard_normal(&mut rng)).collect();
        // equal priors, isotropic equal covariance: ML classification is the
        // nearest center (ties → lowest index)
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, center) in centers.iter().enumerate() {
            let d: f64 = x.iter().zip(center).map(|(a, b)| (a - b).powi(2)).sum();
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        if best == k {
            correct += 1;
        }
    }
    Ok(correct as f64 / draws as f64)
}
