//! Domain data model shared by all other modules: proposals, skeletons,
//! datasets, CRF and reconstruction parameters, training configuration.

pub mod manifest;
pub mod region;
pub mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use region::{BBox, Region, RegionKind, RleMask};

/// One object proposal: geometry plus precomputed feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub image_id: String,
    pub proposal_id: String,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<RleMask>,
    /// Appearance feature vector f (ingested precomputed).
    #[serde(default)]
    pub appearance: Vec<f64>,
    /// Human-object interaction feature vector h, entries in [0, 1].
    #[serde(default)]
    pub interaction: Vec<f64>,
    /// 3D points (meters, camera frame) belonging to the proposal region.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<[f64; 3]>>,
}

/// A tracked human: named joints with 3D positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanSkeleton {
    pub joints: BTreeMap<String, [f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<BTreeMap<String, f64>>,
}

/// Ordered list of body parts, each a (start joint, end joint) pair.
/// The order fixes the block layout of the interaction feature h.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonTopology {
    pub parts: Vec<(String, String)>,
}

impl SkeletonTopology {
    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    /// Kinect-style 18-part tree: head/spine chain, both arms, both legs.
    pub fn kinect_default() -> Self {
        let pairs = [
            ("head", "neck"),
            ("neck", "spine_shoulder"),
            ("spine_shoulder", "spine_mid"),
            ("spine_mid", "spine_base"),
            ("spine_shoulder", "shoulder_right"),
            ("shoulder_right", "elbow_right"),
            ("elbow_right", "wrist_right"),
            ("wrist_right", "hand_right"),
            ("spine_shoulder", "shoulder_left"),
            ("shoulder_left", "elbow_left"),
            ("elbow_left", "wrist_left"),
            ("wrist_left", "hand_left"),
            ("spine_base", "hip_right"),
            ("hip_right", "knee_right"),
            ("knee_right", "ankle_right"),
            ("spine_base", "hip_left"),
            ("hip_left", "knee_left"),
            ("knee_left", "ankle_left"),
        ];
        SkeletonTopology {
            parts: pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }
}

/// One image: dimensions, proposals, observed humans, optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub proposals: Vec<ProposalRecord>,
    /// 3D case: tracked skeletons.
    #[serde(default)]
    pub humans: Vec<HumanSkeleton>,
    /// 2D case: person-detector bounding boxes.
    #[serde(default)]
    pub human_boxes: Vec<BBox>,
    /// Ground-truth foreground region per named class.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ground_truth: BTreeMap<String, Region>,
}

/// All CRF weights λ. Each unary row is the augmented vector [ω..., b]:
/// its dot product with an augmented feature [v..., -1] is ω·v − b.
/// Off-diagonal pairwise weights are identically zero and not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub k: usize,
    /// K rows of length D_f + 1 (appearance weights plus bias).
    pub lambda_uo: Vec<Vec<f64>>,
    /// K rows of length D_h + 1 (interaction weights plus bias); all entries ≥ 0.
    pub lambda_uh: Vec<Vec<f64>>,
    /// Per-cluster pairwise weight/bias for the appearance similarity channel.
    pub lambda_p_obj: Vec<PairWeight>,
    /// Per-cluster pairwise weight/bias for the interaction similarity channel.
    pub lambda_p_int: Vec<PairWeight>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairWeight {
    pub weight: f64,
    pub bias: f64,
}

impl EncoderParams {
    /// All-zero parameters (projection later lifts pairwise weights to ε_p).
    pub fn zeros(k: usize, d_f: usize, d_h: usize) -> Self {
        EncoderParams {
            k,
            lambda_uo: vec![vec![0.0; d_f + 1]; k],
            lambda_uh: vec![vec![0.0; d_h + 1]; k],
            lambda_p_obj: vec![PairWeight { weight: 0.0, bias: 0.0 }; k],
            lambda_p_int: vec![PairWeight { weight: 0.0, bias: 0.0 }; k],
        }
    }

    pub fn d_f(&self) -> usize {
        self.lambda_uo[0].len() - 1
    }

    pub fn d_h(&self) -> usize {
        self.lambda_uh[0].len() - 1
    }

    /// Number of flattened λ coordinates.
    pub fn flat_len(&self) -> usize {
        self.k * (self.d_f() + 1) + self.k * (self.d_h() + 1) + 4 * self.k
    }

    /// Flatten in a fixed layout: lambda_uo rows, lambda_uh rows, then per
    /// cluster (w_po, b_po), then per cluster (w_ph, b_ph).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for row in &self.lambda_uo {
            out.extend_from_slice(row);
        }
        for row in &self.lambda_uh {
            out.extend_from_slice(row);
        }
        for p in &self.lambda_p_obj {
            out.push(p.weight);
            out.push(p.bias);
        }
        for p in &self.lambda_p_int {
            out.push(p.weight);
            out.push(p.bias);
        }
        out
    }

    pub fn from_flat(&self, flat: &[f64]) -> Self {
        assert_eq!(flat.len(), self.flat_len());
        let mut out = self.clone();
        let mut pos = 0;
        for row in &mut out.lambda_uo {
            let n = row.len();
            row.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        for row in &mut out.lambda_uh {
            let n = row.len();
            row.copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
        for p in &mut out.lambda_p_obj {
            p.weight = flat[pos];
            p.bias = flat[pos + 1];
            pos += 2;
        }
        for p in &mut out.lambda_p_int {
            p.weight = flat[pos];
            p.bias = flat[pos + 1];
            pos += 2;
        }
        out
    }

    /// Project onto the constraint set: ω^(uh) and all biases ≥ 0,
    /// pairwise weights ≥ ε_p.
    pub fn project(&mut self, epsilon_p: f64) {
        for row in &mut self.lambda_uh {
            for v in row.iter_mut() {
                *v = v.max(0.0);
            }
        }
        for row in &mut self.lambda_uo {
            let last = row.len() - 1;
            row[last] = row[last].max(0.0);
        }
        for p in self.lambda_p_obj.iter_mut().chain(self.lambda_p_int.iter_mut()) {
            p.weight = p.weight.max(epsilon_p);
            p.bias = p.bias.max(0.0);
        }
    }

    /// Check the constraint set exactly (used by tests and validation).
    pub fn constraints_hold(&self, epsilon_p: f64) -> bool {
        self.lambda_uh.iter().all(|row| row.iter().all(|&v| v >= 0.0))
            && self.lambda_uo.iter().all(|row| *row.last().unwrap() >= 0.0)
            && self
                .lambda_p_obj
                .iter()
                .chain(self.lambda_p_int.iter())
                .all(|p| p.weight >= epsilon_p && p.bias >= 0.0)
    }
}

/// Per-cluster diagonal Gaussian reconstruction parameters θ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionParams {
    /// K mean vectors of dimension D_x = D_f + D_h.
    pub means: Vec<Vec<f64>>,
    /// K diagonal variance vectors, every entry ≥ the variance floor.
    pub variances: Vec<Vec<f64>>,
}

impl ReconstructionParams {
    pub fn k(&self) -> usize {
        self.means.len()
    }

    pub fn d_x(&self) -> usize {
        self.means[0].len()
    }
}

/// Similarity bandwidth: fixed value or estimated from the data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Auto,
    Value(f64),
}

impl std::str::FromStr for Bandwidth {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "auto" {
            Ok(Bandwidth::Auto)
        } else {
            s.parse::<f64>()
                .map_err(|e| format!("bandwidth must be 'auto' or a positive number: {e}"))
                .and_then(|v| {
                    if v > 0.0 { Ok(Bandwidth::Value(v)) } else { Err("bandwidth must be > 0".into()) }
                })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ForegroundMode {
    Top1,
    Union,
}

/// Training configuration. Defaults follow the module ledgers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub delta_f: Bandwidth,
    pub delta_h: Bandwidth,
    pub reg_lambda: f64,
    pub learning_rate: f64,
    pub outer_iters: usize,
    pub mf_max_sweeps: usize,
    pub mf_tol: f64,
    pub epsilon_p: f64,
    pub variance_floor: f64,
    pub seed: u64,
    pub foreground_mode: ForegroundMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 4,
            delta_f: Bandwidth::Auto,
            delta_h: Bandwidth::Auto,
            reg_lambda: 1e-3,
            learning_rate: 0.1,
            outer_iters: 50,
            mf_max_sweeps: 20,
            mf_tol: 1e-4,
            epsilon_p: 1e-6,
            variance_floor: 1e-6,
            seed: 0,
            foreground_mode: ForegroundMode::Top1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("reg_lambda", self.reg_lambda >= 0.0),
            ("learning_rate", self.learning_rate >= 0.0),
            ("mf_tol", self.mf_tol > 0.0),
            ("epsilon_p", self.epsilon_p >= 0.0),
            ("variance_floor", self.variance_floor > 0.0),
        ];
        for (name, ok) in positive {
            if !ok {
                return Err(Error::InvalidInput(format!("config field {name} out of range")));
            }
        }
        if self.k == 0 || self.mf_max_sweeps == 0 {
            return Err(Error::InvalidInput("k and mf_max_sweeps must be ≥ 1".into()));
        }
        if let Bandwidth::Value(v) = self.delta_f {
            if v <= 0.0 {
                return Err(Error::InvalidInput("delta_f must be > 0".into()));
            }
        }
        if let Bandwidth::Value(v) = self.delta_h {
            if v <= 0.0 {
                return Err(Error::InvalidInput("delta_h must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Tile an image into rows×cols non-overlapping proposal skeletons
/// (bbox only; features left unset for downstream ingestion).
pub fn make_grid_proposals(
    image_id: &str,
    width: u32,
    height: u32,
    rows: u32,
    cols: u32,
) -> Result<Vec<ProposalRecord>> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidInput("zero image dimension".into()));
    }
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("rows and cols must be ≥ 1".into()));
    }
    let mut out = Vec::with_capacity((rows * cols) as usize);
    for r in 0..rows {
        let y0 = (height as u64 * r as u64 / rows as u64) as u32;
        let y1 = (height as u64 * (r + 1) as u64 / rows as u64) as u32;
        for c in 0..cols {
            let x0 = (width as u64 * c as u64 / cols as u64) as u32;
            let x1 = (width as u64 * (c + 1) as u64 / cols as u64) as u32;
            out.push(ProposalRecord {
                image_id: image_id.to_string(),
                proposal_id: format!("grid_{r}_{c}"),
                bbox: BBox::new(x0, y0, x1 - x0, y1 - y0),
                mask: None,
                appearance: Vec::new(),
                interaction: Vec::new(),
                points: None,
            });
        }
    }
    Ok(out)
}
