//! Human-object interaction descriptors: 3D cylinder-bin histograms anchored
//! to body parts, the 2D person-box grid variant, multi-human max pooling,
//! Gaussian similarity, and bandwidth estimation.

use serde::{Deserialize, Serialize};

use crate::core::{BBox, HumanSkeleton, ProposalRecord, Region, RegionKind, SkeletonTopology};
use crate::error::{Error, Result};

pub const CYLINDER_BINS: usize = 15;
pub const GRID_2D_BINS: usize = 36;

/// Geometry of the per-part cylinder: 3 vertical segments × 5 radial rings,
/// with the innermost circle excluded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderBinning {
    pub vertical_segments: usize,
    pub radial_rings: usize,
    /// Fraction of max_radius taken up by the excluded innermost circle.
    pub inner_exclusion_fraction: f64,
    /// Outer cylinder radius in meters.
    pub max_radius: f64,
}

impl Default for CylinderBinning {
    fn default() -> Self {
        CylinderBinning {
            vertical_segments: 3,
            radial_rings: 5,
            inner_exclusion_fraction: 1.0 / 6.0,
            max_radius: 0.5,
        }
    }
}

impl CylinderBinning {
    pub fn bin_count(&self) -> usize {
        self.vertical_segments * self.radial_rings
    }

    fn inner_radius(&self) -> f64 {
        self.inner_exclusion_fraction * self.max_radius
    }

    /// Classify a point in part-local coordinates (axial position t along a
    /// segment of length `len`, radial distance rho from the axis). Vertical
    /// thirds are lower-inclusive/upper-exclusive with the last third
    /// upper-inclusive; rings are lower-exclusive/upper-inclusive.
    pub fn classify(&self, t: f64, rho: f64, len: f64) -> Option<usize> {
        if t < 0.0 || t > len {
            return None;
        }
        let r_in = self.inner_radius();
        if rho <= r_in || rho > self.max_radius {
            return None;
        }
        let v = ((t / len * self.vertical_segments as f64) as usize).min(self.vertical_segments - 1);
        let ring_width = (self.max_radius - r_in) / self.radial_rings as f64;
        let r = (((rho - r_in) / ring_width).ceil() as usize).max(1).min(self.radial_rings) - 1;
        Some(v * self.radial_rings + r)
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Count proposal points in the 15 cylinder bins around one body part.
pub fn hoi_histogram_3d(
    points: &[[f64; 3]],
    part_start: [f64; 3],
    part_end: [f64; 3],
    binning: &CylinderBinning,
) -> Result<Vec<u64>> {
    let axis = sub(part_end, part_start);
    let len_sq = dot(axis, axis);
    if len_sq == 0.0 || !len_sq.is_finite() {
        return Err(Error::InvalidInput("degenerate body part: start equals end".into()));
    }
    let len = len_sq.sqrt();
    let unit = [axis[0] / len, axis[1] / len, axis[2] / len];
    let mut hist = vec![0u64; binning.bin_count()];
    for &p in points {
        let v = sub(p, part_start);
        let t = dot(v, unit);
        let radial = [v[0] - t * unit[0], v[1] - t * unit[1], v[2] - t * unit[2]];
        let rho = dot(radial, radial).sqrt();
        if let Some(bin) = binning.classify(t, rho, len) {
            hist[bin] += 1;
        }
    }
    Ok(hist)
}

/// Full 3D interaction feature for one proposal against one skeleton:
/// per-part histograms in topology order, normalized by the total proposal
/// point count. Empty point lists yield the zero vector (flagged, not an
/// error: the proposal simply lacks 3D data).
pub fn hoi_feature_3d(
    points: &[[f64; 3]],
    skeleton: &HumanSkeleton,
    topology: &SkeletonTopology,
    binning: &CylinderBinning,
) -> Result<(Vec<f64>, bool)> {
    let dim = topology.part_count() * binning.bin_count();
    if points.is_empty() {
        return Ok((vec![0.0; dim], true));
    }
    let total = points.len() as f64;
    let mut h = Vec::with_capacity(dim);
    for (start_name, end_name) in &topology.parts {
        let start = *skeleton.joints.get(start_name).ok_or_else(|| {
            Error::InvalidInput(format!("skeleton missing joint '{start_name}'"))
        })?;
        let end = *skeleton.joints.get(end_name).ok_or_else(|| {
            Error::InvalidInput(format!("skeleton missing joint '{end_name}'"))
        })?;
        let hist = hoi_histogram_3d(points, start, end, binning)?;
        h.extend(hist.into_iter().map(|c| c as f64 / total));
    }
    Ok((h, false))
}

/// 2D interaction feature: the human box is split into a 6×6 grid (remainder
/// pixels join the last row/column) and proposal pixels are counted per cell,
/// normalized by the total proposal pixel count.
pub fn hoi_feature_2d(proposal: &Region, human_bbox: &BBox) -> Result<Vec<f64>> {
    if human_bbox.area() == 0 {
        return Err(Error::InvalidInput("human bounding box has zero area".into()));
    }
    let total = proposal.area();
    if total == 0 {
        return Err(Error::InvalidInput("zero-area proposal".into()));
    }
    let cell_w = (human_bbox.width / 6).max(1);
    let cell_h = (human_bbox.height / 6).max(1);
    let mut counts = [0u64; GRID_2D_BINS];
    for (a, b) in proposal.intervals() {
        for lin in a..b {
            let x = (lin % proposal.width as u64) as u32;
            let y = (lin / proposal.width as u64) as u32;
            if !human_bbox.contains(x, y) {
                continue;
            }
            let cx = (((x - human_bbox.x) / cell_w) as usize).min(5);
            let cy = (((y - human_bbox.y) / cell_h) as usize).min(5);
            counts[cy * 6 + cx] += 1;
        }
    }
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Entrywise max over the histograms of all humans; empty input pools to the
/// zero vector of the given dimension.
pub fn pool_humans(histograms: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    for h in histograms {
        if h.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "histogram length {} != {dim}",
                h.len()
            )));
        }
        for (o, &v) in out.iter_mut().zip(h) {
            *o = f64::max(*o, v);
        }
    }
    Ok(out)
}

/// S(a, b) = exp(−‖a−b‖² / δ).
pub fn gaussian_similarity(a: &[f64], b: &[f64], delta: f64) -> Result<f64> {
    if delta <= 0.0 {
        return Err(Error::InvalidInput("similarity bandwidth must be > 0".into()));
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((-d2 / delta).exp())
}

/// Median of all pairwise squared distances over distinct pairs; 1.0 when the
/// median is zero (all points coincide).
pub fn estimate_bandwidth(features: &[Vec<f64>]) -> Result<f64> {
    if features.len() < 2 {
        return Err(Error::InvalidInput("bandwidth estimation needs ≥ 2 vectors".into()));
    }
    let n = features.len();
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d2: f64 = features[i]
                .iter()
                .zip(&features[j])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            dists.push(d2);
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    let median = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
    Ok(if median == 0.0 { 1.0 } else { median })
}

/// Append the augmentation constant −1.
pub fn augment(v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() + 1);
    out.extend_from_slice(v);
    out.push(-1.0);
    out
}

/// Proposal pixels as a region: the mask when present, otherwise the bbox.
pub fn proposal_region(p: &ProposalRecord, width: u32, height: u32) -> Region {
    match &p.mask {
        Some(m) => Region::mask(m.clone()),
        None => Region { width, height, kind: RegionKind::Rect(p.bbox) },
    }
}
