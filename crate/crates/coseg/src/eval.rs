//! Region arithmetic and the co-segmentation score: per-class mean IoU
//! against ground truth, maximized over clusters. Also the adjusted Rand
//! index used by the synthetic recovery benchmarks.

use serde::{Deserialize, Serialize};

use crate::core::region::{intersection_len, merge_intervals};
use crate::core::Region;
use crate::error::{Error, Result};
use crate::par;

/// Exact pixel intersection-over-union; 0 when the union is empty.
pub fn iou(a: &Region, b: &Region) -> Result<f64> {
    if !a.same_frame(b) {
        return Err(Error::DimensionMismatch("regions in different image frames".into()));
    }
    let ia = a.intervals();
    let ib = b.intervals();
    let inter = intersection_len(&ia, &ib);
    let mut all: Vec<(u64, u64)> = ia;
    all.extend(ib);
    all.sort_unstable();
    let union: u64 = merge_intervals(&all).iter().map(|(s, e)| e - s).sum();
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosegScore {
    pub score: f64,
    pub best_k: usize,
    /// Per-image IoU of the best cluster, in input order.
    pub per_image: Vec<f64>,
}

/// max over k of the mean over images of IoU(GT_i, R_i^k). A missing
/// candidate counts as the empty region; ties go to the lowest k.
pub fn coseg_score(
    selections: &[Vec<Option<Region>>],
    ground_truth: &[Region],
    k: usize,
) -> Result<CosegScore> {
    if selections.is_empty() || selections.len() != ground_truth.len() {
        return Err(Error::InvalidInput("empty or mismatched image set".into()));
    }
    let per_cluster: Vec<Vec<f64>> = par::map_indices(k, |c| {
        selections
            .iter()
            .zip(ground_truth)
            .map(|(imgs, gt)| match imgs.get(c).and_then(|r| r.as_ref()) {
                Some(region) => iou(gt, region).unwrap_or(0.0),
                None => 0.0,
            })
            .collect()
    });
    let mut best_k = 0;
    let mut best = f64::NEG_INFINITY;
    for (c, ious) in per_cluster.iter().enumerate() {
        let mean: f64 = ious.iter().sum::<f64>() / ious.len() as f64;
        if mean > best {
            best = mean;
            best_k = c;
        }
    }
    Ok(CosegScore { score: best, best_k, per_image: per_cluster[best_k].clone() })
}

/// Chance-corrected agreement between two partitions of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidInput("partitions must be nonempty and equal length".into()));
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let choose2 = |n: u64| (n * n.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&n| choose2(n)).sum();
    let sum_rows: f64 = table.iter().map(|row| choose2(row.iter().sum())).sum();
    let sum_cols: f64 =
        (0..kb).map(|j| choose2(table.iter().map(|row| row[j]).sum())).sum();
    let total = choose2(a.len() as u64);
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        return Ok(1.0); // both partitions trivial
    }
    Ok((sum_cells - expected) / (max_index - expected))
}
