//! Dataset validation. Violations are data, not failures: the validator is
//! total over parseable input and reports everything it finds.

use serde::{Deserialize, Serialize};

use super::ImageRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub image_id: String,
    pub proposal_id: Option<String>,
    pub rule: String,
}

impl Violation {
    fn image(image_id: &str, rule: impl Into<String>) -> Self {
        Violation { image_id: image_id.to_string(), proposal_id: None, rule: rule.into() }
    }

    fn proposal(image_id: &str, proposal_id: &str, rule: impl Into<String>) -> Self {
        Violation {
            image_id: image_id.to_string(),
            proposal_id: Some(proposal_id.to_string()),
            rule: rule.into(),
        }
    }
}

const BLOCK_SUM_SLACK: f64 = 1e-9;

/// Check every dataset invariant; an empty report means the dataset is valid.
/// `hoi_block_size` is the histogram block length of h (15 per part in 3D
/// mode, 36 in 2D mode); block sums are only checked when it divides D_h.
pub fn validate_dataset(dataset: &[ImageRecord], hoi_block_size: Option<usize>) -> Vec<Violation> {
    let per_image = crate::par::map_slice(dataset, |img| validate_image(img, hoi_block_size));
    let mut out: Vec<Violation> = per_image.into_iter().flatten().collect();

    // global feature-dimension consistency, keyed on the first proposal seen
    let mut dims: Option<(usize, usize)> = None;
    for img in dataset {
        for p in &img.proposals {
            match dims {
                None => dims = Some((p.appearance.len(), p.interaction.len())),
                Some((df, dh)) => {
                    if p.appearance.len() != df {
                        out.push(Violation::proposal(
                            &img.image_id,
                            &p.proposal_id,
                            format!("appearance dimension {} != dataset D_f {}", p.appearance.len(), df),
                        ));
                    }
                    if p.interaction.len() != dh {
                        out.push(Violation::proposal(
                            &img.image_id,
                            &p.proposal_id,
                            format!("interaction dimension {} != dataset D_h {}", p.interaction.len(), dh),
                        ));
                    }
                }
            }
        }
    }
    out
}

fn validate_image(img: &ImageRecord, hoi_block_size: Option<usize>) -> Vec<Violation> {
    let mut out = Vec::new();
    if img.proposals.is_empty() {
        out.push(Violation::image(&img.image_id, "image has no proposals"));
    }
    for p in &img.proposals {
        if p.image_id != img.image_id {
            out.push(Violation::proposal(&img.image_id, &p.proposal_id, "proposal image_id mismatch"));
        }
        if p.bbox.area() == 0 {
            out.push(Violation::proposal(&img.image_id, &p.proposal_id, "bbox area is zero"));
        }
        if p.bbox.x + p.bbox.width > img.width || p.bbox.y + p.bbox.height > img.height {
            out.push(Violation::proposal(&img.image_id, &p.proposal_id, "bbox exceeds image bounds"));
        }
        if let Some(mask) = &p.mask {
            if mask.width != img.width || mask.height != img.height {
                out.push(Violation::proposal(&img.image_id, &p.proposal_id, "mask frame differs from image"));
            } else if mask.total_len() != img.width as u64 * img.height as u64 {
                out.push(Violation::proposal(&img.image_id, &p.proposal_id, "mask run lengths do not cover the image"));
            }
        }
        if p.appearance.iter().any(|v| !v.is_finite()) {
            out.push(Violation::proposal(&img.image_id, &p.proposal_id, "non-finite appearance entry"));
        }
        for &v in &p.interaction {
            if !v.is_finite() || v < 0.0 {
                out.push(Violation::proposal(&img.image_id, &p.proposal_id, "interaction entry negative or non-finite"));
                break;
            }
        }
        if let Some(block) = hoi_block_size {
            if block > 0 && !p.interaction.is_empty() && p.interaction.len() % block == 0 {
                for (bi, chunk) in p.interaction.chunks(block).enumerate() {
                    let s: f64 = chunk.iter().sum();
                    if s > 1.0 + BLOCK_SUM_SLACK {
                        out.push(Violation::proposal(
                            &img.image_id,
                            &p.proposal_id,
                            format!("interaction block {bi} sums to {s} > 1"),
                        ));
                    }
                }
            }
        }
        if let Some(points) = &p.points {
            if points.iter().any(|q| q.iter().any(|c| !c.is_finite())) {
                out.push(Violation::proposal(&img.image_id, &p.proposal_id, "non-finite 3D point"));
            }
        }
    }
    for (hi, h) in img.humans.iter().enumerate() {
        if h.joints.values().any(|q| q.iter().any(|c| !c.is_finite())) {
            out.push(Violation::image(&img.image_id, format!("human {hi} has non-finite joint position")));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{BBox, ProposalRecord};

    fn proposal(id: &str, f: Vec<f64>, h: Vec<f64>) -> ProposalRecord {
        ProposalRecord {
            image_id: "im0".into(),
            proposal_id: id.into(),
            bbox: BBox::new(0, 0, 4, 4),
            mask: None,
            appearance: f,
            interaction: h,
            points: None,
        }
    }

    fn image(proposals: Vec<ProposalRecord>) -> ImageRecord {
        ImageRecord {
            image_id: "im0".into(),
            width: 10,
            height: 10,
            proposals,
            humans: vec![],
            human_boxes: vec![],
            ground_truth: Default::default(),
        }
    }

    #[test]
    fn consistent_dataset_has_empty_report() {
        let ds = vec![image(vec![
            proposal("p0", vec![1.0, 2.0], vec![0.5]),
            proposal("p1", vec![0.0, 1.0], vec![0.25]),
        ])];
        assert!(validate_dataset(&ds, None).is_empty());
    }

    #[test]
    fn dimension_mismatch_reported_once() {
        let ds = vec![image(vec![
            proposal("p0", vec![1.0, 2.0], vec![0.5]),
            proposal("p1", vec![0.0, 1.0, 2.0], vec![0.25]),
        ])];
        let report = validate_dataset(&ds, None);
        assert_eq!(report.len(), 1);
        assert!(report[0].rule.contains("appearance dimension"));
    }

    #[test]
    fn negative_interaction_entry_reported() {
        let ds = vec![image(vec![proposal("p0", vec![1.0], vec![-0.1])])];
        let report = validate_dataset(&ds, None);
        assert_eq!(report.len(), 1);
        assert!(report[0].rule.contains("negative"));
    }

    #[test]
    fn block_sum_over_one_reported() {
        let ds = vec![image(vec![proposal("p0", vec![1.0], vec![0.8, 0.8])])];
        let report = validate_dataset(&ds, Some(2));
        assert_eq!(report.len(), 1);
        assert!(report[0].rule.contains("block 0"));
    }
}
