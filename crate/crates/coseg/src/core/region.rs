//! Pixel regions: axis-aligned boxes and run-length-encoded masks, with
//! exact area / intersection / union arithmetic on row-major pixel runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, width: u32, height: u32) -> Self {
        Self { x, y, width, height }
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.x + self.width && py >= self.y && py < self.y + self.height
    }
}

/// Binary mask over an image frame, run-length encoded as alternating
/// (skip, run) pixel counts in row-major order, starting with a skip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleMask {
    pub width: u32,
    pub height: u32,
    pub counts: Vec<u32>,
}

impl RleMask {
    /// Encode a predicate over (x, y) into RLE form.
    pub fn from_fn<F: Fn(u32, u32) -> bool>(width: u32, height: u32, f: F) -> Self {
        let mut counts = Vec::new();
        let mut current = false; // runs start with a skip
        let mut len: u32 = 0;
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                if v == current {
                    len += 1;
                } else {
                    counts.push(len);
                    current = v;
                    len = 1;
                }
            }
        }
        if len > 0 {
            counts.push(len);
        }
        Self { width, height, counts }
    }

    pub fn from_bbox(width: u32, height: u32, b: &BBox) -> Self {
        Self::from_fn(width, height, |x, y| b.contains(x, y))
    }

    /// Decode to sorted disjoint half-open intervals of linear pixel indices.
    pub fn intervals(&self) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut pos: u64 = 0;
        let mut on = false;
        for &c in &self.counts {
            let next = pos + c as u64;
            if on && c > 0 {
                out.push((pos, next));
            }
            pos = next;
            on = !on;
        }
        out
    }

    pub fn area(&self) -> u64 {
        self.intervals().iter().map(|(a, b)| b - a).sum()
    }

    pub fn total_len(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// A region inside a known image frame: either a filled box or an RLE mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub kind: RegionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Rect(BBox),
    Mask(RleMask),
    Empty,
}

impl Region {
    pub fn rect(width: u32, height: u32, b: BBox) -> Self {
        Region { width, height, kind: RegionKind::Rect(b) }
    }

    pub fn mask(m: RleMask) -> Self {
        Region { width: m.width, height: m.height, kind: RegionKind::Mask(m) }
    }

    pub fn empty(width: u32, height: u32) -> Self {
        Region { width, height, kind: RegionKind::Empty }
    }

    /// Sorted disjoint intervals of linear pixel indices covered by the region.
    pub fn intervals(&self) -> Vec<(u64, u64)> {
        match &self.kind {
            RegionKind::Empty => Vec::new(),
            RegionKind::Mask(m) => m.intervals(),
            RegionKind::Rect(b) => {
                let w = self.width as u64;
                (b.y..b.y + b.height)
                    .filter(|_| b.width > 0)
                    .map(|row| {
                        let start = row as u64 * w + b.x as u64;
                        (start, start + b.width as u64)
                    })
                    .collect()
            }
        }
    }

    pub fn area(&self) -> u64 {
        self.intervals().iter().map(|(a, b)| b - a).sum()
    }

    pub fn same_frame(&self, other: &Region) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Pixel union of several regions sharing a frame, as a mask region.
    pub fn union_of(regions: &[&Region]) -> Result<Region> {
        let Some(first) = regions.first() else {
            return Err(Error::InvalidInput("union of zero regions".into()));
        };
        for r in regions {
            if !r.same_frame(first) {
                return Err(Error::DimensionMismatch("regions in different image frames".into()));
            }
        }
        let mut ivs: Vec<(u64, u64)> = regions.iter().flat_map(|r| r.intervals()).collect();
        ivs.sort_unstable();
        let merged = merge_intervals(&ivs);
        Ok(Region {
            width: first.width,
            height: first.height,
            kind: RegionKind::Mask(intervals_to_rle(first.width, first.height, &merged)),
        })
    }
}

/// Merge sorted, possibly overlapping intervals.
pub fn merge_intervals(sorted: &[(u64, u64)]) -> Vec<(u64, u64)> {
    let mut out: Vec<(u64, u64)> = Vec::new();
    for &(a, b) in sorted {
        if a == b {
            continue;
        }
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// Total length of the intersection of two sorted disjoint interval lists.
pub fn intersection_len(a: &[(u64, u64)], b: &[(u64, u64)]) -> u64 {
    let (mut i, mut j) = (0, 0);
    let mut total = 0;
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if lo < hi {
            total += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

fn intervals_to_rle(width: u32, height: u32, ivs: &[(u64, u64)]) -> RleMask {
    let total = width as u64 * height as u64;
    let mut counts = Vec::with_capacity(ivs.len() * 2 + 1);
    let mut pos = 0u64;
    for &(a, b) in ivs {
        counts.push((a - pos) as u32);
        counts.push((b - a) as u32);
        pos = b;
    }
    if pos < total {
        counts.push((total - pos) as u32);
    }
    RleMask { width, height, counts }
}
