//! Greedy adjacent-merge machinery shared by consolidation and long-term
//! compaction.
//!
//! `sims[i]` caches the similarity of frames `i` and `i + 1`. After merging
//! at `m` only the two neighbouring entries change, so the cache stays
//! bitwise equal to a from-scratch recomputation.

use alloc::vec::Vec;

use crate::error::Result;
use crate::frame::{frame_pair_similarity, weighted_merge, WeightedFrame};

pub(crate) fn adjacent_similarities(frames: &[WeightedFrame]) -> Result<Vec<f64>> {
    frames.windows(2).map(|w| frame_pair_similarity(&w[0], &w[1])).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax_lowest(sims: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in sims.iter().enumerate() {
        match best {
            Some((_, b)) if s <= b => {}
            _ => best = Some((i, s)),
        }
    }
    best
}

/// Replaces `frames[m], frames[m + 1]` with their weighted merge.
pub(crate) fn merge_at(
    frames: &mut Vec<WeightedFrame>,
    sims: &mut Vec<f64>,
    m: usize,
) -> Result<()> {
    let merged = weighted_merge(&frames[m], &frames[m + 1])?;
    let left = if m > 0 { Some(frame_pair_similarity(&frames[m - 1], &merged)?) } else { None };
    let right = if m + 2 < frames.len() {
        Some(frame_pair_similarity(&merged, &frames[m + 2])?)
    } else {
        None
    };
    frames[m] = merged;
    frames.remove(m + 1);
    sims.remove(m);
    if let Some(s) = left {
        sims[m - 1] = s;
    }
    if let Some(s) = right {
        sims[m] = s;
    }
    Ok(())
}
