//! Provenance-based relevance metrics for a retained memory.

use serde::{Deserialize, Serialize};
use streammem_core::{tensor, WeightedFrame};

use crate::synth::PlantedSegment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMetrics {
    /// Mean over retained entries of the share of each entry's mass that
    /// comes from planted frames.
    pub relevant_mass_fraction: f64,
    /// Weight of entries touching any planted frame over total weight.
    pub overlap_weight_fraction: f64,
    /// Fraction of planted frames covered by some entry's provenance.
    pub slot_recall: f64,
    /// Mean cosine between entry descriptors and the question. Degenerate
    /// (zero) entries are skipped.
    pub q_affinity: Option<f64>,
    pub entries: usize,
}

impl RelevanceMetrics {
    pub fn compute(entries: &[WeightedFrame], planted: &[PlantedSegment], q: Option<&[f64]>) -> Self {
        let q_affinity = q.and_then(|q| {
            let sims: Vec<f64> = entries
                .iter()
                .filter_map(|e| tensor::frame_descriptor(e.tokens()).ok())
                .filter_map(|d| tensor::cosine(&d, q).ok())
                .collect();
            (!sims.is_empty()).then(|| sims.iter().sum::<f64>() / sims.len() as f64)
        });
        let planted_total: u64 = planted.iter().map(PlantedSegment::len).sum();
        if planted_total == 0 || entries.is_empty() {
            return RelevanceMetrics {
                relevant_mass_fraction: 0.0,
                overlap_weight_fraction: 0.0,
                slot_recall: 0.0,
                q_affinity,
                entries: entries.len(),
            };
        }

        let mut share_sum = 0.0;
        let mut overlap_weight = 0u64;
        let mut total_weight = 0u64;
        for e in entries {
            let p = e.provenance();
            let inside: u64 = planted.iter().map(|s| p.mass_within(s.start, s.end)).sum();
            share_sum += inside as f64 / e.weight() as f64;
            total_weight += e.weight();
            if planted.iter().any(|s| p.overlaps(s.start, s.end)) {
                overlap_weight += e.weight();
            }
        }

        let covered: u64 = planted.iter().map(|s| covered_frames(entries, s)).sum();
        RelevanceMetrics {
            relevant_mass_fraction: share_sum / entries.len() as f64,
            overlap_weight_fraction: overlap_weight as f64 / total_weight as f64,
            slot_recall: covered as f64 / planted_total as f64,
            q_affinity,
            entries: entries.len(),
        }
    }
}

/// Number of frames of `seg` that appear in any entry's provenance.
fn covered_frames(entries: &[WeightedFrame], seg: &PlantedSegment) -> u64 {
    let mut ranges: Vec<(u64, u64)> = entries
        .iter()
        .flat_map(|e| e.provenance().spans())
        .filter_map(|s| {
            let lo = s.start.max(seg.start);
            let hi = s.end.min(seg.end + 1);
            (lo < hi).then_some((lo, hi))
        })
        .collect();
    ranges.sort_unstable();
    let mut covered = 0;
    let mut reach = seg.start;
    for (lo, hi) in ranges {
        let lo = lo.max(reach);
        if hi > lo {
            covered += hi - lo;
            reach = hi;
        }
    }
    covered
}

#[cfg(test)]
mod tests {
    use super::*;
    use streammem_core::frame::weighted_merge;
    use streammem_core::TokenMatrix;

    fn src(i: u64) -> WeightedFrame {
        WeightedFrame::source(TokenMatrix::from_rows(&[[1.0, i as f64]]).unwrap(), i)
    }

    #[test]
    fn no_planted_segments() {
        let m = RelevanceMetrics::compute(&[src(0)], &[], None);
        assert_eq!(m.relevant_mass_fraction, 0.0);
        assert_eq!(m.slot_recall, 0.0);
        assert_eq!(m.q_affinity, None);
    }

    #[test]
    fn shares_and_recall() {
        let seg = [PlantedSegment { start: 2, end: 3, rho: 1.0 }];
        // entries: {0,1}, {2,3}, {4}
        let a = weighted_merge(&src(0), &src(1)).unwrap();
        let b = weighted_merge(&src(2), &src(3)).unwrap();
        let m = RelevanceMetrics::compute(&[a.clone(), b, src(4)], &seg, Some(&[1.0, 0.0]));
        assert!((m.relevant_mass_fraction - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.overlap_weight_fraction - 0.4).abs() < 1e-15);
        assert_eq!(m.slot_recall, 1.0);
        assert!(m.q_affinity.is_some());

        // one planted frame merged with a background frame
        let mixed = weighted_merge(&src(1), &src(2)).unwrap();
        let m = RelevanceMetrics::compute(&[src(0), mixed, src(4)], &seg, None);
        assert!((m.relevant_mass_fraction - 0.5 / 3.0).abs() < 1e-15);
        assert_eq!(m.slot_recall, 0.5);
    }
}
