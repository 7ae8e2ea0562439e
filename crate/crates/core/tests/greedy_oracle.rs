//! The optimized greedy merge against a from-scratch reference loop, plus
//! property tests over random windows.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streammem_core::consolidation::{self, greedy_merge};
use streammem_core::{ConsolidationConfig, LongTermMemory, RelevanceBasis, TokenMatrix, WeightedFrame};

type NaiveOutput = (Vec<Vec<u64>>, Vec<Vec<f64>>, Vec<(usize, f64)>);

/// Naive reference: recompute every adjacent similarity from the raw
/// (sum-of-members) matrices each step, merge the first maximum.
fn naive_greedy(frames: &[WeightedFrame], target: usize) -> NaiveOutput {
    let mut groups: Vec<Vec<u64>> = (0..frames.len() as u64).map(|i| vec![i]).collect();
    let mut mats: Vec<Vec<f64>> = frames.iter().map(|f| f.tokens().as_slice().to_vec()).collect();
    let mut weights: Vec<f64> = frames.iter().map(|f| f.weight() as f64).collect();
    let (n, d) = frames[0].shape();
    let mut trace = Vec::new();
    while mats.len() > target {
        let mut best = (0usize, f64::NEG_INFINITY);
        for m in 0..mats.len() - 1 {
            let s = ref_similarity(&mats[m], &mats[m + 1], n, d);
            if s > best.1 {
                best = (m, s);
            }
        }
        let m = best.0;
        let (wa, wb) = (weights[m], weights[m + 1]);
        let merged: Vec<f64> = mats[m].iter().zip(&mats[m + 1]).map(|(a, b)| (wa * a + wb * b) / (wa + wb)).collect();
        mats[m] = merged;
        weights[m] = wa + wb;
        mats.remove(m + 1);
        weights.remove(m + 1);
        let tail = groups.remove(m + 1);
        groups[m].extend(tail);
        trace.push(best);
    }
    (groups, mats, trace)
}

fn ref_similarity(a: &[f64], b: &[f64], n: usize, d: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..n {
        let (x, y) = (&a[j * d..(j + 1) * d], &b[j * d..(j + 1) * d]);
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        total += (dot / (nx * ny)).clamp(-1.0, 1.0);
    }
    total / n as f64
}

fn random_window(rng: &mut ChaCha8Rng, k: usize, n: usize, d: usize) -> Vec<WeightedFrame> {
    (0..k)
        .map(|i| {
            let data: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            WeightedFrame::source(TokenMatrix::new(n, d, data).unwrap(), i as u64)
        })
        .collect()
}

#[test]
fn greedy_merge_matches_naive_loop() {
    for seed in 0..1500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(3..=16);
        let n = rng.random_range(1..=4);
        let d = rng.random_range(2..=8);
        let m = rng.random_range(1..=k);
        let frames = random_window(&mut rng, k, n, d);
        let (out, report) = greedy_merge(frames.clone(), m).unwrap();
        let (groups, mats, trace) = naive_greedy(&frames, m);

        assert_eq!(out.len(), groups.len(), "seed {seed}");
        assert_eq!(report.trace.len(), trace.len(), "seed {seed}");
        for (step, (got, want)) in report.trace.iter().zip(&trace).enumerate() {
            assert_eq!((got.step, got.index), (step, want.0), "seed {seed}");
        }
        for ((f, g), mat) in out.iter().zip(&groups).zip(&mats) {
            assert_eq!(f.weight(), g.len() as u64, "seed {seed}");
            let idx: Vec<u64> = f.provenance().spans().iter().flat_map(|s| s.start..s.end).collect();
            assert_eq!(&idx, g, "seed {seed}");
            for (a, b) in f.tokens().as_slice().iter().zip(mat) {
                assert_eq!(a.to_bits(), b.to_bits(), "seed {seed}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn compaction_matches_naive_loop() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        let frames = random_window(&mut rng, 12, 2, 3);
        let mut ltm = LongTermMemory::new(8, 2, 3).unwrap();
        ltm.append(frames.clone()).unwrap();
        let (groups, _, _) = naive_greedy(&frames, 8);
        assert_eq!(ltm.len(), 8);
        let ids: Vec<u64> = groups.iter().map(|g| g[0]).collect();
        assert_eq!(ltm.position_ids(), ids.as_slice(), "seed {seed}");
        for (f, g) in ltm.frames().iter().zip(&groups) {
            assert_eq!(f.weight(), g.len() as u64);
        }
    }
}

fn window_strategy() -> impl Strategy<Value = (Vec<WeightedFrame>, usize)> {
    (2usize..=12, 1usize..=3, 2usize..=5).prop_flat_map(|(k, n, d)| {
        (prop::collection::vec(-1.0f64..1.0, k * n * d), 1..=k + 2).prop_map(move |(data, m)| {
            let frames = data
                .chunks(n * d)
                .enumerate()
                .map(|(i, c)| WeightedFrame::source(TokenMatrix::new(n, d, c.to_vec()).unwrap(), i as u64))
                .collect();
            (frames, m)
        })
    })
}

proptest! {
    #[test]
    fn output_length_is_min_of_len_and_target((frames, m) in window_strategy()) {
        let len = frames.len();
        let (out, report) = greedy_merge(frames, m).unwrap();
        prop_assert_eq!(out.len(), len.min(m));
        prop_assert_eq!(report.trace.len(), len - len.min(m));
    }

    #[test]
    fn merge_conserves_weight_order_and_mean((frames, m) in window_strategy()) {
        let (out, _) = greedy_merge(frames.clone(), m).unwrap();
        prop_assert_eq!(out.iter().map(|f| f.weight()).sum::<u64>(), frames.len() as u64);
        let mut next = 0u64;
        for f in &out {
            let spans = f.provenance().spans();
            prop_assert_eq!(spans.len(), 1);
            prop_assert_eq!(spans[0].start, next);
            next = spans[0].end;
            let members = &frames[spans[0].start as usize..spans[0].end as usize];
            for (i, v) in f.tokens().as_slice().iter().enumerate() {
                let mean = members.iter().map(|g| g.tokens().as_slice()[i]).sum::<f64>() / members.len() as f64;
                prop_assert!((v - mean).abs() < 1e-9);
            }
        }
        prop_assert_eq!(next, frames.len() as u64);
    }

    #[test]
    fn relevance_is_scale_invariant_in_q(
        (frames, _) in window_strategy(),
        scale in 0.01f64..100.0,
    ) {
        let d = frames[0].shape().1;
        let q: Vec<f64> = (0..d).map(|i| 1.0 + i as f64 * 0.3).collect();
        let scaled: Vec<f64> = q.iter().map(|v| v * scale).collect();
        for basis in RelevanceBasis::ALL {
            let a = consolidation::relevance_score(&frames, &q, basis, Default::default()).unwrap();
            let b = consolidation::relevance_score(&frames, &scaled, basis, Default::default()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gating_is_monotone_in_relevance(s1 in -1.0f64..1.0, s2 in -1.0f64..1.0) {
        let cfg = ConsolidationConfig::default();
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        prop_assert!(consolidation::target_count(lo, &cfg) <= consolidation::target_count(hi, &cfg));
    }
}
