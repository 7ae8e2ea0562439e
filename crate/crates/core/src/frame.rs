//! Weighted frames: the unit stored in both memories.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{self, TokenMatrix};

/// Half-open run of source frame indices `[start, end)`, each counted
/// `count` times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: u64,
    pub end: u64,
    pub count: u64,
}

impl Span {
    pub fn unit(index: u64) -> Self {
        Span { start: index, end: index + 1, count: 1 }
    }

    pub fn mass(&self) -> u64 {
        (self.end - self.start) * self.count
    }
}

/// Which source frames a memory entry summarizes, with multiplicity.
///
/// Spans are sorted, non-overlapping, and adjacent spans with equal counts
/// are coalesced, so equal provenance compares equal.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Provenance(Vec<Span>);

impl Provenance {
    pub fn unit(index: u64) -> Self {
        Provenance(alloc::vec![Span::unit(index)])
    }

    /// Builds a provenance from arbitrary spans, normalizing overlaps.
    pub fn from_spans(spans: &[Span]) -> Self {
        let mut events: Vec<(u64, i128)> = Vec::with_capacity(spans.len() * 2);
        for s in spans.iter().filter(|s| s.end > s.start && s.count > 0) {
            events.push((s.start, i128::from(s.count)));
            events.push((s.end, -i128::from(s.count)));
        }
        events.sort_unstable_by_key(|e| e.0);

        let mut out: Vec<Span> = Vec::new();
        let mut level: i128 = 0;
        let mut cursor = 0u64;
        let mut i = 0;
        while i < events.len() {
            let at = events[i].0;
            if level > 0 && at > cursor {
                push_coalesced(&mut out, Span { start: cursor, end: at, count: level as u64 });
            }
            while i < events.len() && events[i].0 == at {
                level += events[i].1;
                i += 1;
            }
            cursor = at;
        }
        Provenance(out)
    }

    pub fn spans(&self) -> &[Span] {
        &self.0
    }

    /// Total source mass, counting multiplicity.
    pub fn mass(&self) -> u64 {
        self.0.iter().map(Span::mass).sum()
    }

    pub fn union(&self, other: &Provenance) -> Provenance {
        let mut all = Vec::with_capacity(self.0.len() + other.0.len());
        all.extend_from_slice(&self.0);
        all.extend_from_slice(&other.0);
        Provenance::from_spans(&all)
    }

    pub fn first(&self) -> Option<u64> {
        self.0.first().map(|s| s.start)
    }

    pub fn last(&self) -> Option<u64> {
        self.0.last().map(|s| s.end - 1)
    }

    /// Mass (with multiplicity) falling inside the inclusive range `[lo, hi]`.
    pub fn mass_within(&self, lo: u64, hi: u64) -> u64 {
        self.0
            .iter()
            .map(|s| {
                let a = s.start.max(lo);
                let b = s.end.min(hi.saturating_add(1));
                b.saturating_sub(a) * s.count
            })
            .sum()
    }

    pub fn overlaps(&self, lo: u64, hi: u64) -> bool {
        self.mass_within(lo, hi) > 0
    }
}

fn push_coalesced(out: &mut Vec<Span>, span: Span) {
    if let Some(last) = out.last_mut() {
        if last.end == span.start && last.count == span.count {
            last.end = span.end;
            return;
        }
    }
    out.push(span);
}

/// A token matrix plus how many source frames it stands for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedFrame {
    tokens: TokenMatrix,
    weight: u64,
    provenance: Provenance,
    context: bool,
}

impl WeightedFrame {
    /// An unmerged source frame.
    pub fn source(tokens: TokenMatrix, index: u64) -> Self {
        WeightedFrame { tokens, weight: 1, provenance: Provenance::unit(index), context: false }
    }

    pub fn from_parts(
        tokens: TokenMatrix,
        weight: u64,
        provenance: Provenance,
        context: bool,
    ) -> Result<Self> {
        if weight == 0 {
            return Err(Error::InvalidConfig("frame weight must be at least 1"));
        }
        if provenance.mass() != weight {
            return Err(Error::InvalidConfig("provenance mass must equal frame weight"));
        }
        Ok(WeightedFrame { tokens, weight, provenance, context })
    }

    pub fn tokens(&self) -> &TokenMatrix {
        &self.tokens
    }

    pub fn weight(&self) -> u64 {
        self.weight
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// True when the frame was injected by short-term re-initialization.
    pub fn is_context(&self) -> bool {
        self.context
    }

    pub fn with_context(mut self, context: bool) -> Self {
        self.context = context;
        self
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tokens.shape()
    }
}

/// Token-aligned frame similarity: mean over `j` of `cos(a[j], b[j])`.
pub fn frame_pair_similarity(a: &WeightedFrame, b: &WeightedFrame) -> Result<f64> {
    tensor::token_similarity(&a.tokens, &b.tokens)
}

/// Weight-averaged merge. Merging k unit-weight frames in any tree shape
/// yields their arithmetic mean.
pub fn weighted_merge(a: &WeightedFrame, b: &WeightedFrame) -> Result<WeightedFrame> {
    a.tokens.ensure_shape(b.shape())?;
    let (wa, wb) = (a.weight as f64, b.weight as f64);
    let total = wa + wb;
    let data = a
        .tokens
        .as_slice()
        .iter()
        .zip(b.tokens.as_slice())
        .map(|(x, y)| (wa * x + wb * y) / total)
        .collect();
    let (n, d) = a.shape();
    Ok(WeightedFrame {
        tokens: TokenMatrix::new(n, d, data)?,
        weight: a.weight + b.weight,
        provenance: a.provenance.union(&b.provenance),
        context: a.context && b.context,
    })
}
