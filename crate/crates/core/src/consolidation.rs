//! Question-aware consolidation of a full short-term buffer.
//!
//! The buffered frames are scored against the question vector; windows that
//! score above `sigma` keep `m0` frames, the rest are squeezed to
//! `alpha * m0`. The reduction itself repeatedly merges the most similar
//! adjacent pair (lowest index on ties) until the target count remains.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::WeightedFrame;
use crate::merge;
use crate::tensor::{self, NORM_FLOOR};

/// How per-frame question similarities are reduced to one relevance score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelevanceBasis {
    Mean,
    Min,
    Max,
}

impl RelevanceBasis {
    pub const ALL: [RelevanceBasis; 3] = [RelevanceBasis::Mean, RelevanceBasis::Min, RelevanceBasis::Max];

    pub fn name(self) -> &'static str {
        match self {
            RelevanceBasis::Mean => "mean",
            RelevanceBasis::Min => "min",
            RelevanceBasis::Max => "max",
        }
    }
}

/// How a frame is compared with the question vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionPooling {
    /// Cosine between the pooled frame descriptor and `q`.
    #[default]
    Descriptor,
    /// Mean over tokens of the per-token cosine with `q`.
    TokenAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsolidationConfig {
    /// Short-term capacity K.
    pub short_capacity: usize,
    /// Sliding window length C.
    pub window: usize,
    /// Windows per fill G; `short_capacity == window * windows_per_fill`.
    pub windows_per_fill: usize,
    /// Long-term capacity in frames.
    pub ltm_capacity: usize,
    /// Frames kept for a relevant window.
    pub m0: usize,
    /// Compression coefficient applied to `m0` for weakly relevant windows.
    pub alpha: f64,
    /// Relevance threshold; a window is relevant iff its score is strictly greater.
    pub sigma: f64,
    pub basis: RelevanceBasis,
    pub tie_break: TieBreak,
    pub question_required: bool,
    pub pooling: QuestionPooling,
    pub exclude_context_from_relevance: bool,
}

impl Default for ConsolidationConfig {
    fn default() -> Self {
        ConsolidationConfig {
            short_capacity: 16,
            window: 4,
            windows_per_fill: 4,
            ltm_capacity: 256,
            m0: 4,
            alpha: 0.25,
            sigma: 0.25,
            basis: RelevanceBasis::Mean,
            tie_break: TieBreak::LowestIndex,
            question_required: false,
            pooling: QuestionPooling::Descriptor,
            exclude_context_from_relevance: false,
        }
    }
}

impl ConsolidationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.windows_per_fill == 0 {
            return Err(Error::InvalidConfig("window and windows_per_fill must be positive"));
        }
        if self.short_capacity != self.window * self.windows_per_fill {
            return Err(Error::InvalidConfig("short_capacity must equal window * windows_per_fill"));
        }
        if self.ltm_capacity == 0 {
            return Err(Error::InvalidConfig("ltm_capacity must be positive"));
        }
        if self.m0 == 0 || self.m0 > self.short_capacity {
            return Err(Error::InvalidConfig("m0 must lie in 1..=short_capacity"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 1]"));
        }
        if !(-1.0..=1.0).contains(&self.sigma) {
            return Err(Error::InvalidConfig("sigma must lie in [-1, 1]"));
        }
        Ok(())
    }

    /// Sets K, keeping the window length when it divides the new capacity
    /// and falling back to a single window otherwise.
    pub fn with_short_capacity(mut self, k: usize) -> Self {
        if self.window > 0 && k % self.window == 0 && k > 0 {
            self.windows_per_fill = k / self.window;
        } else {
            self.window = k;
            self.windows_per_fill = 1;
        }
        self.short_capacity = k;
        self
    }

    /// Frames kept for a weakly relevant window: `alpha * m0` rounded half
    /// up and clamped to `[1, m0]`.
    pub fn weak_target(&self) -> usize {
        let scaled = libm::floor(self.alpha * self.m0 as f64 + 0.5);
        (scaled.max(1.0) as usize).min(self.m0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    pub step: usize,
    /// Left index of the merged pair, in the sequence as it stood at this step.
    pub index: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationReport {
    pub input_count: usize,
    pub output_count: usize,
    /// Question relevance score; absent in question-agnostic mode.
    pub s_q: Option<f64>,
    pub relevant: bool,
    pub target: usize,
    pub trace: Vec<MergeStep>,
}

/// Scores how relevant `frames` are to `q` under `basis`.
pub fn relevance_score(
    frames: &[WeightedFrame],
    q: &[f64],
    basis: RelevanceBasis,
    pooling: QuestionPooling,
) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    if tensor::norm(q) < NORM_FLOOR {
        return Err(Error::ZeroNorm { token: None });
    }
    let mut sum = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for frame in frames {
        let s = match pooling {
            QuestionPooling::Descriptor => {
                let desc = tensor::frame_descriptor(frame.tokens())?;
                tensor::cosine(&desc, q)?
            }
            QuestionPooling::TokenAverage => tensor::token_average_cosine(frame.tokens(), q)?,
        };
        sum += s;
        lo = lo.min(s);
        hi = hi.max(s);
    }
    Ok(match basis {
        RelevanceBasis::Mean => sum / frames.len() as f64,
        RelevanceBasis::Min => lo,
        RelevanceBasis::Max => hi,
    })
}

/// Target frame count for a window with relevance `s_q`.
pub fn target_count(s_q: f64, cfg: &ConsolidationConfig) -> usize {
    if s_q > cfg.sigma {
        cfg.m0
    } else {
        cfg.weak_target()
    }
}

/// Target for a partial buffer of `len` frames: `ceil(target * len / K)`
/// clamped to `[1, len]`.
pub fn residue_target(target: usize, len: usize, short_capacity: usize) -> usize {
    let scaled = (target * len).div_ceil(short_capacity.max(1));
    scaled.clamp(1, len.max(1))
}

/// Greedily merges the most similar adjacent pair until `target` frames remain.
pub fn greedy_merge(
    frames: Vec<WeightedFrame>,
    target: usize,
) -> Result<(Vec<WeightedFrame>, ConsolidationReport)> {
    if target == 0 {
        return Err(Error::InvalidTarget);
    }
    let input_count = frames.len();
    let mut frames = frames;
    let mut trace = Vec::with_capacity(input_count.saturating_sub(target));
    if frames.len() > target {
        let mut sims = merge::adjacent_similarities(&frames)?;
        let mut step = 0;
        while frames.len() > target {
            let Some((m, similarity)) = merge::argmax_lowest(&sims) else { break };
            merge::merge_at(&mut frames, &mut sims, m)?;
            trace.push(MergeStep { step, index: m, similarity });
            step += 1;
        }
    }
    let report = ConsolidationReport {
        input_count,
        output_count: frames.len(),
        s_q: None,
        relevant: true,
        target,
        trace,
    };
    Ok((frames, report))
}

/// Relevance gating followed by greedy merging.
pub fn consolidate(
    frames: Vec<WeightedFrame>,
    q: Option<&[f64]>,
    cfg: &ConsolidationConfig,
) -> Result<(Vec<WeightedFrame>, ConsolidationReport)> {
    let (s_q, target) = gated_target(&frames, q, cfg)?;
    merge_to_target(frames, s_q, target, cfg)
}

/// Like [`consolidate`], for a buffer that never filled; the gated target is
/// scaled by `len / K`.
pub fn consolidate_residue(
    frames: Vec<WeightedFrame>,
    q: Option<&[f64]>,
    cfg: &ConsolidationConfig,
) -> Result<(Vec<WeightedFrame>, ConsolidationReport)> {
    let (s_q, target) = gated_target(&frames, q, cfg)?;
    let target = residue_target(target, frames.len(), cfg.short_capacity);
    merge_to_target(frames, s_q, target, cfg)
}

/// Relevance score (when a question is given) and the resulting target count.
pub fn gated_target(
    frames: &[WeightedFrame],
    q: Option<&[f64]>,
    cfg: &ConsolidationConfig,
) -> Result<(Option<f64>, usize)> {
    if frames.is_empty() {
        return Err(Error::EmptyInput);
    }
    let Some(q) = q else {
        if cfg.question_required {
            return Err(Error::MissingQuestion);
        }
        return Ok((None, cfg.m0));
    };
    let s_q = if cfg.exclude_context_from_relevance && frames.iter().any(|f| !f.is_context()) {
        let fresh: Vec<WeightedFrame> = frames.iter().filter(|f| !f.is_context()).cloned().collect();
        relevance_score(&fresh, q, cfg.basis, cfg.pooling)?
    } else {
        relevance_score(frames, q, cfg.basis, cfg.pooling)?
    };
    Ok((Some(s_q), target_count(s_q, cfg)))
}

/// Greedy merge to `target`, recording the gating outcome in the report.
pub fn merge_to_target(
    frames: Vec<WeightedFrame>,
    s_q: Option<f64>,
    target: usize,
    cfg: &ConsolidationConfig,
) -> Result<(Vec<WeightedFrame>, ConsolidationReport)> {
    let (out, mut report) = greedy_merge(frames, target)?;
    report.s_q = s_q;
    report.relevant = match s_q {
        Some(s) => s > cfg.sigma,
        None => true,
    };
    Ok((out, report))
}
