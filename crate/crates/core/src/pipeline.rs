//! Streaming pipeline: frames flow into the short-term buffer, full buffers
//! are consolidated into long-term memory, and representations are
//! assembled on demand.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::baselines::{uniform_indices, MemoryPolicy};
use crate::consolidation::{self, ConsolidationConfig, ConsolidationReport};
use crate::error::{Error, Result};
use crate::frame::WeightedFrame;
use crate::memory::{IngestOutcome, LongTermMemory, PositionalTable, ShortTermBuffer};
use crate::tensor::{self, TokenMatrix, NORM_FLOOR};

/// Bytes per stored scalar in the accounting model (32-bit floats).
pub const BYTES_PER_SCALAR: u64 = 4;

/// What seeds the short-term buffer after a consolidation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReinitMode {
    /// The consolidated frames themselves.
    #[default]
    MergedTokens,
    /// The last `M` raw frames of the popped batch.
    LastK,
    /// `M` evenly spaced raw frames of the popped batch.
    UniformSample,
    None,
}

impl ReinitMode {
    pub const ALL: [ReinitMode; 4] =
        [ReinitMode::MergedTokens, ReinitMode::LastK, ReinitMode::UniformSample, ReinitMode::None];

    pub fn name(self) -> &'static str {
        match self {
            ReinitMode::MergedTokens => "merged",
            ReinitMode::LastK => "last",
            ReinitMode::UniformSample => "uniform",
            ReinitMode::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PositionalConfig {
    pub base_len: usize,
    pub dim: usize,
    pub beta: f64,
}

impl Default for PositionalConfig {
    fn default() -> Self {
        PositionalConfig { base_len: 32, dim: 64, beta: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Tokens per frame (N).
    pub tokens: usize,
    /// Embedding width (D).
    pub dims: usize,
    #[serde(default)]
    pub consolidation: ConsolidationConfig,
    #[serde(default)]
    pub reinit: ReinitMode,
    #[serde(default)]
    pub positional: PositionalConfig,
}

impl PipelineConfig {
    pub fn new(tokens: usize, dims: usize) -> Self {
        PipelineConfig {
            tokens,
            dims,
            consolidation: ConsolidationConfig::default(),
            reinit: ReinitMode::default(),
            positional: PositionalConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens == 0 || self.dims == 0 {
            return Err(Error::EmptyShape);
        }
        self.consolidation.validate()?;
        if self.reinit != ReinitMode::None && self.consolidation.m0 >= self.consolidation.short_capacity {
            return Err(Error::InvalidConfig("re-initialization needs m0 < short_capacity"));
        }
        Ok(())
    }

    pub fn frame_bytes(&self) -> u64 {
        (self.tokens * self.dims) as u64 * BYTES_PER_SCALAR
    }

    /// Frames beyond `K + L_cap` that can be resident at once: the pushed
    /// frame that triggers a fill, plus consolidated output that is briefly
    /// held both as long-term overflow and as short-term seeds.
    pub fn staging_frames(&self) -> u64 {
        let c = &self.consolidation;
        let seeded = if self.reinit == ReinitMode::None { 0 } else { c.m0 };
        1 + (c.m0 + seeded).saturating_sub(c.short_capacity) as u64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub frames_pushed: u64,
    pub consolidations_run: u64,
    /// Consolidations triggered by a full buffer (excludes flush residues).
    pub full_consolidations: u64,
    /// Sum of targets over full consolidations.
    pub full_target_sum: u64,
    /// Frames handed to long-term memory, before compaction.
    pub frames_committed: u64,
    /// Weight injected into the short-term buffer by re-initialization.
    pub seeded_weight: u64,
    /// High-water mark of frames held by the memory structures.
    pub peak_live_frames: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepEvent {
    Buffered,
    Consolidated(ConsolidationReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    LongTerm,
    ShortTerm,
    Current,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepresentationItem {
    pub origin: Origin,
    pub frame: WeightedFrame,
    pub position: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum RepresentationMode {
    Global,
    Breakpoint { t: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoRepresentation {
    pub mode: RepresentationMode,
    pub items: Vec<RepresentationItem>,
}

impl VideoRepresentation {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountingRecord {
    pub raw_bytes_per_frame: u64,
    pub amortized_bytes_per_frame: f64,
    /// Capacity bound on memory-structure bytes; independent of stream length.
    pub peak_resident_bytes: u64,
    /// Bytes at the observed high-water mark of resident frames.
    pub observed_peak_bytes: u64,
}

/// Everything needed to resume a pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSnapshot {
    pub config: PipelineConfig,
    pub question: Option<Vec<f64>>,
    pub counters: Counters,
    pub short_frames: Vec<WeightedFrame>,
    pub short_next_source_index: u64,
    pub short_fresh_in_fill: usize,
    pub short_seedable: bool,
    pub long_entries: Vec<(u64, WeightedFrame)>,
    pub long_next_id: u64,
    pub long_compaction_merges: u64,
}

/// One stream, one question, one writer.
#[derive(Debug, Clone)]
pub struct Pipeline {
    cfg: PipelineConfig,
    question: Option<Vec<f64>>,
    short: ShortTermBuffer,
    long: LongTermMemory,
    table: PositionalTable,
    counters: Counters,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, question: Option<Vec<f64>>) -> Result<Self> {
        cfg.validate()?;
        if let Some(q) = &question {
            if q.len() != cfg.dims {
                return Err(Error::DimensionMismatch { expected: cfg.dims, found: q.len() });
            }
            if q.iter().any(|v| !v.is_finite()) || tensor::norm(q) < NORM_FLOOR {
                return Err(Error::ZeroNorm { token: None });
            }
        } else if cfg.consolidation.question_required {
            return Err(Error::MissingQuestion);
        }
        let c = &cfg.consolidation;
        let short = ShortTermBuffer::new(c.window, c.windows_per_fill, cfg.tokens, cfg.dims)?;
        let long = LongTermMemory::new(c.ltm_capacity, cfg.tokens, cfg.dims)?;
        let p = &cfg.positional;
        let table = PositionalTable::sinusoidal(p.base_len, p.dim, p.beta)?;
        Ok(Pipeline { cfg, question, short, long, table, counters: Counters::default() })
    }

    pub fn restore(snapshot: PipelineSnapshot) -> Result<Self> {
        let mut p = Pipeline::new(snapshot.config, snapshot.question)?;
        let c = &p.cfg.consolidation;
        p.short = ShortTermBuffer::from_parts(
            c.window,
            c.windows_per_fill,
            p.cfg.tokens,
            p.cfg.dims,
            snapshot.short_frames,
            snapshot.short_next_source_index,
            snapshot.short_fresh_in_fill,
            snapshot.short_seedable,
        )?;
        p.long = LongTermMemory::from_entries(
            c.ltm_capacity,
            p.cfg.tokens,
            p.cfg.dims,
            snapshot.long_entries,
            snapshot.long_next_id,
        )?
        .with_compaction_merges(snapshot.long_compaction_merges);
        p.counters = snapshot.counters;
        Ok(p)
    }

    pub fn snapshot(&self) -> PipelineSnapshot {
        PipelineSnapshot {
            config: self.cfg.clone(),
            question: self.question.clone(),
            counters: self.counters.clone(),
            short_frames: self.short.frames().to_vec(),
            short_next_source_index: self.short.next_source_index(),
            short_fresh_in_fill: self.short.fresh_in_fill(),
            short_seedable: self.short.is_seedable(),
            long_entries: self
                .long
                .position_ids()
                .iter()
                .copied()
                .zip(self.long.frames().iter().cloned())
                .collect(),
            long_next_id: self.long.next_id(),
            long_compaction_merges: self.long.compaction_merges(),
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn question(&self) -> Option<&[f64]> {
        self.question.as_deref()
    }

    pub fn short_term(&self) -> &ShortTermBuffer {
        &self.short
    }

    pub fn long_term(&self) -> &LongTermMemory {
        &self.long
    }

    pub fn positional_table(&self) -> &PositionalTable {
        &self.table
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    /// Index of the most recently pushed frame, while it is still buffered.
    pub fn live_head(&self) -> Option<u64> {
        (!self.short.is_empty()).then(|| self.counters.frames_pushed - 1)
    }

    fn observe_live(&mut self, extra: usize) {
        let live = (self.short.len() + self.long.len() + extra) as u64;
        self.counters.peak_live_frames = self.counters.peak_live_frames.max(live);
    }

    pub fn step(&mut self, frame: TokenMatrix) -> Result<StepEvent> {
        let outcome = self.short.push_frame(frame)?;
        self.counters.frames_pushed += 1;
        let popped = match outcome {
            IngestOutcome::Accepted => {
                self.observe_live(0);
                return Ok(StepEvent::Buffered);
            }
            IngestOutcome::Full(popped) => popped,
        };
        self.observe_live(popped.len());

        let cfg = &self.cfg.consolidation;
        let (s_q, target) = consolidation::gated_target(&popped, self.question.as_deref(), cfg)?;
        let raw_seeds: Vec<WeightedFrame> = match self.cfg.reinit {
            ReinitMode::LastK => popped[popped.len().saturating_sub(target)..].to_vec(),
            ReinitMode::UniformSample => uniform_indices(popped.len() as u64, target as u64)
                .into_iter()
                .map(|i| popped[i as usize].clone())
                .collect(),
            ReinitMode::MergedTokens | ReinitMode::None => Vec::new(),
        };
        let (out, report) = consolidation::merge_to_target(popped, s_q, target, cfg)?;
        let seeds = match self.cfg.reinit {
            ReinitMode::MergedTokens => out.clone(),
            _ => raw_seeds,
        };
        self.observe_live(out.len() + seeds.len());

        self.counters.consolidations_run += 1;
        self.counters.full_consolidations += 1;
        self.counters.full_target_sum += report.target as u64;
        self.counters.frames_committed += out.len() as u64;
        self.counters.seeded_weight += seeds.iter().map(WeightedFrame::weight).sum::<u64>();

        self.short.reinit(seeds)?;
        self.long.append(out)?;
        self.observe_live(0);
        Ok(StepEvent::Consolidated(report))
    }

    /// Consolidates whatever is left in the short-term buffer.
    pub fn flush(&mut self) -> Result<Option<ConsolidationReport>> {
        if self.short.is_empty() {
            return Ok(None);
        }
        let residue = self.short.take_all();
        let (out, report) = consolidation::consolidate_residue(
            residue,
            self.question.as_deref(),
            &self.cfg.consolidation,
        )?;
        self.observe_live(out.len());
        self.counters.consolidations_run += 1;
        self.counters.frames_committed += out.len() as u64;
        self.long.append(out)?;
        Ok(Some(report))
    }

    /// Long-term memory alone, with positional encodings by rank.
    pub fn assemble_global(&self) -> Result<VideoRepresentation> {
        if !self.short.is_empty() {
            return Err(Error::NotFlushed);
        }
        let items = self.positioned(self.long.frames().iter().map(|f| (Origin::LongTerm, f)), self.long.len())?;
        Ok(VideoRepresentation { mode: RepresentationMode::Global, items })
    }

    /// `[long-term..., short-term..., x_t]` at the live head `t`.
    pub fn assemble_breakpoint(&self, t: u64) -> Result<VideoRepresentation> {
        let head = self.live_head();
        if head != Some(t) {
            return Err(Error::StaleTimestamp { requested: t, head });
        }
        let current = self.short.frames().last().expect("live head implies a buffered frame");
        let total = self.long.len() + self.short.len() + 1;
        let parts = self
            .long
            .frames()
            .iter()
            .map(|f| (Origin::LongTerm, f))
            .chain(self.short.frames().iter().map(|f| (Origin::ShortTerm, f)))
            .chain(core::iter::once((Origin::Current, current)));
        let items = self.positioned(parts, total)?;
        Ok(VideoRepresentation { mode: RepresentationMode::Breakpoint { t }, items })
    }

    fn positioned<'a>(
        &self,
        parts: impl Iterator<Item = (Origin, &'a WeightedFrame)>,
        total: usize,
    ) -> Result<Vec<RepresentationItem>> {
        if total as u64 > self.table.capacity() {
            return Err(Error::MemoryTooLongForTable { len: total, limit: self.table.capacity() });
        }
        parts
            .enumerate()
            .map(|(rank, (origin, frame))| {
                Ok(RepresentationItem {
                    origin,
                    frame: frame.clone(),
                    position: Some(self.table.extended_position(rank as u64)?),
                })
            })
            .collect()
    }

    /// Memory-cost accounting from counters and configuration.
    pub fn bytes_model(&self) -> AccountingRecord {
        let c = &self.cfg.consolidation;
        let raw = self.cfg.frame_bytes();
        let m_eff = if self.counters.full_consolidations == 0 {
            c.m0 as f64
        } else {
            self.counters.full_target_sum as f64 / self.counters.full_consolidations as f64
        };
        let k = c.short_capacity as u64;
        let l = c.ltm_capacity as u64;
        AccountingRecord {
            raw_bytes_per_frame: raw,
            amortized_bytes_per_frame: m_eff / k as f64 * raw as f64,
            peak_resident_bytes: (k + l + self.cfg.staging_frames()) * raw,
            observed_peak_bytes: self.counters.peak_live_frames * raw,
        }
    }

    /// Total weight held in both memories.
    pub fn resident_weight(&self) -> u64 {
        self.long.total_weight() + self.short.frames().iter().map(WeightedFrame::weight).sum::<u64>()
    }
}

impl MemoryPolicy for Pipeline {
    fn observe(&mut self, frame: TokenMatrix) -> Result<()> {
        self.step(frame).map(drop)
    }

    fn finish(&mut self) -> Result<Vec<WeightedFrame>> {
        self.flush()?;
        Ok(self.long.frames().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn constant(v: f64) -> TokenMatrix {
        TokenMatrix::from_rows(&[[v, 1.0], [1.0, v]]).unwrap()
    }

    fn config(k: usize, m0: usize, reinit: ReinitMode) -> PipelineConfig {
        let mut cfg = PipelineConfig::new(2, 2);
        cfg.consolidation = ConsolidationConfig { m0, ..ConsolidationConfig::default() }.with_short_capacity(k);
        cfg.reinit = reinit;
        cfg
    }

    #[test]
    fn constant_stream_without_reinit() {
        let mut p = Pipeline::new(config(4, 1, ReinitMode::None), None).unwrap();
        let mut consolidations = 0;
        for _ in 0..8 {
            if let StepEvent::Consolidated(_) = p.step(constant(0.5)).unwrap() {
                consolidations += 1;
            }
        }
        // The 8th frame sits in the buffer until the flush.
        assert_eq!(consolidations, 1);
        p.flush().unwrap();
        assert_eq!(p.counters().consolidations_run, 2);
        let ltm = p.long_term();
        assert_eq!(ltm.len(), 2);
        for f in ltm.frames() {
            assert_eq!(f.tokens(), &constant(0.5));
            assert_eq!(f.weight(), 4);
        }
    }

    #[test]
    fn merged_reinit_cadence_is_k_minus_m() {
        let mut cfg = config(16, 4, ReinitMode::MergedTokens);
        cfg.tokens = 1;
        cfg.dims = 3;
        let q = vec![1.0, 0.0, 0.0];
        let mut p = Pipeline::new(cfg, Some(q)).unwrap();
        let mut fired = Vec::new();
        for i in 0..100u64 {
            let t = i as f64 * 0.01;
            let frame = TokenMatrix::from_rows(&[[1.0, t, (t * 7.0).sin() * 0.1]]).unwrap();
            if let StepEvent::Consolidated(r) = p.step(frame).unwrap() {
                assert_eq!(r.target, 4);
                fired.push(i);
            }
        }
        assert_eq!(fired[0], 16);
        assert!(fired.windows(2).all(|w| w[1] - w[0] == 12), "{fired:?}");
        // pushes + injected seed weight is conserved across both memories
        assert_eq!(p.resident_weight(), p.counters().frames_pushed + p.counters().seeded_weight);
    }

    #[test]
    fn reinit_requires_room() {
        assert!(Pipeline::new(config(4, 4, ReinitMode::MergedTokens), None).is_err());
        assert!(Pipeline::new(config(4, 4, ReinitMode::None), None).is_ok());
    }

    #[test]
    fn question_validation() {
        let cfg = config(4, 1, ReinitMode::None);
        assert!(matches!(Pipeline::new(cfg.clone(), Some(vec![1.0])), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(Pipeline::new(cfg.clone(), Some(vec![0.0, 0.0])), Err(Error::ZeroNorm { .. })));
        let mut req = cfg;
        req.consolidation.question_required = true;
        assert_eq!(Pipeline::new(req, None).unwrap_err(), Error::MissingQuestion);
    }

    #[test]
    fn flush_behaviour() {
        let mut p = Pipeline::new(config(16, 4, ReinitMode::None), None).unwrap();
        assert_eq!(p.flush().unwrap(), None);
        p.step(constant(0.1)).unwrap();
        let r = p.flush().unwrap().unwrap();
        assert_eq!((r.input_count, r.output_count), (1, 1));
        assert!(p.short_term().is_empty());
        assert_eq!(p.long_term().frames()[0].weight(), 1);
    }

    #[test]
    fn flush_residue_target_scales() {
        let mut cfg = config(16, 4, ReinitMode::None);
        cfg.tokens = 1;
        cfg.dims = 2;
        let mut p = Pipeline::new(cfg, Some(vec![1.0, 0.0])).unwrap();
        for i in 0..8 {
            p.step(TokenMatrix::from_rows(&[[1.0, i as f64 * 0.01]]).unwrap()).unwrap();
        }
        let r = p.flush().unwrap().unwrap();
        assert!(r.relevant);
        assert_eq!(r.target, 2);
        assert_eq!(p.long_term().len(), 2);
    }

    #[test]
    fn global_requires_flush() {
        let mut p = Pipeline::new(config(4, 1, ReinitMode::None), None).unwrap();
        assert!(p.assemble_global().unwrap().is_empty());
        p.step(constant(0.2)).unwrap();
        assert_eq!(p.assemble_global().unwrap_err(), Error::NotFlushed);
        p.flush().unwrap();
        let g = p.assemble_global().unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.items[0].position.as_deref(), Some(p.positional_table().base()[0].as_slice()));
    }

    #[test]
    fn breakpoint_cold_start_and_staleness() {
        let mut p = Pipeline::new(config(4, 1, ReinitMode::None), None).unwrap();
        assert!(matches!(p.assemble_breakpoint(0), Err(Error::StaleTimestamp { head: None, .. })));
        p.step(constant(0.3)).unwrap();
        let bp = p.assemble_breakpoint(0).unwrap();
        assert_eq!(bp.len(), 2);
        assert_eq!(bp.items[0].origin, Origin::ShortTerm);
        assert_eq!(bp.items[1].origin, Origin::Current);
        assert_eq!(bp.items[0].frame, bp.items[1].frame);
        p.step(constant(0.4)).unwrap();
        assert!(matches!(p.assemble_breakpoint(0), Err(Error::StaleTimestamp { requested: 0, head: Some(1) })));
        p.flush().unwrap();
        assert!(matches!(p.assemble_breakpoint(1), Err(Error::StaleTimestamp { head: None, .. })));
    }

    #[test]
    fn accounting_model() {
        let mut cfg = PipelineConfig::new(32, 768);
        cfg.consolidation = ConsolidationConfig::default();
        let p = Pipeline::new(cfg.clone(), None).unwrap();
        let acc = p.bytes_model();
        assert_eq!(acc.raw_bytes_per_frame, 32 * 768 * 4);
        assert_eq!(acc.amortized_bytes_per_frame, 24_576.0);
        assert_eq!(acc.peak_resident_bytes, (16 + 256 + 1) * 32 * 768 * 4);

        cfg.consolidation.m0 = 16;
        cfg.reinit = ReinitMode::None;
        let p = Pipeline::new(cfg, None).unwrap();
        assert_eq!(p.bytes_model().amortized_bytes_per_frame, p.bytes_model().raw_bytes_per_frame as f64);
    }
}
