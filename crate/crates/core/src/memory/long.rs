use alloc::vec::Vec;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::frame::{frame_pair_similarity, WeightedFrame};
use crate::merge;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryEntry<'a> {
    pub position_id: u64,
    pub frame: &'a WeightedFrame,
}

/// Append-ordered store of consolidated frames.
///
/// Never holds more than `capacity` entries once a public call returns:
/// overflow is folded back in by merging the most similar adjacent pair,
/// the same greedy rule used for consolidation. A merged entry keeps the
/// smaller (left) position id.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTermMemory {
    capacity: usize,
    tokens: usize,
    dims: usize,
    frames: Vec<WeightedFrame>,
    ids: Vec<u64>,
    sims: Vec<f64>,
    next_id: u64,
    merges: u64,
}

impl LongTermMemory {
    pub fn new(capacity: usize, tokens: usize, dims: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("long-term capacity must be positive"));
        }
        if tokens == 0 || dims == 0 {
            return Err(Error::EmptyShape);
        }
        Ok(LongTermMemory {
            capacity,
            tokens,
            dims,
            frames: Vec::with_capacity(capacity + 1),
            ids: Vec::with_capacity(capacity + 1),
            sims: Vec::with_capacity(capacity),
            next_id: 0,
            merges: 0,
        })
    }

    /// Rebuilds a memory from stored entries (e.g. a snapshot).
    pub fn from_entries(
        capacity: usize,
        tokens: usize,
        dims: usize,
        entries: Vec<(u64, WeightedFrame)>,
        next_id: u64,
    ) -> Result<Self> {
        let mut ltm = Self::new(capacity, tokens, dims)?;
        if entries.len() > capacity {
            return Err(Error::InvalidConfig("snapshot holds more entries than the capacity"));
        }
        for (i, (id, frame)) in entries.iter().enumerate() {
            frame.tokens().ensure_shape((tokens, dims))?;
            if i > 0 && *id <= entries[i - 1].0 {
                return Err(Error::InvalidConfig("position ids must strictly increase"));
            }
            if *id >= next_id {
                return Err(Error::InvalidConfig("next id must exceed every stored id"));
            }
        }
        let (ids, frames): (Vec<u64>, Vec<WeightedFrame>) = entries.into_iter().unzip();
        ltm.sims = merge::adjacent_similarities(&frames)?;
        ltm.frames = frames;
        ltm.ids = ids;
        ltm.next_id = next_id;
        Ok(ltm)
    }

    /// Sets the compaction counter, for memories rebuilt from a snapshot.
    pub fn with_compaction_merges(mut self, merges: u64) -> Self {
        self.merges = merges;
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[WeightedFrame] {
        &self.frames
    }

    pub fn position_ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Total compaction merges performed so far.
    pub fn compaction_merges(&self) -> u64 {
        self.merges
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = MemoryEntry<'_>> + '_ {
        self.ids.iter().zip(&self.frames).map(|(&position_id, frame)| MemoryEntry { position_id, frame })
    }

    pub fn total_weight(&self) -> u64 {
        self.frames.iter().map(WeightedFrame::weight).sum()
    }

    /// Appends frames in order with fresh position ids, then compacts if
    /// over capacity. Nothing is modified if a shape or similarity check fails.
    pub fn append(&mut self, frames: Vec<WeightedFrame>) -> Result<()> {
        if frames.is_empty() {
            return Ok(());
        }
        for f in &frames {
            f.tokens().ensure_shape((self.tokens, self.dims))?;
        }
        let mut new_sims = Vec::with_capacity(frames.len());
        if let Some(last) = self.frames.last() {
            new_sims.push(frame_pair_similarity(last, &frames[0])?);
        }
        new_sims.extend(merge::adjacent_similarities(&frames)?);

        for f in frames {
            self.frames.push(f);
            self.ids.push(self.next_id);
            self.next_id += 1;
        }
        self.sims.extend(new_sims);
        self.overflow_compact()
    }

    /// Merges the most similar adjacent pair until within capacity.
    pub fn overflow_compact(&mut self) -> Result<()> {
        while self.frames.len() > self.capacity {
            let Some((m, _)) = merge::argmax_lowest(&self.sims) else { break };
            merge::merge_at(&mut self.frames, &mut self.sims, m)?;
            self.ids.remove(m + 1);
            self.merges += 1;
        }
        Ok(())
    }
}
