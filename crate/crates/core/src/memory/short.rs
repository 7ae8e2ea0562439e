use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::frame::WeightedFrame;
use crate::tensor::TokenMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum IngestOutcome {
    Accepted,
    /// The buffer was full. Carries every frame it held; the pushed frame
    /// starts the next fill.
    Full(Vec<WeightedFrame>),
}

/// Fixed-capacity buffer of the most recent frames.
///
/// Holds at most `K = C * G` frames. A push into a full buffer pops all `K`
/// frames at once. Right after that (or after [`clear`](Self::clear)) the
/// buffer may be seeded with context frames via [`reinit`](Self::reinit);
/// seeds sit in front of the carry-over frame and count against `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortTermBuffer {
    capacity: usize,
    window: usize,
    tokens: usize,
    dims: usize,
    frames: Vec<WeightedFrame>,
    next_source_index: u64,
    fresh_in_fill: usize,
    seedable: bool,
}

impl ShortTermBuffer {
    pub fn new(window: usize, windows_per_fill: usize, tokens: usize, dims: usize) -> Result<Self> {
        if window == 0 || windows_per_fill == 0 {
            return Err(Error::InvalidConfig("window and windows_per_fill must be positive"));
        }
        if tokens == 0 || dims == 0 {
            return Err(Error::EmptyShape);
        }
        let capacity = window * windows_per_fill;
        Ok(ShortTermBuffer {
            capacity,
            window,
            tokens,
            dims,
            frames: Vec::with_capacity(capacity),
            next_source_index: 0,
            fresh_in_fill: 0,
            seedable: true,
        })
    }

    /// Rebuilds a buffer from stored state (e.g. a snapshot).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        window: usize,
        windows_per_fill: usize,
        tokens: usize,
        dims: usize,
        frames: Vec<WeightedFrame>,
        next_source_index: u64,
        fresh_in_fill: usize,
        seedable: bool,
    ) -> Result<Self> {
        let mut buf = Self::new(window, windows_per_fill, tokens, dims)?;
        if frames.len() > buf.capacity || fresh_in_fill > frames.len() {
            return Err(Error::InvalidConfig("stored short-term state exceeds its capacity"));
        }
        for f in &frames {
            f.tokens().ensure_shape((tokens, dims))?;
        }
        buf.frames.extend(frames);
        buf.next_source_index = next_source_index;
        buf.fresh_in_fill = fresh_in_fill;
        buf.seedable = seedable;
        Ok(buf)
    }

    /// True when [`reinit`](Self::reinit) would accept seeds.
    pub fn is_seedable(&self) -> bool {
        self.seedable
    }

    /// Capacity K.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Window length C.
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn windows_per_fill(&self) -> usize {
        self.capacity / self.window
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

    pub fn next_source_index(&self) -> u64 {
        self.next_source_index
    }

    /// Fresh frames pushed since the last fill started.
    pub fn fresh_in_fill(&self) -> usize {
        self.fresh_in_fill
    }

    /// Sliding windows of C fresh pushes completed in the current fill.
    pub fn completed_windows(&self) -> usize {
        self.fresh_in_fill / self.window
    }

    pub fn push_frame(&mut self, tokens: TokenMatrix) -> Result<IngestOutcome> {
        tokens.ensure_shape((self.tokens, self.dims))?;
        let frame = WeightedFrame::source(tokens, self.next_source_index);
        self.next_source_index += 1;
        if self.frames.len() >= self.capacity {
            let popped = core::mem::replace(&mut self.frames, Vec::with_capacity(self.capacity));
            self.frames.push(frame);
            self.fresh_in_fill = 1;
            self.seedable = true;
            return Ok(IngestOutcome::Full(popped));
        }
        self.frames.push(frame);
        self.fresh_in_fill += 1;
        self.seedable = false;
        Ok(IngestOutcome::Accepted)
    }

    /// Seeds the buffer with context frames ahead of the carry-over frame.
    ///
    /// Only valid on a cleared buffer or directly after a `Full` event.
    pub fn reinit(&mut self, seeds: Vec<WeightedFrame>) -> Result<()> {
        if seeds.is_empty() {
            return Ok(());
        }
        if !self.seedable {
            return Err(Error::BufferNotEmpty);
        }
        let room = (self.capacity - 1).min(self.capacity - self.frames.len());
        if seeds.len() > room {
            return Err(Error::SeedTooLarge { seed: seeds.len(), room });
        }
        for s in &seeds {
            s.tokens().ensure_shape((self.tokens, self.dims))?;
        }
        let carry = core::mem::take(&mut self.frames);
        self.frames.reserve(self.capacity);
        self.frames.extend(seeds.into_iter().map(|f| f.with_context(true)));
        self.frames.extend(carry);
        self.seedable = false;
        Ok(())
    }

    /// Removes and returns every buffered frame.
    pub fn take_all(&mut self) -> Vec<WeightedFrame> {
        self.fresh_in_fill = 0;
        self.seedable = true;
        core::mem::take(&mut self.frames)
    }

    pub fn clear(&mut self) {
        self.take_all();
    }
}
