//! Comparator memory policies: uniform sampling, spatial pooling, temporal
//! pooling and an exponential moving average.
//!
//! Each policy consumes frames one at a time through [`MemoryPolicy`] and
//! produces weighted frames, so the harness can run them side by side with
//! the consolidating pipeline.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Provenance, Span, WeightedFrame};
use crate::tensor::TokenMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyId {
    NoMemory,
    SpatialPool,
    TemporalPool,
    Ema,
    /// Consolidating pipeline without the question (fixed target `m0`).
    Moviechat,
    /// Question-aware consolidating pipeline.
    MoviechatPlus,
}

impl PolicyId {
    pub const ALL: [PolicyId; 6] = [
        PolicyId::NoMemory,
        PolicyId::SpatialPool,
        PolicyId::TemporalPool,
        PolicyId::Ema,
        PolicyId::Moviechat,
        PolicyId::MoviechatPlus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyId::NoMemory => "no_memory",
            PolicyId::SpatialPool => "spatial_pool",
            PolicyId::TemporalPool => "temporal_pool",
            PolicyId::Ema => "ema",
            PolicyId::Moviechat => "moviechat",
            PolicyId::MoviechatPlus => "moviechat_plus",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Upper bound on tokens handed to a decoder for a stream of `frames`
    /// frames with `tokens` tokens each.
    pub fn token_budget(self, frames: u64, tokens: u64, sample_count: u64, ltm_capacity: u64) -> u64 {
        match self {
            PolicyId::NoMemory => sample_count.min(frames) * tokens,
            PolicyId::SpatialPool => frames,
            PolicyId::TemporalPool | PolicyId::Ema => tokens,
            PolicyId::Moviechat | PolicyId::MoviechatPlus => ltm_capacity * tokens,
        }
    }
}

/// A memory policy fed one frame at a time.
pub trait MemoryPolicy {
    fn observe(&mut self, frame: TokenMatrix) -> Result<()>;

    /// Frames the policy hands on after the stream ends.
    fn finish(&mut self) -> Result<Vec<WeightedFrame>>;
}

/// Indices `floor(i * total / count)` for `i in 0..count`, deduplicated.
pub fn uniform_indices(total: u64, count: u64) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(count as usize);
    for i in 0..count {
        let idx = ((i as u128 * total as u128) / count as u128) as u64;
        if out.last() != Some(&idx) {
            out.push(idx);
        }
    }
    out
}

/// Keeps `count` uniformly spaced frames of a stream of known length.
#[derive(Debug, Clone)]
pub struct UniformSampler {
    picks: Vec<u64>,
    next_pick: usize,
    seen: u64,
    kept: Vec<WeightedFrame>,
}

impl UniformSampler {
    pub fn new(total: u64, count: u64) -> Self {
        UniformSampler { picks: uniform_indices(total, count), next_pick: 0, seen: 0, kept: Vec::new() }
    }
}

impl MemoryPolicy for UniformSampler {
    fn observe(&mut self, frame: TokenMatrix) -> Result<()> {
        if self.picks.get(self.next_pick) == Some(&self.seen) {
            self.kept.push(WeightedFrame::source(frame, self.seen));
            self.next_pick += 1;
        }
        self.seen += 1;
        Ok(())
    }

    fn finish(&mut self) -> Result<Vec<WeightedFrame>> {
        Ok(core::mem::take(&mut self.kept))
    }
}

/// One single-token frame per input frame: the mean over its tokens.
#[derive(Debug, Clone, Default)]
pub struct SpatialPool {
    seen: u64,
    out: Vec<WeightedFrame>,
}

impl MemoryPolicy for SpatialPool {
    fn observe(&mut self, frame: TokenMatrix) -> Result<()> {
        let pooled = TokenMatrix::new(1, frame.dims(), frame.token_mean())?;
        self.out.push(WeightedFrame::source(pooled, self.seen));
        self.seen += 1;
        Ok(())
    }

    fn finish(&mut self) -> Result<Vec<WeightedFrame>> {
        Ok(core::mem::take(&mut self.out))
    }
}

/// Token-wise mean over time.
#[derive(Debug, Clone, Default)]
pub struct TemporalPool {
    shape: Option<(usize, usize)>,
    acc: Vec<f64>,
    seen: u64,
}

impl MemoryPolicy for TemporalPool {
    fn observe(&mut self, frame: TokenMatrix) -> Result<()> {
        match self.shape {
            None => {
                self.shape = Some(frame.shape());
                self.acc = frame.into_vec();
            }
            Some(shape) => {
                frame.ensure_shape(shape)?;
                self.acc.iter_mut().zip(frame.as_slice()).for_each(|(a, v)| *a += v);
            }
        }
        self.seen += 1;
        Ok(())
    }

    fn finish(&mut self) -> Result<Vec<WeightedFrame>> {
        let Some((n, d)) = self.shape.take() else { return Err(Error::EmptyInput) };
        let t = self.seen as f64;
        let mean = core::mem::take(&mut self.acc).into_iter().map(|v| v / t).collect();
        let tokens = TokenMatrix::new(n, d, mean)?;
        let frame = whole_stream(tokens, self.seen)?;
        self.seen = 0;
        Ok(alloc::vec![frame])
    }
}

/// `m_0 = x_0`, `m_t = lambda * m_{t-1} + (1 - lambda) * x_t`.
#[derive(Debug, Clone)]
pub struct Ema {
    lambda: f64,
    state: Option<TokenMatrix>,
    seen: u64,
}

impl Ema {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidLambda);
        }
        Ok(Ema { lambda, state: None, seen: 0 })
    }
}

impl MemoryPolicy for Ema {
    fn observe(&mut self, frame: TokenMatrix) -> Result<()> {
        self.state = Some(match self.state.take() {
            None => frame,
            Some(prev) => {
                prev.ensure_shape(frame.shape())?;
                let l = self.lambda;
                let data = prev
                    .as_slice()
                    .iter()
                    .zip(frame.as_slice())
                    // equal inputs stay exact so constant streams are fixed points
                    .map(|(&m, &x)| if m == x { m } else { l * m + (1.0 - l) * x })
                    .collect();
                TokenMatrix::new(prev.tokens(), prev.dims(), data)?
            }
        });
        self.seen += 1;
        Ok(())
    }

    fn finish(&mut self) -> Result<Vec<WeightedFrame>> {
        let Some(state) = self.state.take() else { return Err(Error::EmptyInput) };
        let frame = whole_stream(state, self.seen)?;
        self.seen = 0;
        Ok(alloc::vec![frame])
    }
}

fn whole_stream(tokens: TokenMatrix, frames: u64) -> Result<WeightedFrame> {
    WeightedFrame::from_parts(
        tokens,
        frames,
        Provenance::from_spans(&[Span { start: 0, end: frames, count: 1 }]),
        false,
    )
}

fn run<P: MemoryPolicy>(mut policy: P, frames: &[TokenMatrix]) -> Result<Vec<WeightedFrame>> {
    for f in frames {
        policy.observe(f.clone())?;
    }
    policy.finish()
}

/// Uniformly samples `count` frames without merging.
pub fn no_memory(frames: &[TokenMatrix], count: u64) -> Result<Vec<WeightedFrame>> {
    run(UniformSampler::new(frames.len() as u64, count), frames)
}

pub fn spatial_pool(frames: &[TokenMatrix]) -> Result<Vec<WeightedFrame>> {
    run(SpatialPool::default(), frames)
}

pub fn temporal_pool(frames: &[TokenMatrix]) -> Result<WeightedFrame> {
    Ok(run(TemporalPool::default(), frames)?.remove(0))
}

pub fn ema(frames: &[TokenMatrix], lambda: f64) -> Result<WeightedFrame> {
    Ok(run(Ema::new(lambda)?, frames)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar(v: f64) -> TokenMatrix {
        TokenMatrix::from_rows(&[[v]]).unwrap()
    }

    #[test]
    fn uniform_index_formula() {
        assert_eq!(uniform_indices(16, 16), (0..16).collect::<Vec<_>>());
        assert_eq!(uniform_indices(32, 16), (0..16).map(|i| 2 * i).collect::<Vec<_>>());
        assert_eq!(uniform_indices(5, 16), vec![0, 1, 2, 3, 4]);
        assert!(uniform_indices(0, 16).len() <= 1);
    }

    #[test]
    fn no_memory_keeps_sampled_frames_unmerged() {
        let frames: Vec<_> = (0..32).map(|i| scalar(i as f64)).collect();
        let out = no_memory(&frames, 16).unwrap();
        assert_eq!(out.len(), 16);
        for (i, f) in out.iter().enumerate() {
            assert_eq!(f.weight(), 1);
            assert_eq!(f.tokens().row(0), &[(2 * i) as f64]);
        }
        assert_eq!(no_memory(&frames[..5], 16).unwrap().len(), 5);
    }

    #[test]
    fn spatial_pool_means_tokens() {
        let f = TokenMatrix::from_rows(&[[2.0, 0.0], [0.0, 2.0]]).unwrap();
        let out = spatial_pool(&[f]).unwrap();
        assert_eq!(out[0].tokens().shape(), (1, 2));
        assert_eq!(out[0].tokens().row(0), &[1.0, 1.0]);
        let single = TokenMatrix::from_rows(&[[3.0, -1.0]]).unwrap();
        assert_eq!(spatial_pool(core::slice::from_ref(&single)).unwrap()[0].tokens(), &single);
    }

    #[test]
    fn temporal_pool_cases() {
        let f = TokenMatrix::from_rows(&[[1.0, -2.0], [0.5, 4.0]]).unwrap();
        let one = temporal_pool(core::slice::from_ref(&f)).unwrap();
        assert_eq!(one.tokens(), &f);
        assert_eq!(one.weight(), 1);

        let neg = TokenMatrix::new(2, 2, f.as_slice().iter().map(|v| -v).collect()).unwrap();
        let zero = temporal_pool(&[f, neg]).unwrap();
        assert!(zero.tokens().is_degenerate());
        assert_eq!(zero.weight(), 2);
        assert_eq!(temporal_pool(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn ema_cases() {
        let frames = [scalar(3.0), scalar(-1.0), scalar(7.5)];
        assert_eq!(ema(&frames, 0.0).unwrap().tokens(), &scalar(7.5));
        assert_eq!(ema(&[scalar(0.0), scalar(1.0)], 0.5).unwrap().tokens(), &scalar(0.5));
        let constant = [scalar(0.3), scalar(0.3), scalar(0.3), scalar(0.3)];
        for lambda in [0.0, 0.1, 0.5, 0.9, 0.999] {
            let out = ema(&constant, lambda).unwrap();
            assert_eq!(out.tokens(), &scalar(0.3));
            assert_eq!(out.weight(), 4);
        }
        assert!(matches!(Ema::new(1.0), Err(Error::InvalidLambda)));
        assert!(matches!(Ema::new(-0.1), Err(Error::InvalidLambda)));
    }

    #[test]
    fn budgets() {
        assert_eq!(PolicyId::NoMemory.token_budget(1000, 32, 16, 256), 16 * 32);
        assert_eq!(PolicyId::SpatialPool.token_budget(1000, 32, 16, 256), 1000);
        assert_eq!(PolicyId::TemporalPool.token_budget(1000, 32, 16, 256), 32);
        assert_eq!(PolicyId::Ema.token_budget(1000, 32, 16, 256), 32);
        assert_eq!(PolicyId::MoviechatPlus.token_budget(1000, 32, 16, 256), 256 * 32);
        for p in PolicyId::ALL {
            assert_eq!(PolicyId::parse(p.name()), Some(p));
        }
    }
}
