//! Seeded synthetic embedding streams with planted question-relevant segments.
//!
//! Every frame has a unit direction `d_t = rho_t * q + sqrt(1 - rho_t^2) * u_t`
//! with `u_t` a random unit vector orthogonal to `q`. Its tokens are
//! `d_t + noise * (e_j - mean_j e_j)` for Gaussian `e_j`, so the token mean is
//! exactly `d_t` and the frame descriptor has cosine `rho_t` to `q`.
//! Inside planted segments `rho_t` is the segment's relevance; elsewhere it is
//! a small uniform jitter around zero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use streammem_core::TokenMatrix;

use crate::error::{Error, Result};

/// Half-width of the background relevance jitter.
pub const BACKGROUND_JITTER: f64 = 0.05;

/// Inclusive frame range `[start, end]` whose descriptors sit at cosine
/// `rho` to the question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSegment {
    pub start: u64,
    pub end: u64,
    pub rho: f64,
}

impl PlantedSegment {
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: u64) -> bool {
        (self.start..=self.end).contains(&t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub frames: u64,
    pub tokens: usize,
    pub dims: usize,
    #[serde(default)]
    pub planted: Vec<PlantedSegment>,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.frames == 0 || self.tokens == 0 || self.dims == 0 {
            return bad("frames, tokens and dims must be positive");
        }
        if self.frames > u32::MAX as u64 || self.tokens > u16::MAX as usize || self.dims > u16::MAX as usize {
            return bad("shape exceeds the stream format limits");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be finite and non-negative");
        }
        if self.dims < 2 {
            return bad("dims must be at least 2 to build directions orthogonal to the question");
        }
        for (i, s) in self.planted.iter().enumerate() {
            if s.start > s.end || s.end >= self.frames {
                return bad("planted segment out of range");
            }
            if !(0.0..=1.0).contains(&s.rho) {
                return bad("planted relevance must lie in [0, 1]");
            }
            if i > 0 && s.start <= self.planted[i - 1].end {
                return bad("planted segments must be sorted and non-overlapping");
            }
        }
        Ok(())
    }

    /// Planted relevance of frame `t`, if it lies in a segment.
    pub fn planted_rho(&self, t: u64) -> Option<f64> {
        let i = self.planted.partition_point(|s| s.end < t);
        self.planted.get(i).filter(|s| s.contains(t)).map(|s| s.rho)
    }

    pub fn planted_frames(&self) -> u64 {
        self.planted.iter().map(PlantedSegment::len).sum()
    }
}

/// Lazily generated synthetic stream; frame `t` depends only on the spec
/// and `t`, so streams of any length run in constant memory.
#[derive(Debug, Clone)]
pub struct SyntheticStream {
    spec: SyntheticSpec,
    question: Vec<f64>,
    next: u64,
}

impl SyntheticStream {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng_for(spec.seed, 0);
        let question = unit_gaussian(&mut rng, spec.dims);
        Ok(SyntheticStream { spec, question, next: 0 })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn question(&self) -> &[f64] {
        &self.question
    }

    pub fn frame(&self, t: u64) -> TokenMatrix {
        let (n, d) = (self.spec.tokens, self.spec.dims);
        let noise = self.spec.noise_scale;
        let mut rng = rng_for(self.spec.seed, t + 1);
        let rho = match self.spec.planted_rho(t) {
            Some(rho) => rho,
            None if noise > 0.0 => rng.random_range(-BACKGROUND_JITTER..=BACKGROUND_JITTER),
            None => 0.0,
        };
        let u = orthogonal_unit(&mut rng, &self.question);
        let side = (1.0 - rho * rho).max(0.0).sqrt();
        let dir: Vec<f64> = self.question.iter().zip(&u).map(|(q, u)| rho * q + side * u).collect();

        let mut data = Vec::with_capacity(n * d);
        if noise > 0.0 {
            let jitter: Vec<f64> = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let mut mean = vec![0.0; d];
            for row in jitter.chunks_exact(d) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n as f64);
            }
            for row in jitter.chunks_exact(d) {
                data.extend(dir.iter().zip(row).zip(&mean).map(|((c, e), m)| c + noise * (e - m)));
            }
        } else {
            for _ in 0..n {
                data.extend_from_slice(&dir);
            }
        }
        TokenMatrix::new(n, d, data).expect("shape from spec")
    }
}

impl Iterator for SyntheticStream {
    type Item = TokenMatrix;

    fn next(&mut self) -> Option<TokenMatrix> {
        if self.next == self.spec.frames {
            return None;
        }
        let f = self.frame(self.next);
        self.next += 1;
        Some(f)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.spec.frames - self.next) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SyntheticStream {}

/// Materializes a whole synthetic stream and its question.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<TokenMatrix>, Vec<f64>)> {
    let stream = SyntheticStream::new(spec.clone())?;
    let q = stream.question().to_vec();
    Ok((stream.collect(), q))
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian(rng, d);
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn orthogonal_unit(rng: &mut ChaCha8Rng, q: &[f64]) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, q.len());
        let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        let n = norm(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
