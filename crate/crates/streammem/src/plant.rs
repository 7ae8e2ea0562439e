//! Planted-relevance evaluation: the same synthetic stream consolidated with
//! and without question gating, scored by how much retained content comes
//! from the planted segments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use streammem_core::{ConsolidationConfig, Pipeline, PipelineConfig, ReinitMode};

use crate::error::{Error, Result};
use crate::metrics::RelevanceMetrics;
use crate::synth::{PlantedSegment, SyntheticSpec, SyntheticStream};

/// Smallest planted relevance the evaluation accepts.
pub const MIN_PLANTED_RHO: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantSpec {
    pub frames: u64,
    pub tokens: usize,
    pub dims: usize,
    pub noise_scale: f64,
    pub rho: f64,
    /// Planted segment length; defaults to the short-term capacity.
    pub segment_len: Option<u64>,
    /// One segment per this many fills of the short-term buffer; 0 plants nothing.
    pub period_windows: u64,
    /// Place each segment exactly on a fill boundary instead of at a
    /// seeded random offset within its period.
    pub aligned: bool,
    pub seeds: Vec<u64>,
    /// Question-aware configuration; the agnostic run uses the same
    /// settings with `alpha = 1`.
    pub consolidation: ConsolidationConfig,
    pub reinit: ReinitMode,
}

impl Default for PlantSpec {
    fn default() -> Self {
        PlantSpec {
            frames: 1600,
            tokens: 4,
            dims: 32,
            noise_scale: 0.1,
            rho: 0.8,
            segment_len: None,
            period_windows: 10,
            aligned: false,
            seeds: (0..20).collect(),
            consolidation: ConsolidationConfig::default(),
            reinit: ReinitMode::default(),
        }
    }
}

impl PlantSpec {
    fn segment_len(&self) -> u64 {
        self.segment_len.unwrap_or(self.consolidation.short_capacity as u64)
    }

    pub fn segments(&self, seed: u64) -> Result<Vec<PlantedSegment>> {
        if self.period_windows == 0 {
            return Ok(Vec::new());
        }
        let k = self.consolidation.short_capacity as u64;
        let period = self.period_windows * k;
        let len = self.segment_len();
        if len == 0 || len > period {
            return Err(Error::InvalidSpec("segment length must lie in 1..=period".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let mut out = Vec::new();
        let mut base = 0;
        while base + period <= self.frames {
            let offset = if self.aligned { (self.period_windows / 2) * k } else { rng.random_range(0..=period - len) };
            let start = base + offset.min(period - len);
            out.push(PlantedSegment { start, end: start + len - 1, rho: self.rho });
            base += period;
        }
        Ok(out)
    }

    pub fn synthetic(&self, seed: u64) -> Result<SyntheticSpec> {
        Ok(SyntheticSpec {
            frames: self.frames,
            tokens: self.tokens,
            dims: self.dims,
            planted: self.segments(seed)?,
            noise_scale: self.noise_scale,
            seed,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidSpec("at least one seed is required".into()));
        }
        if self.period_windows > 0 && self.rho < MIN_PLANTED_RHO {
            return Err(Error::InvalidSpec(format!("planted relevance must be at least {MIN_PLANTED_RHO}")));
        }
        if self.consolidation.alpha >= 1.0 {
            return Err(Error::InvalidSpec("the question-aware run needs alpha < 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantRow {
    pub seed: u64,
    pub aware: RelevanceMetrics,
    pub agnostic: RelevanceMetrics,
    /// `aware - agnostic` relevant mass fraction.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantRecord {
    pub spec: PlantSpec,
    /// False when nothing was planted; the comparison is then meaningless.
    pub applicable: bool,
    pub rows: Vec<PlantRow>,
    pub mean_difference: f64,
    /// Seeds where the aware run scored strictly higher.
    pub wins: usize,
}

impl PlantRecord {
    /// Succeeds when at least `min_wins` seeds favour the aware run.
    pub fn check(&self, min_wins: usize) -> Result<()> {
        if !self.applicable {
            return Err(Error::Acceptance("no planted segments; comparison not applicable".into()));
        }
        if self.wins < min_wins {
            return Err(Error::Acceptance(format!(
                "question-aware run won {}/{} seeds, needed {min_wins}",
                self.wins,
                self.rows.len()
            )));
        }
        Ok(())
    }
}

fn consolidate_stream(spec: &SyntheticSpec, cfg: PipelineConfig) -> Result<RelevanceMetrics> {
    let stream = SyntheticStream::new(spec.clone())?;
    let q = stream.question().to_vec();
    let mut p = Pipeline::new(cfg, Some(q.clone()))?;
    for f in stream {
        p.step(f)?;
    }
    p.flush()?;
    Ok(RelevanceMetrics::compute(p.long_term().frames(), &spec.planted, Some(&q)))
}

pub fn plant_eval(spec: &PlantSpec) -> Result<PlantRecord> {
    spec.validate()?;
    let aware_cfg = PipelineConfig {
        consolidation: spec.consolidation.clone(),
        reinit: spec.reinit,
        ..PipelineConfig::new(spec.tokens, spec.dims)
    };
    let mut agnostic_cfg = aware_cfg.clone();
    agnostic_cfg.consolidation.alpha = 1.0;
    aware_cfg.validate()?;

    let rows = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let synth = spec.synthetic(seed)?;
            let aware = consolidate_stream(&synth, aware_cfg.clone())?;
            let agnostic = consolidate_stream(&synth, agnostic_cfg.clone())?;
            let difference = aware.relevant_mass_fraction - agnostic.relevant_mass_fraction;
            Ok(PlantRow { seed, aware, agnostic, difference })
        })
        .collect::<Result<Vec<_>>>()?;
    let applicable = spec.period_windows > 0 && spec.frames >= spec.period_windows * spec.consolidation.short_capacity as u64;
    let (mean_difference, wins) = if applicable {
        let mean = rows.iter().map(|r| r.difference).sum::<f64>() / rows.len() as f64;
        (mean, rows.iter().filter(|r| r.difference > 0.0).count())
    } else {
        (0.0, 0)
    };
    Ok(PlantRecord { spec: spec.clone(), applicable, rows, mean_difference, wins })
}
