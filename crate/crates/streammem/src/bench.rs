//! Memory-growth benchmark: stream lengths spanning orders of magnitude
//! through one configuration, recording the accounting model and wall time.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use streammem_core::{ConsolidationConfig, Pipeline, PipelineConfig, ReinitMode};

use crate::error::{Error, Result};
use crate::synth::{SyntheticSpec, SyntheticStream};

/// Accepted band for the modelled per-frame growth, in bytes.
pub const GROWTH_BAND: (f64, f64) = (7_000.0, 70_000.0);
pub const MIN_R_SQUARED: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchSpec {
    pub frame_counts: Vec<u64>,
    pub tokens: usize,
    pub dims: usize,
    pub noise_scale: f64,
    pub seed: u64,
    pub consolidation: ConsolidationConfig,
    /// Without re-initialization every consolidation sees K fresh frames,
    /// so measured growth is directly comparable with the model.
    pub reinit: ReinitMode,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            frame_counts: vec![100, 1_000, 10_000],
            tokens: 32,
            dims: 768,
            noise_scale: 1.0,
            seed: 0,
            consolidation: ConsolidationConfig::default(),
            reinit: ReinitMode::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub frames: u64,
    pub peak_resident_bytes: u64,
    pub observed_peak_bytes: u64,
    pub amortized_bytes_per_frame: f64,
    /// Bytes handed to long-term memory per input frame, from the counters.
    pub measured_bytes_per_frame: f64,
    pub long_term_len: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub peak_constant: bool,
    pub observed_within_bound: bool,
    pub amortized_matches_measured: bool,
    pub amortized_in_band: bool,
    /// Least-squares fit of wall time against frame count.
    pub slope_ms_per_frame: f64,
    pub r_squared: f64,
}

impl BenchReport {
    pub fn check(&self) -> Result<()> {
        let mut failed = Vec::new();
        if !self.peak_constant {
            failed.push("peak resident bytes vary with stream length");
        }
        if !self.observed_within_bound {
            failed.push("observed peak exceeds the modelled bound");
        }
        if !self.amortized_matches_measured {
            failed.push("measured growth differs from the model by more than 1%");
        }
        if !self.amortized_in_band {
            failed.push("modelled growth outside the accepted band");
        }
        if self.r_squared <= MIN_R_SQUARED {
            failed.push("wall time is not linear in stream length");
        }
        if failed.is_empty() {
            Ok(())
        } else {
            Err(Error::Acceptance(failed.join("; ")))
        }
    }
}

/// Fits `y = a + b x`; returns `(b, r^2)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return (0.0, 0.0);
    }
    (sxy / sxx, sxy * sxy / (sxx * syy))
}

fn bench_one(spec: &BenchSpec, frames: u64) -> Result<BenchRow> {
    let cfg = PipelineConfig {
        consolidation: spec.consolidation.clone(),
        reinit: spec.reinit,
        ..PipelineConfig::new(spec.tokens, spec.dims)
    };
    let stream = SyntheticStream::new(SyntheticSpec {
        frames,
        tokens: spec.tokens,
        dims: spec.dims,
        planted: Vec::new(),
        noise_scale: spec.noise_scale,
        seed: spec.seed,
    })?;
    let start = Instant::now();
    let mut p = Pipeline::new(cfg, None)?;
    for f in stream {
        p.step(f)?;
    }
    p.flush()?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let acc = p.bytes_model();
    Ok(BenchRow {
        frames,
        peak_resident_bytes: acc.peak_resident_bytes,
        observed_peak_bytes: acc.observed_peak_bytes,
        amortized_bytes_per_frame: acc.amortized_bytes_per_frame,
        measured_bytes_per_frame: p.counters().frames_committed as f64 * acc.raw_bytes_per_frame as f64 / frames as f64,
        long_term_len: p.long_term().len(),
        wall_ms,
    })
}

/// Runs the stream lengths one after another so timings do not compete.
pub fn bench_mem(spec: &BenchSpec) -> Result<BenchReport> {
    if spec.frame_counts.is_empty() {
        return Err(Error::Config("bench needs at least one frame count".into()));
    }
    let rows = spec.frame_counts.iter().map(|&t| bench_one(spec, t)).collect::<Result<Vec<_>>>()?;
    let peak = rows[0].peak_resident_bytes;
    let xs: Vec<f64> = rows.iter().map(|r| r.frames as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.wall_ms).collect();
    let (slope_ms_per_frame, r_squared) = linear_fit(&xs, &ys);
    Ok(BenchReport {
        peak_constant: rows.iter().all(|r| r.peak_resident_bytes == peak),
        observed_within_bound: rows.iter().all(|r| r.observed_peak_bytes <= r.peak_resident_bytes),
        amortized_matches_measured: rows.iter().all(|r| {
            (r.measured_bytes_per_frame - r.amortized_bytes_per_frame).abs() <= 0.01 * r.amortized_bytes_per_frame
        }),
        amortized_in_band: rows
            .iter()
            .all(|r| (GROWTH_BAND.0..=GROWTH_BAND.1).contains(&r.amortized_bytes_per_frame)),
        slope_ms_per_frame,
        r_squared,
        rows,
    })
}
