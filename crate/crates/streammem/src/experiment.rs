//! Experiment runner: every (policy, seed, grid point) combination streams
//! the input through one memory policy and yields one report row.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use streammem_core::baselines::{Ema, SpatialPool, TemporalPool, UniformSampler};
use streammem_core::pipeline::PositionalConfig;
use streammem_core::{
    AccountingRecord, ConsolidationConfig, MemoryPolicy, Pipeline, PipelineConfig, PolicyId, ReinitMode,
    RelevanceBasis, TokenMatrix, WeightedFrame,
};

use crate::error::{Error, Result};
use crate::format::{self, StreamReader};
use crate::metrics::RelevanceMetrics;
use crate::synth::{PlantedSegment, SyntheticSpec, SyntheticStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StreamSource {
    /// An MCES file. `planted` marks known relevant frames for the metrics.
    File {
        path: PathBuf,
        #[serde(default)]
        planted: Vec<PlantedSegment>,
    },
    /// Generated on the fly; each run seed replaces `seed`.
    Synthetic(SyntheticSpec),
}

/// Axes to sweep. An empty axis keeps the base setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub short_capacity: Vec<usize>,
    pub ltm_capacity: Vec<usize>,
    pub m0: Vec<usize>,
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
    pub basis: Vec<RelevanceBasis>,
    pub reinit: Vec<ReinitMode>,
}

impl SweepGrid {
    pub fn len(&self) -> usize {
        fn axis<T>(v: &[T]) -> usize {
            v.len().max(1)
        }
        axis(&self.short_capacity)
            * axis(&self.ltm_capacity)
            * axis(&self.m0)
            * axis(&self.alpha)
            * axis(&self.sigma)
            * axis(&self.basis)
            * axis(&self.reinit)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn points(&self, base: &GridPoint) -> Vec<GridPoint> {
        fn or<T: Clone>(v: &[T], d: T) -> Vec<T> {
            if v.is_empty() {
                vec![d]
            } else {
                v.to_vec()
            }
        }
        let mut out = Vec::with_capacity(self.len());
        for &short_capacity in &or(&self.short_capacity, base.short_capacity) {
            for &ltm_capacity in &or(&self.ltm_capacity, base.ltm_capacity) {
                for &m0 in &or(&self.m0, base.m0) {
                    for &alpha in &or(&self.alpha, base.alpha) {
                        for &sigma in &or(&self.sigma, base.sigma) {
                            for &basis in &or(&self.basis, base.basis) {
                                for &reinit in &or(&self.reinit, base.reinit) {
                                    out.push(GridPoint { short_capacity, ltm_capacity, m0, alpha, sigma, basis, reinit });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// The swept settings of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub short_capacity: usize,
    pub ltm_capacity: usize,
    pub m0: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub basis: RelevanceBasis,
    pub reinit: ReinitMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

fn default_policies() -> Vec<PolicyId> {
    vec![PolicyId::MoviechatPlus]
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_sample_count() -> u64 {
    16
}

fn default_ema_lambda() -> f64 {
    0.9
}

fn default_grid_cap() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub stream: StreamSource,
    /// Overrides the question stored with the stream.
    #[serde(default)]
    pub question: Option<Vec<f64>>,
    #[serde(default)]
    pub consolidation: ConsolidationConfig,
    #[serde(default)]
    pub reinit: ReinitMode,
    #[serde(default)]
    pub positional: PositionalConfig,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyId>,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Frames kept by the uniform-sampling baseline.
    #[serde(default = "default_sample_count")]
    pub sample_count: u64,
    #[serde(default = "default_ema_lambda")]
    pub ema_lambda: f64,
    /// Upper bound on the number of runs a spec may expand to.
    #[serde(default = "default_grid_cap")]
    pub grid_cap: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

impl ExperimentSpec {
    pub fn new(stream: StreamSource) -> Self {
        ExperimentSpec {
            stream,
            question: None,
            consolidation: ConsolidationConfig::default(),
            reinit: ReinitMode::default(),
            positional: PositionalConfig::default(),
            policies: default_policies(),
            sweep: None,
            seeds: default_seeds(),
            sample_count: default_sample_count(),
            ema_lambda: default_ema_lambda(),
            grid_cap: default_grid_cap(),
            output: None,
            format: OutputFormat::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    fn base_point(&self) -> GridPoint {
        let c = &self.consolidation;
        GridPoint {
            short_capacity: c.short_capacity,
            ltm_capacity: c.ltm_capacity,
            m0: c.m0,
            alpha: c.alpha,
            sigma: c.sigma,
            basis: c.basis,
            reinit: self.reinit,
        }
    }

    pub fn grid_points(&self) -> Vec<GridPoint> {
        match &self.sweep {
            Some(grid) => grid.points(&self.base_point()),
            None => vec![self.base_point()],
        }
    }

    pub fn run_count(&self) -> usize {
        self.sweep.as_ref().map_or(1, SweepGrid::len) * self.seeds.len() * self.policies.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::Config("at least one policy is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let runs = self.run_count();
        if runs > self.grid_cap {
            return Err(Error::GridTooLarge { points: runs, cap: self.grid_cap });
        }
        if self.sample_count == 0 {
            return Err(Error::Config("sample_count must be positive".into()));
        }
        Ema::new(self.ema_lambda)?;
        if let StreamSource::Synthetic(s) = &self.stream {
            s.validate()?;
        }
        for p in self.grid_points() {
            self.pipeline_config(&p, 1, 1).validate()?;
        }
        Ok(())
    }

    fn pipeline_config(&self, p: &GridPoint, tokens: usize, dims: usize) -> PipelineConfig {
        let mut consolidation = self.consolidation.clone().with_short_capacity(p.short_capacity);
        consolidation.ltm_capacity = p.ltm_capacity;
        consolidation.m0 = p.m0;
        consolidation.alpha = p.alpha;
        consolidation.sigma = p.sigma;
        consolidation.basis = p.basis;
        PipelineConfig { tokens, dims, consolidation, reinit: p.reinit, positional: self.positional.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub policy: PolicyId,
    pub seed: u64,
    pub point: GridPoint,
    pub frames: u64,
    pub metrics: RelevanceMetrics,
    pub retained_tokens: u64,
    pub token_budget: u64,
    /// Only for the consolidating policies.
    pub accounting: Option<AccountingRecord>,
    pub consolidations: u64,
    pub compaction_merges: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub version: String,
    pub build_hash: String,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            version: env!("CARGO_PKG_VERSION").to_string(),
            build_hash: option_env!("STREAMMEM_BUILD_HASH").unwrap_or("unknown").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub row: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub spec_echo: ExperimentSpec,
    pub rows: Vec<ReportRow>,
    pub environment: Environment,
    /// SHA-256 of the canonical section (`spec_echo` and `rows`).
    pub canonical_sha256: String,
    /// Wall-clock times; excluded from the canonical section.
    pub timing: Vec<Timing>,
}

#[derive(Serialize)]
struct Canonical<'a> {
    spec_echo: &'a ExperimentSpec,
    rows: &'a [ReportRow],
}

impl Report {
    fn new(spec_echo: ExperimentSpec, rows: Vec<ReportRow>, timing: Vec<Timing>) -> Result<Self> {
        let mut report = Report {
            spec_echo,
            rows,
            environment: Environment::current(),
            canonical_sha256: String::new(),
            timing,
        };
        report.canonical_sha256 = hex_digest(&report.canonical_bytes()?);
        Ok(report)
    }

    /// Deterministic bytes of the spec echo and rows.
    pub fn canonical_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(&Canonical { spec_echo: &self.spec_echo, rows: &self.rows })?)
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (i, row) in self.rows.iter().enumerate() {
            let wall_ms = self.timing.iter().find(|t| t.row == i).map(|t| t.wall_ms);
            w.serialize(CsvRow::new(row, wall_ms))?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// Writes `report.json` and/or `report.csv` into `dir`.
    pub fn write(&self, dir: &Path, format: OutputFormat) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        if format != OutputFormat::Csv {
            let p = dir.join("report.json");
            fs::write(&p, self.to_json()?)?;
            written.push(p);
        }
        if format != OutputFormat::Json {
            let p = dir.join("report.csv");
            fs::write(&p, self.to_csv()?)?;
            written.push(p);
        }
        Ok(written)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Flat CSV view of a row; numbers are the same `f64`s as in the JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub policy: String,
    pub seed: u64,
    pub short_capacity: usize,
    pub ltm_capacity: usize,
    pub m0: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub basis: String,
    pub reinit: String,
    pub frames: u64,
    pub entries: usize,
    pub retained_tokens: u64,
    pub token_budget: u64,
    pub relevant_mass_fraction: f64,
    pub overlap_weight_fraction: f64,
    pub slot_recall: f64,
    pub q_affinity: Option<f64>,
    pub raw_bytes_per_frame: Option<u64>,
    pub amortized_bytes_per_frame: Option<f64>,
    pub peak_resident_bytes: Option<u64>,
    pub observed_peak_bytes: Option<u64>,
    pub consolidations: u64,
    pub compaction_merges: u64,
    pub wall_ms: Option<f64>,
}

impl CsvRow {
    pub fn new(r: &ReportRow, wall_ms: Option<f64>) -> Self {
        let acc = r.accounting.as_ref();
        CsvRow {
            policy: r.policy.name().into(),
            seed: r.seed,
            short_capacity: r.point.short_capacity,
            ltm_capacity: r.point.ltm_capacity,
            m0: r.point.m0,
            alpha: r.point.alpha,
            sigma: r.point.sigma,
            basis: r.point.basis.name().into(),
            reinit: r.point.reinit.name().into(),
            frames: r.frames,
            entries: r.metrics.entries,
            retained_tokens: r.retained_tokens,
            token_budget: r.token_budget,
            relevant_mass_fraction: r.metrics.relevant_mass_fraction,
            overlap_weight_fraction: r.metrics.overlap_weight_fraction,
            slot_recall: r.metrics.slot_recall,
            q_affinity: r.metrics.q_affinity,
            raw_bytes_per_frame: acc.map(|a| a.raw_bytes_per_frame),
            amortized_bytes_per_frame: acc.map(|a| a.amortized_bytes_per_frame),
            peak_resident_bytes: acc.map(|a| a.peak_resident_bytes),
            observed_peak_bytes: acc.map(|a| a.observed_peak_bytes),
            consolidations: r.consolidations,
            compaction_merges: r.compaction_merges,
            wall_ms,
        }
    }
}

/// An opened input: frames plus what is known about them.
pub struct OpenedStream {
    pub frames: Box<dyn Iterator<Item = Result<TokenMatrix>> + Send>,
    pub frame_count: u64,
    pub shape: (usize, usize),
    pub question: Option<Vec<f64>>,
    pub planted: Vec<PlantedSegment>,
}

pub fn open_source(source: &StreamSource, seed: u64) -> Result<OpenedStream> {
    match source {
        StreamSource::File { path, planted } => {
            let mut reader: StreamReader<BufReader<File>> = format::open_stream(path)?;
            let h = *reader.header();
            let question = reader.take_question();
            Ok(OpenedStream {
                frames: Box::new(reader.map(|r| r.map_err(Error::from))),
                frame_count: h.frame_count as u64,
                shape: h.shape(),
                question,
                planted: planted.clone(),
            })
        }
        StreamSource::Synthetic(spec) => {
            let spec = SyntheticSpec { seed, ..spec.clone() };
            let stream = SyntheticStream::new(spec)?;
            let s = stream.spec();
            Ok(OpenedStream {
                frame_count: s.frames,
                shape: (s.tokens, s.dims),
                question: Some(stream.question().to_vec()),
                planted: s.planted.clone(),
                frames: Box::new(stream.map(Ok)),
            })
        }
    }
}

enum Runner {
    Baseline(Box<dyn MemoryPolicy + Send>),
    Pipeline(Box<Pipeline>),
}

/// Runs one policy over one stream.
pub fn run_one(spec: &ExperimentSpec, policy: PolicyId, seed: u64, point: &GridPoint) -> Result<ReportRow> {
    let opened = open_source(&spec.stream, seed)?;
    let question = spec.question.clone().or(opened.question);
    let (n, d) = opened.shape;
    let mut runner = match policy {
        PolicyId::NoMemory => Runner::Baseline(Box::new(UniformSampler::new(opened.frame_count, spec.sample_count))),
        PolicyId::SpatialPool => Runner::Baseline(Box::<SpatialPool>::default()),
        PolicyId::TemporalPool => Runner::Baseline(Box::<TemporalPool>::default()),
        PolicyId::Ema => Runner::Baseline(Box::new(Ema::new(spec.ema_lambda)?)),
        PolicyId::Moviechat => Runner::Pipeline(Box::new(Pipeline::new(spec.pipeline_config(point, n, d), None)?)),
        PolicyId::MoviechatPlus => {
            let q = question.clone().ok_or_else(|| Error::Config("question-aware policy needs a question".into()))?;
            Runner::Pipeline(Box::new(Pipeline::new(spec.pipeline_config(point, n, d), Some(q))?))
        }
    };
    let mut frames = 0u64;
    for f in opened.frames {
        let f = f?;
        match &mut runner {
            Runner::Baseline(p) => p.observe(f)?,
            Runner::Pipeline(p) => {
                p.step(f)?;
            }
        }
        frames += 1;
    }
    let (retained, accounting, consolidations, compaction_merges): (Vec<WeightedFrame>, _, _, _) = match runner {
        Runner::Baseline(mut p) => (p.finish()?, None, 0, 0),
        Runner::Pipeline(mut p) => {
            p.flush()?;
            let acc = p.bytes_model();
            let c = p.counters().consolidations_run;
            let merges = p.long_term().compaction_merges();
            (p.long_term().frames().to_vec(), Some(acc), c, merges)
        }
    };
    let metrics = RelevanceMetrics::compute(&retained, &opened.planted, question.as_deref());
    Ok(ReportRow {
        policy,
        seed,
        point: *point,
        frames,
        retained_tokens: retained.iter().map(|f| f.shape().0 as u64).sum(),
        token_budget: policy.token_budget(frames, n as u64, spec.sample_count, point.ltm_capacity as u64),
        metrics,
        accounting,
        consolidations,
        compaction_merges,
    })
}

/// Expands the spec and runs every combination on the worker pool. Rows
/// come back in (grid point, seed, policy) order; any failure fails the run.
pub fn run(spec: &ExperimentSpec) -> Result<Report> {
    spec.validate()?;
    let mut jobs = Vec::with_capacity(spec.run_count());
    for point in spec.grid_points() {
        for &seed in &spec.seeds {
            for &policy in &spec.policies {
                jobs.push((point, seed, policy));
            }
        }
    }
    let results = jobs
        .par_iter()
        .map(|(point, seed, policy)| {
            let start = Instant::now();
            let row = run_one(spec, *policy, *seed, point)?;
            Ok((row, start.elapsed().as_secs_f64() * 1e3))
        })
        .collect::<Result<Vec<_>>>()?;
    let (rows, times): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let timing = times.into_iter().enumerate().map(|(row, wall_ms)| Timing { row, wall_ms }).collect();
    Report::new(spec.clone(), rows, timing)
}

/// Runs the grid in `spec.sweep`; without a grid this is a single-point run.
pub fn sweep(spec: &ExperimentSpec) -> Result<Report> {
    run(spec)
}

/// Runs every policy side by side on the same streams.
pub fn compare(spec: &ExperimentSpec) -> Result<Report> {
    let spec = ExperimentSpec { policies: PolicyId::ALL.to_vec(), ..spec.clone() };
    run(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic() -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(StreamSource::Synthetic(SyntheticSpec {
            frames: 120,
            tokens: 2,
            dims: 8,
            planted: vec![PlantedSegment { start: 40, end: 55, rho: 0.9 }],
            noise_scale: 0.2,
            seed: 0,
        }));
        spec.consolidation.ltm_capacity = 32;
        spec
    }

    #[test]
    fn cartesian_row_count() {
        let mut spec = synthetic();
        spec.policies = vec![PolicyId::Moviechat, PolicyId::MoviechatPlus];
        spec.seeds = vec![1, 2, 3];
        spec.sweep = Some(SweepGrid { sigma: vec![0.0, 0.25], basis: vec![RelevanceBasis::Mean, RelevanceBasis::Max], ..Default::default() });
        let report = run(&spec).unwrap();
        assert_eq!(report.rows.len(), 24);
        assert_eq!(report.timing.len(), 24);
    }

    #[test]
    fn empty_grid_is_single_row() {
        let mut spec = synthetic();
        spec.sweep = Some(SweepGrid::default());
        assert_eq!(run(&spec).unwrap().rows.len(), 1);
    }

    #[test]
    fn grid_cap() {
        let mut spec = synthetic();
        spec.grid_cap = 3;
        spec.seeds = vec![0, 1, 2, 3];
        assert!(matches!(run(&spec), Err(Error::GridTooLarge { points: 4, cap: 3 })));
    }

    #[test]
    fn invalid_point_fails_whole_run() {
        let mut spec = synthetic();
        spec.sweep = Some(SweepGrid { m0: vec![4, 40], ..Default::default() });
        assert!(matches!(run(&spec), Err(Error::Core(_))));
    }

    #[test]
    fn reports_are_deterministic() {
        let mut spec = synthetic();
        spec.policies = PolicyId::ALL.to_vec();
        let a = run(&spec).unwrap();
        let b = run(&spec).unwrap();
        assert_eq!(a.canonical_bytes().unwrap(), b.canonical_bytes().unwrap());
        assert_eq!(a.canonical_sha256, b.canonical_sha256);
        assert_eq!(a.rows, b.rows);
    }
}
