use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use streammem_core::{ConsolidationConfig, Pipeline, PipelineConfig, PolicyId, ReinitMode, RelevanceBasis, StepEvent};

use crate::bench::{self, BenchSpec};
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentSpec, OutputFormat, StreamSource};
use crate::format::{self, StreamHeader};
use crate::plant::{self, PlantSpec};
use crate::snapshot;
use crate::synth::{PlantedSegment, SyntheticSpec, SyntheticStream};

#[derive(Debug, Parser)]
#[command(name = "streammem", version, about = "Bounded streaming memory over per-frame token embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic MCES stream.
    Gen(GenArgs),
    /// Run memory policies over a stream and write a report.
    Run(RunArgs),
    /// Compare question-aware and question-agnostic consolidation on planted streams.
    PlantEval(PlantArgs),
    /// Measure memory growth over increasing stream lengths.
    BenchMem(BenchArgs),
    /// Run a hyperparameter grid.
    Sweep(RunArgs),
    /// Run every policy side by side.
    Compare(RunArgs),
    /// Describe an MCES stream or a snapshot, or print merge traces.
    Inspect(InspectArgs),
}

/// Settings shared by the experiment commands; flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Short-term capacity K.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub m0: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, value_parser = parse_basis)]
    pub basis: Option<RelevanceBasis>,
    #[arg(long, value_parser = parse_reinit)]
    pub reinit: Option<ReinitMode>,
    #[arg(long)]
    pub ltm_cap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ConsolidationConfig, reinit: &mut ReinitMode) {
        if let Some(k) = self.k {
            *cfg = cfg.clone().with_short_capacity(k);
        }
        if let Some(v) = self.m0 {
            cfg.m0 = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.sigma {
            cfg.sigma = v;
        }
        if let Some(v) = self.basis {
            cfg.basis = v;
        }
        if let Some(v) = self.ltm_cap {
            cfg.ltm_capacity = v;
        }
        if let Some(v) = self.reinit {
            *reinit = v;
        }
    }
}

fn parse_basis(s: &str) -> std::result::Result<RelevanceBasis, String> {
    RelevanceBasis::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| format!("expected mean, min or max, got {s:?}"))
}

fn parse_reinit(s: &str) -> std::result::Result<ReinitMode, String> {
    ReinitMode::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("expected merged, last, uniform or none, got {s:?}"))
}

fn parse_policy(s: &str) -> std::result::Result<PolicyId, String> {
    PolicyId::parse(s).ok_or_else(|| format!("unknown policy {s:?}"))
}

fn parse_segment(s: &str) -> std::result::Result<PlantedSegment, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [start, end, rho] = parts.as_slice() else {
        return Err(format!("expected START:END:RHO, got {s:?}"));
    };
    Ok(PlantedSegment {
        start: start.parse().map_err(|e| format!("{e}"))?,
        end: end.parse().map_err(|e| format!("{e}"))?,
        rho: rho.parse().map_err(|e| format!("{e}"))?,
    })
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Synthetic spec as JSON; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<u64>,
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub dims: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Planted segment START:END:RHO (inclusive bounds); repeatable.
    #[arg(long = "plant", value_parser = parse_segment)]
    pub planted: Vec<PlantedSegment>,
    /// Output MCES file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment spec as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// MCES input stream; replaces the spec's stream source.
    #[arg(long)]
    pub stream: Option<PathBuf>,
    /// Question vector: an MCES file carrying one, a file of numbers, or inline `0.1,0.2,...`.
    #[arg(long)]
    pub question: Option<String>,
    /// Policies to run (default from the spec).
    #[arg(long = "policy", value_parser = parse_policy, value_delimiter = ',')]
    pub policies: Vec<PolicyId>,
    /// Known relevant frames of a file stream, START:END:RHO (inclusive); repeatable.
    #[arg(long = "plant", value_parser = parse_segment)]
    pub planted: Vec<PlantedSegment>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Also export the question-aware pipeline state after the stream.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
pub struct PlantArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Number of seeds, starting at `--seed` (default 0).
    #[arg(long)]
    pub seeds: Option<u64>,
    /// Exit with code 4 unless enough seeds favour the aware run.
    #[arg(long)]
    pub assert: bool,
    /// Wins required by `--assert` (default: 90% of seeds).
    #[arg(long)]
    pub min_wins: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stream lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub frames: Vec<u64>,
    #[arg(long)]
    pub tokens: Option<usize>,
    #[arg(long)]
    pub dims: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
    /// Exit with code 4 if any growth check fails.
    #[arg(long)]
    pub assert: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// An MCES stream or a snapshot JSON document.
    pub path: PathBuf,
    /// For streams: run the pipeline and print every consolidation trace.
    #[arg(long)]
    pub trace: bool,
    #[arg(long)]
    pub question: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run_experiment(a, Mode::Run),
        Command::Sweep(a) => run_experiment(a, Mode::Sweep),
        Command::Compare(a) => run_experiment(a, Mode::Compare),
        Command::PlantEval(a) => plant_eval(a),
        Command::BenchMem(a) => bench_mem(a),
        Command::Inspect(a) => inspect(a),
    }
}

fn print_line(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    print_line(&serde_json::to_string_pretty(value)?)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn gen(a: GenArgs) -> Result<()> {
    let mut spec = match &a.config {
        Some(p) => load_json(p)?,
        None => SyntheticSpec { frames: 1000, tokens: 4, dims: 32, planted: Vec::new(), noise_scale: 0.1, seed: 0 },
    };
    spec.frames = a.frames.unwrap_or(spec.frames);
    spec.tokens = a.tokens.unwrap_or(spec.tokens);
    spec.dims = a.dims.unwrap_or(spec.dims);
    spec.noise_scale = a.noise.unwrap_or(spec.noise_scale);
    spec.seed = a.seed.unwrap_or(spec.seed);
    if !a.planted.is_empty() {
        spec.planted = a.planted;
    }
    let stream = SyntheticStream::new(spec.clone())?;
    let header = StreamHeader::for_shape(spec.frames as usize, spec.tokens, spec.dims, true)?;
    let mut w = format::create_stream(&a.out, header, Some(stream.question()))?;
    for f in stream {
        w.write_frame(&f)?;
    }
    let (_, bytes) = w.finish()?;
    print_json(&serde_json::json!({ "out": a.out, "bytes": bytes, "spec": spec }))
}

/// Parses a question given as an MCES file, a file of numbers, or inline.
pub fn parse_question(arg: &str) -> Result<Vec<f64>> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        if path.extension().is_some_and(|e| e == "mces") {
            let r = format::open_stream(path)?;
            return r.question().map(<[f64]>::to_vec).ok_or_else(|| Error::Config("stream carries no question".into()));
        }
        fs::read_to_string(path)?
    } else {
        arg.to_string()
    };
    let cleaned = text.trim().trim_start_matches('[').trim_end_matches(']');
    let q = cleaned
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("bad question value {s:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    if q.is_empty() {
        return Err(Error::Config("empty question vector".into()));
    }
    Ok(q)
}

#[derive(Clone, Copy)]
enum Mode {
    Run,
    Sweep,
    Compare,
}

fn experiment_spec(a: &RunArgs) -> Result<ExperimentSpec> {
    let mut spec = match (&a.config, &a.stream) {
        (Some(p), _) => load_json::<ExperimentSpec>(p)?,
        (None, Some(s)) => ExperimentSpec::new(StreamSource::File { path: s.clone(), planted: Vec::new() }),
        (None, None) => return Err(Error::Config("need --config or --stream".into())),
    };
    if let (Some(_), Some(s)) = (&a.config, &a.stream) {
        let planted = match &spec.stream {
            StreamSource::File { planted, .. } => planted.clone(),
            StreamSource::Synthetic(_) => Vec::new(),
        };
        spec.stream = StreamSource::File { path: s.clone(), planted };
    }
    if !a.planted.is_empty() {
        match &mut spec.stream {
            StreamSource::File { planted, .. } => *planted = a.planted.clone(),
            StreamSource::Synthetic(_) => return Err(Error::Config("--plant applies to file streams".into())),
        }
    }
    if let Some(q) = &a.question {
        spec.question = Some(parse_question(q)?);
    }
    if !a.policies.is_empty() {
        spec.policies = a.policies.clone();
    }
    a.overrides.apply(&mut spec.consolidation, &mut spec.reinit);
    if let Some(seed) = a.overrides.seed {
        spec.seeds = vec![seed];
    }
    if let Some(out) = &a.out {
        spec.output = Some(out.clone());
    }
    if let Some(f) = a.format {
        spec.format = f;
    }
    Ok(spec)
}

fn run_experiment(a: RunArgs, mode: Mode) -> Result<()> {
    let spec = experiment_spec(&a)?;
    let report = match mode {
        Mode::Run => experiment::run(&spec)?,
        Mode::Sweep => experiment::sweep(&spec)?,
        Mode::Compare => experiment::compare(&spec)?,
    };
    if let Some(path) = &a.snapshot {
        let p = final_pipeline(&spec)?;
        snapshot::export_pipeline(&p, path)?;
    }
    match &spec.output {
        Some(dir) => {
            let written = report.write(dir, spec.format)?;
            print_json(&serde_json::json!({
                "rows": report.rows.len(),
                "canonical_sha256": report.canonical_sha256,
                "written": written,
            }))
        }
        None => {
            print_line(&String::from_utf8_lossy(&report.to_json()?))
        }
    }
}

/// The question-aware pipeline after the first seed's stream at the base settings.
fn final_pipeline(spec: &ExperimentSpec) -> Result<Pipeline> {
    let opened = experiment::open_source(&spec.stream, spec.seeds[0])?;
    let q = spec.question.clone().or(opened.question);
    let cfg = PipelineConfig {
        tokens: opened.shape.0,
        dims: opened.shape.1,
        consolidation: spec.consolidation.clone(),
        reinit: spec.reinit,
        positional: spec.positional.clone(),
    };
    let mut p = Pipeline::new(cfg, q)?;
    for f in opened.frames {
        p.step(f?)?;
    }
    p.flush()?;
    Ok(p)
}

fn plant_eval(a: PlantArgs) -> Result<()> {
    let mut spec: PlantSpec = match &a.config {
        Some(p) => load_json(p)?,
        None => PlantSpec::default(),
    };
    a.overrides.apply(&mut spec.consolidation, &mut spec.reinit);
    if a.seeds.is_some() || a.overrides.seed.is_some() {
        let first = a.overrides.seed.unwrap_or(0);
        let count = a.seeds.unwrap_or(spec.seeds.len() as u64);
        spec.seeds = (first..first + count).collect();
    }
    let record = plant::plant_eval(&spec)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("plant_eval.json"), serde_json::to_vec_pretty(&record)?)?;
    }
    print_json(&record)?;
    if a.assert {
        let min = a.min_wins.unwrap_or((record.rows.len() * 9).div_ceil(10));
        record.check(min)?;
    }
    Ok(())
}

fn bench_mem(a: BenchArgs) -> Result<()> {
    let mut spec: BenchSpec = match &a.config {
        Some(p) => load_json(p)?,
        None => BenchSpec::default(),
    };
    if !a.frames.is_empty() {
        spec.frame_counts = a.frames.clone();
    }
    spec.tokens = a.tokens.unwrap_or(spec.tokens);
    spec.dims = a.dims.unwrap_or(spec.dims);
    spec.seed = a.overrides.seed.unwrap_or(spec.seed);
    a.overrides.apply(&mut spec.consolidation, &mut spec.reinit);
    let report = bench::bench_mem(&spec)?;
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("bench_mem.json"), serde_json::to_vec_pretty(&report)?)?;
        let mut w = csv::Writer::from_path(dir.join("bench_mem.csv"))?;
        for row in &report.rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    print_json(&report)?;
    if a.assert {
        report.check()?;
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let is_stream = a.path.extension().is_some_and(|e| e == "mces");
    if !is_stream {
        let doc: serde_json::Value = load_json(&a.path)?;
        let summary = match doc.get("format").and_then(|f| f.as_str()) {
            Some(snapshot::PIPELINE_FORMAT) => {
                let p = snapshot::import_pipeline(&a.path)?;
                serde_json::json!({
                    "kind": "pipeline",
                    "counters": p.counters(),
                    "short_term_len": p.short_term().len(),
                    "long_term_len": p.long_term().len(),
                    "long_term_weight": p.long_term().total_weight(),
                    "accounting": p.bytes_model(),
                    "entries": p.long_term().entries().map(entry_summary).collect::<Vec<_>>(),
                })
            }
            Some(snapshot::LTM_FORMAT) => {
                let ltm = snapshot::import_long_term(&a.path)?;
                serde_json::json!({
                    "kind": "long_term",
                    "len": ltm.len(),
                    "total_weight": ltm.total_weight(),
                    "compaction_merges": ltm.compaction_merges(),
                    "entries": ltm.entries().map(entry_summary).collect::<Vec<_>>(),
                })
            }
            _ => return Err(Error::Config(format!("{} is not a snapshot document", a.path.display()))),
        };
        return print_json(&summary);
    }

    let mut reader = format::open_stream(&a.path)?;
    let header = *reader.header();
    if !a.trace {
        let q = reader.take_question();
        let mut frames = 0u64;
        for f in reader.by_ref() {
            f?;
            frames += 1;
        }
        return print_json(&serde_json::json!({
            "kind": "stream",
            "header": header,
            "file_bytes": header.file_len(),
            "question": q,
            "frames_read": frames,
        }));
    }

    let q = match &a.question {
        Some(s) => Some(parse_question(s)?),
        None => reader.take_question(),
    };
    let mut cfg = PipelineConfig::new(header.tokens as usize, header.dims as usize);
    a.overrides.apply(&mut cfg.consolidation, &mut cfg.reinit);
    let mut p = Pipeline::new(cfg, q)?;
    for (t, f) in reader.enumerate() {
        if let StepEvent::Consolidated(report) = p.step(f?)? {
            print_line(&serde_json::to_string(&serde_json::json!({ "frame": t, "report": report }))?)?;
        }
    }
    if let Some(report) = p.flush()? {
        print_line(&serde_json::to_string(&serde_json::json!({ "frame": "flush", "report": report }))?)?;
    }
    Ok(())
}

fn entry_summary(e: streammem_core::MemoryEntry<'_>) -> serde_json::Value {
    serde_json::json!({
        "position_id": e.position_id,
        "weight": e.frame.weight(),
        "provenance": e.frame.provenance(),
        "context_flag": e.frame.is_context(),
    })
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
