//! Snapshot export and import: a JSON document for metadata plus an MCES
//! sidecar holding the token matrices, in document order.
//!
//! Tokens are stored as 32-bit floats, so a restored memory matches the
//! original to f32 precision.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use streammem_core::pipeline::PipelineSnapshot;
use streammem_core::{Counters, LongTermMemory, Pipeline, PipelineConfig, Provenance, Span, TokenMatrix, WeightedFrame};

use crate::error::{Error, Result};
use crate::format::{self, StreamHeader};

pub const LTM_FORMAT: &str = "streammem-ltm/1";
pub const PIPELINE_FORMAT: &str = "streammem-pipeline/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDoc {
    pub weight: u64,
    pub provenance: Vec<Span>,
    pub context_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryDoc {
    pub position_id: u64,
    #[serde(flatten)]
    pub frame: FrameDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermDoc {
    pub format: String,
    pub tokens: usize,
    pub dims: usize,
    pub capacity: usize,
    pub next_id: u64,
    pub compaction_merges: u64,
    pub entries: Vec<EntryDoc>,
    /// Sidecar file name, relative to the document; absent when empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTermDoc {
    pub next_source_index: u64,
    pub fresh_in_fill: usize,
    pub seedable: bool,
    pub frames: Vec<FrameDoc>,
}

/// Pipeline state; the sidecar holds long-term entries, then short-term frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineDoc {
    pub format: String,
    pub config: PipelineConfig,
    pub question: Option<Vec<f64>>,
    pub counters: Counters,
    pub short: ShortTermDoc,
    pub long: LongTermDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<String>,
}

fn frame_doc(f: &WeightedFrame) -> FrameDoc {
    FrameDoc { weight: f.weight(), provenance: f.provenance().spans().to_vec(), context_flag: f.is_context() }
}

fn rebuild(doc: &FrameDoc, tokens: TokenMatrix) -> Result<WeightedFrame> {
    Ok(WeightedFrame::from_parts(tokens, doc.weight, Provenance::from_spans(&doc.provenance), doc.context_flag)?)
}

fn sidecar_path(json: &Path) -> PathBuf {
    json.with_extension("mces")
}

fn write_sidecar(json: &Path, frames: &[&WeightedFrame], tokens: usize, dims: usize) -> Result<Option<String>> {
    if frames.is_empty() {
        return Ok(None);
    }
    let path = sidecar_path(json);
    let header = StreamHeader::for_shape(frames.len(), tokens, dims, false)?;
    let mut w = format::StreamWriter::new(BufWriter::new(File::create(&path)?), header, None)?;
    for f in frames {
        w.write_frame(f.tokens())?;
    }
    w.finish()?;
    Ok(path.file_name().map(|n| n.to_string_lossy().into_owned()))
}

fn read_sidecar(json: &Path, sidecar: Option<&str>, expected: usize, shape: (usize, usize)) -> Result<Vec<TokenMatrix>> {
    let Some(name) = sidecar else {
        if expected == 0 {
            return Ok(Vec::new());
        }
        return Err(Error::Config("snapshot lists entries but names no sidecar".into()));
    };
    let path = json.parent().unwrap_or(Path::new(".")).join(name);
    let (header, frames, _) = format::read_stream(File::open(path)?)?;
    if frames.len() != expected || header.shape() != shape {
        return Err(Error::Config("sidecar does not match the snapshot document".into()));
    }
    Ok(frames)
}

fn long_doc(ltm: &LongTermMemory, tokens: usize, dims: usize) -> LongTermDoc {
    LongTermDoc {
        format: LTM_FORMAT.into(),
        tokens,
        dims,
        capacity: ltm.capacity(),
        next_id: ltm.next_id(),
        compaction_merges: ltm.compaction_merges(),
        entries: ltm.entries().map(|e| EntryDoc { position_id: e.position_id, frame: frame_doc(e.frame) }).collect(),
        sidecar: None,
    }
}

fn long_from_doc(doc: &LongTermDoc, tokens: Vec<TokenMatrix>) -> Result<LongTermMemory> {
    let entries = doc
        .entries
        .iter()
        .zip(tokens)
        .map(|(e, t)| Ok((e.position_id, rebuild(&e.frame, t)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(LongTermMemory::from_entries(doc.capacity, doc.tokens, doc.dims, entries, doc.next_id)?
        .with_compaction_merges(doc.compaction_merges))
}

/// Writes `ltm` to `json` plus a sidecar next to it.
pub fn export_long_term(ltm: &LongTermMemory, tokens: usize, dims: usize, json: &Path) -> Result<()> {
    let mut doc = long_doc(ltm, tokens, dims);
    let frames: Vec<&WeightedFrame> = ltm.frames().iter().collect();
    doc.sidecar = write_sidecar(json, &frames, tokens, dims)?;
    fs::write(json, serde_json::to_vec_pretty(&doc)?)?;
    Ok(())
}

pub fn import_long_term(json: &Path) -> Result<LongTermMemory> {
    let doc: LongTermDoc = serde_json::from_slice(&fs::read(json)?)?;
    if doc.format != LTM_FORMAT {
        return Err(Error::Config(format!("unknown snapshot format {:?}", doc.format)));
    }
    let tokens = read_sidecar(json, doc.sidecar.as_deref(), doc.entries.len(), (doc.tokens, doc.dims))?;
    long_from_doc(&doc, tokens)
}

pub fn export_pipeline(pipeline: &Pipeline, json: &Path) -> Result<()> {
    let snap = pipeline.snapshot();
    let (n, d) = (snap.config.tokens, snap.config.dims);
    let long = long_doc(pipeline.long_term(), n, d);
    let short = ShortTermDoc {
        next_source_index: snap.short_next_source_index,
        fresh_in_fill: snap.short_fresh_in_fill,
        seedable: snap.short_seedable,
        frames: snap.short_frames.iter().map(frame_doc).collect(),
    };
    let frames: Vec<&WeightedFrame> = pipeline.long_term().frames().iter().chain(&snap.short_frames).collect();
    let sidecar = write_sidecar(json, &frames, n, d)?;
    let doc = PipelineDoc {
        format: PIPELINE_FORMAT.into(),
        config: snap.config,
        question: snap.question,
        counters: snap.counters,
        short,
        long,
        sidecar,
    };
    fs::write(json, serde_json::to_vec_pretty(&doc)?)?;
    Ok(())
}

pub fn import_pipeline(json: &Path) -> Result<Pipeline> {
    let doc: PipelineDoc = serde_json::from_slice(&fs::read(json)?)?;
    if doc.format != PIPELINE_FORMAT {
        return Err(Error::Config(format!("unknown snapshot format {:?}", doc.format)));
    }
    let (n, d) = (doc.config.tokens, doc.config.dims);
    let n_long = doc.long.entries.len();
    let mut tokens = read_sidecar(json, doc.sidecar.as_deref(), n_long + doc.short.frames.len(), (n, d))?;
    let short_tokens = tokens.split_off(n_long);
    let long = long_from_doc(&doc.long, tokens)?;
    let short_frames = doc
        .short
        .frames
        .iter()
        .zip(short_tokens)
        .map(|(f, t)| rebuild(f, t))
        .collect::<Result<Vec<_>>>()?;
    let snapshot = PipelineSnapshot {
        config: doc.config,
        question: doc.question,
        counters: doc.counters,
        short_frames,
        short_next_source_index: doc.short.next_source_index,
        short_fresh_in_fill: doc.short.fresh_in_fill,
        short_seedable: doc.short.seedable,
        long_entries: long.position_ids().iter().copied().zip(long.frames().iter().cloned()).collect(),
        long_next_id: long.next_id(),
        long_compaction_merges: long.compaction_merges(),
    };
    Ok(Pipeline::restore(snapshot)?)
}
