//! File-level round trips: MCES streams, memory snapshots and report formats.

use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streammem::experiment::{self, CsvRow, ExperimentSpec, StreamSource, SweepGrid};
use streammem::format::{self, FormatError, StreamHeader};
use streammem::snapshot;
use streammem::synth::{generate_synthetic, PlantedSegment, SyntheticSpec};
use streammem_core::{Pipeline, PipelineConfig, RelevanceBasis, TokenMatrix};

fn synthetic(frames: u64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        frames,
        tokens: 3,
        dims: 8,
        planted: vec![PlantedSegment { start: 40, end: 71, rho: 0.9 }],
        noise_scale: 0.2,
        seed,
    }
}

fn unplanted(frames: u64, seed: u64) -> SyntheticSpec {
    SyntheticSpec { planted: Vec::new(), ..synthetic(frames, seed) }
}

fn f32_round(m: &TokenMatrix) -> Vec<f64> {
    m.as_slice().iter().map(|&v| v as f32 as f64).collect()
}

/// Independent decoder: little-endian header fields, then raw f32 values.
fn decode_by_hand(bytes: &[u8]) -> (u32, u16, u16, bool, Vec<f32>) {
    assert_eq!(&bytes[0..4], b"MCES");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
    let frames = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let tokens = u16::from_le_bytes(bytes[10..12].try_into().unwrap());
    let dims = u16::from_le_bytes(bytes[12..14].try_into().unwrap());
    let flags = u16::from_le_bytes(bytes[14..16].try_into().unwrap());
    assert_eq!(&bytes[16..20], &[0; 4]);
    let values = bytes[20..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    (frames, tokens, dims, flags & 1 == 1, values)
}

#[test]
fn mces_layout_matches_a_hand_decoder() {
    let (frames, q) = generate_synthetic(&unplanted(5, 1)).unwrap();
    let header = StreamHeader::for_shape(5, 3, 8, true).unwrap();
    let mut buf = Vec::new();
    format::write_stream(header, &frames, Some(&q), &mut buf).unwrap();
    let (t, n, d, has_q, values) = decode_by_hand(&buf);
    assert_eq!((t, n, d, has_q), (5, 3, 8, true));
    assert_eq!(values.len(), 8 + 5 * 24);
    let q32: Vec<f32> = q.iter().map(|&v| v as f32).collect();
    assert_eq!(&values[..8], q32.as_slice());
    for (i, f) in frames.iter().enumerate() {
        let want: Vec<f32> = f.as_slice().iter().map(|&v| v as f32).collect();
        assert_eq!(&values[8 + i * 24..8 + (i + 1) * 24], want.as_slice());
    }
}

#[test]
fn corrupt_streams_are_rejected() {
    let (frames, _) = generate_synthetic(&unplanted(3, 2)).unwrap();
    let header = StreamHeader::for_shape(3, 3, 8, false).unwrap();
    let mut buf = Vec::new();
    format::write_stream(header, &frames, None, &mut buf).unwrap();

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(format::read_stream(bad.as_slice()), Err(FormatError::BadMagic(_))));

    let short = &buf[..buf.len() - 3];
    assert!(matches!(format::read_stream(short), Err(FormatError::Truncated { .. })));

    let mut nan = buf.clone();
    let at = 20 + 4 * 30;
    nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(
        format::read_stream(nan.as_slice()),
        Err(FormatError::NonFiniteValue { frame: 1, token: 0 })
    ));
}

#[test]
fn pipeline_snapshot_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, q) = generate_synthetic(&synthetic(300, 4)).unwrap();
    let mut cfg = PipelineConfig::new(3, 8);
    cfg.consolidation.ltm_capacity = 24;
    let mut p = Pipeline::new(cfg, Some(q)).unwrap();
    for f in &frames[..250] {
        p.step(f.clone()).unwrap();
    }
    assert!(p.long_term().compaction_merges() > 0);
    let path = dir.path().join("state.json");
    snapshot::export_pipeline(&p, &path).unwrap();
    assert!(path.with_extension("mces").exists());

    let mut restored = snapshot::import_pipeline(&path).unwrap();
    assert_eq!(restored.counters(), p.counters());
    assert_eq!(restored.long_term().position_ids(), p.long_term().position_ids());
    for (a, b) in restored.long_term().frames().iter().zip(p.long_term().frames()) {
        assert_eq!(a.tokens().as_slice(), f32_round(b.tokens()).as_slice());
        assert_eq!(a.weight(), b.weight());
        assert_eq!(a.provenance(), b.provenance());
    }

    // both continue; structure stays identical, values agree to f32 precision
    for f in &frames[250..] {
        p.step(f.clone()).unwrap();
        restored.step(f.clone()).unwrap();
    }
    p.flush().unwrap();
    restored.flush().unwrap();
    assert_eq!(restored.long_term().len(), p.long_term().len());
    assert_eq!(restored.long_term().total_weight(), p.long_term().total_weight());
    for (a, b) in restored.long_term().frames().iter().zip(p.long_term().frames()) {
        for (x, y) in a.tokens().as_slice().iter().zip(b.tokens().as_slice()) {
            assert!((x - y).abs() < 1e-5, "{x} vs {y}");
        }
    }
}

#[test]
fn long_term_snapshot_round_trip_and_empty_memory() {
    let dir = tempfile::tempdir().unwrap();
    let (frames, _) = generate_synthetic(&synthetic(100, 5)).unwrap();
    let mut p = Pipeline::new(PipelineConfig::new(3, 8), None).unwrap();
    for f in frames {
        p.step(f).unwrap();
    }
    p.flush().unwrap();
    let path = dir.path().join("ltm.json");
    snapshot::export_long_term(p.long_term(), 3, 8, &path).unwrap();
    let ltm = snapshot::import_long_term(&path).unwrap();
    assert_eq!(ltm.len(), p.long_term().len());
    assert_eq!(ltm.next_id(), p.long_term().next_id());
    assert_eq!(ltm.total_weight(), p.long_term().total_weight());
    assert_eq!(ltm.compaction_merges(), p.long_term().compaction_merges());
    for (a, b) in ltm.entries().zip(p.long_term().entries()) {
        assert_eq!(a.position_id, b.position_id);
        assert_eq!(a.frame.provenance(), b.frame.provenance());
        assert_eq!(a.frame.tokens().as_slice(), f32_round(b.frame.tokens()).as_slice());
    }

    let empty = Pipeline::new(PipelineConfig::new(3, 8), None).unwrap();
    let path = dir.path().join("empty.json");
    snapshot::export_long_term(empty.long_term(), 3, 8, &path).unwrap();
    assert!(!path.with_extension("mces").exists());
    assert!(snapshot::import_long_term(&path).unwrap().is_empty());
}

#[test]
fn csv_and_json_reports_carry_the_same_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ExperimentSpec::new(StreamSource::Synthetic(synthetic(200, 0)));
    spec.policies = streammem_core::PolicyId::ALL.to_vec();
    spec.seeds = vec![1, 2];
    let report = experiment::compare(&spec).unwrap();
    report.write(dir.path(), experiment::OutputFormat::Both).unwrap();

    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("report.csv")).unwrap();
    let rows: Vec<CsvRow> = rdr.deserialize().collect::<Result<_, _>>().unwrap();
    let json_rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), json_rows.len());
    assert_eq!(rows.len(), 12);
    for (c, j) in rows.iter().zip(json_rows) {
        let m = &j["metrics"];
        assert_eq!(c.relevant_mass_fraction, m["relevant_mass_fraction"].as_f64().unwrap());
        assert_eq!(c.overlap_weight_fraction, m["overlap_weight_fraction"].as_f64().unwrap());
        assert_eq!(c.slot_recall, m["slot_recall"].as_f64().unwrap());
        assert_eq!(c.q_affinity, m["q_affinity"].as_f64());
        assert_eq!(c.entries as u64, m["entries"].as_u64().unwrap());
        assert_eq!(c.seed, j["seed"].as_u64().unwrap());
        assert_eq!(c.amortized_bytes_per_frame, j["accounting"]["amortized_bytes_per_frame"].as_f64());
    }
    assert_eq!(json["canonical_sha256"].as_str().unwrap(), report.canonical_sha256);
    assert_eq!(experiment::hex_digest(&report.canonical_bytes().unwrap()), report.canonical_sha256);
}

#[test]
fn sweep_expands_sigma_and_basis() {
    let mut spec = ExperimentSpec::new(StreamSource::Synthetic(synthetic(160, 0)));
    spec.sweep = Some(SweepGrid {
        sigma: vec![0.0, 0.25, 0.5],
        basis: vec![RelevanceBasis::Mean, RelevanceBasis::Min, RelevanceBasis::Max],
        ..SweepGrid::default()
    });
    let report = experiment::sweep(&spec).unwrap();
    assert_eq!(report.rows.len(), 9);
    let mut seen: Vec<(u64, &str)> =
        report.rows.iter().map(|r| ((r.point.sigma * 100.0) as u64, r.point.basis.name())).collect();
    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 9);
    // a higher threshold never keeps more frames
    for basis in RelevanceBasis::ALL {
        let kept: Vec<usize> = [0.0, 0.25, 0.5]
            .iter()
            .map(|s| report.rows.iter().find(|r| r.point.sigma == *s && r.point.basis == basis).unwrap().metrics.entries)
            .collect();
        assert!(kept.windows(2).all(|w| w[0] >= w[1]), "{basis:?}: {kept:?}");
    }
}

#[test]
fn file_and_synthetic_sources_agree() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let seed = rng.random_range(0..1000);
    let synth = synthetic(180, seed);
    let (frames, q) = generate_synthetic(&synth).unwrap();
    // the file holds f32 values; feed the in-memory run the same rounding
    let rounded: Vec<TokenMatrix> = frames.iter().map(|f| TokenMatrix::new(3, 8, f32_round(f)).unwrap()).collect();
    let q32: Vec<f64> = q.iter().map(|&v| v as f32 as f64).collect();
    let path = dir.path().join("s.mces");
    let header = StreamHeader::for_shape(180, 3, 8, true).unwrap();
    format::write_stream(header, &frames, Some(&q), fs::File::create(&path).unwrap()).unwrap();

    let mut spec = ExperimentSpec::new(StreamSource::File { path, planted: synth.planted.clone() });
    spec.seeds = vec![0];
    let report = experiment::run(&spec).unwrap();

    let mut p = Pipeline::new(PipelineConfig::new(3, 8), Some(q32)).unwrap();
    for f in rounded {
        p.step(f).unwrap();
    }
    p.flush().unwrap();
    assert_eq!(report.rows[0].metrics.entries, p.long_term().len());
    assert_eq!(report.rows[0].consolidations, p.counters().consolidations_run);
}
