//! MCES v1: a flat container for per-frame token embeddings.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "MCES"
//!      4     2  version (1)
//!      6     4  frame count T
//!     10     2  tokens per frame N
//!     12     2  dims D
//!     14     2  flags (bit 0: question vector present)
//!     16     4  reserved, zero
//!     20  4*D   question vector (if flagged)
//!      .  4*T*N*D  frames, frame-major, row-major
//! ```
//!
//! All integers and floats are little-endian; floats are 32-bit.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;
use streammem_core::TokenMatrix;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"MCES";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;
pub const FLAG_QUESTION: u16 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated stream: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("non-finite value in frame {frame}, token {token}")]
    NonFiniteValue { frame: u32, token: u16 },
    #[error("non-finite value in question vector at {index}")]
    NonFiniteQuestion { index: usize },
    #[error("invalid header: {0}")]
    InvalidHeader(&'static str),
    #[error("unexpected bytes after the last frame")]
    TrailingBytes,
    #[error("frame shape {found:?} does not match header {expected:?}")]
    ShapeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("question vector does not match the header: {0}")]
    QuestionMismatch(&'static str),
    #[error("header promises {expected} frames, {found} written")]
    FrameCount { expected: u32, found: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StreamHeader {
    pub frame_count: u32,
    pub tokens: u16,
    pub dims: u16,
    pub has_question: bool,
}

impl StreamHeader {
    pub fn new(frame_count: u32, tokens: u16, dims: u16, has_question: bool) -> Result<Self, FormatError> {
        let header = StreamHeader { frame_count, tokens, dims, has_question };
        header.validate()?;
        Ok(header)
    }

    /// Header for frames of shape `(tokens, dims)`, checking the u16 limits.
    pub fn for_shape(frame_count: usize, tokens: usize, dims: usize, has_question: bool) -> Result<Self, FormatError> {
        let frame_count = u32::try_from(frame_count).map_err(|_| FormatError::InvalidHeader("too many frames"))?;
        let tokens = u16::try_from(tokens).map_err(|_| FormatError::InvalidHeader("too many tokens"))?;
        let dims = u16::try_from(dims).map_err(|_| FormatError::InvalidHeader("too many dims"))?;
        Self::new(frame_count, tokens, dims, has_question)
    }

    fn validate(&self) -> Result<(), FormatError> {
        if self.frame_count == 0 {
            return Err(FormatError::InvalidHeader("frame count must be at least 1"));
        }
        if self.tokens == 0 || self.dims == 0 {
            return Err(FormatError::InvalidHeader("tokens and dims must be at least 1"));
        }
        Ok(())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.tokens as usize, self.dims as usize)
    }

    pub fn frame_bytes(&self) -> u64 {
        self.tokens as u64 * self.dims as u64 * 4
    }

    pub fn question_bytes(&self) -> u64 {
        if self.has_question {
            self.dims as u64 * 4
        } else {
            0
        }
    }

    /// Total container size in bytes.
    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.question_bytes() + self.frame_count as u64 * self.frame_bytes()
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        b[6..10].copy_from_slice(&self.frame_count.to_le_bytes());
        b[10..12].copy_from_slice(&self.tokens.to_le_bytes());
        b[12..14].copy_from_slice(&self.dims.to_le_bytes());
        let flags = if self.has_question { FLAG_QUESTION } else { 0 };
        b[14..16].copy_from_slice(&flags.to_le_bytes());
        b
    }

    pub fn parse(b: &[u8; HEADER_LEN]) -> Result<Self, FormatError> {
        let magic: [u8; 4] = b[0..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(FormatError::BadMagic(magic));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let flags = u16::from_le_bytes([b[14], b[15]]);
        if flags & !FLAG_QUESTION != 0 {
            return Err(FormatError::InvalidHeader("unknown flag bits"));
        }
        if b[16..20].iter().any(|&x| x != 0) {
            return Err(FormatError::InvalidHeader("reserved bytes must be zero"));
        }
        Self::new(
            u32::from_le_bytes(b[6..10].try_into().expect("4 bytes")),
            u16::from_le_bytes([b[10], b[11]]),
            u16::from_le_bytes([b[12], b[13]]),
            flags & FLAG_QUESTION != 0,
        )
    }
}

/// Writes one MCES container frame by frame.
pub struct StreamWriter<W: Write> {
    sink: W,
    header: StreamHeader,
    written: u32,
    bytes: u64,
    buf: Vec<u8>,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut sink: W, header: StreamHeader, question: Option<&[f64]>) -> Result<Self, FormatError> {
        header.validate()?;
        let mut buf = Vec::with_capacity(header.frame_bytes() as usize);
        match (header.has_question, question) {
            (true, Some(q)) => {
                if q.len() != header.dims as usize {
                    return Err(FormatError::QuestionMismatch("length differs from dims"));
                }
                for (index, &v) in q.iter().enumerate() {
                    let v = v as f32;
                    if !v.is_finite() {
                        return Err(FormatError::NonFiniteQuestion { index });
                    }
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
            (false, None) => {}
            (true, None) => return Err(FormatError::QuestionMismatch("flag set but no vector given")),
            (false, Some(_)) => return Err(FormatError::QuestionMismatch("vector given but flag clear")),
        }
        sink.write_all(&header.to_bytes())?;
        sink.write_all(&buf)?;
        let bytes = HEADER_LEN as u64 + buf.len() as u64;
        Ok(StreamWriter { sink, header, written: 0, bytes, buf })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn write_frame(&mut self, frame: &TokenMatrix) -> Result<(), FormatError> {
        if frame.shape() != self.header.shape() {
            return Err(FormatError::ShapeMismatch { expected: self.header.shape(), found: frame.shape() });
        }
        if self.written == self.header.frame_count {
            return Err(FormatError::FrameCount { expected: self.header.frame_count, found: self.written + 1 });
        }
        self.buf.clear();
        for (token, row) in frame.rows().enumerate() {
            for &v in row {
                let v = v as f32;
                if !v.is_finite() {
                    return Err(FormatError::NonFiniteValue { frame: self.written, token: token as u16 });
                }
                self.buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        self.sink.write_all(&self.buf)?;
        self.written += 1;
        self.bytes += self.buf.len() as u64;
        Ok(())
    }

    /// Flushes and returns the sink with the total byte count.
    pub fn finish(mut self) -> Result<(W, u64), FormatError> {
        if self.written != self.header.frame_count {
            return Err(FormatError::FrameCount { expected: self.header.frame_count, found: self.written });
        }
        self.sink.flush()?;
        Ok((self.sink, self.bytes))
    }
}

/// Reads one MCES container frame by frame.
pub struct StreamReader<R: Read> {
    source: R,
    header: StreamHeader,
    question: Option<Vec<f64>>,
    read: u32,
    consumed: u64,
    buf: Vec<u8>,
}

impl<R: Read> StreamReader<R> {
    pub fn new(mut source: R) -> Result<Self, FormatError> {
        let mut hb = [0u8; HEADER_LEN];
        let got = fill(&mut source, &mut hb)?;
        if got < HEADER_LEN {
            if got >= 4 && hb[0..4] != MAGIC {
                return Err(FormatError::BadMagic(hb[0..4].try_into().expect("4 bytes")));
            }
            return Err(FormatError::Truncated { expected: HEADER_LEN as u64, found: got as u64 });
        }
        let header = StreamHeader::parse(&hb)?;
        let mut reader = StreamReader {
            source,
            header,
            question: None,
            read: 0,
            consumed: HEADER_LEN as u64,
            buf: vec![0u8; header.frame_bytes() as usize],
        };
        if header.has_question {
            let mut qb = vec![0u8; header.question_bytes() as usize];
            reader.read_block(&mut qb)?;
            let q = decode(&qb);
            if let Some(index) = q.iter().position(|v| !v.is_finite()) {
                return Err(FormatError::NonFiniteQuestion { index });
            }
            reader.question = Some(q);
        }
        Ok(reader)
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn question(&self) -> Option<&[f64]> {
        self.question.as_deref()
    }

    pub fn take_question(&mut self) -> Option<Vec<f64>> {
        self.question.take()
    }

    /// Frames not yet read.
    pub fn remaining(&self) -> u32 {
        self.header.frame_count - self.read
    }

    fn read_block(&mut self, block: &mut [u8]) -> Result<(), FormatError> {
        let got = fill(&mut self.source, block)?;
        self.consumed += got as u64;
        if got < block.len() {
            return Err(FormatError::Truncated { expected: self.header.file_len(), found: self.consumed });
        }
        Ok(())
    }

    /// Next frame, or `None` once all frames have been read and the source
    /// is confirmed to end there.
    pub fn next_frame(&mut self) -> Result<Option<TokenMatrix>, FormatError> {
        if self.read == self.header.frame_count {
            let mut probe = [0u8; 1];
            if fill(&mut self.source, &mut probe)? != 0 {
                return Err(FormatError::TrailingBytes);
            }
            return Ok(None);
        }
        let mut buf = std::mem::take(&mut self.buf);
        let result = self.read_block(&mut buf);
        let data = decode(&buf);
        self.buf = buf;
        result?;
        let d = self.header.dims as usize;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FormatError::NonFiniteValue { frame: self.read, token: (i / d) as u16 });
        }
        self.read += 1;
        let (n, d) = self.header.shape();
        Ok(Some(TokenMatrix::new(n, d, data).expect("shape from header")))
    }
}

impl<R: Read> Iterator for StreamReader<R> {
    type Item = Result<TokenMatrix, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

fn fill<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match source.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

fn decode(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect()
}

/// Writes a whole stream; returns the byte count.
pub fn write_stream<W: Write>(
    header: StreamHeader,
    frames: &[TokenMatrix],
    question: Option<&[f64]>,
    sink: W,
) -> Result<u64, FormatError> {
    if frames.len() != header.frame_count as usize {
        return Err(FormatError::FrameCount { expected: header.frame_count, found: frames.len() as u32 });
    }
    let mut w = StreamWriter::new(sink, header, question)?;
    for f in frames {
        w.write_frame(f)?;
    }
    Ok(w.finish()?.1)
}

/// Header, frames and optional question of a fully read stream.
pub type DecodedStream = (StreamHeader, Vec<TokenMatrix>, Option<Vec<f64>>);

/// Reads a whole stream into memory.
pub fn read_stream<R: Read>(source: R) -> Result<DecodedStream, FormatError> {
    let mut r = StreamReader::new(source)?;
    let header = *r.header();
    let q = r.take_question();
    let frames = r.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok((header, frames, q))
}

pub fn open_stream(path: &Path) -> Result<StreamReader<BufReader<File>>, FormatError> {
    StreamReader::new(BufReader::new(File::open(path)?))
}

pub fn create_stream(
    path: &Path,
    header: StreamHeader,
    question: Option<&[f64]>,
) -> Result<StreamWriter<BufWriter<File>>, FormatError> {
    StreamWriter::new(BufWriter::new(File::create(path)?), header, question)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(rows: &[[f64; 2]]) -> TokenMatrix {
        TokenMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn sizes() {
        let mut out = Vec::new();
        let h = StreamHeader::new(1, 1, 2, false).unwrap();
        assert_eq!(write_stream(h, &[frame(&[[1.0, 2.0]])], None, &mut out).unwrap(), 28);
        assert_eq!(out.len(), 28);

        let mut out = Vec::new();
        let h = StreamHeader::new(2, 2, 2, true).unwrap();
        let frames = [frame(&[[1.0, 2.0], [3.0, 4.0]]), frame(&[[5.0, 6.0], [7.0, 8.0]])];
        assert_eq!(write_stream(h, &frames, Some(&[0.5, 0.5]), &mut out).unwrap(), 60);
        assert_eq!(h.file_len(), 60);
        let (h2, f2, q2) = read_stream(out.as_slice()).unwrap();
        assert_eq!(h2, h);
        assert_eq!(f2, frames);
        assert_eq!(q2, Some(vec![0.5, 0.5]));
    }

    #[test]
    fn rejects_bad_input() {
        let mut out = Vec::new();
        let h = StreamHeader::new(1, 1, 2, false).unwrap();
        write_stream(h, &[frame(&[[1.0, 2.0]])], None, &mut out).unwrap();

        let mut bad = out.clone();
        bad[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(read_stream(bad.as_slice()), Err(FormatError::BadMagic(m)) if &m == b"XXXX"));

        let mut bad = out.clone();
        bad[4] = 2;
        assert!(matches!(read_stream(bad.as_slice()), Err(FormatError::UnsupportedVersion(2))));

        assert!(matches!(
            read_stream(&out[..25]),
            Err(FormatError::Truncated { expected: 28, found: 25 })
        ));
        assert!(matches!(read_stream(&out[..10]), Err(FormatError::Truncated { .. })));

        let mut bad = out.clone();
        bad.push(0);
        assert!(matches!(read_stream(bad.as_slice()), Err(FormatError::TrailingBytes)));

        let mut bad = out.clone();
        bad[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(read_stream(bad.as_slice()), Err(FormatError::NonFiniteValue { frame: 0, token: 0 })));

        let mut bad = out;
        bad[17] = 1;
        assert!(matches!(read_stream(bad.as_slice()), Err(FormatError::InvalidHeader(_))));
    }

    #[test]
    fn writer_checks() {
        let h = StreamHeader::new(1, 1, 2, false).unwrap();
        assert!(matches!(
            write_stream(h, &[frame(&[[1.0, 2.0], [1.0, 2.0]])], None, Vec::new()),
            Err(FormatError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            write_stream(h, &[frame(&[[1.0, 2.0]])], Some(&[1.0, 0.0]), Vec::new()),
            Err(FormatError::QuestionMismatch(_))
        ));
        assert!(matches!(
            write_stream(h, &[frame(&[[1e300, 2.0]])], None, Vec::new()),
            Err(FormatError::NonFiniteValue { .. })
        ));
        assert!(StreamHeader::new(0, 1, 1, false).is_err());
    }
}
