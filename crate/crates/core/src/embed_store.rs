//! Embedding matrices, segment manifests and their on-disk formats.
//!
//! Embeddings are stored in the `EMB1` binary layout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic, ASCII "EMB1"
//! 4       4     dim, u32 little-endian
//! 8       8     rows, u64 little-endian
//! 16      ...   rows * dim f32 little-endian, row-major
//! ```
//!
//! Manifests are tab-separated text with the header
//! `segment_id recording_id lang start_ms end_ms`; entry `i` describes
//! embedding row `i`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const EMB_MAGIC: &[u8; 4] = b"EMB1";
const HEADER_LEN: usize = 16;

/// Rows whose L2 norm falls below this are rejected by [`l2_normalize`].
pub const ZERO_NORM: f64 = 1e-12;
/// Allowed deviation of a unit row's norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

pub const MANIFEST_HEADER: &str = "segment_id\trecording_id\tlang\tstart_ms\tend_ms";

/// Dense row-major `rows x dim` matrix of finite f32 values.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("dim must be at least 1".into()));
        }
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(Error::Format(format!(
                "data length {} does not match {rows} x {dim}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value at row {}, column {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { rows, dim, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(1);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Format(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    /// Parses an `EMB1` stream. The stream must end exactly after the payload.
    pub fn read_from<R: Read>(mut reader: R) -> Result<Self> {
        let mut bytes = Vec::new();
        reader
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io("<stream>", e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != EMB_MAGIC {
            return Err(Error::Format("missing EMB1 magic".into()));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        if dim == 0 {
            return Err(Error::Format("dim must be at least 1".into()));
        }
        let expected = rows
            .checked_mul(dim as u64)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format(format!("declared size {rows} x {dim} overflows")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len() as u64,
            });
        }
        let rows = usize::try_from(rows)
            .map_err(|_| Error::Format(format!("row count {rows} exceeds address space")))?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(rows, dim, data)
    }

    pub fn write_to<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        w.write_all(EMB_MAGIC)?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }
}

/// Reads an `EMB1` file.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::from_bytes(&bytes)
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    m.write_to(file).map_err(|e| Error::io(path, e))
}

/// An [`EmbeddingMatrix`] whose rows all have unit L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEmbeddingMatrix(EmbeddingMatrix);

impl UnitEmbeddingMatrix {
    /// Wraps a matrix that is already normalized, checking every row norm.
    pub fn from_unit(m: EmbeddingMatrix) -> Result<Self> {
        for (i, row) in m.iter_rows().enumerate() {
            let norm = row_norm(row);
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::Validation(format!(
                    "row {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.0
    }

    pub fn into_inner(self) -> EmbeddingMatrix {
        self.0
    }

    pub fn rows(&self) -> usize {
        self.0.rows
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        self.0.row(i)
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

/// Scales every row to unit L2 norm. Zero rows are an error, never dropped.
pub fn l2_normalize(m: EmbeddingMatrix) -> Result<UnitEmbeddingMatrix> {
    let dim = m.dim;
    let mut data = m.data;
    for (i, row) in data.chunks_exact_mut(dim).enumerate() {
        let norm = row_norm(row);
        if norm < ZERO_NORM {
            return Err(Error::Degenerate { row: i });
        }
        for v in row.iter_mut() {
            *v = (f64::from(*v) / norm) as f32;
        }
    }
    Ok(UnitEmbeddingMatrix(EmbeddingMatrix {
        rows: m.rows,
        dim,
        data,
    }))
}

/// One row of a manifest: a time span of a recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub segment_id: String,
    pub recording_id: String,
    pub lang: String,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Segment {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }
}

/// Ordered segment metadata; entry `i` describes embedding row `i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentManifest {
    entries: Vec<Segment>,
    by_id: HashMap<String, usize>,
}

impl SegmentManifest {
    /// Validates segments and builds the id index. Errors cite 1-based
    /// entry positions.
    pub fn new(entries: Vec<Segment>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, seg) in entries.iter().enumerate() {
            validate_segment(seg)
                .map_err(|msg| Error::Validation(format!("entry {}: {msg}", i + 1)))?;
            if let Some(prev) = by_id.insert(seg.segment_id.clone(), i) {
                return Err(Error::Validation(format!(
                    "duplicate segment_id {:?} at entries {} and {}",
                    seg.segment_id,
                    prev + 1,
                    i + 1
                )));
            }
        }
        Ok(Self { entries, by_id })
    }

    pub fn entries(&self) -> &[Segment] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Segment> {
        self.entries.get(i)
    }

    pub fn index_of(&self, segment_id: &str) -> Option<usize> {
        self.by_id.get(segment_id).copied()
    }

    /// Parses manifest TSV. Line numbers in errors are 1-based and count
    /// the header.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line.map_err(|e| Error::io("<stream>", e))?,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        };
        if header != MANIFEST_HEADER {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected header {header:?}"),
            });
        }

        let mut entries = Vec::new();
        let mut first_seen: HashMap<String, usize> = HashMap::new();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line.map_err(|e| Error::io("<stream>", e))?;
            let seg = parse_segment(&line).map_err(|message| Error::Parse {
                line: line_no,
                message,
            })?;
            validate_segment(&seg)
                .map_err(|msg| Error::Validation(format!("line {line_no}: {msg}")))?;
            if let Some(prev) = first_seen.insert(seg.segment_id.clone(), line_no) {
                return Err(Error::Validation(format!(
                    "duplicate segment_id {:?} on lines {prev} and {line_no}",
                    seg.segment_id
                )));
            }
            entries.push(seg);
        }
        Self::new(entries)
    }

    pub fn write_to<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "{MANIFEST_HEADER}")?;
        for s in &self.entries {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                s.segment_id, s.recording_id, s.lang, s.start_ms, s.end_ms
            )?;
        }
        w.flush()
    }

    /// Fails iff the manifest and the matrix disagree on the number of rows.
    pub fn check_pairing(&self, m: &EmbeddingMatrix) -> Result<()> {
        if self.len() != m.rows() {
            return Err(Error::Validation(format!(
                "manifest has {} entries but the matrix has {} rows",
                self.len(),
                m.rows()
            )));
        }
        Ok(())
    }
}

fn parse_segment(line: &str) -> std::result::Result<Segment, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(format!(
            "expected 5 tab-separated fields, found {}",
            fields.len()
        ));
    }
    let parse_ms = |name: &str, v: &str| {
        v.parse::<u64>()
            .map_err(|_| format!("{name} {v:?} is not a non-negative integer"))
    };
    Ok(Segment {
        segment_id: fields[0].to_string(),
        recording_id: fields[1].to_string(),
        lang: fields[2].to_string(),
        start_ms: parse_ms("start_ms", fields[3])?,
        end_ms: parse_ms("end_ms", fields[4])?,
    })
}

fn validate_segment(seg: &Segment) -> std::result::Result<(), String> {
    if seg.segment_id.is_empty() {
        return Err("empty segment_id".into());
    }
    if seg.recording_id.is_empty() {
        return Err("empty recording_id".into());
    }
    if !is_iso639_1(&seg.lang) {
        return Err(format!(
            "lang {:?} is not a two-letter ISO-639-1 code",
            seg.lang
        ));
    }
    if seg.end_ms <= seg.start_ms {
        return Err(format!(
            "segment {:?} has end_ms {} <= start_ms {}",
            seg.segment_id, seg.end_ms, seg.start_ms
        ));
    }
    Ok(())
}

pub(crate) fn is_iso639_1(lang: &str) -> bool {
    lang.len() == 2 && lang.bytes().all(|b| b.is_ascii_lowercase())
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<SegmentManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    SegmentManifest::read_from(BufReader::new(file))
}

pub fn save_manifest(m: &SegmentManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    m.write_to(file).map_err(|e| Error::io(path, e))
}
