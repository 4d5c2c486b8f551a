//! Global bidirectional mining.

use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};

use crate::embed_store::{SegmentManifest, UnitEmbeddingMatrix};
use crate::error::{Error, Result};
use crate::kernel::Widened;
use crate::knn::{check_pools, ScanOptions};
use crate::margin::{margin_argmax, neighbor_sums, MarginParams, MINING_K};

/// Default margin threshold for accepting a pair.
pub const DEFAULT_THRESHOLD: f64 = 1.06;

pub const ALIGNMENT_HEADER: &str = "score\tsrc_segment_id\ttgt_segment_id";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningConfig {
    pub params: MarginParams,
    pub threshold: f64,
}

impl MiningConfig {
    pub fn new(k: usize, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::Config(format!(
                "threshold {threshold} is not finite"
            )));
        }
        Ok(Self {
            params: MarginParams::new(k)?,
            threshold,
        })
    }
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            params: MarginParams::new(MINING_K).unwrap(),
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub src: usize,
    pub tgt: usize,
    pub score: f64,
}

impl Alignment {
    /// Contract order: score descending, then `(src, tgt)` ascending.
    pub fn order(&self, other: &Self) -> std::cmp::Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then((self.src, self.tgt).cmp(&(other.src, other.tgt)))
    }
}

/// Mined pairs, unique per `(src, tgt)` and kept in contract order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentSet {
    alignments: Vec<Alignment>,
}

impl AlignmentSet {
    pub fn new(mut alignments: Vec<Alignment>) -> Result<Self> {
        if let Some(a) = alignments.iter().find(|a| !a.score.is_finite()) {
            return Err(Error::Validation(format!(
                "alignment ({}, {}) has non-finite score",
                a.src, a.tgt
            )));
        }
        alignments.sort_by(Alignment::order);
        let mut seen = std::collections::HashSet::with_capacity(alignments.len());
        for a in &alignments {
            if !seen.insert((a.src, a.tgt)) {
                return Err(Error::Validation(format!(
                    "duplicate alignment ({}, {})",
                    a.src, a.tgt
                )));
            }
        }
        Ok(Self { alignments })
    }

    pub fn alignments(&self) -> &[Alignment] {
        &self.alignments
    }

    pub fn len(&self) -> usize {
        self.alignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alignments.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Alignment> {
        self.alignments.iter()
    }

    /// Alignments scoring at least `threshold`, order preserved.
    pub fn at_least(&self, threshold: f64) -> AlignmentSet {
        self.filter(|a| a.score >= threshold)
    }

    pub fn filter(&self, mut keep: impl FnMut(&Alignment) -> bool) -> AlignmentSet {
        AlignmentSet {
            alignments: self
                .alignments
                .iter()
                .copied()
                .filter(|a| keep(a))
                .collect(),
        }
    }

    /// Writes the alignment TSV, resolving indices to segment ids.
    pub fn write_tsv<W: Write>(
        &self,
        writer: W,
        src: &SegmentManifest,
        tgt: &SegmentManifest,
    ) -> Result<()> {
        for a in &self.alignments {
            resolve(src, a.src, "source")?;
            resolve(tgt, a.tgt, "target")?;
        }
        let mut w = BufWriter::new(writer);
        let io = |e| Error::io("<alignments>", e);
        writeln!(w, "{ALIGNMENT_HEADER}").map_err(io)?;
        for a in &self.alignments {
            writeln!(
                w,
                "{:.6}\t{}\t{}",
                a.score,
                src.entries()[a.src].segment_id,
                tgt.entries()[a.tgt].segment_id
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Parses the alignment TSV, mapping segment ids through the manifests.
    pub fn read_tsv<R: BufRead>(
        reader: R,
        src: &SegmentManifest,
        tgt: &SegmentManifest,
    ) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io("<alignments>", e))?;
        if header.as_deref() != Some(ALIGNMENT_HEADER) {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {ALIGNMENT_HEADER:?}"),
            });
        }
        let mut out = Vec::new();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let line = line.map_err(|e| Error::io("<alignments>", e))?;
            let parse_err = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(parse_err(format!(
                    "expected 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let score: f64 = fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad score {:?}", fields[0])))?;
            let lookup = |m: &SegmentManifest, id: &str, side: &str| {
                m.index_of(id).ok_or_else(|| {
                    Error::Validation(format!("line {line_no}: unknown {side} segment {id:?}"))
                })
            };
            out.push(Alignment {
                src: lookup(src, fields[1], "source")?,
                tgt: lookup(tgt, fields[2], "target")?,
                score,
            });
        }
        Self::new(out)
    }
}

pub(crate) fn resolve<'m>(
    m: &'m SegmentManifest,
    index: usize,
    side: &str,
) -> Result<&'m crate::embed_store::Segment> {
    m.get(index).ok_or_else(|| {
        Error::Validation(format!(
            "{side} index {index} is outside a manifest of {} entries",
            m.len()
        ))
    })
}

/// Mines both directions and keeps pairs scoring at least the threshold.
pub fn mine(
    src: &UnitEmbeddingMatrix,
    tgt: &UnitEmbeddingMatrix,
    cfg: &MiningConfig,
) -> Result<AlignmentSet> {
    mine_with(src, tgt, cfg, &ScanOptions::default())
}

pub fn mine_with(
    src: &UnitEmbeddingMatrix,
    tgt: &UnitEmbeddingMatrix,
    cfg: &MiningConfig,
    opts: &ScanOptions,
) -> Result<AlignmentSet> {
    check_pools(src, tgt)?;
    check_pools(tgt, src)?;
    if !cfg.threshold.is_finite() {
        return Err(Error::Config("threshold must be finite".into()));
    }
    let ws = Widened::new(src);
    let wt = Widened::new(tgt);
    let k = cfg.params.k();
    let sums = neighbor_sums(&ws, &wt, k, opts)?;
    let (forward, backward) = margin_argmax(&ws, &wt, &sums, k, true, opts);
    let backward = backward.expect("requested both directions");

    let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let pairs = forward
        .iter()
        .enumerate()
        .map(|(i, n)| ((i, n.index), n.score))
        .chain(
            backward
                .iter()
                .enumerate()
                .map(|(j, n)| ((n.index, j), n.score)),
        );
    for (pair, score) in pairs {
        merged
            .entry(pair)
            .and_modify(|s| *s = s.max(score))
            .or_insert(score);
    }
    let kept = merged
        .into_iter()
        .filter(|&(_, score)| score >= cfg.threshold)
        .map(|((src, tgt), score)| Alignment { src, tgt, score })
        .collect();
    AlignmentSet::new(kept)
}
