//! Exact k-nearest-neighbor search by cosine similarity.
//!
//! Queries and corpus are unit matrices, so cosine is a dot product. The
//! score matrix is produced tile by tile (see [`crate::kernel`]) and never
//! materialized. Query blocks are split into contiguous stripes, one per
//! worker of the current rayon pool. Neighbor lists are ordered by score
//! descending, then corpus index ascending; this is a total order, so the
//! result does not depend on block sizes, worker count or merge order.

use std::cmp::Ordering;
use std::ops::Range;

use rayon::prelude::*;

use crate::embed_store::UnitEmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kernel::{self, Widened};

/// Tiling of the score matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanOptions {
    /// Query rows per tile.
    pub block_rows: usize,
    /// Corpus rows per tile.
    pub block_cols: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            block_rows: 512,
            block_cols: 16,
        }
    }
}

impl ScanOptions {
    pub fn square(block: usize) -> Self {
        Self {
            block_rows: block,
            block_cols: block,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.block_rows == 0 || self.block_cols == 0 {
            return Err(Error::Config("block sizes must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub score: f64,
}

impl Neighbor {
    /// Ranking order: higher score first, then lower index.
    #[inline]
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.index.cmp(&other.index))
    }

    #[inline]
    pub(crate) fn outranks(&self, other: &Self) -> bool {
        self.score > other.score || (self.score == other.score && self.index < other.index)
    }
}

/// Per-query neighbor lists of equal length `min(k, corpus rows)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    k: usize,
    width: usize,
    items: Vec<Neighbor>,
}

impl NeighborTable {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Length of every row.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn rows(&self) -> usize {
        self.items.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[Neighbor] {
        &self.items[i * self.width..(i + 1) * self.width]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[Neighbor]> {
        self.items.chunks_exact(self.width.max(1))
    }

    /// Sum of the neighbor scores of row `i`.
    pub fn score_sum(&self, i: usize) -> f64 {
        self.row(i).iter().map(|n| n.score).sum()
    }
}

/// Bounded best-first lists for a contiguous range of rows.
#[derive(Debug, Clone)]
pub(crate) struct TopKTable {
    width: usize,
    len: Vec<usize>,
    items: Vec<Neighbor>,
}

impl TopKTable {
    pub fn new(rows: usize, width: usize) -> Self {
        Self {
            width,
            len: vec![0; rows],
            items: vec![
                Neighbor {
                    index: usize::MAX,
                    score: f64::NEG_INFINITY
                };
                rows * width
            ],
        }
    }

    #[inline]
    pub fn offer(&mut self, row: usize, cand: Neighbor) {
        let w = self.width;
        let len = self.len[row];
        let slot = &mut self.items[row * w..(row + 1) * w];
        if len == w {
            if !cand.outranks(&slot[w - 1]) {
                return;
            }
        } else {
            self.len[row] = len + 1;
        }
        let mut pos = len.min(w - 1);
        while pos > 0 && cand.outranks(&slot[pos - 1]) {
            slot[pos] = slot[pos - 1];
            pos -= 1;
        }
        slot[pos] = cand;
    }

    pub fn merge(&mut self, other: &TopKTable) {
        for row in 0..self.len.len() {
            for n in other.row(row) {
                self.offer(row, *n);
            }
        }
    }

    fn row(&self, row: usize) -> &[Neighbor] {
        &self.items[row * self.width..row * self.width + self.len[row]]
    }
}

/// Receives consecutive tiles of the score matrix.
pub(crate) trait TileSink: Send {
    fn visit(&mut self, rows: Range<usize>, cols: Range<usize>, tile: &[f64]);
}

/// Visits every tile of `a x b^T`. Rows of `a` are split into contiguous
/// stripes processed in parallel; the sinks are returned in stripe order.
pub(crate) fn scan<S, F>(a: &Widened, b: &Widened, opts: &ScanOptions, make: F) -> Vec<S>
where
    S: TileSink,
    F: Fn(Range<usize>) -> S + Sync,
{
    let row_blocks = a.rows.div_ceil(opts.block_rows);
    let stripes = rayon::current_num_threads().min(row_blocks).max(1);
    (0..stripes)
        .into_par_iter()
        .map(|s| {
            let first = s * row_blocks / stripes;
            let last = (s + 1) * row_blocks / stripes;
            let rows = first.saturating_mul(opts.block_rows).min(a.rows)
                ..last.saturating_mul(opts.block_rows).min(a.rows);
            let mut sink = make(rows.clone());
            let mut buf = vec![
                0.0f64;
                opts.block_rows.min(a.rows.max(1))
                    * opts.block_cols.min(b.rows.max(1))
            ];
            let mut r0 = rows.start;
            while r0 < rows.end {
                let r1 = r0.saturating_add(opts.block_rows).min(rows.end);
                let a_blk = a.block(r0..r1);
                let mut c0 = 0;
                while c0 < b.rows {
                    let c1 = c0.saturating_add(opts.block_cols).min(b.rows);
                    let out = &mut buf[..(r1 - r0) * (c1 - c0)];
                    kernel::tile(a_blk, b.block(c0..c1), a.dim, out);
                    sink.visit(r0..r1, c0..c1, out);
                    c0 = c1;
                }
                r0 = r1;
            }
            sink
        })
        .collect()
}

pub(crate) fn check_pools(a: &UnitEmbeddingMatrix, b: &UnitEmbeddingMatrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Config(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    if b.rows() == 0 {
        return Err(Error::Config("corpus is empty".into()));
    }
    Ok(())
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok(())
}

struct RowTopK {
    offset: usize,
    table: TopKTable,
}

impl TileSink for RowTopK {
    fn visit(&mut self, rows: Range<usize>, cols: Range<usize>, tile: &[f64]) {
        let ncols = cols.len();
        for (r, scores) in rows.zip(tile.chunks_exact(ncols)) {
            for (c, &score) in cols.clone().zip(scores) {
                self.table
                    .offer(r - self.offset, Neighbor { index: c, score });
            }
        }
    }
}

struct CrossTopK {
    rows: RowTopK,
    cols: TopKTable,
}

impl TileSink for CrossTopK {
    fn visit(&mut self, rows: Range<usize>, cols: Range<usize>, tile: &[f64]) {
        self.rows.visit(rows.clone(), cols.clone(), tile);
        let ncols = cols.len();
        for (r, scores) in rows.zip(tile.chunks_exact(ncols)) {
            for (c, &score) in cols.clone().zip(scores) {
                self.cols.offer(c, Neighbor { index: r, score });
            }
        }
    }
}

fn finish(k: usize, width: usize, tables: impl IntoIterator<Item = TopKTable>) -> NeighborTable {
    let mut items = Vec::new();
    for t in tables {
        debug_assert!(t.len.iter().all(|&l| l == width));
        items.extend(t.items);
    }
    NeighborTable { k, width, items }
}

/// Exact top-`k` corpus rows by cosine for every query row.
pub fn knn(
    queries: &UnitEmbeddingMatrix,
    corpus: &UnitEmbeddingMatrix,
    k: usize,
) -> Result<NeighborTable> {
    knn_with(queries, corpus, k, &ScanOptions::default())
}

pub fn knn_with(
    queries: &UnitEmbeddingMatrix,
    corpus: &UnitEmbeddingMatrix,
    k: usize,
    opts: &ScanOptions,
) -> Result<NeighborTable> {
    check_pools(queries, corpus)?;
    check_k(k)?;
    opts.validate()?;
    let width = k.min(corpus.rows());
    let a = Widened::new(queries);
    let b = Widened::new(corpus);
    let sinks = scan(&a, &b, opts, |rows| RowTopK {
        offset: rows.start,
        table: TopKTable::new(rows.len(), width),
    });
    Ok(finish(k, width, sinks.into_iter().map(|s| s.table)))
}

/// Neighbor tables in both directions from a single pass over the score
/// matrix: `a` rows against `b`, and `b` rows against `a`.
pub fn cross_knn(
    a: &UnitEmbeddingMatrix,
    b: &UnitEmbeddingMatrix,
    k: usize,
    opts: &ScanOptions,
) -> Result<(NeighborTable, NeighborTable)> {
    check_pools(a, b)?;
    check_pools(b, a)?;
    check_k(k)?;
    opts.validate()?;
    let wa = Widened::new(a);
    let wb = Widened::new(b);
    cross_knn_widened(&wa, &wb, k, opts)
}

pub(crate) fn cross_knn_widened(
    a: &Widened,
    b: &Widened,
    k: usize,
    opts: &ScanOptions,
) -> Result<(NeighborTable, NeighborTable)> {
    let width_ab = k.min(b.rows);
    let width_ba = k.min(a.rows);
    let sinks = scan(a, b, opts, |rows| CrossTopK {
        rows: RowTopK {
            offset: rows.start,
            table: TopKTable::new(rows.len(), width_ab),
        },
        cols: TopKTable::new(b.rows, width_ba),
    });
    let mut row_tables = Vec::with_capacity(sinks.len());
    let mut cols: Option<TopKTable> = None;
    for s in sinks {
        row_tables.push(s.rows.table);
        match cols.as_mut() {
            None => cols = Some(s.cols),
            Some(acc) => acc.merge(&s.cols),
        }
    }
    let forward = finish(k, width_ab, row_tables);
    let backward = finish(k, width_ba, cols);
    Ok((forward, backward))
}

/// Reference implementation: scores every pair with a plain sequential
/// f64 sum and sorts the whole row.
pub fn knn_oracle(
    queries: &UnitEmbeddingMatrix,
    corpus: &UnitEmbeddingMatrix,
    k: usize,
) -> Result<NeighborTable> {
    check_pools(queries, corpus)?;
    check_k(k)?;
    let width = k.min(corpus.rows());
    let mut items = Vec::with_capacity(queries.rows() * width);
    for qi in 0..queries.rows() {
        let q = queries.row(qi);
        let mut all: Vec<Neighbor> = (0..corpus.rows())
            .map(|ci| {
                let c = corpus.row(ci);
                let mut score = 0.0f64;
                for d in 0..q.len() {
                    score += f64::from(q[d]) * f64::from(c[d]);
                }
                Neighbor { index: ci, score }
            })
            .collect();
        all.sort_by(Neighbor::rank_cmp);
        items.extend_from_slice(&all[..width]);
    }
    Ok(NeighborTable { k, width, items })
}
