//! Margin scoring of candidate pairs and the similarity-search error rate.
//!
//! The margin of a pair `(x, y)` is its cosine minus the mean cosine of `x`
//! to its `k` nearest targets and of `y` to its `k` nearest sources, each
//! halved:
//!
//! ```text
//! margin(x, y) = cos(x, y) - (sum_{z in NN_k(x)} cos(x, z) / 2k
//!                           + sum_{z in NN_k(y)} cos(y, z) / 2k)
//! ```
//!
//! Neighborhoods are taken from the opposite pool and are not filtered, so
//! `y` counts towards `NN_k(x)` when it is one of the nearest targets. The
//! divisor stays `2k` when a pool holds fewer than `k` rows.

use std::ops::Range;

use crate::embed_store::UnitEmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kernel::Widened;
use crate::knn::{self, check_pools, Neighbor, ScanOptions, TileSink};

/// Neighborhood size used when evaluating retrieval error rates.
pub const EVAL_K: usize = 4;
/// Neighborhood size used for mining.
pub const MINING_K: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarginParams {
    k: usize,
}

impl MarginParams {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("margin k must be at least 1".into()));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// Margin of a pair from its cosine and the two neighbor score lists.
pub fn margin_score(
    cos_xy: f64,
    nn_x_scores: &[f64],
    nn_y_scores: &[f64],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("margin k must be at least 1".into()));
    }
    if nn_x_scores.len() > k || nn_y_scores.len() > k {
        return Err(Error::Config(format!(
            "neighbor lists of length {} and {} exceed k = {k}",
            nn_x_scores.len(),
            nn_y_scores.len()
        )));
    }
    let sx: f64 = nn_x_scores.iter().sum();
    let sy: f64 = nn_y_scores.iter().sum();
    Ok(margin_from_sums(cos_xy, sx, sy, k))
}

#[inline]
pub(crate) fn margin_from_sums(cos_xy: f64, sum_x: f64, sum_y: f64, k: usize) -> f64 {
    let two_k = (2 * k) as f64;
    cos_xy - (sum_x / two_k + sum_y / two_k)
}

/// Best target per source row under the margin criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidates {
    /// `best[i].index` is the chosen target of source `i`; `best[i].score`
    /// its margin.
    pub best: Vec<Neighbor>,
}

/// Penalty sums for both pools: `src[i]` sums the cosines of source `i` to
/// its nearest targets, `tgt[j]` those of target `j` to its nearest sources.
pub(crate) struct NeighborSums {
    pub src: Vec<f64>,
    pub tgt: Vec<f64>,
}

pub(crate) fn neighbor_sums(
    src: &Widened,
    tgt: &Widened,
    k: usize,
    opts: &ScanOptions,
) -> Result<NeighborSums> {
    let (fwd, bwd) = knn::cross_knn_widened(src, tgt, k, opts)?;
    Ok(NeighborSums {
        src: (0..fwd.rows()).map(|i| fwd.score_sum(i)).collect(),
        tgt: (0..bwd.rows()).map(|j| bwd.score_sum(j)).collect(),
    })
}

struct ArgmaxSink<'a> {
    sums: &'a NeighborSums,
    k: usize,
    offset: usize,
    rows: Vec<Neighbor>,
    cols: Option<Vec<Neighbor>>,
}

const UNSET: Neighbor = Neighbor {
    index: usize::MAX,
    score: f64::NEG_INFINITY,
};

impl TileSink for ArgmaxSink<'_> {
    fn visit(&mut self, rows: Range<usize>, cols: Range<usize>, tile: &[f64]) {
        let ncols = cols.len();
        for (r, scores) in rows.zip(tile.chunks_exact(ncols)) {
            let sx = self.sums.src[r];
            let best = &mut self.rows[r - self.offset];
            for (c, &cos) in cols.clone().zip(scores) {
                let m = margin_from_sums(cos, sx, self.sums.tgt[c], self.k);
                let cand = Neighbor { index: c, score: m };
                if cand.outranks(best) {
                    *best = cand;
                }
                if let Some(col_best) = self.cols.as_mut() {
                    let cand = Neighbor { index: r, score: m };
                    if cand.outranks(&col_best[c]) {
                        col_best[c] = cand;
                    }
                }
            }
        }
    }
}

/// Margin argmax over the full opposite pool, for source rows and, when
/// `both` is set, for target rows too.
pub(crate) fn margin_argmax(
    src: &Widened,
    tgt: &Widened,
    sums: &NeighborSums,
    k: usize,
    both: bool,
    opts: &ScanOptions,
) -> (Vec<Neighbor>, Option<Vec<Neighbor>>) {
    let sinks = knn::scan(src, tgt, opts, |rows| ArgmaxSink {
        sums,
        k,
        offset: rows.start,
        rows: vec![UNSET; rows.len()],
        cols: both.then(|| vec![UNSET; tgt.rows]),
    });
    let mut forward = Vec::with_capacity(src.rows);
    let mut backward: Option<Vec<Neighbor>> = None;
    for s in sinks {
        forward.extend(s.rows);
        if let Some(cols) = s.cols {
            match backward.as_mut() {
                None => backward = Some(cols),
                Some(acc) => {
                    for (a, c) in acc.iter_mut().zip(cols) {
                        if c.outranks(a) {
                            *a = c;
                        }
                    }
                }
            }
        }
    }
    (forward, backward)
}

/// For every source row, the target maximizing the margin (ties toward
/// the lower target index). One direction only.
pub fn score_pairs(
    src: &UnitEmbeddingMatrix,
    tgt: &UnitEmbeddingMatrix,
    params: MarginParams,
) -> Result<ScoredCandidates> {
    score_pairs_with(src, tgt, params, &ScanOptions::default())
}

pub fn score_pairs_with(
    src: &UnitEmbeddingMatrix,
    tgt: &UnitEmbeddingMatrix,
    params: MarginParams,
    opts: &ScanOptions,
) -> Result<ScoredCandidates> {
    check_pools(src, tgt)?;
    check_pools(tgt, src)?;
    let ws = Widened::new(src);
    let wt = Widened::new(tgt);
    let sums = neighbor_sums(&ws, &wt, params.k, opts)?;
    let (best, _) = margin_argmax(&ws, &wt, &sums, params.k, false, opts);
    Ok(ScoredCandidates { best })
}

/// Fraction of source rows whose margin-best reference is not the
/// reference at the same position.
pub fn similarity_search_error(
    src: &UnitEmbeddingMatrix,
    refs: &UnitEmbeddingMatrix,
    params: MarginParams,
) -> Result<f64> {
    similarity_search_error_with(src, refs, params, &ScanOptions::default())
}

pub fn similarity_search_error_with(
    src: &UnitEmbeddingMatrix,
    refs: &UnitEmbeddingMatrix,
    params: MarginParams,
    opts: &ScanOptions,
) -> Result<f64> {
    if src.rows() != refs.rows() {
        return Err(Error::Config(format!(
            "source has {} rows but references have {}",
            src.rows(),
            refs.rows()
        )));
    }
    let scored = score_pairs_with(src, refs, params, opts)?;
    let errors = scored
        .best
        .iter()
        .enumerate()
        .filter(|(i, n)| n.index != *i)
        .count();
    Ok(errors as f64 / src.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed_store::{l2_normalize, EmbeddingMatrix};
    use crate::synth::{basis, planted_pools, random_unit};

    fn unit(rows: &[&[f32]]) -> UnitEmbeddingMatrix {
        l2_normalize(EmbeddingMatrix::from_rows(rows).unwrap()).unwrap()
    }

    /// All-pairs margins from first principles: plain dot products, full
    /// sorts for the neighborhoods.
    fn brute_margins(
        src: &UnitEmbeddingMatrix,
        tgt: &UnitEmbeddingMatrix,
        k: usize,
    ) -> Vec<Vec<f64>> {
        let cos = |a: &[f32], b: &[f32]| -> f64 {
            a.iter()
                .zip(b)
                .map(|(&x, &y)| f64::from(x) * f64::from(y))
                .sum()
        };
        let top_sum = |mut v: Vec<f64>| -> f64 {
            v.sort_by(|a, b| b.total_cmp(a));
            v.iter().take(k).sum()
        };
        let sx: Vec<f64> = (0..src.rows())
            .map(|i| {
                top_sum(
                    (0..tgt.rows())
                        .map(|j| cos(src.row(i), tgt.row(j)))
                        .collect(),
                )
            })
            .collect();
        let sy: Vec<f64> = (0..tgt.rows())
            .map(|j| {
                top_sum(
                    (0..src.rows())
                        .map(|i| cos(tgt.row(j), src.row(i)))
                        .collect(),
                )
            })
            .collect();
        (0..src.rows())
            .map(|i| {
                (0..tgt.rows())
                    .map(|j| {
                        cos(src.row(i), tgt.row(j))
                            - sx[i] / (2 * k) as f64
                            - sy[j] / (2 * k) as f64
                    })
                    .collect()
            })
            .collect()
    }

    fn brute_argmax(m: &[f64]) -> usize {
        let mut best = 0;
        for (j, &v) in m.iter().enumerate() {
            if v > m[best] {
                best = j;
            }
        }
        best
    }

    #[test]
    fn hand_evaluated_margin() {
        let m = margin_score(0.9, &[0.5; 4], &[0.7; 4], 4).unwrap();
        assert!((m - 0.3).abs() < 1e-12);
    }

    #[test]
    fn zero_neighbors_leave_cosine() {
        assert_eq!(margin_score(0.42, &[0.0; 3], &[0.0; 3], 3).unwrap(), 0.42);
    }

    #[test]
    fn saturated_neighborhoods_cancel() {
        let s = 0.8125;
        assert_eq!(margin_score(s, &[s; 4], &[s; 4], 4).unwrap(), 0.0);
    }

    #[test]
    fn short_neighborhoods_keep_two_k() {
        let m = margin_score(1.0, &[1.0], &[1.0], 4).unwrap();
        assert_eq!(m, 1.0 - (1.0 / 8.0 + 1.0 / 8.0));
    }

    #[test]
    fn rejects_zero_k_and_long_lists() {
        assert!(matches!(
            margin_score(0.5, &[], &[], 0),
            Err(Error::Config(_))
        ));
        assert!(margin_score(0.5, &[0.1, 0.2], &[], 1).is_err());
        assert!(MarginParams::new(0).is_err());
    }

    #[test]
    fn positive_scaling_scales_margin() {
        let (c, nx, ny) = (0.6, [0.5, 0.25, 0.125], [0.75, 0.5, 0.0]);
        let base = margin_score(c, &nx, &ny, 3).unwrap();
        let scaled = margin_score(4.0 * c, &nx.map(|v| 4.0 * v), &ny.map(|v| 4.0 * v), 3).unwrap();
        assert_eq!(scaled, 4.0 * base);
    }

    #[test]
    fn recovers_planted_permutation() {
        let p = planted_pools(32, 8, 0.02, 0.99, 0.9, 3).unwrap();
        let scored = score_pairs(&p.src, &p.tgt, MarginParams::new(4).unwrap()).unwrap();
        for (i, n) in scored.best.iter().enumerate() {
            assert_eq!(n.index, p.image[i], "row {i}");
        }
    }

    #[test]
    fn orthonormal_pools_match_brute_force() {
        let b = basis(3, 3);
        let scored = score_pairs(&b, &b, MarginParams::new(2).unwrap()).unwrap();
        let brute = brute_margins(&b, &b, 2);
        for (i, n) in scored.best.iter().enumerate() {
            assert_eq!(n.index, i);
            assert_eq!(n.index, brute_argmax(&brute[i]));
            // neighbors of each basis row: itself (1) and one zero
            assert!((n.score - 0.5).abs() < 1e-12);
            assert!((n.score - brute[i][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn single_pair_pools() {
        let a = unit(&[&[0.6, 0.8]]);
        let b = unit(&[&[1.0, 0.0]]);
        let k = 3;
        let scored = score_pairs(&a, &b, MarginParams::new(k).unwrap()).unwrap();
        let cos = scored_cos(&a, &b);
        let want = cos - (cos / 6.0 + cos / 6.0);
        assert_eq!(scored.best[0].index, 0);
        assert!((scored.best[0].score - want).abs() < 1e-12);
    }

    fn scored_cos(a: &UnitEmbeddingMatrix, b: &UnitEmbeddingMatrix) -> f64 {
        a.row(0)
            .iter()
            .zip(b.row(0))
            .map(|(&x, &y)| f64::from(x) * f64::from(y))
            .sum()
    }

    #[test]
    fn score_pairs_matches_brute_force_on_random_pools() {
        for seed in 0..20u64 {
            let src = random_unit(5 + seed as usize, 6, seed);
            let tgt = random_unit(9, 6, 100 + seed);
            let k = 1 + (seed as usize % 5);
            let scored = score_pairs_with(
                &src,
                &tgt,
                MarginParams::new(k).unwrap(),
                &ScanOptions::square(3),
            )
            .unwrap();
            let brute = brute_margins(&src, &tgt, k);
            for (i, n) in scored.best.iter().enumerate() {
                assert_eq!(n.index, brute_argmax(&brute[i]));
                assert!((n.score - brute[i][n.index]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn error_rate_cases() {
        let p = MarginParams::new(EVAL_K).unwrap();
        let b = basis(4, 4);
        assert_eq!(similarity_search_error(&b, &b, p).unwrap(), 0.0);

        // source 3 duplicates reference 1
        let refs = basis(4, 6);
        let mut rows: Vec<Vec<f32>> = (0..4).map(|i| refs.row(i).to_vec()).collect();
        rows[3] = refs.row(1).to_vec();
        let src =
            UnitEmbeddingMatrix::from_unit(EmbeddingMatrix::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(similarity_search_error(&src, &refs, p).unwrap(), 0.25);
    }

    #[test]
    fn error_rate_requires_paired_rows() {
        let a = random_unit(3, 4, 1);
        let b = random_unit(4, 4, 2);
        assert!(matches!(
            similarity_search_error(&a, &b, MarginParams::new(4).unwrap()),
            Err(Error::Config(_))
        ));
    }
}
