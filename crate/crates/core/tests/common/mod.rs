#![allow(dead_code)]

use gmine_core::{NeighborTable, UnitEmbeddingMatrix};

/// Plain sequential cosine of two unit rows.
pub fn cos(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// All-pairs margin matrix computed directly from its definition.
pub fn brute_margins(
    src: &UnitEmbeddingMatrix,
    tgt: &UnitEmbeddingMatrix,
    k: usize,
) -> Vec<Vec<f64>> {
    let cosines: Vec<Vec<f64>> = (0..src.rows())
        .map(|i| {
            (0..tgt.rows())
                .map(|j| cos(src.row(i), tgt.row(j)))
                .collect()
        })
        .collect();
    let top_sum = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| b.total_cmp(a));
        v.iter().take(k).sum()
    };
    let sx: Vec<f64> = cosines.iter().map(|r| top_sum(r.clone())).collect();
    let sy: Vec<f64> = (0..tgt.rows())
        .map(|j| top_sum(cosines.iter().map(|r| r[j]).collect()))
        .collect();
    let two_k = (2 * k) as f64;
    cosines
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.iter()
                .enumerate()
                .map(|(j, c)| c - sx[i] / two_k - sy[j] / two_k)
                .collect()
        })
        .collect()
}

/// Bitwise equality of two neighbor tables.
pub fn same_bits(a: &NeighborTable, b: &NeighborTable) -> bool {
    a.k() == b.k()
        && a.width() == b.width()
        && a.rows() == b.rows()
        && (0..a.rows()).all(|i| {
            a.row(i)
                .iter()
                .zip(b.row(i))
                .all(|(x, y)| x.index == y.index && x.score.to_bits() == y.score.to_bits())
        })
}

pub fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
}
