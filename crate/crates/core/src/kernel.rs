//! Blocked dot-product kernel.
//!
//! Every dot product, whatever tile or block it is computed in, follows the
//! same arithmetic: products are accumulated into `LANES` f64 partial sums
//! (lane `l` takes coordinates `d` with `d % LANES == l` over the largest
//! multiple of `LANES`), the lanes are reduced by a fixed pairwise tree, and
//! the remaining coordinates are added sequentially. No fused multiply-add
//! is used, so SIMD and scalar paths produce identical bits.

use crate::embed_store::UnitEmbeddingMatrix;

pub(crate) const LANES: usize = 8;

/// Row-major f64 copy of a unit matrix, used as kernel input.
#[derive(Debug, Clone)]
pub(crate) struct Widened {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Widened {
    pub fn new(m: &UnitEmbeddingMatrix) -> Self {
        let data = m.matrix().data().iter().map(|&v| f64::from(v)).collect();
        Self {
            rows: m.rows(),
            dim: m.dim(),
            data,
        }
    }

    pub fn block(&self, rows: std::ops::Range<usize>) -> &[f64] {
        &self.data[rows.start * self.dim..rows.end * self.dim]
    }
}

#[inline(always)]
fn reduce(acc: &[f64; LANES]) -> f64 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// Reference dot product; the tile kernel reproduces it bit for bit.
#[cfg(test)]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let body = a.len() / LANES * LANES;
    let mut acc = [0.0f64; LANES];
    for (ca, cb) in a[..body]
        .chunks_exact(LANES)
        .zip(b[..body].chunks_exact(LANES))
    {
        for l in 0..LANES {
            acc[l] = ca[l].mul_add(cb[l], acc[l]);
        }
    }
    let mut s = reduce(&acc);
    for d in body..a.len() {
        s += a[d] * b[d];
    }
    s
}

#[inline(always)]
fn load(row: &[f64], d: usize) -> [f64; LANES] {
    // SAFETY: callers only pass `d + LANES <= row.len()`.
    unsafe { *(row.as_ptr().add(d) as *const [f64; LANES]) }
}

#[inline(always)]
fn micro<const MR: usize, const NR: usize>(
    a: &[f64],
    b: &[f64],
    dim: usize,
    out: &mut [f64],
    out_stride: usize,
) {
    let a_rows: [&[f64]; MR] = std::array::from_fn(|i| &a[i * dim..(i + 1) * dim]);
    let b_rows: [&[f64]; NR] = std::array::from_fn(|j| &b[j * dim..(j + 1) * dim]);
    let body = dim / LANES * LANES;
    let mut acc = [[[0.0f64; LANES]; NR]; MR];
    let mut d = 0;
    while d < body {
        let av: [[f64; LANES]; MR] = std::array::from_fn(|i| load(a_rows[i], d));
        for j in 0..NR {
            let bv = load(b_rows[j], d);
            for i in 0..MR {
                for l in 0..LANES {
                    acc[i][j][l] = av[i][l].mul_add(bv[l], acc[i][j][l]);
                }
            }
        }
        d += LANES;
    }
    for i in 0..MR {
        for j in 0..NR {
            let mut s = reduce(&acc[i][j]);
            for t in body..dim {
                s += a_rows[i][t] * b_rows[j][t];
            }
            out[i * out_stride + j] = s;
        }
    }
}

#[inline(always)]
fn tile_impl(a: &[f64], b: &[f64], dim: usize, out: &mut [f64]) {
    const MR: usize = 4;
    const NR: usize = 4;
    let rows = a.len() / dim;
    let cols = b.len() / dim;
    let rows_main = rows / MR * MR;
    let cols_main = cols / NR * NR;
    let mut i = 0;
    while i < rows {
        let mr = if i < rows_main { MR } else { 1 };
        let a_blk = &a[i * dim..(i + mr) * dim];
        let mut j = 0;
        while j < cols {
            let nr = if j < cols_main { NR } else { 1 };
            let b_blk = &b[j * dim..(j + nr) * dim];
            let o = &mut out[i * cols + j..];
            match (mr, nr) {
                (MR, NR) => micro::<MR, NR>(a_blk, b_blk, dim, o, cols),
                (MR, _) => micro::<MR, 1>(a_blk, b_blk, dim, o, cols),
                (_, NR) => micro::<1, NR>(a_blk, b_blk, dim, o, cols),
                _ => micro::<1, 1>(a_blk, b_blk, dim, o, cols),
            }
            j += nr;
        }
        i += mr;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,fma")]
unsafe fn tile_avx512(a: &[f64], b: &[f64], dim: usize, out: &mut [f64]) {
    tile_impl(a, b, dim, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn tile_avx2(a: &[f64], b: &[f64], dim: usize, out: &mut [f64]) {
    tile_impl(a, b, dim, out)
}

/// Fills `out` (row-major, `a_rows x b_rows`) with all dot products between
/// the rows of `a` and the rows of `b`.
pub(crate) fn tile(a: &[f64], b: &[f64], dim: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), (a.len() / dim) * (b.len() / dim));
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx512f") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU feature was detected at runtime.
            return unsafe { tile_avx512(a, b, dim, out) };
        }
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: as above.
            return unsafe { tile_avx2(a, b, dim, out) };
        }
    }
    tile_impl(a, b, dim, out)
}
