//! Seeded synthetic pools for tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embed_store::{l2_normalize, EmbeddingMatrix, UnitEmbeddingMatrix};

fn gaussian_row(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let row: Vec<f32> = (0..dim).map(|_| normal(rng) as f32).collect();
        if row.iter().any(|&v| v != 0.0) {
            return row;
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normalized(rows: Vec<Vec<f32>>, dim: usize) -> UnitEmbeddingMatrix {
    let n = rows.len();
    let data = rows.into_iter().flatten().collect();
    l2_normalize(EmbeddingMatrix::new(n, dim, data).expect("finite synthetic data"))
        .expect("non-zero synthetic rows")
}

fn unit_vec(mut v: Vec<f32>) -> Vec<f32> {
    let n = v
        .iter()
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    for x in &mut v {
        *x = (f64::from(*x) / n) as f32;
    }
    v
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// Isotropic random unit rows.
pub fn random_unit(rows: usize, dim: usize, seed: u64) -> UnitEmbeddingMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows).map(|_| gaussian_row(&mut rng, dim)).collect();
    normalized(data, dim)
}

/// Two pools with a known one-to-one correspondence.
#[derive(Debug, Clone)]
pub struct PlantedPools {
    pub src: UnitEmbeddingMatrix,
    pub tgt: UnitEmbeddingMatrix,
    /// `tgt` row holding the noisy copy of `src` row `i`.
    pub image: Vec<usize>,
}

/// Sylvester Hadamard row `i` of order `n` (a power of two), unnormalized.
fn hadamard_row(n: usize, i: usize) -> Vec<f32> {
    (0..n)
        .map(|j| {
            if (i & j).count_ones().is_multiple_of(2) {
                1.0
            } else {
                -1.0
            }
        })
        .collect()
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian rows.
fn random_rotation(rng: &mut ChaCha8Rng, dim: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while q.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        for u in &q {
            let p: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= p * y;
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

/// Low-coherence source rows: signed basis vectors, then signed normalized
/// Hadamard rows (cosine to the basis is `1/sqrt(dim)`), randomly rotated.
fn coded_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f32>> {
    let mut code = Vec::with_capacity(rows);
    for i in 0..dim {
        let mut e = vec![0.0f32; dim];
        e[i] = 1.0;
        code.push(e);
    }
    if dim.is_power_of_two() {
        for i in 0..dim {
            code.push(unit_vec(hadamard_row(dim, i)));
        }
    }
    let negated: Vec<Vec<f32>> = code
        .iter()
        .map(|v| v.iter().map(|x| -x).collect())
        .collect();
    code.extend(negated);
    code.truncate(rows);
    let rot = random_rotation(rng, dim);
    code.into_iter()
        .map(|v| {
            let r: Vec<f32> = rot
                .iter()
                .map(|q| {
                    q.iter()
                        .zip(&v)
                        .map(|(a, &b)| a * f64::from(b))
                        .sum::<f64>() as f32
                })
                .collect();
            unit_vec(r)
        })
        .collect()
}

fn code_capacity(dim: usize) -> usize {
    if dim.is_power_of_two() {
        4 * dim
    } else {
        2 * dim
    }
}

/// Builds `tgt` as a shuffled, noise-perturbed copy of `src`.
///
/// Planted pairs have cosine above `planted_min`; every other source/target
/// pair stays below `distractor_max`. Source rows come from a low-coherence
/// code when `rows` fits in one (maximum cosine `1/sqrt(dim)`), otherwise
/// from rejection sampling. Returns `None` if generation does not converge.
pub fn planted_pools(
    rows: usize,
    dim: usize,
    noise: f64,
    planted_min: f64,
    distractor_max: f64,
    seed: u64,
) -> Option<PlantedPools> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const MAX_TRIES: usize = 100_000;

    let coherence = if dim.is_power_of_two() && rows > 2 * dim {
        1.0 / (dim as f64).sqrt()
    } else {
        0.0
    };
    let src: Vec<Vec<f32>> = if rows <= code_capacity(dim) && coherence < distractor_max {
        coded_rows(&mut rng, rows, dim)
    } else {
        let mut src: Vec<Vec<f32>> = Vec::with_capacity(rows);
        let mut tries = 0;
        while src.len() < rows {
            tries += 1;
            if tries > MAX_TRIES * rows.max(1) {
                return None;
            }
            let s = unit_vec(gaussian_row(&mut rng, dim));
            if src.iter().all(|p| cos(&s, p) < distractor_max) {
                src.push(s);
            }
        }
        src
    };

    let mut copies: Vec<Vec<f32>> = Vec::with_capacity(rows);
    for (i, s) in src.iter().enumerate() {
        let mut tries = 0;
        let t = loop {
            tries += 1;
            if tries > MAX_TRIES {
                return None;
            }
            let t = unit_vec(
                s.iter()
                    .map(|&v| v + (noise * normal(&mut rng)) as f32)
                    .collect(),
            );
            let clean = cos(s, &t) > planted_min
                && src
                    .iter()
                    .enumerate()
                    .all(|(j, o)| j == i || cos(o, &t) < distractor_max);
            if clean {
                break t;
            }
        };
        copies.push(t);
    }

    let mut image: Vec<usize> = (0..rows).collect();
    for i in (1..rows).rev() {
        let j = rng.random_range(0..=i);
        image.swap(i, j);
    }
    let mut tgt = vec![Vec::new(); rows];
    for (i, t) in copies.into_iter().enumerate() {
        tgt[image[i]] = t;
    }
    Some(PlantedPools {
        src: normalized(src, dim),
        tgt: normalized(tgt, dim),
        image,
    })
}

/// First `rows` standard basis vectors of `R^dim`.
pub fn basis(rows: usize, dim: usize) -> UnitEmbeddingMatrix {
    assert!(rows <= dim);
    let mut data = vec![0.0f32; rows * dim];
    for i in 0..rows {
        data[i * dim + i] = 1.0;
    }
    UnitEmbeddingMatrix::from_unit(EmbeddingMatrix::new(rows, dim, data).unwrap()).unwrap()
}
