#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gmine_core::{
    save_embeddings, save_manifest, EmbeddingMatrix, Segment, SegmentManifest, UnitEmbeddingMatrix,
};

pub fn gmine() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_gmine"));
    c.env_remove("MINER_WORKERS");
    c
}

pub fn run(args: &[&str]) -> Output {
    gmine().args(args).output().expect("spawn gmine")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `m` as EMB1 and a manifest with ids `<prefix><i>` on one recording
/// per `per_recording` rows, each segment 1.5 s long.
pub fn write_pool(
    dir: &Path,
    name: &str,
    m: &UnitEmbeddingMatrix,
    lang: &str,
    per_recording: usize,
) -> (PathBuf, PathBuf) {
    let emb = dir.join(format!("{name}.emb"));
    let man = dir.join(format!("{name}.tsv"));
    save_embeddings(m.matrix(), &emb).unwrap();
    let entries = (0..m.rows())
        .map(|i| Segment {
            segment_id: format!("{name}{i}"),
            recording_id: format!("{name}-rec{}", i / per_recording),
            lang: lang.into(),
            start_ms: (i % per_recording) as u64 * 1000,
            end_ms: (i % per_recording) as u64 * 1000 + 1500,
        })
        .collect();
    save_manifest(&SegmentManifest::new(entries).unwrap(), &man).unwrap();
    (emb, man)
}

pub fn write_matrix(dir: &Path, name: &str, m: &EmbeddingMatrix) -> PathBuf {
    let p = dir.join(name);
    save_embeddings(m, &p).unwrap();
    p
}

pub fn cos(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

/// All-pairs margins straight from the definition: plain dot products and
/// fully sorted neighborhoods drawn from the opposite pool.
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

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, j| if v[j] > v[b] { j } else { b })
}
