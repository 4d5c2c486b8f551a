//! Exact margin-based global mining of embedded segment pools.
//!
//! The pipeline: VAD timelines are over-segmented into candidate spans
//! ([`segmenter`]), candidate embeddings are loaded and normalized
//! ([`embed_store`]), both pools are searched exhaustively ([`knn`]),
//! pairs are scored by margin ([`margin`]) and mined in both directions
//! ([`miner`]), and the result is cleaned and summarized ([`postprocess`]).

pub mod embed_store;
pub mod error;
mod kernel;
pub mod knn;
pub mod margin;
pub mod miner;
pub mod postprocess;
pub mod segmenter;
pub mod synth;

pub use embed_store::{
    l2_normalize, load_embeddings, load_manifest, save_embeddings, save_manifest, EmbeddingMatrix,
    Segment, SegmentManifest, UnitEmbeddingMatrix,
};
pub use error::{Error, Result};
pub use knn::{cross_knn, knn, knn_oracle, knn_with, Neighbor, NeighborTable, ScanOptions};
pub use margin::{
    margin_score, score_pairs, score_pairs_with, similarity_search_error,
    similarity_search_error_with, MarginParams, ScoredCandidates, EVAL_K, MINING_K,
};
pub use miner::{mine, mine_with, Alignment, AlignmentSet, MiningConfig, DEFAULT_THRESHOLD};
pub use postprocess::{
    curate_eval_set, duration_stats, exclude_sessions, remove_overlaps, select_threshold,
    sessions_from_alignments, AlignmentStats, Curation, LangPairMatrix, OverlapPolicy,
    SessionScore, ThresholdChoice,
};
pub use segmenter::{generate_candidates, CandidateSegment, DurationBounds, VadTimeline};
