//! Overlap removal, duration statistics, threshold selection and
//! evaluation-set curation over mined alignments.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufWriter, Write};

use rayon::prelude::*;

use crate::embed_store::SegmentManifest;
use crate::error::{Error, Result};
use crate::miner::{resolve, AlignmentSet};

const MS_PER_HOUR: f64 = 3_600_000.0;

/// Candidate thresholds scanned by [`select_threshold`] by default.
pub const DEFAULT_THRESHOLD_GRID: [f64; 4] = [1.06, 1.07, 1.08, 1.09];
pub const DEFAULT_TARGET_HOURS: f64 = 1000.0;
pub const DEFAULT_EVAL_SIZE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapPolicy {
    mutual_fraction: f64,
}

impl OverlapPolicy {
    pub const DEFAULT_FRACTION: f64 = 0.20;

    pub fn new(mutual_fraction: f64) -> Result<Self> {
        if !(mutual_fraction > 0.0 && mutual_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "overlap fraction {mutual_fraction} is outside (0, 1]"
            )));
        }
        Ok(Self { mutual_fraction })
    }

    pub fn mutual_fraction(&self) -> f64 {
        self.mutual_fraction
    }

    /// True when the spans overlap by more than the fraction of both.
    pub fn conflicts(&self, a: (u64, u64), b: (u64, u64)) -> bool {
        let overlap = a.1.min(b.1).saturating_sub(a.0.max(b.0));
        if overlap == 0 {
            return false;
        }
        let overlap = overlap as f64;
        overlap > self.mutual_fraction * (a.1 - a.0) as f64
            && overlap > self.mutual_fraction * (b.1 - b.0) as f64
    }
}

impl Default for OverlapPolicy {
    fn default() -> Self {
        Self {
            mutual_fraction: Self::DEFAULT_FRACTION,
        }
    }
}

/// Kept source spans of one recording, keyed by start.
#[derive(Default)]
struct KeptSpans {
    spans: BTreeSet<(u64, u64)>,
    longest: u64,
}

impl KeptSpans {
    fn conflicts(&self, span: (u64, u64), policy: &OverlapPolicy) -> bool {
        let lo = span.0.saturating_sub(self.longest);
        self.spans
            .range((lo, 0)..(span.1, 0))
            .any(|&kept| policy.conflicts(kept, span))
    }

    fn insert(&mut self, span: (u64, u64)) {
        self.longest = self.longest.max(span.1 - span.0);
        self.spans.insert(span);
    }
}

/// Greedy overlap filter on the source side. Walking alignments from best
/// to worst, an alignment is dropped when its source span conflicts with
/// an already kept span of the same recording.
pub fn remove_overlaps(
    a: &AlignmentSet,
    src: &SegmentManifest,
    policy: &OverlapPolicy,
) -> Result<AlignmentSet> {
    type Member = (usize, (u64, u64));
    let mut groups: BTreeMap<&str, Vec<Member>> = BTreeMap::new();
    for (pos, al) in a.iter().enumerate() {
        let seg = resolve(src, al.src, "source")?;
        groups
            .entry(seg.recording_id.as_str())
            .or_default()
            .push((pos, (seg.start_ms, seg.end_ms)));
    }
    let mut keep = vec![false; a.len()];
    let kept: Vec<Vec<usize>> = groups
        .into_par_iter()
        .map(|(_, members)| {
            let mut spans = KeptSpans::default();
            let mut out = Vec::new();
            for (pos, span) in members {
                if !spans.conflicts(span, policy) {
                    spans.insert(span);
                    out.push(pos);
                }
            }
            out
        })
        .collect();
    for pos in kept.into_iter().flatten() {
        keep[pos] = true;
    }
    let mut i = 0;
    Ok(a.filter(|_| {
        i += 1;
        keep[i - 1]
    }))
}

/// Total source duration of the alignments in milliseconds.
pub fn source_duration_ms(a: &AlignmentSet, src: &SegmentManifest) -> Result<u64> {
    a.iter()
        .map(|al| resolve(src, al.src, "source").map(|s| s.duration_ms()))
        .sum()
}

/// Total source duration of the alignments in hours.
pub fn duration_stats(a: &AlignmentSet, src: &SegmentManifest) -> Result<f64> {
    Ok(ms_to_hours(source_duration_ms(a, src)?))
}

pub fn ms_to_hours(ms: u64) -> f64 {
    ms as f64 / MS_PER_HOUR
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdChoice {
    pub threshold: f64,
    /// Source hours retained at `threshold`.
    pub hours: f64,
    /// Set when no grid value retains `target_hours`.
    pub shortfall: bool,
}

/// Highest grid threshold whose retained source duration still reaches
/// `target_hours`; the grid minimum with `shortfall` set if none does.
pub fn select_threshold(
    a: &AlignmentSet,
    src: &SegmentManifest,
    target_hours: f64,
    grid: &[f64],
) -> Result<ThresholdChoice> {
    if grid.is_empty() {
        return Err(Error::Config("threshold grid is empty".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "threshold grid must be finite and strictly ascending".into(),
        ));
    }
    if target_hours.is_nan() || target_hours < 0.0 {
        return Err(Error::Config(format!(
            "target hours {target_hours} is negative"
        )));
    }
    let durations: Vec<(f64, u64)> = a
        .iter()
        .map(|al| resolve(src, al.src, "source").map(|s| (al.score, s.duration_ms())))
        .collect::<Result<_>>()?;
    let hours_at = |t: f64| {
        ms_to_hours(
            durations
                .iter()
                .filter(|(score, _)| *score >= t)
                .map(|(_, ms)| ms)
                .sum(),
        )
    };
    for &t in grid.iter().rev() {
        let hours = hours_at(t);
        if hours >= target_hours {
            return Ok(ThresholdChoice {
                threshold: t,
                hours,
                shortfall: false,
            });
        }
    }
    Ok(ThresholdChoice {
        threshold: grid[0],
        hours: hours_at(grid[0]),
        shortfall: true,
    })
}

/// A session with the mean score of its member alignments.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionScore {
    pub session_id: String,
    pub mean_score: f64,
    /// Positions of the member alignments in their set.
    pub members: Vec<usize>,
}

impl SessionScore {
    pub fn sample_count(&self) -> usize {
        self.members.len()
    }
}

/// Groups alignments by the recording of their source segment.
pub fn sessions_from_alignments(
    a: &AlignmentSet,
    src: &SegmentManifest,
) -> Result<Vec<SessionScore>> {
    let mut groups: BTreeMap<&str, (f64, Vec<usize>)> = BTreeMap::new();
    for (pos, al) in a.iter().enumerate() {
        let seg = resolve(src, al.src, "source")?;
        let g = groups.entry(seg.recording_id.as_str()).or_default();
        g.0 += al.score;
        g.1.push(pos);
    }
    Ok(groups
        .into_iter()
        .map(|(id, (sum, members))| SessionScore {
            session_id: id.to_string(),
            mean_score: sum / members.len() as f64,
            members,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curation {
    /// Member ids of the selected sessions, session by session.
    pub selected: Vec<usize>,
    pub sessions: Vec<String>,
    /// Set when all sessions together hold fewer than the target.
    pub shortfall: bool,
}

/// Takes whole sessions in decreasing mean score (ties by session id) until
/// at least `target_size` samples are selected.
pub fn curate_eval_set(sessions: &[SessionScore], target_size: usize) -> Result<Curation> {
    if target_size == 0 {
        return Err(Error::Config("target size must be at least 1".into()));
    }
    let mut order: Vec<&SessionScore> = sessions.iter().filter(|s| s.sample_count() > 0).collect();
    order.sort_by(|a, b| {
        b.mean_score
            .total_cmp(&a.mean_score)
            .then_with(|| a.session_id.cmp(&b.session_id))
    });
    let mut out = Curation {
        selected: Vec::new(),
        sessions: Vec::new(),
        shortfall: false,
    };
    for s in order {
        if out.selected.len() >= target_size {
            break;
        }
        out.selected.extend_from_slice(&s.members);
        out.sessions.push(s.session_id.clone());
    }
    out.shortfall = out.selected.len() < target_size;
    Ok(out)
}

/// Drops alignments whose source or target segment belongs to one of the
/// excluded recordings.
pub fn exclude_sessions(
    a: &AlignmentSet,
    src: &SegmentManifest,
    tgt: &SegmentManifest,
    excluded: &HashSet<String>,
) -> Result<AlignmentSet> {
    for al in a.iter() {
        resolve(src, al.src, "source")?;
        resolve(tgt, al.tgt, "target")?;
    }
    Ok(a.filter(|al| {
        !excluded.contains(&src.entries()[al.src].recording_id)
            && !excluded.contains(&tgt.entries()[al.tgt].recording_id)
    }))
}

/// Summary metrics of one alignment set.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentStats {
    pub alignments: usize,
    pub source_ms: u64,
    pub target_ms: u64,
    pub min_score: Option<f64>,
    pub max_score: Option<f64>,
    pub mean_score: Option<f64>,
}

impl AlignmentStats {
    pub fn compute(a: &AlignmentSet, src: &SegmentManifest, tgt: &SegmentManifest) -> Result<Self> {
        let mut target_ms = 0;
        for al in a.iter() {
            target_ms += resolve(tgt, al.tgt, "target")?.duration_ms();
        }
        let scores = a.iter().map(|al| al.score);
        Ok(Self {
            alignments: a.len(),
            source_ms: source_duration_ms(a, src)?,
            target_ms,
            min_score: scores.clone().reduce(f64::min),
            max_score: scores.clone().reduce(f64::max),
            mean_score: (!a.is_empty()).then(|| scores.sum::<f64>() / a.len() as f64),
        })
    }

    pub fn merge(&mut self, other: &Self) {
        let total = self.alignments + other.alignments;
        self.mean_score = match (self.mean_score, other.mean_score) {
            (Some(x), Some(y)) => {
                Some((x * self.alignments as f64 + y * other.alignments as f64) / total as f64)
            }
            (x, y) => x.or(y),
        };
        self.alignments = total;
        self.source_ms += other.source_ms;
        self.target_ms += other.target_ms;
        self.min_score = opt_fold(self.min_score, other.min_score, f64::min);
        self.max_score = opt_fold(self.max_score, other.max_score, f64::max);
    }

    /// `metric\tvalue` TSV.
    pub fn write_tsv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
        writeln!(w, "metric\tvalue")?;
        writeln!(w, "alignments\t{}", self.alignments)?;
        writeln!(w, "source_ms\t{}", self.source_ms)?;
        writeln!(w, "source_hours\t{:.6}", ms_to_hours(self.source_ms))?;
        writeln!(w, "target_ms\t{}", self.target_ms)?;
        writeln!(w, "target_hours\t{:.6}", ms_to_hours(self.target_ms))?;
        writeln!(w, "min_score\t{}", opt(self.min_score))?;
        writeln!(w, "max_score\t{}", opt(self.max_score))?;
        writeln!(w, "mean_score\t{}", opt(self.mean_score))?;
        w.flush()
    }
}

fn opt_fold(a: Option<f64>, b: Option<f64>, f: fn(f64, f64) -> f64) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(f(x, y)),
        (x, y) => x.or(y),
    }
}

/// Source hours per `(source lang, target lang)` pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LangPairMatrix {
    cells: BTreeMap<(String, String), u64>,
}

impl LangPairMatrix {
    pub fn add(
        &mut self,
        a: &AlignmentSet,
        src: &SegmentManifest,
        tgt: &SegmentManifest,
    ) -> Result<()> {
        for al in a.iter() {
            let s = resolve(src, al.src, "source")?;
            let t = resolve(tgt, al.tgt, "target")?;
            *self
                .cells
                .entry((s.lang.clone(), t.lang.clone()))
                .or_default() += s.duration_ms();
        }
        Ok(())
    }

    pub fn hours(&self, src_lang: &str, tgt_lang: &str) -> Option<f64> {
        self.cells
            .get(&(src_lang.to_string(), tgt_lang.to_string()))
            .map(|&ms| ms_to_hours(ms))
    }

    /// Matrix TSV: one row per source language, one column per target
    /// language, `-` where no alignment exists.
    pub fn write_tsv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let src_langs: BTreeSet<&str> = self.cells.keys().map(|(s, _)| s.as_str()).collect();
        let tgt_langs: BTreeSet<&str> = self.cells.keys().map(|(_, t)| t.as_str()).collect();
        let mut w = BufWriter::new(writer);
        write!(w, "src\\tgt")?;
        for t in &tgt_langs {
            write!(w, "\t{t}")?;
        }
        writeln!(w)?;
        for s in &src_langs {
            write!(w, "{s}")?;
            for t in &tgt_langs {
                match self.hours(s, t) {
                    Some(h) => write!(w, "\t{h:.3}")?,
                    None => write!(w, "\t-")?,
                }
            }
            writeln!(w)?;
        }
        w.flush()
    }
}
