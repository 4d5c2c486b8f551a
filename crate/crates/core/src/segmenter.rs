//! Over-segmentation of VAD timelines into candidate segments.
//!
//! Every contiguous run of speech intervals whose wall-clock span (first
//! start to last end, silences included) falls within the duration bounds
//! becomes a candidate. The miner later picks which candidates align.

use std::collections::HashSet;
use std::io::BufRead;

use crate::embed_store::{is_iso639_1, Segment, SegmentManifest};
use crate::error::{Error, Result};

pub const TIMELINE_HEADER: &str = "recording_id\tstart_ms\tend_ms";

/// Speech intervals of one recording, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VadTimeline {
    pub recording_id: String,
    pub intervals: Vec<(u64, u64)>,
}

impl VadTimeline {
    pub fn new(recording_id: impl Into<String>, intervals: Vec<(u64, u64)>) -> Result<Self> {
        let t = Self {
            recording_id: recording_id.into(),
            intervals,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.recording_id.is_empty() {
            return Err(Error::Validation(
                "timeline has an empty recording_id".into(),
            ));
        }
        for (i, &(s, e)) in self.intervals.iter().enumerate() {
            if e <= s {
                return Err(Error::Validation(format!(
                    "{}: interval {i} [{s}, {e}) is empty",
                    self.recording_id
                )));
            }
            if i > 0 && self.intervals[i - 1].1 > s {
                return Err(Error::Validation(format!(
                    "{}: interval {i} starts at {s} before the previous one ends at {}",
                    self.recording_id,
                    self.intervals[i - 1].1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DurationBounds {
    min_ms: u64,
    max_ms: u64,
}

impl DurationBounds {
    pub const DEFAULT_MIN_MS: u64 = 1_000;
    pub const DEFAULT_MAX_MS: u64 = 20_000;

    pub fn new(min_ms: u64, max_ms: u64) -> Result<Self> {
        if min_ms == 0 || min_ms >= max_ms {
            return Err(Error::Config(format!(
                "duration bounds need 0 < min < max, got [{min_ms}, {max_ms}]"
            )));
        }
        Ok(Self { min_ms, max_ms })
    }

    pub fn min_ms(&self) -> u64 {
        self.min_ms
    }

    pub fn max_ms(&self) -> u64 {
        self.max_ms
    }

    pub fn contains(&self, duration_ms: u64) -> bool {
        (self.min_ms..=self.max_ms).contains(&duration_ms)
    }
}

impl Default for DurationBounds {
    fn default() -> Self {
        Self {
            min_ms: Self::DEFAULT_MIN_MS,
            max_ms: Self::DEFAULT_MAX_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSegment {
    pub recording_id: String,
    pub first_interval: usize,
    pub last_interval: usize,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl CandidateSegment {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms
    }

    pub fn segment_id(&self) -> String {
        format!(
            "{}:{}:{}",
            self.recording_id, self.first_interval, self.last_interval
        )
    }
}

/// All contiguous interval runs whose span lies within `bounds`, ordered by
/// `(first_interval, last_interval)`.
pub fn generate_candidates(
    t: &VadTimeline,
    bounds: DurationBounds,
) -> Result<Vec<CandidateSegment>> {
    t.validate()?;
    let mut out = Vec::new();
    for (first, &(start, _)) in t.intervals.iter().enumerate() {
        for (last, &(_, end)) in t.intervals.iter().enumerate().skip(first) {
            let span = end - start;
            if span > bounds.max_ms {
                break;
            }
            if span >= bounds.min_ms {
                out.push(CandidateSegment {
                    recording_id: t.recording_id.clone(),
                    first_interval: first,
                    last_interval: last,
                    start_ms: start,
                    end_ms: end,
                });
            }
        }
    }
    Ok(out)
}

/// Parses timeline TSV rows `recording_id start_ms end_ms`. A leading
/// header line is optional. Rows of one recording must be contiguous.
pub fn read_timelines<R: BufRead>(reader: R) -> Result<Vec<VadTimeline>> {
    let mut timelines: Vec<VadTimeline> = Vec::new();
    let mut finished: HashSet<String> = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<timeline>", e))?;
        if line_no == 1 && line == TIMELINE_HEADER {
            continue;
        }
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
        let ms = |v: &str| {
            v.parse::<u64>()
                .map_err(|_| parse_err(format!("{v:?} is not a non-negative integer")))
        };
        let (start, end) = (ms(fields[1])?, ms(fields[2])?);
        let rec = fields[0];
        match timelines.last_mut() {
            Some(t) if t.recording_id == rec => t.intervals.push((start, end)),
            _ => {
                if finished.contains(rec) {
                    return Err(Error::Validation(format!(
                        "line {line_no}: recording {rec:?} is not contiguous"
                    )));
                }
                if let Some(prev) = timelines.last() {
                    finished.insert(prev.recording_id.clone());
                }
                timelines.push(VadTimeline {
                    recording_id: rec.to_string(),
                    intervals: vec![(start, end)],
                });
            }
        }
    }
    for t in &timelines {
        t.validate()?;
    }
    Ok(timelines)
}

/// Candidates of many recordings as a manifest with generated ids.
pub fn candidates_to_manifest(cands: &[CandidateSegment], lang: &str) -> Result<SegmentManifest> {
    if !is_iso639_1(lang) {
        return Err(Error::Config(format!(
            "lang {lang:?} is not a two-letter ISO-639-1 code"
        )));
    }
    SegmentManifest::new(
        cands
            .iter()
            .map(|c| Segment {
                segment_id: c.segment_id(),
                recording_id: c.recording_id.clone(),
                lang: lang.to_string(),
                start_ms: c.start_ms,
                end_ms: c.end_ms,
            })
            .collect(),
    )
}
