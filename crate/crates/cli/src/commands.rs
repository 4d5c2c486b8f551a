use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use gmine_core::postprocess::{self, AlignmentStats, LangPairMatrix};
use gmine_core::segmenter::{self, DurationBounds};
use gmine_core::{
    curate_eval_set, l2_normalize, load_embeddings, load_manifest, mine_with, remove_overlaps,
    select_threshold, sessions_from_alignments, similarity_search_error_with, AlignmentSet,
    MarginParams, MiningConfig, OverlapPolicy, SegmentManifest, UnitEmbeddingMatrix,
};

use crate::output::{write_atomic, write_or_stdout};
use crate::{
    AlignmentInput, Cli, Command, CurateArgs, EvaluateArgs, MineArgs, PostprocessArgs, SegmentArgs,
    SelectThresholdArgs, StatsArgs,
};

/// Failure of a subcommand: I/O problems exit 1, everything else exits 2.
#[derive(Debug)]
pub enum CliError {
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Core(gmine_core::Error),
    Usage(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Core(e) => e.kind(),
            CliError::Usage(_) => "usage",
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Io { path, source } => format!("{}: {source}", path.display()),
            CliError::Core(e) => e.to_string(),
            CliError::Usage(m) => m.clone(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } | CliError::Core(gmine_core::Error::Io { .. }) => 1,
            _ => 2,
        }
    }
}

impl From<gmine_core::Error> for CliError {
    fn from(e: gmine_core::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn require_inputs<'a>(paths: impl IntoIterator<Item = &'a PathBuf>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::Usage(format!(
                "input file {} does not exist",
                p.display()
            )));
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    let workers = match cli.workers {
        Some(0) => return Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| match cli.command {
        Command::Segment(a) => segment(a),
        Command::Mine(a) => mine(a),
        Command::Postprocess(a) => postprocess(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Stats(a) => stats(a),
        Command::SelectThreshold(a) => select(a),
        Command::Curate(a) => curate(a),
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::io(path, e))
}

fn unit_pool(
    emb: &Path,
    manifest: Option<&Path>,
) -> Result<(UnitEmbeddingMatrix, Option<SegmentManifest>)> {
    let m = load_embeddings(emb)?;
    let manifest = manifest.map(load_manifest).transpose()?;
    if let Some(man) = &manifest {
        man.check_pairing(&m)?;
    }
    Ok((l2_normalize(m)?, manifest))
}

fn segment(a: SegmentArgs) -> Result<()> {
    require_inputs([&a.timeline])?;
    let bounds = DurationBounds::new(a.min_ms, a.max_ms)?;
    let timelines = segmenter::read_timelines(open(&a.timeline)?)?;
    let mut candidates = Vec::new();
    for t in &timelines {
        candidates.extend(segmenter::generate_candidates(t, bounds)?);
    }
    let manifest = segmenter::candidates_to_manifest(&candidates, &a.lang)?;
    write_atomic(&a.out, |w| {
        manifest.write_to(w).map_err(|e| CliError::io(&a.out, e))
    })
}

fn mine(a: MineArgs) -> Result<()> {
    require_inputs([&a.src, &a.src_manifest, &a.tgt, &a.tgt_manifest])?;
    let cfg = MiningConfig::new(a.k, a.threshold)?;
    let (src, src_man) = unit_pool(&a.src, Some(&a.src_manifest))?;
    let (tgt, tgt_man) = unit_pool(&a.tgt, Some(&a.tgt_manifest))?;
    let set = mine_with(&src, &tgt, &cfg, &a.scan.options())?;
    let (src_man, tgt_man) = (src_man.unwrap(), tgt_man.unwrap());
    write_atomic(&a.out, |w| Ok(set.write_tsv(w, &src_man, &tgt_man)?))
}

struct LoadedAlignments {
    set: AlignmentSet,
    src: SegmentManifest,
    tgt: SegmentManifest,
}

fn load_alignments(alignments: &Path, src: &Path, tgt: &Path) -> Result<LoadedAlignments> {
    require_inputs([
        &alignments.to_path_buf(),
        &src.to_path_buf(),
        &tgt.to_path_buf(),
    ])?;
    let src = load_manifest(src)?;
    let tgt = load_manifest(tgt)?;
    let set = AlignmentSet::read_tsv(open(alignments)?, &src, &tgt)?;
    Ok(LoadedAlignments { set, src, tgt })
}

fn load_input(i: &AlignmentInput) -> Result<LoadedAlignments> {
    load_alignments(&i.alignments, &i.src_manifest, &i.tgt_manifest)
}

fn postprocess(a: PostprocessArgs) -> Result<()> {
    if let Some(p) = &a.exclude_sessions {
        require_inputs([p])?;
    }
    let policy = OverlapPolicy::new(a.overlap)?;
    let input = load_input(&a.input)?;
    let mut set = input.set;
    if let Some(p) = &a.exclude_sessions {
        let mut excluded = HashSet::new();
        for line in open(p)?.lines() {
            let line = line.map_err(|e| CliError::io(p, e))?;
            let id = line.trim();
            if !id.is_empty() {
                excluded.insert(id.to_string());
            }
        }
        set = postprocess::exclude_sessions(&set, &input.src, &input.tgt, &excluded)?;
    }
    let kept = remove_overlaps(&set, &input.src, &policy)?;
    write_atomic(&a.out, |w| Ok(kept.write_tsv(w, &input.src, &input.tgt)?))
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    require_inputs([&a.src, &a.refs])?;
    let params = MarginParams::new(a.k)?;
    let (src, _) = unit_pool(&a.src, None)?;
    let (refs, _) = unit_pool(&a.refs, None)?;
    let err = similarity_search_error_with(&src, &refs, params, &a.scan.options())?;
    let out = a.out.as_deref();
    write_or_stdout(out, |w| {
        writeln!(w, "error_rate\t{err:.6}")
            .map_err(|e| CliError::io(out.unwrap_or(Path::new("<stdout>")), e))
    })
}

fn stats(a: StatsArgs) -> Result<()> {
    if a.alignments.len() != a.src_manifests.len() || a.alignments.len() != a.tgt_manifests.len() {
        return Err(CliError::Usage(format!(
            "got {} --alignments, {} --src-manifest and {} --tgt-manifest; counts must match",
            a.alignments.len(),
            a.src_manifests.len(),
            a.tgt_manifests.len()
        )));
    }
    require_inputs(
        a.alignments
            .iter()
            .chain(&a.src_manifests)
            .chain(&a.tgt_manifests),
    )?;
    let mut total: Option<AlignmentStats> = None;
    let mut matrix = LangPairMatrix::default();
    for ((ali, src), tgt) in a
        .alignments
        .iter()
        .zip(&a.src_manifests)
        .zip(&a.tgt_manifests)
    {
        let input = load_alignments(ali, src, tgt)?;
        let st = AlignmentStats::compute(&input.set, &input.src, &input.tgt)?;
        match total.as_mut() {
            Some(t) => t.merge(&st),
            None => total = Some(st),
        }
        matrix.add(&input.set, &input.src, &input.tgt)?;
    }
    let total = total.expect("at least one alignment file");
    write_atomic(&a.out, |w| {
        total.write_tsv(w).map_err(|e| CliError::io(&a.out, e))
    })?;
    if let Some(path) = &a.matrix_out {
        write_atomic(path, |w| {
            matrix.write_tsv(w).map_err(|e| CliError::io(path, e))
        })?;
    }
    Ok(())
}

fn select(a: SelectThresholdArgs) -> Result<()> {
    let input = load_input(&a.input)?;
    let choice = select_threshold(&input.set, &input.src, a.target_hours, &a.grid)?;
    let out = a.out.as_deref();
    write_or_stdout(out, |w| {
        let io = |e| CliError::io(out.unwrap_or(Path::new("<stdout>")), e);
        writeln!(w, "metric\tvalue").map_err(io)?;
        writeln!(w, "threshold\t{:.6}", choice.threshold).map_err(io)?;
        writeln!(w, "source_hours\t{:.6}", choice.hours).map_err(io)?;
        writeln!(w, "shortfall\t{}", choice.shortfall).map_err(io)
    })
}

fn curate(a: CurateArgs) -> Result<()> {
    let input = load_input(&a.input)?;
    let sessions = sessions_from_alignments(&input.set, &input.src)?;
    let curation = curate_eval_set(&sessions, a.target_size)?;
    let mut keep = vec![false; input.set.len()];
    for &i in &curation.selected {
        keep[i] = true;
    }
    let mut pos = 0;
    let selected = input.set.filter(|_| {
        pos += 1;
        keep[pos - 1]
    });
    write_atomic(&a.out, |w| {
        Ok(selected.write_tsv(w, &input.src, &input.tgt)?)
    })?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    let io = |e| CliError::io("<stdout>", e);
    writeln!(w, "metric\tvalue").map_err(io)?;
    writeln!(w, "sessions\t{}", curation.sessions.len()).map_err(io)?;
    writeln!(w, "samples\t{}", curation.selected.len()).map_err(io)?;
    writeln!(w, "shortfall\t{}", curation.shortfall).map_err(io)
}
