//! Batch front end: interleave → augment → bpe-train → tokenize → stats.
//!
//! Every subcommand reads files, directories (searched recursively for
//! `*.abc`) or a manifest, processes files on a worker pool, and emits
//! results in input order.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use abctok::augment::{augment_with_keys, KeySignature};
use abctok::bpe::{self, BpeVocab, TokenId};
use abctok::interleave::to_interleaved;
use abctok::metrics::{self, CorpusReport, Coverage};
use abctok::model::{DEFAULT_BPE_CONTEXT, DEFAULT_BPE_VOCAB_SIZE};
use abctok::parser::split_tunes;
use abctok::patchers::{detokenize, frame, segment_spans, tokenize};
use abctok::{normalize, parse_tune, AbcTune, PatchConfig, PatchMethod, PatchSequence, SymbolId};
use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

#[derive(Parser, Debug)]
#[command(
    name = "abctok",
    version,
    about = "Tokenize multitrack ABC-notation corpora"
)]
struct Cli {
    /// Worker threads; 0 uses one per core.
    #[arg(long, global = true, env = "ABCTOK_WORKERS")]
    workers: Option<usize>,
    /// File of `key = value` defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Exit with status 1 if any input fails.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Inputs {
    /// Input files or directories.
    paths: Vec<PathBuf>,
    /// Newline-separated list of inputs, relative to the manifest's directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PatchArgs {
    /// byte, bar, bar-stream, line-stream or bpe.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    patch_length: Option<usize>,
    /// BPE vocabulary file.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Maximum BPE ids per sequence.
    #[arg(long)]
    context: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rewrite tunes in bar-interleaved form.
    Interleave {
        #[command(flatten)]
        inputs: Inputs,
        /// Write one file per input here instead of to stdout.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Transpose tunes into several major keys.
    Augment {
        #[command(flatten)]
        inputs: Inputs,
        /// `all` or a comma-separated list such as `C,F#,Bb`.
        #[arg(long, default_value = "all")]
        keys: String,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Where to write the JSON report of skipped tunes.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train a BPE vocabulary.
    BpeTrain {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Train on all fifteen transpositions of each tune.
        #[arg(long)]
        augment: bool,
        /// Free-text provenance note stored in the vocabulary file.
        #[arg(long)]
        note: Option<String>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Emit one JSONL token record per input file.
    Tokenize {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        patch: PatchArgs,
        /// Add BOS and EOS rows.
        #[arg(long)]
        frame: bool,
    },
    /// Rebuild texts from JSONL token records.
    Detokenize {
        /// JSONL file; stdin when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Corpus statistics as JSON.
    Stats {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        patch: PatchArgs,
    },
    /// Bits per byte from per-document log-probabilities.
    Bpb {
        /// JSONL with `logprobs` and either `bytes` or `source` per line.
        #[arg(long)]
        logprobs: PathBuf,
    },
}

/// Bad flags, config or inputs; reported with exit status 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Default)]
struct FileConfig {
    method: Option<String>,
    patch_size: Option<usize>,
    patch_length: Option<usize>,
    context: Option<usize>,
    vocab_size: Option<usize>,
    workers: Option<usize>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = FileConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| usage(format!("{}:{}: {why}", path.display(), n + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected key = value"))?;
            let value = value.trim();
            let num = || {
                value
                    .parse::<usize>()
                    .map_err(|_| bad("expected an integer"))
            };
            match key.trim().replace('-', "_").as_str() {
                "method" => cfg.method = Some(value.to_string()),
                "patch_size" => cfg.patch_size = Some(num()?),
                "patch_length" => cfg.patch_length = Some(num()?),
                "context" => cfg.context = Some(num()?),
                "vocab_size" => cfg.vocab_size = Some(num()?),
                "workers" => cfg.workers = Some(num()?),
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy)]
enum Method {
    Patch(PatchMethod),
    Bpe,
}

impl FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("bpe") {
            return Ok(Method::Bpe);
        }
        s.parse()
            .map(Method::Patch)
            .map_err(|e| usage(format!("{e}")))
    }
}

/// A per-input failure. Failures are reported, not fatal, unless `--strict`.
#[derive(Debug, Clone, Serialize)]
struct Failure {
    source: String,
    error: String,
}

impl Failure {
    fn new(source: impl Into<String>, error: impl fmt::Display) -> Self {
        Failure {
            source: source.into(),
            error: format!("{error:#}"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PatchRecord {
    source: String,
    method: PatchMethod,
    patch_size: usize,
    patch_length: usize,
    framed: bool,
    truncated_bar_count: usize,
    dropped_patches: usize,
    patches: Vec<Vec<SymbolId>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BpeRecord {
    source: String,
    method: String,
    vocab_size: usize,
    context: usize,
    dropped_tokens: usize,
    ids: Vec<TokenId>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Record {
    Patch(PatchRecord),
    Bpe(BpeRecord),
}

struct Ctx<'a> {
    pool: ThreadPool,
    config: FileConfig,
    stdin: &'a mut dyn Read,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

/// Runs the CLI and returns the process exit status.
pub fn run<I, T>(
    args: I,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let out: &mut dyn Write = if e.use_stderr() { stderr } else { stdout };
            let _ = write!(out, "{}", e.render());
            return e.exit_code();
        }
    };
    let strict = cli.strict;
    match execute(cli, stdin, stdout, stderr) {
        Ok(failures) if failures.is_empty() => 0,
        Ok(failures) => {
            let report = serde_json::json!({ "skipped": failures });
            let _ = writeln!(stderr, "{report}");
            i32::from(strict)
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn execute(
    cli: Cli,
    stdin: &mut dyn Read,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<Vec<Failure>> {
    let config = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let workers = cli.workers.or(config.workers).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .context("building worker pool")?;
    let mut ctx = Ctx {
        pool,
        config,
        stdin,
        stdout,
        stderr,
    };
    match cli.command {
        Command::Interleave { inputs, out_dir } => {
            interleave(&mut ctx, &inputs, out_dir.as_deref())
        }
        Command::Augment {
            inputs,
            keys,
            out_dir,
            report,
        } => augment(
            &mut ctx,
            &inputs,
            &keys,
            out_dir.as_deref(),
            report.as_deref(),
        ),
        Command::BpeTrain {
            inputs,
            vocab_size,
            augment,
            note,
            out,
        } => bpe_train(&mut ctx, &inputs, vocab_size, augment, note, out.as_deref()),
        Command::Tokenize {
            inputs,
            patch,
            frame,
        } => tokenize_cmd(&mut ctx, &inputs, &patch, frame),
        Command::Detokenize {
            input,
            vocab,
            out_dir,
        } => detokenize_cmd(
            &mut ctx,
            input.as_deref(),
            vocab.as_deref(),
            out_dir.as_deref(),
        ),
        Command::Stats { inputs, patch } => stats(&mut ctx, &inputs, &patch),
        Command::Bpb { logprobs } => bpb_cmd(&mut ctx, &logprobs),
    }
}

fn expand(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if !path.is_dir() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry.with_context(|| format!("walking {}", path.display()))?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|e| e == "abc") {
            out.push(entry.into_path());
        }
    }
    Ok(())
}

fn collect_inputs(inputs: &Inputs) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if let Some(manifest) = &inputs.manifest {
        let text = fs::read_to_string(manifest)
            .with_context(|| format!("reading manifest {}", manifest.display()))?;
        let base = manifest.parent().unwrap_or(Path::new(""));
        for line in text.lines().map(str::trim) {
            if !line.is_empty() && !line.starts_with('#') {
                expand(&base.join(line), &mut out)?;
            }
        }
    }
    for path in &inputs.paths {
        expand(path, &mut out)?;
    }
    if out.is_empty() {
        return Err(usage("no input files; pass paths or --manifest"));
    }
    Ok(out)
}

fn label(path: &Path) -> String {
    path.display().to_string()
}

/// Reads and normalizes every input on the pool, keeping input order.
fn read_documents(pool: &ThreadPool, paths: &[PathBuf]) -> Vec<(String, Result<Vec<u8>>)> {
    pool.install(|| {
        paths
            .par_iter()
            .map(|p| {
                let text = fs::read(p)
                    .with_context(|| format!("reading {}", p.display()))
                    .map(|raw| normalize(&raw));
                (label(p), text)
            })
            .collect()
    })
}

/// Splits a document into tunes. Parse failures are labelled `path#n`,
/// counting tunes from 1.
fn parse_tunes(source: &str, text: &[u8]) -> Vec<(String, Result<AbcTune>)> {
    let spans = split_tunes(text);
    let many = spans.len() > 1;
    spans
        .into_iter()
        .enumerate()
        .map(|(i, span)| {
            let name = if many {
                format!("{source}#{}", i + 1)
            } else {
                source.to_string()
            };
            (
                name,
                parse_tune(span.slice(text)).map_err(anyhow::Error::from),
            )
        })
        .collect()
}

/// `source` re-rooted under `dir`, with root and `..` components removed.
fn output_path(dir: &Path, source: &str) -> PathBuf {
    let rel: PathBuf = Path::new(source)
        .components()
        .filter(|c| matches!(c, Component::Normal(_)))
        .collect();
    dir.join(rel)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn interleave(ctx: &mut Ctx, inputs: &Inputs, out_dir: Option<&Path>) -> Result<Vec<Failure>> {
    let paths = collect_inputs(inputs)?;
    let docs = read_documents(&ctx.pool, &paths);
    let results: Vec<(String, Vec<u8>, Vec<Failure>)> = ctx.pool.install(|| {
        docs.into_par_iter()
            .map(|(source, text)| {
                let text = match text {
                    Ok(t) => t,
                    Err(e) => return (source.clone(), Vec::new(), vec![Failure::new(source, e)]),
                };
                let mut out = Vec::new();
                let mut failures = Vec::new();
                for (name, tune) in parse_tunes(&source, &text) {
                    match tune.and_then(|t| Ok(to_interleaved(&t)?)) {
                        Ok(bytes) => out.extend(bytes),
                        Err(e) => failures.push(Failure::new(name, e)),
                    }
                }
                (source, out, failures)
            })
            .collect()
    });
    let mut failures = Vec::new();
    for (source, bytes, errs) in results {
        failures.extend(errs);
        if bytes.is_empty() {
            continue;
        }
        match out_dir {
            Some(dir) => write_file(&output_path(dir, &source), &bytes)?,
            None => ctx.stdout.write_all(&bytes)?,
        }
    }
    Ok(failures)
}

fn parse_keys(list: &str) -> Result<Vec<KeySignature>> {
    if list.trim().eq_ignore_ascii_case("all") {
        return Ok(KeySignature::all_major());
    }
    list.split(',')
        .map(|k| {
            k.trim()
                .parse::<KeySignature>()
                .map_err(|e| usage(e.to_string()))
        })
        .collect()
}

/// Parsed tunes of every input, with their labels and owning input index.
struct TuneSet {
    tunes: Vec<AbcTune>,
    names: Vec<String>,
    owners: Vec<usize>,
    sources: Vec<String>,
    failures: Vec<Failure>,
}

fn load_tunes(pool: &ThreadPool, paths: &[PathBuf]) -> TuneSet {
    let docs = read_documents(pool, paths);
    let parsed: Vec<Vec<(String, Result<AbcTune>)>> = pool.install(|| {
        docs.par_iter()
            .map(|(source, text)| match text {
                Ok(t) => parse_tunes(source, t),
                Err(e) => vec![(source.clone(), Err(anyhow!("{e:#}")))],
            })
            .collect()
    });
    let mut set = TuneSet {
        tunes: Vec::new(),
        names: Vec::new(),
        owners: Vec::new(),
        sources: docs.into_iter().map(|(s, _)| s).collect(),
        failures: Vec::new(),
    };
    for (owner, tunes) in parsed.into_iter().enumerate() {
        for (name, tune) in tunes {
            match tune {
                Ok(t) => {
                    set.tunes.push(t);
                    set.names.push(name);
                    set.owners.push(owner);
                }
                Err(e) => set.failures.push(Failure::new(name, e)),
            }
        }
    }
    set
}

#[derive(Serialize)]
struct AugmentReport<'a> {
    keys: Vec<String>,
    tunes_in: usize,
    tunes_out: usize,
    skipped: &'a [Failure],
}

fn augment(
    ctx: &mut Ctx,
    inputs: &Inputs,
    keys: &str,
    out_dir: Option<&Path>,
    report: Option<&Path>,
) -> Result<Vec<Failure>> {
    let keys = parse_keys(keys)?;
    let paths = collect_inputs(inputs)?;
    let mut set = load_tunes(&ctx.pool, &paths);
    let augmented = ctx.pool.install(|| augment_with_keys(&set.tunes, &keys));
    for skip in &augmented.skipped {
        set.failures
            .push(Failure::new(set.names[skip.index].clone(), &skip.error));
    }

    // Group variants by (input, key), keeping input and key order.
    let mut groups: Vec<Vec<Vec<u8>>> = vec![vec![Vec::new(); keys.len()]; set.sources.len()];
    for ((index, key), tune) in augmented.origins.iter().zip(&augmented.tunes) {
        let k = keys.iter().position(|x| x == key).unwrap_or(0);
        groups[set.owners[*index]][k].extend_from_slice(tune.source_text());
    }
    for (source, per_key) in set.sources.iter().zip(&groups) {
        for (key, bytes) in keys.iter().zip(per_key) {
            if bytes.is_empty() {
                continue;
            }
            match out_dir {
                Some(dir) => {
                    let mut path = output_path(dir, source);
                    let stem = path
                        .file_stem()
                        .map(|s| s.to_string_lossy().into_owned())
                        .unwrap_or_default();
                    path.set_file_name(format!("{stem}_{}.abc", key.name()));
                    write_file(&path, bytes)?;
                }
                None => ctx.stdout.write_all(bytes)?,
            }
        }
    }

    let summary = AugmentReport {
        keys: keys.iter().map(|k| k.name()).collect(),
        tunes_in: set.tunes.len() + set.failures.len() - augmented.skipped.len(),
        tunes_out: augmented.tunes.len(),
        skipped: &set.failures,
    };
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    match (report, out_dir) {
        (Some(path), _) => write_file(path, json.as_bytes())?,
        (None, Some(dir)) => write_file(&dir.join("augment_report.json"), json.as_bytes())?,
        (None, None) => ctx.stderr.write_all(json.as_bytes())?,
    }
    Ok(set.failures)
}

fn bpe_train(
    ctx: &mut Ctx,
    inputs: &Inputs,
    vocab_size: Option<usize>,
    with_augment: bool,
    note: Option<String>,
    out: Option<&Path>,
) -> Result<Vec<Failure>> {
    let target = vocab_size
        .or(ctx.config.vocab_size)
        .unwrap_or(DEFAULT_BPE_VOCAB_SIZE);
    if target < 256 {
        return Err(usage(format!(
            "--vocab-size {target} is below the 256-byte alphabet"
        )));
    }
    let paths = collect_inputs(inputs)?;
    let (corpus, failures) = if with_augment {
        let mut set = load_tunes(&ctx.pool, &paths);
        let augmented = ctx
            .pool
            .install(|| augment_with_keys(&set.tunes, &KeySignature::all_major()));
        for skip in &augmented.skipped {
            set.failures
                .push(Failure::new(set.names[skip.index].clone(), &skip.error));
        }
        let texts: Vec<Vec<u8>> = augmented.tunes.iter().map(AbcTune::to_bytes).collect();
        (texts, set.failures)
    } else {
        let mut failures = Vec::new();
        let mut texts = Vec::new();
        for (source, text) in read_documents(&ctx.pool, &paths) {
            match text {
                Ok(t) => texts.push(t),
                Err(e) => failures.push(Failure::new(source, e)),
            }
        }
        (texts, failures)
    };
    if corpus.is_empty() {
        return Err(anyhow!("no trainable documents"));
    }
    let vocab = ctx.pool.install(|| bpe::train(&corpus, target))?;
    let mut provenance = vocab
        .provenance()
        .cloned()
        .context("trainer sets provenance")?;
    provenance.note = match (with_augment, note) {
        (true, Some(n)) => Some(format!("{n} (15-key augmented)")),
        (true, None) => Some("15-key augmented".to_string()),
        (false, n) => n,
    };
    let json = vocab.with_provenance(provenance).to_json()?;
    match out {
        Some(path) => write_file(path, json.as_bytes())?,
        None => ctx.stdout.write_all(json.as_bytes())?,
    }
    Ok(failures)
}

fn load_vocab(path: &Path) -> Result<BpeVocab> {
    let json = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    BpeVocab::from_json(&json).with_context(|| format!("loading vocabulary {}", path.display()))
}

fn resolve_method(ctx: &Ctx, patch: &PatchArgs) -> Result<Method> {
    patch
        .method
        .as_deref()
        .or(ctx.config.method.as_deref())
        .unwrap_or("bar-stream")
        .parse()
}

fn patch_config(ctx: &Ctx, patch: &PatchArgs, method: PatchMethod) -> Result<PatchConfig> {
    let defaults = PatchConfig::new(method);
    PatchConfig::with_sizes(
        method,
        patch
            .patch_size
            .or(ctx.config.patch_size)
            .unwrap_or(defaults.patch_size),
        patch
            .patch_length
            .or(ctx.config.patch_length)
            .unwrap_or(defaults.patch_length),
    )
    .map_err(|e| usage(e.to_string()))
}

fn context_size(ctx: &Ctx, patch: &PatchArgs) -> Result<usize> {
    match patch
        .context
        .or(ctx.config.context)
        .unwrap_or(DEFAULT_BPE_CONTEXT)
    {
        0 => Err(usage("--context must be positive")),
        n => Ok(n),
    }
}

/// Turns one normalized document into a JSONL record.
type Encoder = Box<dyn Fn(String, &[u8]) -> Result<String> + Sync>;

fn tokenize_cmd(
    ctx: &mut Ctx,
    inputs: &Inputs,
    patch: &PatchArgs,
    framed: bool,
) -> Result<Vec<Failure>> {
    let method = resolve_method(ctx, patch)?;
    let encoder: Encoder = match method {
        Method::Patch(m) => {
            let cfg = patch_config(ctx, patch, m)?;
            Box::new(move |source, text| {
                let mut seq = tokenize(text, &cfg);
                if framed {
                    seq = frame(&seq);
                }
                Ok(serde_json::to_string(&PatchRecord {
                    source,
                    method: cfg.method,
                    patch_size: cfg.patch_size,
                    patch_length: cfg.patch_length,
                    framed,
                    truncated_bar_count: seq.truncated_bar_count,
                    dropped_patches: seq.dropped_patches,
                    patches: seq.patches,
                })?)
            })
        }
        Method::Bpe => {
            let path = patch
                .vocab
                .as_deref()
                .ok_or_else(|| usage("--method bpe requires --vocab"))?;
            let vocab = load_vocab(path)?;
            let context = context_size(ctx, patch)?;
            Box::new(move |source, text| {
                let (ids, dropped_tokens) = bpe::cap_context(bpe::encode(text, &vocab), context);
                Ok(serde_json::to_string(&BpeRecord {
                    source,
                    method: "bpe".to_string(),
                    vocab_size: vocab.len(),
                    context,
                    dropped_tokens,
                    ids,
                })?)
            })
        }
    };
    let paths = collect_inputs(inputs)?;
    let docs = read_documents(&ctx.pool, &paths);
    let lines: Vec<Result<String, Failure>> = ctx.pool.install(|| {
        docs.into_par_iter()
            .map(|(source, text)| {
                text.and_then(|t| encoder(source.clone(), &t))
                    .map_err(|e| Failure::new(source, e))
            })
            .collect()
    });
    let mut failures = Vec::new();
    for line in lines {
        match line {
            Ok(l) => writeln!(ctx.stdout, "{l}")?,
            Err(f) => failures.push(f),
        }
    }
    Ok(failures)
}

fn decode_record(record: Record, vocab: Option<&BpeVocab>) -> Result<(String, Vec<u8>)> {
    match record {
        Record::Patch(r) => {
            let config = PatchConfig::with_sizes(r.method, r.patch_size, r.patch_length)?;
            let seq = PatchSequence {
                patches: r.patches,
                config,
                truncated_bar_count: r.truncated_bar_count,
                dropped_patches: r.dropped_patches,
            };
            Ok((r.source, detokenize(&seq)?))
        }
        Record::Bpe(r) => {
            let vocab = vocab.ok_or_else(|| anyhow!("bpe record needs --vocab"))?;
            Ok((r.source, bpe::decode(&r.ids, vocab)?))
        }
    }
}

fn detokenize_cmd(
    ctx: &mut Ctx,
    input: Option<&Path>,
    vocab: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<Vec<Failure>> {
    let vocab = vocab.map(load_vocab).transpose()?;
    let reader: Box<dyn BufRead + '_> = match input {
        Some(path) => Box::new(BufReader::new(
            fs::File::open(path).with_context(|| format!("opening {}", path.display()))?,
        )),
        None => Box::new(BufReader::new(&mut *ctx.stdin)),
    };
    let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
    let decoded: Vec<Result<(String, Vec<u8>), Failure>> = ctx.pool.install(|| {
        lines
            .par_iter()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, line)| {
                serde_json::from_str::<Record>(line)
                    .map_err(anyhow::Error::from)
                    .and_then(|r| decode_record(r, vocab.as_ref()))
                    .map_err(|e| Failure::new(format!("record {}", n + 1), e))
            })
            .collect()
    });
    let mut failures = Vec::new();
    for item in decoded {
        match item {
            Ok((source, bytes)) => match out_dir {
                Some(dir) => write_file(&output_path(dir, &source), &bytes)?,
                None => ctx.stdout.write_all(&bytes)?,
            },
            Err(f) => failures.push(f),
        }
    }
    Ok(failures)
}

#[derive(Serialize)]
struct StatsOutput {
    #[serde(flatten)]
    report: CorpusReport,
    /// Bars no longer than `patch_size`.
    bar_coverage: Coverage,
}

fn stats(ctx: &mut Ctx, inputs: &Inputs, patch: &PatchArgs) -> Result<Vec<Failure>> {
    let method = match resolve_method(ctx, patch)? {
        Method::Patch(m) => m,
        Method::Bpe => {
            return Err(usage(
                "stats takes a patch method; pass --vocab for BPE figures",
            ))
        }
    };
    let cfg = patch_config(ctx, patch, method)?;
    let vocab = patch.vocab.as_deref().map(load_vocab).transpose()?;
    let context = context_size(ctx, patch)?;
    let paths = collect_inputs(inputs)?;
    let mut failures = Vec::new();
    let mut texts = Vec::new();
    for (source, text) in read_documents(&ctx.pool, &paths) {
        match text {
            Ok(t) => texts.push(t),
            Err(e) => failures.push(Failure::new(source, e)),
        }
    }
    let report = ctx.pool.install(|| {
        metrics::corpus_stats_texts(&texts, &cfg, vocab.as_ref().map(|v| (v, context)))
    })?;
    let bar_coverage = metrics::coverage_of_lengths(
        texts.iter().flat_map(|t| {
            segment_spans(PatchMethod::Bar, t)
                .into_iter()
                .map(|s| s.len())
        }),
        cfg.patch_size,
    )?;
    serde_json::to_writer_pretty(
        &mut *ctx.stdout,
        &StatsOutput {
            report,
            bar_coverage,
        },
    )?;
    writeln!(ctx.stdout)?;
    Ok(failures)
}

#[derive(Deserialize)]
struct LogprobRecord {
    #[serde(default)]
    source: Option<String>,
    #[serde(default)]
    bytes: Option<usize>,
    logprobs: Vec<f64>,
}

#[derive(Serialize)]
struct DocumentBpb {
    source: String,
    bytes: usize,
    bpb: f64,
}

#[derive(Serialize)]
struct BpbOutput {
    documents: usize,
    total_bytes: usize,
    bits: f64,
    bpb: f64,
    per_document: Vec<DocumentBpb>,
}

fn bpb_cmd(ctx: &mut Ctx, path: &Path) -> Result<Vec<Failure>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut failures = Vec::new();
    let mut per_document = Vec::new();
    let mut all_logprobs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let name = format!("record {}", n + 1);
        let result = (|| -> Result<(String, usize, Vec<f64>)> {
            let rec: LogprobRecord = serde_json::from_str(line)?;
            let source = rec.source.clone().unwrap_or_else(|| name.clone());
            let bytes = match (rec.bytes, &rec.source) {
                (Some(b), _) => b,
                (None, Some(src)) => {
                    normalize(&fs::read(src).with_context(|| format!("reading {src}"))?).len()
                }
                (None, None) => return Err(anyhow!("record has neither `bytes` nor `source`")),
            };
            Ok((source, bytes, rec.logprobs))
        })()
        .and_then(|(source, bytes, lps)| {
            let value = metrics::bpb(&lps, bytes)?;
            Ok((
                DocumentBpb {
                    source,
                    bytes,
                    bpb: value,
                },
                lps,
            ))
        });
        match result {
            Ok((doc, lps)) => {
                all_logprobs.extend(lps);
                per_document.push(doc);
            }
            Err(e) => failures.push(Failure::new(name, e)),
        }
    }
    let total_bytes: usize = per_document.iter().map(|d| d.bytes).sum();
    let bpb = metrics::bpb(&all_logprobs, total_bytes)?;
    let out = BpbOutput {
        documents: per_document.len(),
        total_bytes,
        bits: bpb * total_bytes as f64,
        bpb,
        per_document,
    };
    serde_json::to_writer_pretty(&mut *ctx.stdout, &out)?;
    writeln!(ctx.stdout)?;
    Ok(failures)
}
