use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

use affect_eval::client::{
    complete_batch, BatchStats, ClientError, CompletionCache, CompletionRecord, DirCache, EndpointConfig, EndpointKind,
    HttpTransport, NoCache, PromptRow, API_KEY_ENV,
};
use affect_eval::config::{Config, ConfigError};
use affect_eval::corpus::{
    apply_split_manifest, interannotator_agreement, load_corpus, split, write_corpus, write_corpus_csv, AffectRecord,
    CorpusError, CorpusFormat, SplitAssignment, SplitName, SplitSpec,
};
use affect_eval::dimension::{parse_dimension_list, Dimension};
use affect_eval::jsonl::{open_input, open_output, read_lines, write_lines};
use affect_eval::metrics::{evaluate, MetricReport, MetricsError};
use affect_eval::mocksim::{mock_complete, synthetic_corpus};
use affect_eval::parser::{parse_run, read_predictions, write_predictions, ParsePolicy};
use affect_eval::prompting::{instruction_pairs, render_prompt, requested_dimensions, PromptError, ScoringRequest};
use affect_eval::protocol::{
    run, select_checkpoint, CandidateSet, NamedEndpoint, ProtocolError, ProtocolKind, ProtocolRun, ProtocolSettings,
    RunManifest,
};
use affect_eval::report::{comparison_table, TableMetric};

/// Evaluate language models on emotion-intensity scoring.
///
/// Stage commands read and write JSON-lines, so `prompt | infer | parse | eval`
/// reproduces `run`. Use `-` for stdin or stdout.
///
/// Exit status: 2 configuration error, 3 data error, 4 endpoint failure.
#[derive(Parser)]
#[command(name = "affect-eval", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a corpus (and optionally a config) and report problems.
    Validate(ValidateArgs),
    /// Write a seeded train/validation/test assignment.
    Split(SplitArgs),
    /// Render scoring prompts or instruction-tuning pairs.
    Prompt(PromptArgs),
    /// Obtain completions for a prompts file.
    Infer(InferArgs),
    /// Parse completions into score vectors.
    Parse(ParseArgs),
    /// Score predictions against gold labels.
    Eval(EvalArgs),
    /// Execute a full protocol run.
    Run(RunArgs),
    /// Choose the best candidate by macro CCC on validation predictions.
    Select(SelectArgs),
    /// Merge reports or run manifests into a comparison table.
    Report(ReportArgs),
    /// Generate a synthetic two-annotator corpus.
    Mock(MockArgs),
}

#[derive(Args)]
struct CorpusArgs {
    /// Corpus file (.csv, or .jsonl/.ndjson).
    #[arg(long)]
    corpus: PathBuf,
    /// Corpus layout: gold-only or two-annotator.
    #[arg(long, default_value = "gold-only")]
    format: CorpusFormat,
}

#[derive(Clone, Copy, ValueEnum)]
enum Part {
    Train,
    Validation,
    Test,
}

impl From<Part> for SplitName {
    fn from(p: Part) -> Self {
        match p {
            Part::Train => SplitName::Train,
            Part::Validation => SplitName::Validation,
            Part::Test => SplitName::Test,
        }
    }
}

#[derive(Args)]
struct SplitSizeArgs {
    /// Split seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Partition sizes as TRAIN,VALIDATION,TEST; defaults to the 706/176/295 proportions.
    #[arg(long, value_parser = parse_counts)]
    counts: Option<(usize, usize, usize)>,
}

impl SplitSizeArgs {
    fn spec(&self, n: usize) -> SplitSpec {
        match self.counts {
            Some((train, validation, test)) => SplitSpec {
                seed: self.seed,
                train,
                validation,
                test,
            },
            None => SplitSpec::scaled(n, self.seed),
        }
    }
}

#[derive(Args)]
struct PartArgs {
    /// Restrict to one partition of the split.
    #[arg(long, value_enum)]
    part: Option<Part>,
    /// Take the partition from a file written by `split` instead of recomputing it.
    #[arg(long)]
    split_manifest: Option<PathBuf>,
    #[command(flatten)]
    sizes: SplitSizeArgs,
}

#[derive(Args)]
struct EndpointArgs {
    /// `http(s)://host/v1` base URL or `mock:<distortion>`.
    #[arg(long)]
    endpoint: String,
    /// Model name sent to the endpoint.
    #[arg(long, default_value = "")]
    model: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long, default_value_t = 256)]
    max_output_tokens: u32,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    /// Maximum concurrent requests.
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    /// First retry delay in milliseconds.
    #[arg(long, default_value_t = 500)]
    backoff_ms: u64,
}

impl EndpointArgs {
    fn config(&self) -> EndpointConfig {
        EndpointConfig {
            api_key: api_key(),
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            timeout_secs: self.timeout,
            max_retries: self.max_retries,
            max_in_flight: self.max_in_flight,
            backoff_ms: self.backoff_ms,
            ..EndpointConfig::new(self.endpoint.clone(), self.model.clone())
        }
    }
}

#[derive(Args)]
struct ValidateArgs {
    /// Run configuration to check, including its corpus.
    #[arg(long, conflicts_with_all = ["corpus", "format"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "gold-only")]
    format: CorpusFormat,
    /// Also print inter-annotator agreement (two-annotator corpora).
    #[arg(long)]
    agreement: bool,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    sizes: SplitSizeArgs,
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
}

#[derive(Args)]
struct PromptArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    part: PartArgs,
    /// Emotions to request, comma-separated, or `emotions`.
    #[arg(long, default_value = "emotions")]
    emotions: String,
    /// Leave Valence and Arousal out of the prompt.
    #[arg(long)]
    no_dimensions: bool,
    /// Write {prompt, completion} training pairs instead of prompt rows.
    #[arg(long)]
    instructions: bool,
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    /// Prompt rows from `prompt`.
    #[arg(long, short, default_value = "-")]
    input: PathBuf,
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Completion cache directory; no caching when absent.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Gold corpus, required by mock endpoints.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "gold-only")]
    format: CorpusFormat,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long, short, default_value = "-")]
    input: PathBuf,
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
    /// Expected keys, comma-separated, or `all` / `emotions`.
    #[arg(long, default_value = "all")]
    dimensions: String,
    #[arg(long, default_value = "strict")]
    policy: ParsePolicy,
    /// Write parse statistics as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, short, default_value = "-")]
    predictions: PathBuf,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value = "all")]
    dimensions: String,
    /// Predictions with |x| <= epsilon count as zero.
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Write the report as JSON.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "ccc")]
    metric: TableMetric,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration; replaces every other run flag.
    #[arg(long, conflicts_with_all = ["corpus", "synthetic", "protocol", "endpoint", "held_out", "selection_dimensions"])]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "synthetic")]
    corpus: Option<PathBuf>,
    #[arg(long, default_value = "gold-only")]
    format: CorpusFormat,
    /// Use a synthetic corpus of this many records (seeded by --seed).
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long, default_value = "full")]
    protocol: ProtocolKind,
    /// Emotion withheld under leave-one-out.
    #[arg(long)]
    held_out: Option<Dimension>,
    /// Candidate endpoint as URL or NAME=URL; repeat to select among several.
    #[arg(long)]
    endpoint: Vec<String>,
    #[arg(long, default_value = "")]
    model: String,
    #[arg(long, default_value = "strict")]
    policy: ParsePolicy,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Dimensions used for checkpoint selection (defaults to the supervised set).
    #[arg(long)]
    selection_dimensions: Option<String>,
    #[command(flatten)]
    sizes: SplitSizeArgs,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Directory for manifest.json, report.json and stage files.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long, default_value = "ccc")]
    metric: TableMetric,
}

#[derive(Args)]
struct SelectArgs {
    /// Candidate predictions as NAME=PATH, in priority order.
    #[arg(long = "candidate", required = true)]
    candidates: Vec<String>,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    part: PartArgs,
    #[arg(long, default_value = "all")]
    dimensions: String,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
}

#[derive(Args)]
struct ReportArgs {
    /// Report or manifest files, optionally as NAME=PATH.
    #[arg(required = true)]
    inputs: Vec<String>,
    #[arg(long, default_value = "ccc")]
    metric: TableMetric,
    /// Add the gold-zero support column.
    #[arg(long)]
    count: bool,
    /// CSV instead of an aligned table.
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct MockArgs {
    #[arg(long, default_value_t = 1177)]
    records: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "two-annotator")]
    format: CorpusFormat,
    /// Output file; `-` writes CSV to stdout.
    #[arg(long, short, default_value = "-")]
    output: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Data(String),
    Endpoint(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Endpoint(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Endpoint(m) => m,
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Failure::Data(e.to_string())
            }
        }
    )*};
}

data_error!(
    CorpusError,
    MetricsError,
    PromptError,
    std::io::Error,
    affect_eval::Error,
    serde_json::Error
);

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Config(_) => Failure::Config(e.to_string()),
            ClientError::Auth(_) => Failure::Endpoint(e.to_string()),
        }
    }
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Config(_) => Failure::Config(e.to_string()),
            ProtocolError::Client(c) => c.into(),
            ProtocolError::Endpoint(_) => Failure::Endpoint(e.to_string()),
            ProtocolError::Corpus(CorpusError::CountMismatch { .. }) => Failure::Config(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Protocol(p) => p.into(),
            other => Failure::Config(other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn parse_counts(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [a, b, c] = parts.as_slice() else {
        return Err(format!("expected TRAIN,VALIDATION,TEST, got `{s}`"));
    };
    let n = |v: &str| v.parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((n(a)?, n(b)?, n(c)?))
}

fn api_key() -> Option<String> {
    std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty())
}

fn dimensions(list: &str) -> Result<Vec<Dimension>> {
    parse_dimension_list(list).map_err(|e| Failure::Config(e.to_string()))
}

fn cache_for(dir: Option<&Path>) -> Result<Box<dyn CompletionCache>> {
    Ok(match dir {
        Some(d) => Box::new(DirCache::new(d).map_err(|e| Failure::Config(format!("cache {}: {e}", d.display())))?),
        None => Box::new(NoCache),
    })
}

fn select_part(records: Vec<AffectRecord>, args: &PartArgs) -> Result<Vec<AffectRecord>> {
    let Some(part) = args.part else {
        return Ok(records);
    };
    let parts = match &args.split_manifest {
        Some(path) => {
            let manifest: Vec<SplitAssignment> = read_lines(open_input(path)?)?;
            apply_split_manifest(&records, &manifest)?
        }
        None => split(&records, &args.sizes.spec(records.len()))?,
    };
    Ok(parts.part(part.into()).to_vec())
}

fn load(path: &Path, format: CorpusFormat) -> Result<Vec<AffectRecord>> {
    load_corpus(path, format).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = open_output(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn print_stats(label: &str, s: &BatchStats) {
    eprintln!(
        "{label}: {} requests, {} cache hits, {} network calls, {} errors",
        s.requests, s.cache_hits, s.network_calls, s.errors
    );
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let (path, format, expected) = match &a.config {
        Some(cfg_path) => {
            let cfg = Config::load(cfg_path)?;
            cfg.protocol_run()?;
            (cfg.corpus.path.clone(), cfg.corpus.format, Some(cfg.split.total()))
        }
        None => (a.corpus.clone().expect("required by clap"), a.format, None),
    };
    let records = load(&path, format)?;
    if let Some(total) = expected.filter(|t| *t != records.len()) {
        return Err(Failure::Config(format!(
            "split sizes sum to {total} but the corpus has {} records",
            records.len()
        )));
    }
    println!("{} records, 0 errors", records.len());
    if a.agreement {
        let report = interannotator_agreement(&records)?;
        print!(
            "{}",
            comparison_table(&[("Agreement".into(), report)], TableMetric::Ccc, false).to_text()
        );
    }
    Ok(())
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let records = load(&a.corpus.corpus, a.corpus.format)?;
    let spec = a.sizes.spec(records.len());
    let parts = split(&records, &spec)?;
    write_lines(open_output(&a.output)?, &parts.manifest())?;
    eprintln!(
        "seed {}: {} train, {} validation, {} test",
        spec.seed,
        parts.train.len(),
        parts.validation.len(),
        parts.test.len()
    );
    Ok(())
}

fn cmd_prompt(a: PromptArgs) -> Result<()> {
    let records = select_part(load(&a.corpus.corpus, a.corpus.format)?, &a.part)?;
    let emotions = dimensions(&a.emotions)?;
    let include = !a.no_dimensions;
    let out = open_output(&a.output)?;
    if a.instructions {
        write_lines(out, &instruction_pairs(&records, &emotions, include)?)?;
    } else {
        let dims = requested_dimensions(&emotions, include);
        let rows = records
            .iter()
            .map(|r| {
                let req = ScoringRequest::new(r.text.clone(), emotions.clone(), include)?;
                Ok(PromptRow {
                    id: r.id.clone(),
                    prompt: render_prompt(&req)?,
                    dimensions: dims.clone(),
                })
            })
            .collect::<std::result::Result<Vec<_>, PromptError>>()?;
        write_lines(out, &rows)?;
    }
    Ok(())
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let rows: Vec<PromptRow> = read_lines(open_input(&a.input)?)?;
    let cfg = a.endpoint.config();
    cfg.validate()?;
    let (completions, stats) = match cfg.kind()? {
        EndpointKind::Mock(spec) => {
            let corpus = a
                .corpus
                .as_ref()
                .ok_or_else(|| Failure::Config("mock endpoints need --corpus for gold scores".into()))?;
            let records = load(corpus, a.format)?;
            let by_id: HashMap<&str, &AffectRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
            let mut out = Vec::with_capacity(rows.len());
            for row in &rows {
                let record = by_id
                    .get(row.id.as_str())
                    .ok_or_else(|| Failure::Data(format!("prompt id `{}` not in corpus", row.id)))?;
                out.extend(mock_complete(std::slice::from_ref(*record), &row.dimensions, &spec));
            }
            let stats = BatchStats {
                requests: out.len(),
                ..Default::default()
            };
            (out, stats)
        }
        EndpointKind::Http => {
            let cache = cache_for(a.cache_dir.as_deref())?;
            let prompts: Vec<(String, String)> = rows.iter().map(|r| (r.id.clone(), r.prompt.clone())).collect();
            complete_batch(&prompts, &cfg, cache.as_ref(), &HttpTransport::new(&cfg))?
        }
    };
    write_lines(open_output(&a.output)?, &completions)?;
    print_stats("infer", &stats);
    all_failed(&completions)
}

fn all_failed(completions: &[CompletionRecord]) -> Result<()> {
    match completions.first().and_then(|c| c.error.as_ref()) {
        Some(first) if completions.iter().all(|c| c.error.is_some()) => {
            Err(Failure::Endpoint(format!("every request failed; first error: {first}")))
        }
        _ => Ok(()),
    }
}

fn cmd_parse(a: ParseArgs) -> Result<()> {
    let completions: Vec<CompletionRecord> = read_lines(open_input(&a.input)?)?;
    let dims = dimensions(&a.dimensions)?;
    let (predictions, stats) = parse_run(&completions, &dims, a.policy);
    write_predictions(open_output(&a.output)?, &predictions)?;
    eprintln!(
        "parse: {} records, {} parsed, {} failed, {} imputed, {} clamped",
        stats.records, stats.parsed, stats.failed, stats.imputed, stats.clamped
    );
    for f in &stats.failures {
        log::info!("{}: {}", f.id, f.reason);
    }
    if let Some(path) = &a.stats {
        write_json(path, &stats)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let predictions = read_predictions(open_input(&a.predictions)?)?;
    let gold = load(&a.corpus.corpus, a.corpus.format)?;
    let report = evaluate(&predictions, &gold, &dimensions(&a.dimensions)?, a.epsilon)?;
    if let Some(path) = &a.output {
        write_json(path, &report)?;
    }
    print_report(&report, a.metric);
    Ok(())
}

fn print_report(report: &MetricReport, metric: TableMetric) {
    print!(
        "{}",
        comparison_table(&[("Model".into(), report.clone())], metric, true).to_text()
    );
    let show = |v: Option<f64>| v.map_or("--".into(), affect_eval::report::percent);
    println!(
        "n = {}, macro CCC {}, macro Pearson {}, macro zero-match F1 {}",
        report.n,
        show(report.macro_ccc),
        show(report.macro_pearson),
        show(report.macro_zero_f1)
    );
}

fn endpoint_arg(arg: &str, index: usize, model: &str) -> NamedEndpoint {
    let (name, url) = match arg.split_once('=') {
        Some((name, url)) if !name.contains(':') => (name.to_string(), url.to_string()),
        _ if index == 0 => ("model".to_string(), arg.to_string()),
        _ => (format!("candidate-{}", index + 1), arg.to_string()),
    };
    let config = EndpointConfig {
        api_key: api_key(),
        ..EndpointConfig::new(url, model)
    };
    NamedEndpoint::new(name, config)
}

fn cmd_run(a: RunArgs) -> Result<()> {
    let (protocol, records, cache_dir, output_dir) = match &a.config {
        Some(path) => {
            let cfg = Config::load(path)?;
            let protocol = cfg.protocol_run()?;
            let records = load(&cfg.corpus.path, cfg.corpus.format)?;
            let cache = a.cache_dir.clone().or(cfg.cache_dir.clone());
            let out = a.output_dir.clone().or(cfg.output_dir.clone());
            (protocol, records, cache, out)
        }
        None => {
            let records = match (&a.corpus, a.synthetic) {
                (Some(path), _) => load(path, a.format)?,
                (None, Some(n)) => synthetic_corpus(n, a.sizes.seed),
                (None, None) => return Err(Failure::Config("give --config, --corpus or --synthetic".into())),
            };
            if a.endpoint.is_empty() {
                return Err(Failure::Config("at least one --endpoint is required".into()));
            }
            let endpoints = a
                .endpoint
                .iter()
                .enumerate()
                .map(|(i, e)| endpoint_arg(e, i, &a.model))
                .collect();
            let settings = ProtocolSettings {
                kind: a.protocol,
                held_out: a.held_out,
                policy: a.policy,
                epsilon: a.epsilon,
                selection_dimensions: a.selection_dimensions.as_deref().map(dimensions).transpose()?,
            };
            let protocol = ProtocolRun::new(settings, a.sizes.spec(records.len()), endpoints)?;
            (protocol, records, a.cache_dir.clone(), a.output_dir.clone())
        }
    };
    let cache = cache_for(cache_dir.as_deref())?;
    let out = run(&protocol, &records, cache.as_ref())?;
    print_stats("selection", &out.manifest.selection.completion_stats);
    print_stats("test", &out.manifest.evaluation.completion_stats);
    eprintln!("selected: {}", out.manifest.selection.selected);
    if let Some(dir) = output_dir {
        std::fs::create_dir_all(&dir)?;
        write_json(&dir.join("manifest.json"), &out.manifest)?;
        write_json(&dir.join("report.json"), &out.report)?;
        write_lines(open_output(&dir.join("training.jsonl"))?, &out.training_export)?;
        write_lines(open_output(&dir.join("completions.jsonl"))?, &out.test_completions)?;
        write_predictions(open_output(&dir.join("predictions.jsonl"))?, &out.test_predictions)?;
        eprintln!("wrote {}", dir.display());
    }
    print_report(&out.report, a.metric);
    Ok(())
}

fn cmd_select(a: SelectArgs) -> Result<()> {
    let gold = select_part(load(&a.corpus.corpus, a.corpus.format)?, &a.part)?;
    let mut set = CandidateSet::default();
    for c in &a.candidates {
        let (name, path) = c
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("candidate `{c}` is not NAME=PATH")))?;
        set.push(name, read_predictions(open_input(Path::new(path))?)?);
    }
    let selection = select_checkpoint(&set, &gold, &dimensions(&a.dimensions)?, a.epsilon)?;
    println!("{}", serde_json::to_string_pretty(&selection)?);
    eprintln!("selected: {}", selection.selected);
    Ok(())
}

fn load_report(path: &Path) -> Result<MetricReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    if let Ok(m) = serde_json::from_str::<RunManifest>(&text) {
        return Ok(m.report);
    }
    serde_json::from_str::<MetricReport>(&text)
        .map_err(|e| Failure::Data(format!("{}: neither a report nor a run manifest ({e})", path.display())))
}

fn column_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem == "manifest" || stem == "report" {
        if let Some(parent) = path.parent().and_then(Path::file_name) {
            return parent.to_string_lossy().into_owned();
        }
    }
    stem
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let mut reports = Vec::with_capacity(a.inputs.len());
    for input in &a.inputs {
        let (name, path) = match input.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => (column_name(Path::new(input)), PathBuf::from(input)),
        };
        reports.push((name, load_report(&path)?));
    }
    let table = comparison_table(&reports, a.metric, a.count);
    if a.csv {
        print!("{}", table.to_csv());
    } else {
        print!("{}", table.to_text());
    }
    Ok(())
}

fn cmd_mock(a: MockArgs) -> Result<()> {
    let records = synthetic_corpus(a.records, a.seed);
    if a.output == Path::new("-") {
        write_corpus_csv(&records, std::io::stdout().lock(), a.format)?;
    } else {
        if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        write_corpus(&records, &a.output, a.format)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Split(a) => cmd_split(a),
        Command::Prompt(a) => cmd_prompt(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Parse(a) => cmd_parse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Run(a) => cmd_run(a),
        Command::Select(a) => cmd_select(a),
        Command::Report(a) => cmd_report(a),
        Command::Mock(a) => cmd_mock(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
