//! The `discourse` command-line tool. Every subcommand writes its reports and
//! a `manifest.json` into a fresh numbered run directory under `--out-dir`
//! and prints that directory on stdout.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analyses::{
    adaptability_curve, ambiguity_analysis, issue_breakdown, matched_response_comparison, perspective_trajectories,
    response_templatedness, setter_clusters, stage_duration_comparison, write_curve_csv, write_durations_csv,
    write_issue_csv, write_matched_csv, AmbiguityConfig, AnalysisConfig, MatchConfig, DEFAULT_BUCKET_EDGES,
    DEFAULT_CHUNKS,
};
use crate::coordination::{
    aggregated_coordination, compare_groups, perspective_coordination, write_coordination_csv, CoordinationConfig,
    CoordinationResult,
};
use crate::corpus::{
    corpus_stats, split_counselors, write_stage_annotations, Corpus, CounselorGroup, CounselorSplit, Role,
    SplitConfig, SynthSpec, DEFAULT_SETTER_MIN_TOKENS,
};
use crate::lexicon::{LexiconSet, STYLE_MARKERS, TIME_CATEGORIES};
use crate::predict::{
    build_dataset, build_features, cross_validate, train_logistic, FeatureConfig, FeatureContext, NgramSource,
    Regularization, TrainConfig, DEFAULT_FOLDS, DEFAULT_MIN_MESSAGES,
};
use crate::report::RunDir;
use crate::stages::{
    build_vocab, decode_corpus, em_fit, em_fit_multistart, init_model, top_stage_words, write_paths_csv,
    DurationConfig, EmConfig, StageModel, DEFAULT_STAGES, DEFAULT_TOP_WORDS_MIN_COUNT, DEFAULT_VOCAB_MIN_COUNT,
};
use crate::stats::BootstrapConfig;
use crate::vectorspace::{write_templatedness_csv, DEFAULT_MIN_NEIGHBORS, DEFAULT_RADIUS};

pub const LEXICON_DIR_ENV: &str = "CONVO_LEXICON_DIR";

#[derive(Debug, Parser)]
#[command(name = "discourse", version, about = "Discourse analytics for labeled counseling conversations")]
struct Cli {
    /// JSON object whose keys mirror the long flags; explicit flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory of lexicon overrides.
    #[arg(long, global = true, env = LEXICON_DIR_ENV)]
    lexicon_dir: Option<PathBuf>,

    /// Root under which numbered run directories are created.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Read a transcript file and report rejected records.
    Ingest(CorpusArgs),
    /// Corpus summary statistics.
    Stats(CorpusArgs),
    /// Split eligible counselors into more and less successful groups.
    Split(SplitCmd),
    /// Fit the conversation-stage model by EM.
    FitStages(FitStagesCmd),
    /// Viterbi stage paths, optionally with per-group stage durations.
    Decode(DecodeCmd),
    /// Words most characteristic of each stage.
    TopWords(TopWordsCmd),
    /// Per-chunk distance between positive and negative counselor language.
    Adaptability(AdaptabilityCmd),
    /// Success rate and reply length by situation-setter length.
    Ambiguity(AmbiguityCmd),
    /// Cluster near-identical situation setters and compare group responses.
    MatchClusters(MatchCmd),
    /// Near-duplicate counts of counselor responses to situation setters.
    Templatedness(TemplatednessCmd),
    /// Linguistic coordination per counselor group.
    Coordination(CoordinationCmd),
    /// Texter perspective trajectories by outcome.
    Perspective(PerspectiveCmd),
    /// Issue frequencies and success rates.
    Issues(IssuesCmd),
    /// Cross-validated outcome prediction from conversation prefixes.
    Predict(PredictCmd),
    /// Generate a synthetic corpus from a generator spec.
    Synth(SynthCmd),
}

#[derive(Debug, Args, Serialize)]
struct CorpusArgs {
    /// Transcript JSONL file.
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SplitArgs {
    /// Precomputed split JSON; computed from the corpus when absent.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    min_labeled: usize,
    #[arg(long, default_value_t = 30)]
    min_messages: usize,
    #[arg(long, default_value_t = 40)]
    group_size: usize,
}

#[derive(Debug, Args, Serialize)]
struct BootstrapArgs {
    #[arg(long, default_value_t = 2000)]
    replicates: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct SplitCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
}

#[derive(Debug, Args, Serialize)]
struct StageArgs {
    #[arg(long, default_value_t = DEFAULT_STAGES)]
    stages: usize,
    #[arg(long, default_value_t = DEFAULT_VOCAB_MIN_COUNT)]
    vocab_min_count: usize,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Comma-separated initial stay probabilities; the best-scoring fit is kept.
    #[arg(long, value_delimiter = ',')]
    initial_stays: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
struct FitStagesCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    stages: StageArgs,
}

#[derive(Debug, Args, Serialize)]
struct DecodeCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    /// Stage model JSON written by `fit-stages`.
    #[arg(long)]
    model: PathBuf,
    /// Also compare per-stage durations between counselor groups.
    #[arg(long)]
    durations: bool,
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    /// Only conversations with at least this many messages enter the duration means.
    #[arg(long)]
    min_length: Option<usize>,
    #[arg(long)]
    max_length: Option<usize>,
    /// Average all conversations together instead of weighting outcomes equally.
    #[arg(long)]
    pooled_outcomes: bool,
}

#[derive(Debug, Args, Serialize)]
struct TopWordsCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_WORDS_MIN_COUNT)]
    min_count: usize,
    /// Words listed per stage and role.
    #[arg(long, default_value_t = 20)]
    limit: usize,
}

#[derive(Debug, Args, Serialize)]
struct AdaptabilityCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = DEFAULT_CHUNKS)]
    chunks: usize,
    #[command(flatten)]
    #[serde(flatten)]
    bootstrap: BootstrapArgs,
}

#[derive(Debug, Args, Serialize)]
struct AmbiguityCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = DEFAULT_SETTER_MIN_TOKENS)]
    setter_min_tokens: usize,
    /// Comma-separated ascending lower edges of the setter-length buckets.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BUCKET_EDGES)]
    bucket_edges: Vec<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    bootstrap: BootstrapArgs,
}

#[derive(Debug, Args, Serialize)]
struct MatchCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = DEFAULT_SETTER_MIN_TOKENS)]
    setter_min_tokens: usize,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_NEIGHBORS)]
    min_neighbors: usize,
}

#[derive(Debug, Args, Serialize)]
struct TemplatednessCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    #[arg(long, default_value_t = DEFAULT_SETTER_MIN_TOKENS)]
    setter_min_tokens: usize,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: f64,
}

#[derive(Debug, Args, Serialize)]
struct CoordinationCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
    /// Role whose utterances are replied to.
    #[arg(long, default_value = "texter")]
    initiator: Role,
    /// Comma-separated marker categories; defaults to the style markers.
    #[arg(long, value_delimiter = ',')]
    markers: Vec<String>,
    /// Merge consecutive same-role messages into one turn.
    #[arg(long)]
    merge_turns: bool,
}

#[derive(Debug, Args, Serialize)]
struct PerspectiveCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = DEFAULT_CHUNKS)]
    chunks: usize,
    #[command(flatten)]
    #[serde(flatten)]
    bootstrap: BootstrapArgs,
}

#[derive(Debug, Args, Serialize)]
struct IssuesCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    #[serde(flatten)]
    split: SplitArgs,
}

#[derive(Debug, Args, Serialize)]
struct PredictCmd {
    #[command(flatten)]
    #[serde(flatten)]
    corpus: CorpusArgs,
    /// Stage model JSON; one is fitted on the corpus when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    stages: StageArgs,
    /// Percentage of each conversation visible to the classifier.
    #[arg(long, default_value_t = 100.0)]
    x: f64,
    #[arg(long, default_value_t = DEFAULT_FOLDS)]
    folds: usize,
    #[arg(long, default_value = "none")]
    ngrams: NgramSource,
    #[arg(long, default_value_t = 5)]
    ngram_min_count: usize,
    #[arg(long)]
    no_stage_features: bool,
    /// `l1` or `l2`; defaults to l1 with n-grams and l2 without.
    #[arg(long)]
    reg: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Conversations must have more than this many messages.
    #[arg(long, default_value_t = DEFAULT_MIN_MESSAGES)]
    min_messages: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args, Serialize)]
struct SynthCmd {
    /// Generator spec JSON.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the corpus here; stage annotations go next to it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Pipeline(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Pipeline(e)
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Pipeline(e.into())
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

/// Runs the tool on `args` (program name first) and returns the exit code:
/// 0 on success, 2 for usage errors and missing inputs, 1 for pipeline failures.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(&args) {
        Ok(cli) => cli,
        Err(Failure::Usage(msg)) => {
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            return 2;
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            return 2;
        }
    };
    match execute(cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn parse(args: &[OsString]) -> Outcome<Cli> {
    let merged = match config_path(args) {
        Some(config) => merge_config(args, &config)?,
        None => args.to_vec(),
    };
    match Cli::try_parse_from(&merged) {
        Ok(cli) => Ok(cli),
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code == 0 {
                std::process::exit(0);
            }
            Err(Failure::Usage(String::new()))
        }
    }
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1).filter_map(|a| a.to_str());
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Inserts `--key value` pairs from the config file right after the
/// subcommand name, skipping keys given explicitly on the command line.
fn merge_config(args: &[OsString], path: &Path) -> Outcome<Vec<OsString>> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let serde_json::Value::Object(map) = value else {
        return Err(usage(format!("config {} must be a JSON object", path.display())));
    };
    let explicit: Vec<String> = args
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_string())
        .collect();
    let sub_pos = args
        .iter()
        .skip(1)
        .position(|a| a.to_str().is_some_and(is_subcommand))
        .map(|p| p + 1)
        .ok_or_else(|| usage("missing subcommand"))?;
    let mut extra: Vec<OsString> = Vec::new();
    for (key, v) in map {
        let flag = key.replace('_', "-");
        if explicit.contains(&flag) || flag == "config" {
            continue;
        }
        if flag == "lexicon-dir" && std::env::var_os(LEXICON_DIR_ENV).is_some() {
            continue;
        }
        let rendered = match v {
            serde_json::Value::Bool(true) => {
                extra.push(format!("--{flag}").into());
                continue;
            }
            serde_json::Value::Bool(false) | serde_json::Value::Null => continue,
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Array(items) => items
                .iter()
                .map(|i| match i {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
            serde_json::Value::Object(_) => return Err(usage(format!("config key `{key}` cannot be an object"))),
        };
        extra.push(format!("--{flag}").into());
        extra.push(rendered.into());
    }
    let mut merged = args[..=sub_pos].to_vec();
    merged.extend(extra);
    merged.extend_from_slice(&args[sub_pos + 1..]);
    Ok(merged)
}

fn is_subcommand(s: &str) -> bool {
    use clap::CommandFactory;
    Cli::command().get_subcommands().any(|c| c.get_name() == s)
}

fn require_file(path: &Path, what: &str) -> Outcome {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` does not exist", path.display())))
    }
}

fn require_positive(name: &str, v: usize) -> Outcome {
    if v == 0 {
        Err(usage(format!("--{name} must be positive")))
    } else {
        Ok(())
    }
}

fn load_corpus(run: &mut RunDir, path: &Path) -> Outcome<Corpus> {
    require_file(path, "corpus")?;
    run.record_input("corpus", path)?;
    let ingested = Corpus::from_jsonl_path(path).with_context(|| format!("reading {}", path.display()))?;
    for r in &ingested.rejected {
        eprintln!("warning: {}: {r}", path.display());
    }
    Ok(ingested.corpus)
}

fn load_model(run: &mut RunDir, path: &Path) -> Outcome<StageModel> {
    require_file(path, "model")?;
    run.record_input("model", path)?;
    Ok(StageModel::load(path).with_context(|| format!("reading {}", path.display()))?)
}

fn load_lexicons(run: &mut RunDir, dir: Option<&Path>) -> Outcome<LexiconSet> {
    let Some(dir) = dir else { return Ok(LexiconSet::bundled()) };
    if !dir.is_dir() {
        return Err(usage(format!("lexicon directory `{}` does not exist", dir.display())));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| crate::Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    for f in files {
        run.record_input("lexicon", &f)?;
    }
    Ok(LexiconSet::from_dir(dir)?)
}

fn obtain_split(run: &mut RunDir, corpus: &Corpus, args: &SplitArgs) -> Outcome<CounselorSplit> {
    if let Some(path) = &args.split {
        require_file(path, "split")?;
        run.record_input("split", path)?;
        return Ok(CounselorSplit::from_json_path(path)?);
    }
    require_positive("group-size", args.group_size)?;
    Ok(split_counselors(
        corpus,
        SplitConfig {
            min_labeled: args.min_labeled,
            min_messages: args.min_messages,
            group_size: args.group_size,
        },
    )?)
}

impl BootstrapArgs {
    fn config(&self, run: &mut RunDir) -> Outcome<BootstrapConfig> {
        require_positive("replicates", self.replicates)?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(usage("--level must lie in (0, 1)"));
        }
        run.record_seed("bootstrap", self.seed);
        Ok(BootstrapConfig {
            level: self.level,
            replicates: self.replicates,
            seed: self.seed,
        })
    }
}

impl StageArgs {
    fn fit(&self, corpus: &Corpus) -> Outcome<crate::stages::FitResult> {
        require_positive("stages", self.stages)?;
        require_positive("max-iter", self.max_iter)?;
        let cfg = EmConfig {
            max_iter: self.max_iter,
            tol: self.tol,
        };
        if self.initial_stays.is_empty() {
            Ok(em_fit(init_model(corpus, self.stages, self.vocab_min_count)?, corpus, cfg)?)
        } else {
            let vocab = build_vocab(corpus, self.vocab_min_count)?;
            Ok(em_fit_multistart(corpus, &vocab, self.stages, &self.initial_stays, cfg)?)
        }
    }
}

fn execute(cli: Cli) -> Outcome<PathBuf> {
    let tagged = serde_json::to_value(&cli.command).map_err(anyhow::Error::from)?;
    let (name, mut config) = match tagged {
        serde_json::Value::Object(m) => m.into_iter().next().unwrap_or_default(),
        other => (String::new(), other),
    };
    if let serde_json::Value::Object(m) = &mut config {
        if let Some(dir) = &cli.lexicon_dir {
            m.insert("lexicon_dir".into(), dir.display().to_string().into());
        }
    }
    let mut run = RunDir::create(&cli.out_dir, &name, config)?;
    if let Some(c) = &cli.config {
        run.record_input("config", c)?;
    }
    match dispatch(&mut run, cli.command, cli.lexicon_dir.as_deref()) {
        Ok(()) => Ok(run.finish()?),
        Err(e) => {
            let _ = fs::remove_dir_all(run.path());
            Err(e)
        }
    }
}

fn dispatch(run: &mut RunDir, command: Command, lexicon_dir: Option<&Path>) -> Outcome<()> {
    match command {
        Command::Ingest(a) => cmd_ingest(run, &a)?,
        Command::Stats(a) => {
            let corpus = load_corpus(run, &a.corpus)?;
            run.write_json("stats.json", &corpus_stats(&corpus))?;
        }
        Command::Split(a) => {
            let corpus = load_corpus(run, &a.corpus.corpus)?;
            let split = obtain_split(run, &corpus, &a.split)?;
            run.write_json("split.json", &split)?;
        }
        Command::FitStages(a) => {
            let corpus = load_corpus(run, &a.corpus.corpus)?;
            let fit = a.stages.fit(&corpus)?;
            run.write_json("model.json", &fit.model)?;
            run.write_with("trace.csv", |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["iteration", "loglik"])?;
                for (i, ll) in fit.trace.iter().enumerate() {
                    out.write_record([i.to_string(), format!("{ll:.6}")])?;
                }
                out.flush().map_err(|e| crate::Error::io("trace.csv", e))?;
                Ok(())
            })?;
            run.write_json(
                "fit.json",
                &serde_json::json!({
                    "iterations": fit.iterations,
                    "converged": fit.converged,
                    "loglik": fit.trace.last(),
                }),
            )?;
        }
        Command::Decode(a) => cmd_decode(run, &a)?,
        Command::TopWords(a) => {
            let corpus = load_corpus(run, &a.corpus.corpus)?;
            let model = load_model(run, &a.model)?;
            let mut rows = Vec::new();
            for role in Role::ALL {
                for stage in 1..=model.stages() {
                    let words = top_stage_words(&model, &corpus, role, stage, a.min_count)?;
                    for (rank, w) in words.into_iter().take(a.limit).enumerate() {
                        rows.push([
                            role.to_string(),
                            stage.to_string(),
                            (rank + 1).to_string(),
                            w.token,
                            format!("{:.6}", w.ratio),
                            w.count.to_string(),
                        ]);
                    }
                }
            }
            run.write_with("top_words.csv", |w| {
                let mut out = csv::Writer::from_writer(w);
                out.write_record(["role", "stage", "rank", "token", "ratio", "count"])?;
                for r in &rows {
                    out.write_record(r)?;
                }
                out.flush().map_err(|e| crate::Error::io("top_words.csv", e))?;
                Ok(())
            })?;
        }
        Command::Adaptability(a) => {
            require_positive("chunks", a.chunks)?;
            let corpus = load_corpus(run, &a.corpus.corpus)?;
            let split = obtain_split(run, &corpus, &a.split)?;
            let cfg = AnalysisConfig {
                chunks: a.chunks,
                bootstrap: a.bootstrap.config(run)?,
            };
            let report = adaptability_curve(&corpus, &split, cfg)?;
            run.write_with("adaptability.csv", |w| write_curve_csv(&report.points, w))?;
            run.write_json("adaptability.json", &report)?;
        }
        Command::Ambiguity(a) => {
            require_positive("setter-min-tokens", a.setter_min_tokens)?;
            let corpus = load_corpus(run, &a.corpus.corpus)?;
            let cfg = AmbiguityConfig {
                setter_min_tokens: a.setter_min_tokens,
                bucket_edges: a.bucket_edges.clone(),
                bootstrap: a.bootstrap.config(run)?,
            };
            let report = ambiguity_analysis(&corpus, &cfg)?;
            run.write_with("ambiguity.csv", |w| write_curve_csv(&report.points, w))?;
            run.write_json("ambiguity.json", &report)?;
        }
        Command::MatchClusters(a) => {
            require_positive("setter-min-tokens", a.setter_min_tokens)?;
            let corpus = load_corpus(run, &a.corpus.corpus)?;
            let lexicons = load_lexicons(run, lexicon_dir)?;
            let split = obtain_split(run, &corpus, &a.split)?;
            let clusters = setter_clusters(
                &corpus,
                MatchConfig {
                    setter_min_tokens: a.setter_min_tokens,
                    radius: a.radius,
                    min_neighbors: a.min_neighbors,
                },
            )?;
            run.write_with("clusters.csv", |w| clusters.write_csv(w))?;
            let report = matched_response_comparison(&corpus, &split, &clusters, &lexicons, a.setter_min_tokens)?;
            run.write_with("matched.csv", |w| write_matched_csv(&report, w))?;
            run.write_json("matched.json", &report)?;
        }
        Command::Templatedness(a) => {
            require_positive("setter-min-tokens", a.setter_min_tokens)?;
            let corpus = load_corpus(run, &a.corpus.corpus)?;
            let split = obtain_split(run, &corpus, &a.split)?;
            let report = response_templatedness(&corpus, &split, a.setter_min_tokens, a.radius)?;
            run.write_with("templatedness.csv", |w| write_templatedness_csv(&report.counts, w))?;
            run.write_json(
                "templatedness.json",
                &serde_json::json!({
                    "radius": report.radius,
                    "responses": report.counts.len(),
                    "group_means": report.group_means,
                    "u": report.u,
                    "p": report.p,
                }),
            )?;
        }
        Command::Coordination(a) => cmd_coordination(run, &a, lexicon_dir)?,
        Command::Perspective(a) => {
            require_positive("chunks", a.chunks)?;
            let corpus = load_corpus(run, &a.corpus.corpus)?;
            let lexicons = load_lexicons(run, lexicon_dir)?;
            let cfg = AnalysisConfig {
                chunks: a.chunks,
                bootstrap: a.bootstrap.config(run)?,
            };
            let points = perspective_trajectories(&corpus, &lexicons, cfg)?;
            run.write_with("perspective.csv", |w| write_curve_csv(&points, w))?;
            let markers = lexicons.categories(&TIME_CATEGORIES)?;
            let coord = perspective_coordination(corpus.conversations(), &markers, CoordinationConfig::default());
            let summary = match coord {
                Ok(r) => serde_json::json!({"texter_time_coordination": r.group, "defined_members": r.defined_members}),
                Err(e) => serde_json::json!({"texter_time_coordination": null, "note": e.to_string()}),
            };
            run.write_json("perspective.json", &summary)?;
        }
        Command::Issues(a) => {
            let corpus = load_corpus(run, &a.corpus.corpus)?;
            let split = obtain_split(run, &corpus, &a.split)?;
            let rows = issue_breakdown(&corpus, &split);
            run.write_with("issues.csv", |w| write_issue_csv(&rows, w))?;
        }
        Command::Predict(a) => cmd_predict(run, &a, lexicon_dir)?,
        Command::Synth(a) => {
            require_file(&a.spec, "spec")?;
            run.record_input("spec", &a.spec)?;
            run.record_seed("synth", a.seed);
            let spec = SynthSpec::from_json_path(&a.spec)?;
            let synth = spec.generate(a.seed)?;
            run.write_with("corpus.jsonl", |w| synth.corpus.write_jsonl(w))?;
            run.write_with("stages.jsonl", |w| write_stage_annotations(&synth.annotations(), w))?;
            run.write_json("counselor_groups.json", &synth.counselor_groups)?;
            if let Some(out) = &a.out {
                write_new(out, synth.corpus.to_jsonl_string().as_bytes())?;
                let mut buf = Vec::new();
                write_stage_annotations(&synth.annotations(), &mut buf)?;
                write_new(&out.with_extension("stages.jsonl"), &buf)?;
            }
        }
    }
    Ok(())
}

fn write_new(path: &Path, bytes: &[u8]) -> Outcome {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_ingest(run: &mut RunDir, a: &CorpusArgs) -> Outcome {
    require_file(&a.corpus, "corpus")?;
    run.record_input("corpus", &a.corpus)?;
    let ingested = Corpus::from_jsonl_path(&a.corpus).with_context(|| format!("reading {}", a.corpus.display()))?;
    let rejected: Vec<serde_json::Value> = ingested
        .rejected
        .iter()
        .map(|r| serde_json::json!({"line": r.line, "id": r.id, "reason": r.reason}))
        .collect();
    for r in &ingested.rejected {
        eprintln!("warning: {}: {r}", a.corpus.display());
    }
    run.write_json(
        "ingest.json",
        &serde_json::json!({
            "conversations": ingested.corpus.len(),
            "counselors": ingested.corpus.by_counselor().len(),
            "rejected": rejected,
        }),
    )?;
    run.write_with("corpus.jsonl", |w| ingested.corpus.write_jsonl(w))?;
    Ok(())
}

fn cmd_decode(run: &mut RunDir, a: &DecodeCmd) -> Outcome {
    let corpus = load_corpus(run, &a.corpus.corpus)?;
    let model = load_model(run, &a.model)?;
    let paths = decode_corpus(&model, &corpus);
    run.write_with("paths.csv", |w| write_paths_csv(paths.iter().map(|(id, p)| (id.as_str(), p)), w))?;
    if a.durations {
        let split = obtain_split(run, &corpus, &a.split)?;
        let length_range = match (a.min_length, a.max_length) {
            (None, None) => None,
            (lo, hi) => Some((lo.unwrap_or(0), hi.unwrap_or(usize::MAX))),
        };
        let cfg = DurationConfig {
            equal_outcome_weight: !a.pooled_outcomes,
            length_range,
        };
        let report = stage_duration_comparison(&corpus, &split, &model, cfg)?;
        run.write_with("durations.csv", |w| write_durations_csv(&report, w))?;
        run.write_json("durations.json", &report)?;
    }
    Ok(())
}

fn cmd_coordination(run: &mut RunDir, a: &CoordinationCmd, lexicon_dir: Option<&Path>) -> Outcome {
    let corpus = load_corpus(run, &a.corpus.corpus)?;
    let lexicons = load_lexicons(run, lexicon_dir)?;
    let names: Vec<&str> = if a.markers.is_empty() {
        STYLE_MARKERS.to_vec()
    } else {
        a.markers.iter().map(String::as_str).collect()
    };
    let markers = lexicons.categories(&names).map_err(|e| usage(e.to_string()))?;
    let cfg = CoordinationConfig {
        merge_turns: a.merge_turns,
    };
    let split = obtain_split(run, &corpus, &a.split)?;
    let mut results: Vec<(String, CoordinationResult)> =
        vec![("all".into(), aggregated_coordination(corpus.conversations(), a.initiator, &markers, cfg)?)];
    for group in CounselorGroup::BOTH {
        let members = split.members(group);
        let convs = corpus.conversations().iter().filter(|c| members.contains(&c.counselor_id));
        results.push((group.as_str().into(), aggregated_coordination(convs, a.initiator, &markers, cfg)?));
    }
    let refs: Vec<(&str, &CoordinationResult)> = results.iter().map(|(g, r)| (g.as_str(), r)).collect();
    run.write_with("coordination.csv", |w| write_coordination_csv(&refs, w))?;
    let test = compare_groups(&results[1].1, &results[2].1)?;
    run.write_json(
        "coordination.json",
        &serde_json::json!({
            "initiator": a.initiator,
            "markers": names,
            "groups": results.iter().map(|(g, r)| serde_json::json!({
                "group": g, "value": r.group, "defined_members": r.defined_members
            })).collect::<Vec<_>>(),
            "mann_whitney": test,
        }),
    )?;
    Ok(())
}

fn cmd_predict(run: &mut RunDir, a: &PredictCmd, lexicon_dir: Option<&Path>) -> Outcome {
    if !(a.x > 0.0 && a.x <= 100.0) {
        return Err(usage("--x must lie in (0, 100]"));
    }
    require_positive("folds", a.folds)?;
    let corpus = load_corpus(run, &a.corpus.corpus)?;
    let lexicons = load_lexicons(run, lexicon_dir)?;
    let model = if a.no_stage_features {
        None
    } else if let Some(path) = &a.model {
        Some(load_model(run, path)?)
    } else {
        Some(a.stages.fit(&corpus)?.model)
    };
    run.record_seed("predict", a.seed);
    let data = build_dataset(&corpus, a.min_messages, a.seed)?;
    let ctx = FeatureContext::fit(&corpus, &lexicons, model.as_ref())?;
    let fcfg = FeatureConfig {
        prefix_percent: a.x,
        ngrams: a.ngrams,
        ngram_min_count: a.ngram_min_count,
        stage_features: !a.no_stage_features,
    };
    let dataset = build_features(&data, &fcfg, &ctx)?;
    let reg = match (a.reg.as_deref(), a.lambda) {
        (None, None) => Regularization::default_for(a.ngrams != NgramSource::None),
        (None, Some(l)) if a.ngrams != NgramSource::None => Regularization::L1(l),
        (None, Some(l)) | (Some("l2"), Some(l)) => Regularization::L2(l),
        (Some("l1"), l) => Regularization::L1(l.unwrap_or(crate::predict::DEFAULT_L1)),
        (Some("l2"), None) => Regularization::L2(crate::predict::DEFAULT_L2),
        (Some(other), _) => return Err(usage(format!("unknown regularization `{other}`"))),
    };
    let tcfg = TrainConfig::new(reg);
    let report = cross_validate(&dataset, a.folds, a.seed, &tcfg, a.x)?;
    run.write_json("eval.json", &report)?;
    run.write_with("folds.csv", |w| report.write_csv(w))?;
    let full = train_logistic(&dataset, &tcfg)?;
    run.write_json("classifier.json", &full)?;
    Ok(())
}
