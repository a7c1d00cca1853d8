//! Command-line front end and JSON reports.

use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cache::EvalCache;
use crate::engine::{ApparentSource, Engine, OperationalProfile, ScoreResult, TestSuite, DEFAULT_INNER_CAP};
use crate::error::Error;
use crate::fixtures::{serve, Fixture, FixtureSpec};
use crate::oracle::{Oracle, DEFAULT_ORACLE_BOUND};
use crate::sampler::{
    SamplingConfig, DEFAULT_CONFIDENCE, DEFAULT_EPSILON, DEFAULT_EXHAUSTIVE_LIMIT, DEFAULT_MAX_SAMPLES,
    DEFAULT_SAMPLING_THRESHOLD,
};
use crate::schema::{CharSubset, Schema};
use crate::search::{discrimination_search, SearchConfig, SearchKind, SearchResult};
use crate::subject::{ProcessSubject, Subject};

pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_VERIFY_FRACTION: f64 = 0.01;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SUBJECT: i32 = 2;
pub const EXIT_PARSE: i32 = 3;
pub const EXIT_BOUND: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "fairtest",
    version,
    about = "Measure discrimination in a black-box decision procedure"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Group discrimination score of one characteristic subset.
    Group(ScoreArgs),
    /// Causal discrimination score of one characteristic subset.
    Causal(ScoreArgs),
    /// Find the minimal subsets whose score reaches a threshold.
    Search(SearchArgs),
    /// Score over a test suite or an operational profile.
    Apparent(ApparentArgs),
    /// Serve a built-in fixture over the subject protocol on stdin/stdout.
    Fixture(FixtureArgs),
    /// Exact scores by evaluating the whole input domain.
    Oracle(OracleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Group,
    Causal,
}

impl From<KindArg> for SearchKind {
    fn from(k: KindArg) -> SearchKind {
        match k {
            KindArg::Group => SearchKind::Group,
            KindArg::Causal => SearchKind::Causal,
        }
    }
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct SubjectArgs {
    /// Command line of the subject program (shell-style quoting).
    #[arg(long)]
    subject: Option<String>,
    /// Built-in fixture spec, e.g. `xor:0:1` or `fraction:race:aux:0.23,0.65`.
    #[arg(long)]
    fixture: Option<String>,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Schema file (JSON).
    #[arg(long)]
    schema: PathBuf,
    #[command(flatten)]
    subject: SubjectArgs,
    /// Seconds to wait for each subject response.
    #[arg(long, default_value_t = 10.0)]
    timeout: f64,
    /// The subject program may run as several concurrent processes.
    #[arg(long)]
    reentrant: bool,
    /// Engine worker threads.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Report destination; standard output when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Evaluate every request on the subject.
    #[arg(long)]
    no_cache: bool,
    /// Load cached decisions from this file before running and save them after.
    #[arg(long)]
    cache_file: Option<PathBuf>,
    /// Re-evaluate a random share of cache hits and fail on a changed decision.
    #[arg(long)]
    verify_determinism: bool,
    /// Share of cache hits re-evaluated with --verify-determinism.
    #[arg(long, default_value_t = DEFAULT_VERIFY_FRACTION)]
    verify_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SamplingArgs {
    /// Confidence level of each estimate.
    #[arg(long, default_value_t = DEFAULT_CONFIDENCE)]
    conf: f64,
    /// Target margin of error of each estimate.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_SAMPLES)]
    max_samples: u64,
    /// Samples drawn before the margin is checked.
    #[arg(long, default_value_t = DEFAULT_SAMPLING_THRESHOLD)]
    sampling_threshold: u64,
    /// Enumerate domains of at most this many inputs instead of sampling (0 disables).
    #[arg(long, default_value_t = DEFAULT_EXHAUSTIVE_LIMIT)]
    exhaustive_limit: u64,
    /// Perturbations examined per base input in causal scores.
    #[arg(long, default_value_t = DEFAULT_INNER_CAP)]
    inner_cap: u64,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Comma-separated characteristic names.
    #[arg(long)]
    chars: String,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Minimum score of a reported subset.
    #[arg(long)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = KindArg::Causal)]
    kind: KindArg,
    #[arg(long)]
    max_subset_size: Option<usize>,
    /// Accept a subset for a causal search once its group score reaches the threshold.
    #[arg(long)]
    group_shortcut: bool,
    /// Score supersets of already reported subsets too.
    #[arg(long)]
    no_prune: bool,
}

#[derive(Debug, Args)]
struct ApparentArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, value_enum, default_value_t = KindArg::Group)]
    kind: KindArg,
    /// Comma-separated characteristic names.
    #[arg(long)]
    chars: String,
    /// Test suite CSV with a header row of characteristic names.
    #[arg(long, conflicts_with = "profile", required_unless_present = "profile")]
    suite: Option<PathBuf>,
    /// Operational profile JSON: {"<characteristic>": {"<label>": weight}}.
    #[arg(long)]
    profile: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FixtureArgs {
    /// Fixture spec, e.g. `echo-char:0`.
    spec: String,
    #[arg(long)]
    schema: PathBuf,
}

#[derive(Debug, Args)]
struct OracleArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum, default_value_t = KindArg::Causal)]
    kind: KindArg,
    /// Score this subset; otherwise search with --threshold.
    #[arg(long, required_unless_present = "threshold")]
    chars: Option<String>,
    #[arg(long, conflicts_with = "chars")]
    threshold: Option<f64>,
    #[arg(long)]
    max_subset_size: Option<usize>,
    /// Largest input domain the oracle will enumerate.
    #[arg(long, default_value_t = DEFAULT_ORACLE_BOUND)]
    bound: u128,
}

/// A failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error.root() {
        Error::Schema(_) | Error::Suite(_) | Error::Profile(_) => EXIT_PARSE,
        Error::Subject(_) | Error::Nondeterministic { .. } => EXIT_SUBJECT,
        Error::BoundExceeded { .. } => EXIT_BOUND,
        Error::Config(_) | Error::Io(_) => EXIT_USAGE,
        Error::Interrupted { .. } | Error::SearchInterrupted { .. } => unreachable!("root unwraps"),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: exit_code(&e),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
struct GroupReport {
    assignment: Vec<String>,
    p: f64,
    r: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    margin: Option<f64>,
}

#[derive(Debug, Serialize)]
struct MinimalSetReport {
    subset: Vec<String>,
    score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    margin: Option<f64>,
    exact: bool,
    lower_bound: bool,
}

#[derive(Debug, Serialize)]
struct StatsReport {
    tests_generated: u64,
    cache_hits: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    subsets_evaluated: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    subsets_pruned: Option<u64>,
}

#[derive(Debug, Serialize)]
struct Report {
    version: u32,
    mode: String,
    schema_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    subset: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    confidence: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lower_bound: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    groups: Option<Vec<GroupReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    minimal_sets: Option<Vec<MinimalSetReport>>,
    stats: StatsReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Present (and true) only when the run stopped early.
    #[serde(skip_serializing_if = "Option::is_none")]
    partial: Option<bool>,
}

/// Hex SHA-256 of the schema's canonical serialization.
pub fn schema_digest(schema: &Schema) -> String {
    hex::encode(Sha256::digest(schema.serialize().as_bytes()))
}

fn names(schema: &Schema, subset: &CharSubset) -> Vec<String> {
    schema.subset_names(subset).into_iter().map(str::to_owned).collect()
}

fn score_report(mode: &str, schema: &Schema, r: &ScoreResult, seed: Option<u64>) -> Report {
    let groups = (!r.groups.is_empty()).then(|| {
        r.groups
            .iter()
            .map(|g| GroupReport {
                assignment: r
                    .subset
                    .indices()
                    .iter()
                    .zip(&g.assignment)
                    .map(|(&p, &v)| schema.characteristic(p).labels()[v as usize].clone())
                    .collect(),
                p: g.proportion(),
                r: g.samples,
                margin: g.margin,
            })
            .collect()
    });
    Report {
        version: REPORT_VERSION,
        mode: mode.to_owned(),
        schema_digest: schema_digest(schema),
        subset: Some(names(schema, &r.subset)),
        score: Some(r.score),
        margin: r.margin,
        confidence: r.confidence,
        exact: Some(r.exact),
        lower_bound: Some(r.lower_bound),
        groups,
        minimal_sets: None,
        stats: StatsReport {
            tests_generated: r.tests_generated,
            cache_hits: r.cache_hits,
            subsets_evaluated: None,
            subsets_pruned: None,
        },
        seed,
        partial: None,
    }
}

fn search_report(mode: &str, schema: &Schema, r: &SearchResult, seed: Option<u64>, partial: bool) -> Report {
    Report {
        version: REPORT_VERSION,
        mode: mode.to_owned(),
        schema_digest: schema_digest(schema),
        subset: None,
        score: None,
        margin: None,
        confidence: None,
        exact: None,
        lower_bound: None,
        groups: None,
        minimal_sets: Some(
            r.minimal_sets
                .iter()
                .map(|(s, score)| MinimalSetReport {
                    subset: names(schema, s),
                    score: score.score,
                    margin: score.margin,
                    exact: score.exact,
                    lower_bound: score.lower_bound,
                })
                .collect(),
        ),
        stats: StatsReport {
            tests_generated: r.tests_total,
            cache_hits: r.cache_hits,
            subsets_evaluated: Some(r.subsets_evaluated),
            subsets_pruned: Some(r.subsets_pruned),
        },
        seed,
        partial: partial.then_some(true),
    }
}

/// Serializes a score result as a report document.
pub fn render_score_report(mode: &str, schema: &Schema, result: &ScoreResult, seed: Option<u64>) -> String {
    render(&score_report(mode, schema, result, seed))
}

/// Serializes a search result as a report document.
pub fn render_search_report(mode: &str, schema: &Schema, result: &SearchResult, seed: Option<u64>) -> String {
    render(&search_report(mode, schema, result, seed, false))
}

fn render(report: &Report) -> String {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    text
}

fn write_report(report: &Report, destination: Option<&Path>, stdout: &mut dyn Write) -> Result<(), Failure> {
    let text = render(report);
    match destination {
        Some(path) => {
            fs::write(path, text).map_err(|e| Failure::usage(format!("cannot write report {}: {e}", path.display())))
        }
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Failure::usage(format!("cannot write report: {e}"))),
    }
}

fn read_text(path: &Path, what: &str) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure {
        code: EXIT_PARSE,
        message: format!("cannot read {what} {}: {e}", path.display()),
    })
}

fn load_schema(path: &Path) -> Result<Schema, Failure> {
    let text = read_text(path, "schema")?;
    Schema::parse(&text).map_err(|e| Failure {
        code: EXIT_PARSE,
        message: format!("{}: {e}", path.display()),
    })
}

fn parse_chars(schema: &Schema, chars: &str) -> Result<CharSubset, Failure> {
    let list: Vec<&str> = chars.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    schema
        .subset_by_names(&list)
        .map_err(|e| Failure::usage(format!("--chars: {e}")))
}

struct Session {
    schema: Schema,
    subject: Subject,
    cache: EvalCache,
    cache_file: Option<PathBuf>,
    workers: usize,
    inner_cap: u64,
}

impl Session {
    fn open(common: &CommonArgs) -> Result<Session, Failure> {
        let schema = load_schema(&common.schema)?;
        if common.parallel == 0 {
            return Err(Failure::usage("--parallel must be at least 1"));
        }
        if !(common.timeout.is_finite() && common.timeout > 0.0) {
            return Err(Failure::usage("--timeout must be a positive number of seconds"));
        }
        if !(0.0..=1.0).contains(&common.verify_fraction) {
            return Err(Failure::usage("--verify-fraction must be in [0, 1]"));
        }
        let subject = match (&common.subject.subject, &common.subject.fixture) {
            (Some(line), None) => Subject::Process(
                ProcessSubject::from_command_line(line, schema.clone())
                    .map_err(|e| Failure::usage(format!("--subject: {e}")))?
                    .with_timeout(Duration::from_secs_f64(common.timeout))
                    .reentrant(common.reentrant),
            ),
            (None, Some(spec)) => {
                let spec = FixtureSpec::parse(spec, &schema).map_err(|e| Failure::usage(format!("--fixture: {e}")))?;
                Subject::Fixture(Fixture::new(spec, &schema)?)
            }
            _ => return Err(Failure::usage("exactly one of --subject and --fixture is required")),
        };
        if common.parallel > 1 && !subject.is_reentrant() {
            log::warn!("subject is not reentrant; requests are serialized through one process");
        }
        let mut cache = if common.no_cache {
            EvalCache::disabled()
        } else {
            EvalCache::new()
        };
        if common.verify_determinism {
            cache = cache.with_verification(common.verify_fraction, common.seed);
        }
        if let Some(path) = &common.cache_file {
            if common.no_cache {
                return Err(Failure::usage("--cache-file cannot be combined with --no-cache"));
            }
            if path.exists() {
                let loaded = cache.load(path, &schema)?;
                log::info!("loaded {loaded} cached decisions from {}", path.display());
            }
        }
        Ok(Session {
            schema,
            subject,
            cache,
            cache_file: common.cache_file.clone(),
            workers: common.parallel,
            inner_cap: DEFAULT_INNER_CAP,
        })
    }

    fn engine(&self) -> Engine<'_> {
        Engine::new(&self.schema, &self.subject, &self.cache)
            .with_workers(self.workers)
            .with_inner_cap(self.inner_cap)
    }

    fn close(&self) -> Result<(), Failure> {
        if let Some(path) = &self.cache_file {
            self.cache.save(path)?;
        }
        Ok(())
    }
}

fn sampling_config(args: &SamplingArgs, seed: u64) -> Result<SamplingConfig, Failure> {
    let cfg = SamplingConfig {
        confidence: args.conf,
        epsilon: args.eps,
        max_samples: args.max_samples,
        sampling_threshold: args.sampling_threshold,
        seed,
        exhaustive_limit: args.exhaustive_limit,
    };
    cfg.validate()?;
    if args.inner_cap == 0 {
        return Err(Failure::usage("--inner-cap must be at least 1"));
    }
    Ok(cfg)
}

fn run_score(args: &ScoreArgs, kind: SearchKind, stdout: &mut dyn Write) -> Result<(), Failure> {
    let cfg = sampling_config(&args.sampling, args.common.seed)?;
    let mut session = Session::open(&args.common)?;
    session.inner_cap = args.sampling.inner_cap;
    let subset = parse_chars(&session.schema, &args.chars)?;
    let engine = session.engine();
    let result = match kind {
        SearchKind::Group => engine.group_score(&subset, &cfg),
        SearchKind::Causal => engine.causal_score(&subset, &cfg),
    };
    session.close()?;
    let (result, _) = result.map_err(Failure::from)?;
    let report = score_report(kind.as_str(), &session.schema, &result, Some(cfg.seed));
    write_report(&report, args.common.report.as_deref(), stdout)
}

fn run_search(args: &SearchArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let sampling = sampling_config(&args.sampling, args.common.seed)?;
    let mut session = Session::open(&args.common)?;
    session.inner_cap = args.sampling.inner_cap;
    let cfg = SearchConfig {
        theta: args.threshold,
        kind: args.kind.into(),
        max_subset_size: args.max_subset_size,
        sampling,
        group_shortcut: args.group_shortcut,
        prune: !args.no_prune,
    };
    let mode = format!("search-{}", cfg.kind.as_str());
    let outcome = discrimination_search(&session.engine(), &cfg);
    session.close()?;
    match outcome {
        Ok(result) => {
            let report = search_report(&mode, &session.schema, &result, Some(sampling.seed), false);
            write_report(&report, args.common.report.as_deref(), stdout)
        }
        Err(Error::SearchInterrupted { source, partial }) => {
            let report = search_report(&mode, &session.schema, &partial, Some(sampling.seed), true);
            write_report(&report, args.common.report.as_deref(), stdout)?;
            Err(Failure::from(*source))
        }
        Err(e) => Err(e.into()),
    }
}

fn run_apparent(args: &ApparentArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let cfg = sampling_config(&args.sampling, args.common.seed)?;
    if args.kind == KindArg::Group && args.profile.is_some() {
        return Err(Failure::usage(
            "apparent group scores need --suite; --profile applies to causal scores",
        ));
    }
    let mut session = Session::open(&args.common)?;
    session.inner_cap = args.sampling.inner_cap;
    let subset = parse_chars(&session.schema, &args.chars)?;
    let engine = session.engine();
    let (result, seed) = match (&args.suite, &args.profile) {
        (Some(path), None) => {
            let text = read_text(path, "test suite")?;
            let suite = TestSuite::read_csv(text.as_bytes(), &session.schema)
                .map_err(Failure::from)
                .map_err(|mut f| {
                    f.message = format!("{}: {}", path.display(), f.message);
                    f
                })?;
            let r = match args.kind {
                KindArg::Group => engine.apparent_group_score(&subset, &suite),
                KindArg::Causal => engine.apparent_causal_score(&subset, ApparentSource::Suite(&suite), &cfg),
            };
            (r, None)
        }
        (None, Some(path)) => {
            let text = read_text(path, "profile")?;
            let profile = OperationalProfile::parse(&text, &session.schema)?;
            let r = engine.apparent_causal_score(&subset, ApparentSource::Profile(&profile), &cfg);
            (r, Some(cfg.seed))
        }
        _ => return Err(Failure::usage("exactly one of --suite and --profile is required")),
    };
    session.close()?;
    let result = result.map_err(Failure::from)?;
    let report = score_report(result.kind.as_str(), &session.schema, &result, seed);
    write_report(&report, args.common.report.as_deref(), stdout)
}

fn run_oracle(args: &OracleArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let session = Session::open(&args.common)?;
    let oracle = Oracle::build(&session.subject, &session.schema, &session.cache, args.bound);
    session.close()?;
    let oracle = oracle.map_err(Failure::from)?;
    let kind: SearchKind = args.kind.into();
    let report = match (&args.chars, args.threshold) {
        (Some(chars), None) => {
            let subset = parse_chars(&session.schema, chars)?;
            let result = oracle.score(kind, &subset);
            score_report(&format!("oracle-{}", kind.as_str()), &session.schema, &result, None)
        }
        (None, Some(theta)) => {
            let cfg = SearchConfig {
                max_subset_size: args.max_subset_size,
                ..SearchConfig::new(theta, kind)
            };
            let result = oracle.search(&cfg)?;
            search_report(
                &format!("oracle-search-{}", kind.as_str()),
                &session.schema,
                &result,
                None,
                false,
            )
        }
        _ => return Err(Failure::usage("exactly one of --chars and --threshold is required")),
    };
    write_report(&report, args.common.report.as_deref(), stdout)
}

fn run_fixture(args: &FixtureArgs, stdin: &mut dyn BufRead, stdout: &mut dyn Write) -> Result<(), Failure> {
    let schema = load_schema(&args.schema)?;
    let spec = FixtureSpec::parse(&args.spec, &schema).map_err(|e| Failure::usage(e.to_string()))?;
    let fixture = Fixture::new(spec, &schema)?;
    serve(&fixture, &schema, stdin, stdout).map_err(|e| Failure {
        code: EXIT_SUBJECT,
        message: e.to_string(),
    })
}

/// Runs the command line `argv` (program name first) and returns the exit
/// code. Reports go to `stdout` unless redirected; diagnostics to `stderr`.
pub fn run_cli<I, T>(argv: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = stderr.write_all(rendered.as_bytes());
                EXIT_USAGE
            } else {
                let _ = stdout.write_all(rendered.as_bytes());
                EXIT_OK
            };
        }
    };
    let outcome = match &cli.command {
        Command::Group(args) => run_score(args, SearchKind::Group, stdout),
        Command::Causal(args) => run_score(args, SearchKind::Causal, stdout),
        Command::Search(args) => run_search(args, stdout),
        Command::Apparent(args) => run_apparent(args, stdout),
        Command::Fixture(args) => run_fixture(args, stdin, stdout),
        Command::Oracle(args) => run_oracle(args, stdout),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}
