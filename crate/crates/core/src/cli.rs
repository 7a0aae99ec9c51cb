//! `ncall` command-line interface.
//!
//! Exit codes: 0 success, 1 invalid input data, 2 usage error, 3 the
//! equivalence suite found a value gap.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::lab::{
    generate_batch, generate_corpus, run_suite, summarize_greedy, sweep_corpora, to_csv,
    uniform_grid, EquivalenceRow, GenParams, LabError, QueryMode, SuiteConfig, SuiteReport,
};
use crate::model::{parse_corpus, serialize_corpus, Corpus, CorpusError, Query, SelectionState};
use crate::objective::{expected_n_call, NCallParams, ObjectiveError};
use crate::ranker::{
    greedy_rank_traced, lambda_headline, mmr_rank, MmrConfig, RankError, RankTrace, Sim2Mode,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_EQUIVALENCE: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Invalid(_) | CliError::Io { .. } => EXIT_INVALID,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<RankError> for CliError {
    fn from(e: RankError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        match e {
            LabError::InvalidParams(msg) => CliError::Usage(msg),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Invalid(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ncall",
    version,
    about = "Expected n-call@k ranking and its MMR equivalence"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank a corpus with greedy expected n-call@k or MMR.
    Rank(RankArgs),
    /// Expected n-call@k of every prefix of a ranking.
    Evaluate(EvaluateArgs),
    /// Run the greedy-vs-MMR equivalence suite on seeded corpora.
    Verify(VerifyArgs),
    /// Mean MMR outcome over a grid of trade-off weights.
    Sweep(SweepArgs),
    /// Write a seeded synthetic corpus file.
    GenCorpus(GenCorpusArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Greedy,
    Mmr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Sim2Arg {
    Qcond,
    Qfree,
}

impl From<Sim2Arg> for Sim2Mode {
    fn from(arg: Sim2Arg) -> Self {
        match arg {
            Sim2Arg::Qcond => Sim2Mode::QueryConditioned,
            Sim2Arg::Qfree => Sim2Mode::QueryFree,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum QueryModeArg {
    Deterministic,
    Uniform,
    Dirichlet,
}

impl From<QueryModeArg> for QueryMode {
    fn from(arg: QueryModeArg) -> Self {
        match arg {
            QueryModeArg::Deterministic => QueryMode::Deterministic,
            QueryModeArg::Uniform => QueryMode::Uniform,
            QueryModeArg::Dirichlet => QueryMode::DirichletLike,
        }
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Write here instead of standard output.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value = "greedy")]
    pub method: Method,
    /// Required relevant count (greedy objective; default MMR weight n/(n+1)).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// MMR trade-off weight (mmr only).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// MMR diversity similarity (mmr only; default qcond).
    #[arg(long, value_enum)]
    pub sim2: Option<Sim2Arg>,
    /// Record each greedy step's dropped constant.
    #[arg(long)]
    pub diagnostics: bool,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub corpus: PathBuf,
    /// JSON array of ids, JSON object with a "ranking" array, or one id per line.
    pub ranking: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Inclusive integer range written `a..b`, `a..=b`, `a-b` or `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntRange {
    pub start: usize,
    pub end: usize,
}

impl FromStr for IntRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |x: &str| {
            x.trim()
                .parse::<usize>()
                .map_err(|e| format!("bad range bound `{x}`: {e}"))
        };
        let (start, end) = if let Some((a, b)) = s.split_once("..=") {
            (parse(a)?, parse(b)?)
        } else if let Some((a, b)) = s.split_once("..") {
            (parse(a)?, parse(b)?)
        } else if let Some((a, b)) = s.split_once('-') {
            (parse(a)?, parse(b)?)
        } else {
            let v = parse(s)?;
            (v, v)
        };
        if start > end {
            return Err(format!("empty range `{s}`"));
        }
        Ok(Self { start, end })
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Base seed; trial i uses seed + i.
    #[arg(long, visible_alias = "seeds", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "1..3")]
    pub n_range: IntRange,
    #[arg(long, default_value = "1..8")]
    pub k_range: IntRange,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Skip the n = 1 family with spread-out queries.
    #[arg(long)]
    pub deterministic_only: bool,
    /// Test hook: use this MMR weight instead of n/(n+1).
    #[arg(long, hide = true)]
    pub lambda_override: Option<f64>,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub subtopics: usize,
    #[arg(long, default_value_t = 10)]
    pub docs: usize,
    /// Documents get spread-out subtopic vectors instead of point masses.
    #[arg(long)]
    pub soft: bool,
    #[arg(long, value_enum, default_value = "deterministic")]
    pub query_mode: QueryModeArg,
    /// Zipf exponent of subtopic popularity.
    #[arg(long, default_value_t = 1.0)]
    pub skew: f64,
}

impl GenArgs {
    fn params(&self) -> GenParams {
        GenParams {
            seed: self.seed,
            num_subtopics: self.subtopics,
            num_docs: self.docs,
            deterministic: !self.soft,
            query_mode: self.query_mode.into(),
            skew: self.skew,
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Grid spacing from 0 to 1; 1/step must be an integer.
    #[arg(long, default_value_t = 0.05)]
    pub grid_step: f64,
    /// Explicit comma-separated weights (overrides --grid-step).
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[command(flatten)]
    pub gen: GenArgs,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(stderr, "{text}");
                EXIT_USAGE
            } else {
                let _ = write!(stdout, "{text}");
                EXIT_OK
            };
        }
    };
    match execute(cli.command, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(
    command: Command,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, CliError> {
    match command {
        Command::Rank(args) => cmd_rank(&args, stdout).map(|_| EXIT_OK),
        Command::Evaluate(args) => cmd_evaluate(&args, stdout, stderr).map(|_| EXIT_OK),
        Command::Verify(args) => cmd_verify(&args, stdout, stderr),
        Command::Sweep(args) => cmd_sweep(&args, stdout).map(|_| EXIT_OK),
        Command::GenCorpus(args) => cmd_gen_corpus(&args, stdout).map(|_| EXIT_OK),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_corpus(path: &Path) -> Result<(Corpus, Query), CliError> {
    let text = read_text(path)?;
    parse_corpus(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Writes to `path` through a temporary file renamed into place, or to stdout.
fn emit(text: &str, path: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let Some(path) = path else {
        return stdout
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            });
    };
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(text.as_bytes()).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn json_line<T: Serialize + ?Sized>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("report serialization cannot fail");
    text.push('\n');
    text
}

fn to_usize(v: u64) -> usize {
    usize::try_from(v).unwrap_or(usize::MAX)
}

#[derive(Debug, Serialize)]
struct RankOutput<'a> {
    method: &'a str,
    n: usize,
    k: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sim2: Option<Sim2Mode>,
    #[serde(flatten)]
    trace: &'a RankTrace,
}

#[derive(Debug, Serialize)]
struct RankRow<'a> {
    step: usize,
    id: &'a str,
    score: f64,
    degenerate: bool,
    tie_set: String,
}

pub fn cmd_rank(args: &RankArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if args.method == Method::Greedy {
        if args.lambda.is_some() {
            return Err(CliError::Usage(
                "--lambda only applies to --method mmr".into(),
            ));
        }
        if args.sim2.is_some() {
            return Err(CliError::Usage(
                "--sim2 only applies to --method mmr".into(),
            ));
        }
    } else if args.diagnostics {
        return Err(CliError::Usage(
            "--diagnostics only applies to --method greedy".into(),
        ));
    }
    let (n, k) = (to_usize(args.n), to_usize(args.k));
    if n > k {
        return Err(CliError::Usage(format!("--n {n} exceeds --k {k}")));
    }

    let (corpus, query) = load_corpus(&args.corpus)?;
    corpus.check_query(&query)?;
    let (trace, lambda, sim2) = match args.method {
        Method::Greedy => {
            let params = NCallParams::new(n, k)?;
            (
                greedy_rank_traced(&corpus, &query, params, args.diagnostics)?,
                None,
                None,
            )
        }
        Method::Mmr => {
            let lambda = args.lambda.unwrap_or_else(|| lambda_headline(n));
            let mode: Sim2Mode = args.sim2.unwrap_or(Sim2Arg::Qcond).into();
            let config =
                MmrConfig::new(lambda, mode).map_err(|e| CliError::Usage(e.to_string()))?;
            (
                mmr_rank(&corpus, &query, k, &config)?,
                Some(lambda),
                Some(mode),
            )
        }
    };

    let text = match args.out.format {
        Format::Json => json_line(&RankOutput {
            method: match args.method {
                Method::Greedy => "greedy",
                Method::Mmr => "mmr",
            },
            n,
            k,
            lambda,
            sim2,
            trace: &trace,
        }),
        Format::Csv => {
            let rows: Vec<RankRow> = trace
                .ranking
                .iter()
                .enumerate()
                .map(|(i, id)| RankRow {
                    step: i + 1,
                    id,
                    score: trace.step_scores[i],
                    degenerate: trace.degenerate_steps[i],
                    tie_set: trace.tie_sets[i].join(";"),
                })
                .collect();
            to_csv(&rows)?
        }
    };
    emit(&text, args.out.output.as_deref(), stdout)
}

/// Accepts a JSON array of ids, a JSON object with a `ranking` array (the
/// output of `rank`), or plain text with one id per line.
pub fn parse_ranking(text: &str) -> Result<Vec<String>, CliError> {
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(text) {
        let list = match &value {
            serde_json::Value::Array(_) => &value,
            serde_json::Value::Object(map) => map
                .get("ranking")
                .ok_or_else(|| CliError::Invalid("ranking object has no `ranking` field".into()))?,
            _ => return Err(CliError::Invalid("ranking must be a list of ids".into())),
        };
        return serde_json::from_value(list.clone())
            .map_err(|e| CliError::Invalid(format!("ranking: {e}")));
    }
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

#[derive(Debug, Serialize)]
struct PrefixValue {
    k: usize,
    value: f64,
}

pub fn cmd_evaluate(
    args: &EvaluateArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), CliError> {
    let (corpus, query) = load_corpus(&args.corpus)?;
    corpus.check_query(&query)?;
    let ranking = parse_ranking(&read_text(&args.ranking)?)?;
    let state = SelectionState::from_ids(&corpus, &ranking)?;
    let n = to_usize(args.n);
    if n > state.len() {
        let _ = writeln!(
            stderr,
            "warning: n = {n} exceeds the ranking length {}; nothing to evaluate",
            state.len()
        );
    }
    let values = (n..=state.len())
        .map(|k| {
            let value = expected_n_call(&state.prefix(k), &query, NCallParams::new(n, k)?)?;
            Ok(PrefixValue { k, value })
        })
        .collect::<Result<Vec<_>, ObjectiveError>>()?;
    let text = match args.out.format {
        Format::Json => json_line(&values),
        Format::Csv if values.is_empty() => "k,value\n".to_string(),
        Format::Csv => to_csv(&values)?,
    };
    emit(&text, args.out.output.as_deref(), stdout)
}

fn summary_table(report: &SuiteReport) -> String {
    let mut out = format!(
        "{:<22}{:>3}{:>3}{:>10}{:>8}{:>12}{:>9}{:>11}{:>8}\n",
        "family", "n", "k", "lambda", "trials", "max_gap", "gap_fail", "tie_mism", "degen"
    );
    for c in &report.cells {
        out.push_str(&format!(
            "{:<22}{:>3}{:>3}{:>10.6}{:>8}{:>12.3e}{:>9}{:>11}{:>8}\n",
            c.family.to_string(),
            c.n,
            c.k,
            c.lambda,
            c.trials,
            c.value_gap,
            c.gap_failures,
            c.tieset_mismatches,
            c.degenerate_steps
        ));
    }
    out.push_str(if report.passed() {
        "all value gaps within 1e-12\n"
    } else {
        "EQUIVALENCE FAILED: value gaps above 1e-12\n"
    });
    out
}

pub fn cmd_verify(
    args: &VerifyArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, CliError> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    if args.n_range.start == 0 || args.k_range.start == 0 {
        return Err(CliError::Usage(
            "n and k ranges must start at 1 or above".into(),
        ));
    }
    if args.k_range.end > 12 {
        return Err(CliError::Usage(
            "suite corpora hold at most 12 documents; k must be <= 12".into(),
        ));
    }
    let config = SuiteConfig {
        seed: args.seed,
        n_values: (args.n_range.start..=args.n_range.end).collect(),
        k_min: args.k_range.start,
        k_max: args.k_range.end,
        trials: args.trials,
        lambda_override: args.lambda_override,
        include_point_mass_documents: !args.deterministic_only,
    };
    let report = run_suite(&config)?;
    let text = match args.out.format {
        Format::Json => json_line(&report),
        Format::Csv => {
            let mut text = to_csv(&report.cells)?;
            if !report.findings.is_empty() {
                let rows: Vec<EquivalenceRow> = report.findings.iter().map(Into::into).collect();
                text.push('\n');
                text.push_str(&to_csv(&rows)?);
            }
            text
        }
    };
    emit(&text, args.out.output.as_deref(), stdout)?;
    let _ = write!(stderr, "{}", summary_table(&report));
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_EQUIVALENCE
    })
}

fn sweep_grid(args: &SweepArgs) -> Result<Vec<f64>, CliError> {
    if let Some(list) = &args.lambdas {
        return Ok(list.clone());
    }
    let step = args.grid_step;
    if !(step > 0.0 && step <= 1.0) {
        return Err(CliError::Usage(format!(
            "--grid-step {step} must lie in (0, 1]"
        )));
    }
    let steps = (1.0 / step).round();
    if (steps * step - 1.0).abs() > 1e-9 {
        return Err(CliError::Usage(format!(
            "1 / --grid-step ({step}) must be an integer"
        )));
    }
    Ok(uniform_grid(steps as usize))
}

#[derive(Debug, Serialize)]
struct SweepOutput<'a> {
    rows: &'a [crate::lab::SweepRow],
    greedy: crate::lab::RankingSummary,
}

pub fn cmd_sweep(args: &SweepArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let (n, k) = (to_usize(args.n), to_usize(args.k));
    if n > k {
        return Err(CliError::Usage(format!("--n {n} exceeds --k {k}")));
    }
    if k > args.gen.docs {
        return Err(CliError::Usage(format!(
            "--k {k} exceeds --docs {}",
            args.gen.docs
        )));
    }
    let grid = sweep_grid(args)?;
    let corpora = generate_batch(&args.gen.params(), args.trials)?;
    let rows = sweep_corpora(&corpora, n, k, &grid)?;
    let text = match args.out.format {
        Format::Json => json_line(&SweepOutput {
            rows: &rows,
            greedy: summarize_greedy(&corpora, n, k)?,
        }),
        Format::Csv => to_csv(&rows)?,
    };
    emit(&text, args.out.output.as_deref(), stdout)
}

pub fn cmd_gen_corpus(args: &GenCorpusArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let (corpus, query) = generate_corpus(&args.gen.params())?;
    emit(
        &serialize_corpus(&corpus, &query),
        args.output.as_deref(),
        stdout,
    )
}
