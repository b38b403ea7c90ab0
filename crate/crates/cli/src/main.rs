use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tokenprune_core::analysis::{entropy_shift_report, overhead_report, DEFAULT_SHIFT_THRESHOLD};
use tokenprune_core::scorer::ENDPOINT_ENV;
use tokenprune_core::types::{surfaces, tokens_from_surfaces};
use tokenprune_core::{
    analysis, compress_timed, BigramScorer, CompressionConfig, CompressionTrace, DeltaPDenominator,
    Error, FusionConfig, Iterations, Normalize, RemoteScorer, ScoredSequence, Scorer,
    ScriptedScorer, TokenUnit,
};

#[derive(Parser)]
#[command(
    name = "tokenprune",
    version,
    about = "Attention-aware multi-stage prompt compression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress a prompt.
    Compress(CompressArgs),
    /// Diagnostic reports.
    #[command(subcommand)]
    Analyze(Analyze),
}

#[derive(Subcommand)]
enum Analyze {
    /// Surprisal shift of surviving tokens after compression.
    Shift(ShiftArgs),
    /// Pearson correlation of two scorers' surprisal on one input.
    Correlate(CorrelateArgs),
    /// Run a compression and report per-stage cost.
    Overhead(OverheadArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Additive,
    Multiplicative,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizeArg {
    None,
    Minmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum DenominatorArg {
    Original,
    Current,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerKind {
    Bigram,
    Scripted,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
    Csv,
}

fn parse_iterations(s: &str) -> Result<Iterations, String> {
    if s == "auto" {
        return Ok(Iterations::Auto);
    }
    s.parse::<u32>()
        .map(Iterations::Fixed)
        .map_err(|_| format!("expected a positive integer or `auto`, got `{s}`"))
}

#[derive(Args)]
struct ScorerArgs {
    #[arg(long, value_enum, default_value = "bigram")]
    scorer: ScorerKind,
    /// Training text for the bigram scorer.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// JSON script for the scripted scorer.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Base URL of a scorer service.
    #[arg(long, env = ENDPOINT_ENV)]
    endpoint: Option<String>,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, default_value_t = 0.5)]
    rate: f64,
    /// Stage count, or `auto`.
    #[arg(long, default_value = "auto", value_parser = parse_iterations)]
    iterations: Iterations,
    #[arg(long, value_enum, default_value = "additive")]
    fusion: FusionArg,
    #[arg(long, default_value_t = 0.8)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "none")]
    normalize: NormalizeArg,
    /// Allow adjacent tokens to be dropped in the same stage.
    #[arg(long)]
    no_protect: bool,
    /// Single stage.
    #[arg(long)]
    no_dynamic: bool,
    /// Rank by surprisal only.
    #[arg(long)]
    attention_off: bool,
    #[arg(long, value_enum, default_value = "original")]
    delta_p_denominator: DenominatorArg,
    #[command(flatten)]
    scorer: ScorerArgs,
    /// Input file (stdin if omitted).
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Treat the input as a JSON array of token strings.
    #[arg(long)]
    pre_tokenized: bool,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    engine: EngineArgs,
    /// Output file (stdout if omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Where to write the JSONL trace.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the surviving tokens as a JSON array instead of text.
    #[arg(long)]
    emit_tokens: bool,
}

#[derive(Args)]
struct ShiftArgs {
    /// The uncompressed prompt the trace was produced from.
    #[arg(long)]
    original: PathBuf,
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    pre_tokenized: bool,
    #[arg(long, default_value_t = DEFAULT_SHIFT_THRESHOLD)]
    threshold: f64,
    #[command(flatten)]
    scorer: ScorerArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct CorrelateArgs {
    /// A service URL or `bigram:<corpus path>`.
    #[arg(long)]
    scorer_a: String,
    #[arg(long)]
    scorer_b: String,
    #[arg(short, long)]
    input: Option<PathBuf>,
    #[arg(long)]
    pre_tokenized: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct OverheadArgs {
    #[command(flatten)]
    engine: EngineArgs,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

/// A failure and the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn io(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_scorer_failure() {
            3
        } else if matches!(e, Error::Io(_) | Error::TraceFormat(_)) {
            2
        } else {
            1
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Compress(args) => run_compress(args),
        Command::Analyze(Analyze::Shift(args)) => run_shift(args),
        Command::Analyze(Analyze::Correlate(args)) => run_correlate(args),
        Command::Analyze(Analyze::Overhead(args)) => run_overhead(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn read_input(path: Option<&Path>) -> CliResult<String> {
    match path {
        Some(p) => read_file(p),
        None => {
            let mut s = String::new();
            io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| Failure::io(format!("stdin: {e}")))?;
            Ok(s)
        }
    }
}

fn write_output(path: Option<&Path>, body: &str) -> CliResult {
    let result = match path {
        Some(p) => std::fs::write(p, body),
        None => io::stdout().write_all(body.as_bytes()),
    };
    result.map_err(|e| Failure::io(format!("writing output: {e}")))
}

fn write_trace(path: &Path, trace: &CompressionTrace) -> CliResult {
    let file = File::create(path).map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
    trace
        .write_jsonl(io::BufWriter::new(file))
        .map_err(Failure::from)
}

fn tokens_from_input(
    text: &str,
    pre_tokenized: bool,
    scorer: &dyn Scorer,
) -> CliResult<Vec<TokenUnit>> {
    if pre_tokenized {
        let words: Vec<String> = serde_json::from_str(text).map_err(|e| {
            Failure::io(format!(
                "pre-tokenized input is not a JSON string array: {e}"
            ))
        })?;
        Ok(tokens_from_surfaces(&words))
    } else {
        scorer.tokenize(text).map_err(Failure::from)
    }
}

fn build_scorer(args: &ScorerArgs) -> CliResult<Box<dyn Scorer>> {
    Ok(match args.scorer {
        ScorerKind::Bigram => {
            let path = args
                .corpus
                .as_deref()
                .ok_or_else(|| Failure::config("--scorer bigram needs --corpus"))?;
            Box::new(BigramScorer::from_corpus(&read_file(path)?)?)
        }
        ScorerKind::Scripted => {
            let path = args
                .script
                .as_deref()
                .ok_or_else(|| Failure::config("--scorer scripted needs --script"))?;
            Box::new(ScriptedScorer::from_json(&read_file(path)?)?)
        }
        ScorerKind::Remote => {
            let endpoint = args.endpoint.as_deref().ok_or_else(|| {
                Failure::config(format!(
                    "--scorer remote needs --endpoint or {ENDPOINT_ENV}"
                ))
            })?;
            Box::new(RemoteScorer::new(endpoint))
        }
    })
}

/// `http://…` or `https://…` is a service, `bigram:<path>` trains on a corpus.
fn scorer_from_spec(spec: &str) -> CliResult<Box<dyn Scorer>> {
    if let Some(path) = spec.strip_prefix("bigram:") {
        Ok(Box::new(BigramScorer::from_corpus(&read_file(
            Path::new(path),
        )?)?))
    } else if spec.starts_with("http://") || spec.starts_with("https://") {
        Ok(Box::new(RemoteScorer::new(spec)))
    } else {
        Err(Failure::config(format!(
            "scorer `{spec}` is neither a URL nor bigram:<corpus>"
        )))
    }
}

impl EngineArgs {
    fn config(&self) -> CompressionConfig {
        let fusion = match self.fusion {
            FusionArg::Additive => FusionConfig::additive(self.alpha),
            FusionArg::Multiplicative => FusionConfig::multiplicative(),
        };
        let normalize = match self.normalize {
            NormalizeArg::None => Normalize::None,
            NormalizeArg::Minmax => Normalize::Minmax,
        };
        CompressionConfig {
            target_rate: self.rate,
            iterations: self.iterations,
            fusion: fusion.normalized(normalize),
            protect_consecutive: !self.no_protect,
            attention_off: self.attention_off,
            dynamic_off: self.no_dynamic,
            delta_p_denominator: match self.delta_p_denominator {
                DenominatorArg::Original => DeltaPDenominator::Original,
                DenominatorArg::Current => DeltaPDenominator::Current,
            },
            ..CompressionConfig::default()
        }
    }

    fn load(&self) -> CliResult<(CompressionConfig, Box<dyn Scorer>, Vec<TokenUnit>)> {
        let config = self.config();
        let violations = tokenprune_core::validate_config(&config);
        if !violations.is_empty() {
            return Err(Error::Config(violations).into());
        }
        let scorer = build_scorer(&self.scorer)?;
        let text = read_input(self.input.as_deref())?;
        let prompt = tokens_from_input(&text, self.pre_tokenized, scorer.as_ref())?;
        Ok((config, scorer, prompt))
    }
}

fn run_compress(args: CompressArgs) -> CliResult {
    let (config, scorer, prompt) = args.engine.load()?;
    let (out, _) = match compress_timed(&prompt, scorer.as_ref(), &config) {
        Ok(ok) => ok,
        Err(e) => {
            let partial = e.partial_trace().cloned();
            let mut failure = Failure::from(e);
            if let (Some(path), Some(partial)) = (&args.trace, partial) {
                if write_trace(path, &partial).is_ok() {
                    failure.message = format!(
                        "{}; partial trace written to {}",
                        failure.message,
                        path.display()
                    );
                }
            }
            return Err(failure);
        }
    };
    let body = if args.emit_tokens {
        serde_json::to_string(&surfaces(&out.tokens)).expect("strings serialize")
    } else {
        scorer.detokenize(&out.tokens)
    };
    write_output(args.output.as_deref(), &body)?;
    if let Some(path) = &args.trace {
        write_trace(path, &out.trace)?;
    }
    eprintln!(
        "achieved rate {:.4} ({} of {} tokens kept, {} stages)",
        out.trace.achieved_rate,
        out.tokens.len(),
        prompt.len(),
        out.trace.stages.len()
    );
    Ok(())
}
fn run_shift(args: ShiftArgs) -> CliResult {
    let scorer = build_scorer(&args.scorer)?;
    let text = read_file(&args.original)?;
    let file = File::open(&args.trace)
        .map_err(|e| Failure::io(format!("{}: {e}", args.trace.display())))?;
    let trace = CompressionTrace::read_jsonl(BufReader::new(file))?;
    let tokens = tokens_from_input(&text, args.pre_tokenized, scorer.as_ref())?;
    trace.check_partition(tokens.len())?;
    let before = scorer.score(&tokens)?;
    let zeros = vec![0.0; tokens.len()];
    let kept: Vec<TokenUnit> = trace
        .kept_indices
        .iter()
        .map(|&i| tokens[i].clone())
        .collect();
    let original = ScoredSequence::new(tokens, before, zeros)?;
    let report = entropy_shift_report(&original, &kept, scorer.as_ref(), args.threshold)?;
    let body = match args.format {
        Format::Json => to_json(&report),
        Format::Table => report.to_table(),
        Format::Csv => report.to_csv(),
    };
    write_output(None, &body)
}

fn run_correlate(args: CorrelateArgs) -> CliResult {
    let a = scorer_from_spec(&args.scorer_a)?;
    let b = scorer_from_spec(&args.scorer_b)?;
    let text = read_input(args.input.as_deref())?;
    let tokens = tokens_from_input(&text, args.pre_tokenized, a.as_ref())?;
    let r = analysis::cross_scorer_similarity(&tokens, a.as_ref(), b.as_ref())?;
    let body = match args.format {
        Format::Json => to_json(&serde_json::json!({ "pearson": r, "tokens": tokens.len() })),
        Format::Table => format!("pearson {r:.6}\n"),
        Format::Csv => format!("pearson,tokens\n{r},{}\n", tokens.len()),
    };
    write_output(None, &body)
}

fn run_overhead(args: OverheadArgs) -> CliResult {
    let (config, scorer, prompt) = args.engine.load()?;
    let (out, timings) = compress_timed(&prompt, scorer.as_ref(), &config)?;
    let report = overhead_report(&out.trace, &timings);
    let body = match args.format {
        Format::Json => to_json(&report),
        Format::Table => report.to_table(),
        Format::Csv => report.to_csv(),
    };
    write_output(None, &body)
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}
