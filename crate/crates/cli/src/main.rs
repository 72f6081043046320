//! `xmlboltz`: compile a RELAX NG grammar to a generating-function system,
//! solve it, and sample random documents of a given size.

mod manifest;
mod plugin;

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use xmlboltz::newton::OracleTable;
use xmlboltz::sampler::{AttemptStats, DEFAULT_MAX_ATTEMPTS, DEFAULT_TOLERANCE};
use xmlboltz::{
    compile, parse_grammar, sample_in_window, solve, GfSystem, Grammar, Parameter, SampleError, SamplerConfig,
    SizeWindow, SolveError, SolveOptions,
};

use crate::manifest::PipelineManifest;

const EXIT_EXHAUSTED: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "xmlboltz", version, about = "Uniform random XML documents from RELAX NG grammars")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Translate a grammar into a system of generating-function equations.
    Compile(CompileArgs),
    /// Evaluate a system's generating functions near its singularity.
    Solve(SolveArgs),
    /// Sample documents of a target size.
    Sample(SampleArgs),
}

#[derive(Args)]
struct CompileArgs {
    grammar: PathBuf,
    /// Output system file [default: the grammar path with extension .sys]
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Record grammar and system digests in this manifest file.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug)]
struct XArg(Parameter);

impl FromStr for XArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(XArg(Parameter::Auto));
        }
        match s.parse::<f64>() {
            Ok(x) if x > 0.0 && x.is_finite() => Ok(XArg(Parameter::Explicit(x))),
            _ => Err(format!("expected AUTO or a positive number, got `{s}`")),
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    system: PathBuf,
    /// Output oracle file [default: the system path with extension .oracle]
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Parameter to evaluate at, or AUTO for just below the singularity.
    #[arg(long, default_value = "AUTO")]
    x: XArg,
    /// Bisection stops once the singularity bracket is this narrow.
    #[arg(long)]
    dichotomy_tolerance: Option<f64>,
    /// AUTO evaluates at rho_lo * (1 - backoff).
    #[arg(long)]
    backoff: Option<f64>,
    /// Add the oracle to this manifest file.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    grammar: PathBuf,
    oracle: PathBuf,
    /// Target size (elements plus attributes).
    #[arg(short = 'n', long)]
    size: u64,
    /// Relative size tolerance: sizes in [n(1-e), n(1+e)] are accepted.
    #[arg(short = 'e', long, default_value_t = DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Write doc-<index>.xml files here instead of standard output.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_ATTEMPTS)]
    max_attempts: u64,
    /// TOML file of value lists that override datatype samplers.
    #[arg(long)]
    datatype_plugin: Option<PathBuf>,
    /// Append one JSON line of statistics per document to this file.
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Start every document with an XML declaration.
    #[arg(long)]
    xml_declaration: bool,
    /// Check the grammar and oracle against this manifest first.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure { code: EXIT_INPUT, message: message.into() }
    }

    fn solver(message: impl Into<String>) -> Self {
        Failure { code: EXIT_SOLVER, message: message.into() }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_grammar(path: &Path) -> Result<Grammar, Failure> {
    let bytes = read(path)?;
    let mut grammar = parse_grammar(&bytes).map_err(|e| Failure::input(format!("{}:{e}", path.display())))?;
    grammar.set_source_path(path.display().to_string());
    Ok(grammar)
}

fn load_system(path: &Path) -> Result<(GfSystem, String), Failure> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Failure::input(format!("{}: not UTF-8", path.display())))?;
    let system = GfSystem::parse_text(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    Ok((system, text))
}

fn cmd_compile(args: CompileArgs) -> Result<(), Failure> {
    let grammar = load_grammar(&args.grammar)?;
    let system = compile(&grammar).map_err(|e| Failure::input(format!("{}: {e}", args.grammar.display())))?;
    let out = args.out.unwrap_or_else(|| args.grammar.with_extension("sys"));
    let text = system.to_text();
    write(&out, &text)?;
    let stats = system.stats();
    println!("elements {}", grammar.element_count());
    println!("equations {}", stats.equations);
    println!("monomials {}", stats.monomials);
    println!("system {}", out.display());
    if let Some(path) = args.manifest {
        let m = PipelineManifest::new(&args.grammar, &grammar.source().digest, &out, &system.digest());
        m.save(&path).map_err(Failure::input)?;
    }
    Ok(())
}

fn cmd_solve(args: SolveArgs) -> Result<(), Failure> {
    let (system, _) = load_system(&args.system)?;
    let mut options = SolveOptions::default();
    if let Some(t) = args.dichotomy_tolerance {
        options.dichotomy_tolerance = t;
    }
    if let Some(b) = args.backoff {
        options.backoff = b;
    }
    let started = Instant::now();
    let oracle = solve(&system, args.x.0, &options).map_err(|e| match e {
        SolveError::InvalidParameter(_) => Failure::input(e.to_string()),
        _ => Failure::solver(e.to_string()),
    })?;
    let elapsed = started.elapsed();
    let out = args.out.unwrap_or_else(|| args.system.with_extension("oracle"));
    let text = oracle.to_text();
    write(&out, &text)?;
    match oracle.bracket {
        Some(b) => {
            println!("rho-lo {:.12}", b.lo);
            println!("rho-hi {:.12}", b.hi);
            println!("rho {:.6}", b.estimate());
        }
        None => println!("rho inf"),
    }
    println!("x {:.12}", oracle.x);
    println!("iterations {}", oracle.iterations);
    println!("residual {:.3e}", oracle.residual);
    println!("time {:.3} ms", elapsed.as_secs_f64() * 1e3);
    println!("oracle {}", out.display());
    if let Some(path) = args.manifest {
        let mut m = PipelineManifest::load(&path).map_err(Failure::input)?;
        m.set_oracle(&system.digest(), &out, &xmlboltz::digest_hex(text.as_bytes())).map_err(Failure::input)?;
        m.save(&path).map_err(Failure::input)?;
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct StatsLine {
    doc_index: u64,
    attempts: Option<u64>,
    size: Option<u64>,
    seed: u64,
    millis: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn doc_path(dir: &Path, index: u64) -> PathBuf {
    dir.join(format!("doc-{index}.xml"))
}

fn sample_to<W: Write>(
    grammar: &Grammar,
    oracle: &OracleTable,
    config: &SamplerConfig,
    out: W,
    xml_declaration: bool,
) -> Result<AttemptStats, SampleError> {
    let mut out = BufWriter::new(out);
    let stats = sample_in_window(grammar, oracle, config, &mut out, xml_declaration)?;
    out.flush().map_err(|source| xmlboltz::SerializeError::Io { source, written: 0 })?;
    Ok(stats)
}

fn cmd_sample(args: SampleArgs) -> Result<(), Failure> {
    let grammar = load_grammar(&args.grammar)?;
    let oracle_bytes = read(&args.oracle)?;
    let oracle_text =
        String::from_utf8(oracle_bytes).map_err(|_| Failure::input(format!("{}: not UTF-8", args.oracle.display())))?;
    let oracle = OracleTable::parse_unchecked(&oracle_text)
        .map_err(|e| Failure::input(format!("{}: {e}", args.oracle.display())))?;
    if let Some(path) = &args.manifest {
        let m = PipelineManifest::load(path).map_err(Failure::input)?;
        m.check(&grammar.source().digest, &xmlboltz::digest_hex(oracle_text.as_bytes())).map_err(Failure::input)?;
    }

    let window = SizeWindow::new(args.size, args.tolerance).map_err(|e| Failure::input(e.to_string()))?;
    if args.tolerance == 0.0 {
        eprintln!("warning: tolerance 0 samples an exact size; expected cost grows quadratically with the size");
    }
    let mut config = SamplerConfig::new(window);
    config.max_attempts = args.max_attempts;
    if let Some(path) = &args.datatype_plugin {
        let text =
            String::from_utf8(read(path)?).map_err(|_| Failure::input(format!("{}: not UTF-8", path.display())))?;
        let overrides = plugin::load(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        config.registry.extend(overrides);
    }
    // Surface configuration and digest errors once, before any output.
    config.validate().map_err(|e| Failure::input(e.to_string()))?;
    xmlboltz::Sampler::new(&grammar, &oracle, config.registry.clone()).map_err(|e| match e {
        SampleError::AboveSingularity { .. } => Failure::solver(e.to_string()),
        _ => Failure::input(e.to_string()),
    })?;

    let run = |index: u64| -> (StatsLine, bool) {
        let mut config = config.clone();
        config.seed = args.seed.wrapping_add(index);
        let started = Instant::now();
        let result = match &args.out_dir {
            Some(dir) => {
                let path = doc_path(dir, index);
                let r = File::create(&path)
                    .map_err(|source| SampleError::Serialize(xmlboltz::SerializeError::Io { source, written: 0 }))
                    .and_then(|f| sample_to(&grammar, &oracle, &config, f, args.xml_declaration));
                if r.is_err() {
                    let _ = fs::remove_file(&path);
                }
                r
            }
            None => sample_to(&grammar, &oracle, &config, io::stdout().lock(), args.xml_declaration),
        };
        let millis = started.elapsed().as_secs_f64() * 1e3;
        let seed = config.seed;
        match result {
            Ok(s) => (
                StatsLine {
                    doc_index: index,
                    attempts: Some(s.attempts),
                    size: Some(s.size),
                    seed,
                    millis,
                    error: None,
                },
                true,
            ),
            Err(e) => {
                let attempts = match &e {
                    SampleError::Exhausted { attempts, .. } => Some(*attempts),
                    _ => None,
                };
                eprintln!("document {index}: {e}");
                (StatsLine { doc_index: index, attempts, size: None, seed, millis, error: Some(e.to_string()) }, false)
            }
        }
    };

    let results: Vec<(StatsLine, bool)> = match &args.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
            (0..args.count).into_par_iter().map(run).collect()
        }
        None => (0..args.count).map(run).collect(),
    };

    if let Some(path) = &args.stats {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        let mut out = BufWriter::new(file);
        for (line, _) in &results {
            let json = serde_json::to_string(line).expect("stats serialize");
            writeln!(out, "{json}").map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        }
        out.flush().map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    }

    let ok = results.iter().filter(|(_, ok)| *ok).count() as u64;
    match ok {
        _ if ok == args.count => Ok(()),
        0 => Err(Failure { code: EXIT_EXHAUSTED, message: format!("all {} documents failed", args.count) }),
        _ => Err(Failure {
            code: EXIT_PARTIAL,
            message: format!("{} of {} documents failed", args.count - ok, args.count),
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Compile(a) => cmd_compile(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Sample(a) => cmd_sample(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
