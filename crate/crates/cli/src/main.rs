use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ompbook_core::authoring::{
    cells_from_generated, cross_review, default_sequence, load_mock_fixture, merge_outlines, outline_sequence,
    parse_outline, render_costar, run_sequence, sequence_vars, AuthoringError, ChatProvider, CoStarPrompt,
    HttpProvider, Outline, ProviderConfig, Vars,
};
use ompbook_core::book::{build_book, load_chapter, reassemble, BookManifest};
use ompbook_core::canonical::to_canonical_bytes;
use ompbook_core::kernel;
use ompbook_core::protocol::parse_connection_file;
use ompbook_core::validator::{self, render_report, totals_line, ReportFormat, ValidatorError};
use ompbook_core::ToolchainConfig;

#[derive(Parser)]
#[command(
    name = "ompbook",
    version,
    propagate_version = true,
    about = "Interactive OpenMP books: kernel, builder, validator and authoring tools"
)]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or register the notebook kernel.
    #[command(subcommand)]
    Kernel(KernelCommand),
    /// Turn a book manifest into notebooks and an index.
    Build { manifest: PathBuf },
    /// Compile and run every example in a book.
    Validate {
        manifest: PathBuf,
        /// Examples run concurrently (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
        /// Write the report here; stdout then only gets the totals line.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Toolchain configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Example and line counts of a book.
    Stats { manifest: PathBuf },
    /// Ask one or more providers for an outline, cross-review and merge.
    Outline {
        #[arg(long)]
        topic: String,
        #[command(flatten)]
        providers: ProviderArgs,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run the four-step chapter sequence against one provider.
    Chapter {
        #[arg(long)]
        topic: String,
        /// A chapter already written, shown to the provider as a model.
        #[arg(long)]
        reference: PathBuf,
        /// What the reference chapter is about.
        #[arg(long, default_value = "teams")]
        reference_topic: String,
        /// Usage descriptions and examples for the new chapter.
        #[arg(long)]
        material: Vec<PathBuf>,
        #[command(flatten)]
        providers: ProviderArgs,
        /// Use this provider when several are configured.
        #[arg(long)]
        provider: Option<String>,
        /// Write the draft here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the full transcript (JSON).
        #[arg(long)]
        transcript: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum KernelCommand {
    /// Serve a connection file until shutdown.
    Run {
        #[arg(long)]
        connection_file: PathBuf,
        /// Toolchain configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a kernelspec pointing at this executable.
    Install {
        #[arg(long, default_value = ompbook_core::DEFAULT_KERNEL_NAME)]
        name: String,
        /// Kernelspec directory (default: the user's Jupyter data dir).
        #[arg(long)]
        prefix: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ProviderArgs {
    /// Provider configuration (JSON object or list).
    #[arg(long)]
    provider_config: Option<PathBuf>,
    /// Offline responses instead of real providers.
    #[arg(long)]
    mock: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Text => ReportFormat::Text,
        }
    }
}

/// An error together with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

/// Validation failures, provider errors.
fn domain(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

/// Bad input files, missing toolchain, I/O.
fn infra(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn authoring_failure(e: AuthoringError) -> Failure {
    match e {
        AuthoringError::Provider { .. } | AuthoringError::AuthMissing(_) | AuthoringError::NotEnoughOutlines => {
            domain(e)
        }
        _ => infra(e),
    }
}

type Outcome = Result<u8, Failure>;

fn stdout(bytes: &[u8]) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes).and_then(|_| out.flush()).context("writing to stdout").map_err(infra)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display())).map_err(infra)
}

fn load_manifest(path: &Path) -> Result<BookManifest, Failure> {
    BookManifest::load(path).map_err(infra)
}

fn kernel_run(connection_file: &Path, config: Option<&Path>) -> Outcome {
    let raw =
        fs::read(connection_file).with_context(|| format!("reading {}", connection_file.display())).map_err(infra)?;
    let conn = parse_connection_file(&raw).map_err(infra)?;
    let cfg = ToolchainConfig::load(config).map_err(infra)?;
    kernel::serve(&conn, &cfg).map_err(infra)?;
    Ok(0)
}

fn kernel_install(name: &str, prefix: Option<PathBuf>, force: bool) -> Outcome {
    let prefix = prefix
        .or_else(kernel::default_kernelspec_prefix)
        .ok_or_else(|| infra(anyhow!("no --prefix given and no home directory to default to")))?;
    let path = kernel::install_kernelspec(name, &prefix, force).map_err(infra)?;
    stdout(format!("{}\n", path.display()).as_bytes())?;
    Ok(0)
}

fn build(manifest: &Path) -> Outcome {
    let manifest = load_manifest(manifest)?;
    let report = build_book(&manifest).map_err(infra)?;
    let mut listing = String::new();
    for path in report.notebooks.iter().chain([&report.index_json, &report.index_html]) {
        listing.push_str(&format!("{}\n", path.display()));
    }
    stdout(listing.as_bytes())?;
    Ok(0)
}

fn validate(
    manifest: &Path,
    jobs: Option<usize>,
    report: Option<&Path>,
    format: Format,
    config: Option<&Path>,
) -> Outcome {
    let manifest = load_manifest(manifest)?;
    let cfg = ToolchainConfig::load(config).map_err(infra)?;
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = validator::validate(&manifest, &cfg, jobs).map_err(|e| match e {
        ValidatorError::Directive { .. } => domain(e),
        _ => infra(e),
    })?;
    let rendered = render_report(&result, format.into());
    match report {
        Some(path) => {
            write_file(path, &rendered)?;
            stdout(format!("{}\n", totals_line(&result.totals)).as_bytes())?;
        }
        None => stdout(&rendered)?,
    }
    log::info!("validated {} examples in {} ms", result.totals.examples, result.wall_time_ms);
    Ok(if result.totals.all_passed() { 0 } else { 1 })
}

fn stats(manifest: &Path) -> Outcome {
    let manifest = load_manifest(manifest)?;
    let mut chapters = Vec::new();
    let mut total = validator::CorpusStats::default();
    for chapter in &manifest.chapters {
        let cells = load_chapter(&manifest, chapter).map_err(infra)?;
        let s = validator::stats_for_cells(&cells);
        total = total + s;
        chapters.push(json!({ "path": chapter.path, "stats": s }));
    }
    stdout(&to_canonical_bytes(&json!({ "chapters": chapters, "total": total })))?;
    Ok(0)
}

fn providers(args: &ProviderArgs) -> Result<Vec<Box<dyn ChatProvider>>, Failure> {
    let list: Vec<Box<dyn ChatProvider>> = match (&args.provider_config, &args.mock) {
        (Some(path), _) => ProviderConfig::load_all(path)
            .map_err(infra)?
            .into_iter()
            .map(|c| Box::new(HttpProvider::new(c)) as Box<dyn ChatProvider>)
            .collect(),
        (None, Some(path)) => {
            let raw = fs::read(path).with_context(|| format!("reading {}", path.display())).map_err(infra)?;
            load_mock_fixture(&raw).map_err(infra)?.into_iter().map(|m| Box::new(m) as Box<dyn ChatProvider>).collect()
        }
        (None, None) => unreachable!("clap requires one provider source"),
    };
    if list.is_empty() {
        return Err(infra(anyhow!("no providers configured")));
    }
    Ok(list)
}

fn system_prompt(topic: &str) -> Result<String, Failure> {
    let vars = Vars::from([("chapter_topic".to_owned(), topic.to_owned())]);
    render_costar(&CoStarPrompt::default(), &vars).map_err(authoring_failure)
}

fn outline(topic: &str, args: &ProviderArgs, format: Format) -> Outcome {
    let providers = providers(args)?;
    let system = system_prompt(topic)?;
    let vars = Vars::from([("chapter_topic".to_owned(), topic.to_owned())]);
    let mut outlines = BTreeMap::new();
    let mut ordered: Vec<Outline> = Vec::new();
    for p in &providers {
        let transcript =
            run_sequence(&outline_sequence(), p.as_ref(), &vars, Some(&system)).map_err(authoring_failure)?;
        let parsed = parse_outline(transcript.last_response().unwrap_or_default());
        if parsed.nodes.is_empty() {
            log::warn!("{}: no outline found in the response", p.id());
        }
        outlines.insert(p.id().to_owned(), parsed.clone());
        ordered.push(parsed);
    }
    let critiques = if outlines.len() >= 2 {
        let refs: Vec<&dyn ChatProvider> = providers.iter().map(|p| p.as_ref()).collect();
        let critiques = cross_review(&outlines, &refs, topic).map_err(authoring_failure)?;
        for c in &critiques {
            match (&c.text, &c.error) {
                (_, Some(e)) => log::warn!("{} reviewing {}: {e}", c.reviewer, c.author),
                (Some(text), None) => log::info!("{} on {}:\n{text}", c.reviewer, c.author),
                (None, None) => {}
            }
        }
        critiques
    } else {
        Vec::new()
    };
    let merged = merge_outlines(&ordered);
    match format {
        Format::Text => stdout(merged.to_markdown().as_bytes())?,
        Format::Json => {
            let doc = json!({ "topic": topic, "outlines": outlines, "critiques": critiques, "merged": merged });
            stdout(&to_canonical_bytes(&doc))?
        }
    }
    Ok(0)
}

struct ChapterArgs<'a> {
    topic: &'a str,
    reference: &'a Path,
    reference_topic: &'a str,
    material: &'a [PathBuf],
    providers: &'a ProviderArgs,
    provider: Option<&'a str>,
    output: Option<&'a Path>,
    transcript: Option<&'a Path>,
}

fn chapter(a: ChapterArgs) -> Outcome {
    let providers = providers(a.providers)?;
    let provider = match a.provider {
        Some(id) => {
            providers.iter().find(|p| p.id() == id).ok_or_else(|| infra(anyhow!("no provider with id `{id}`")))?
        }
        None => &providers[0],
    };
    let mut steps = default_sequence();
    let mut vars = sequence_vars(a.topic, a.reference_topic, a.reference);
    if let Some(topic_step) = steps.iter_mut().find(|s| s.name == "topic") {
        for (i, path) in a.material.iter().enumerate() {
            let key = format!("material_{i}");
            vars.insert(key.clone(), path.to_string_lossy().into_owned());
            topic_step.attachments.push(format!("{{{{{key}}}}}"));
        }
    }
    let system = system_prompt(a.topic)?;
    let transcript = run_sequence(&steps, provider.as_ref(), &vars, Some(&system)).map_err(authoring_failure)?;
    if let Some(path) = a.transcript {
        let value = serde_json::to_value(&transcript).context("serializing transcript").map_err(infra)?;
        write_file(path, &to_canonical_bytes(&value))?;
    }
    let cells = cells_from_generated(transcript.last_response().unwrap_or_default()).map_err(domain)?;
    let draft = reassemble(&cells);
    match a.output {
        Some(path) => write_file(path, draft.as_bytes())?,
        None => stdout(draft.as_bytes())?,
    }
    Ok(0)
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::Kernel(KernelCommand::Run { connection_file, config }) => {
            kernel_run(&connection_file, config.as_deref())
        }
        Command::Kernel(KernelCommand::Install { name, prefix, force }) => kernel_install(&name, prefix, force),
        Command::Build { manifest } => build(&manifest),
        Command::Validate { manifest, jobs, report, format, config } => {
            validate(&manifest, jobs, report.as_deref(), format, config.as_deref())
        }
        Command::Stats { manifest } => stats(&manifest),
        Command::Outline { topic, providers, format } => outline(&topic, &providers, format),
        Command::Chapter { topic, reference, reference_topic, material, providers, provider, output, transcript } => {
            chapter(ChapterArgs {
                topic: &topic,
                reference: &reference,
                reference_topic: &reference_topic,
                material: &material,
                providers: &providers,
                provider: provider.as_deref(),
                output: output.as_deref(),
                transcript: transcript.as_deref(),
            })
        }
    }
}

/// The error chain, skipping causes their wrapper already quotes.
fn describe(error: &anyhow::Error) -> String {
    let mut text = error.to_string();
    for cause in error.chain().skip(1) {
        let cause = cause.to_string();
        if !text.contains(&cause) {
            text.push_str(&format!(": {cause}"));
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure { code, error }) => {
            eprintln!("error: {}", describe(&error));
            ExitCode::from(code)
        }
    }
}
