//! Whole-book example validation and corpus statistics.
//!
//! Every code cell of every chapter is compiled, run, and judged against
//! its `expect:` directive. Cells marked `expect: nondeterministic` are run
//! at least [`MIN_RACE_RUNS`] times.

use std::ops::Add;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::book::{load_chapter, BookError, BookManifest, CellId};
use crate::canonical::to_canonical_bytes;
use crate::exec::{
    self, CancelFlag, CellDirectives, DirectiveError, ExecutionOutcome, ExitCode, Expect, Lang, ToolchainConfig,
};

pub const MIN_RACE_RUNS: u32 = 20;
pub const DIAGNOSTICS_LIMIT: usize = 2048;

#[derive(Debug, thiserror::Error)]
pub enum ValidatorError {
    #[error(transparent)]
    Book(#[from] BookError),
    #[error("{chapter} cell {cell_index}: {source}")]
    Directive {
        chapter: String,
        cell_index: usize,
        #[source]
        source: DirectiveError,
    },
    #[error("infrastructure error: {0}")]
    Infrastructure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExampleRecord {
    pub chapter: String,
    pub cell_index: usize,
    pub cell_id: CellId,
    pub lang: Lang,
    pub source: String,
    pub directives: CellDirectives,
}

impl ExampleRecord {
    /// Source with the directive block removed.
    pub fn body(&self) -> &str {
        let offset: usize =
            self.source.split_inclusive('\n').take_while(|l| exec::has_directives(l)).map(str::len).sum();
        &self.source[offset..]
    }
}

/// Every code cell in manifest chapter order, then cell order.
pub fn collect_examples(manifest: &BookManifest) -> Result<Vec<ExampleRecord>, ValidatorError> {
    let base = manifest.base_directives().map_err(BookError::from)?;
    let mut records = Vec::new();
    for chapter in &manifest.chapters {
        for (cell_index, cell) in load_chapter(manifest, chapter)?.into_iter().enumerate() {
            if !cell.is_code() {
                continue;
            }
            let (mut directives, _) = cell.directives(&base).map_err(|source| ValidatorError::Directive {
                chapter: chapter.path.clone(),
                cell_index,
                source,
            })?;
            if directives.expect == Expect::Nondeterministic {
                directives.runs = directives.runs.max(MIN_RACE_RUNS);
            }
            records.push(ExampleRecord {
                chapter: chapter.path.clone(),
                cell_index,
                cell_id: cell.id.expect("load_chapter assigns ids"),
                lang: directives.lang,
                source: cell.source,
                directives,
            });
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub example_count: u64,
    pub code_line_count: u64,
    pub text_line_count: u64,
    pub total_line_count: u64,
}

impl Add for CorpusStats {
    type Output = CorpusStats;

    fn add(self, o: CorpusStats) -> CorpusStats {
        CorpusStats {
            example_count: self.example_count + o.example_count,
            code_line_count: self.code_line_count + o.code_line_count,
            text_line_count: self.text_line_count + o.text_line_count,
            total_line_count: self.total_line_count + o.total_line_count,
        }
    }
}

/// Lines in `s`; a final line without a newline still counts.
pub fn count_lines(s: &str) -> u64 {
    s.lines().count() as u64
}

pub fn stats_for_cells(cells: &[crate::book::Cell]) -> CorpusStats {
    let mut stats = CorpusStats::default();
    for cell in cells {
        let lines = count_lines(&cell.source);
        if cell.is_code() {
            stats.example_count += 1;
            stats.code_line_count += lines;
        } else {
            stats.text_line_count += lines;
        }
    }
    stats.total_line_count = stats.code_line_count + stats.text_line_count;
    stats
}

pub fn corpus_stats(manifest: &BookManifest) -> Result<CorpusStats, ValidatorError> {
    let mut total = CorpusStats::default();
    for chapter in &manifest.chapters {
        total = total + stats_for_cells(&load_chapter(manifest, chapter)?);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    CompileFailure,
    RunFailure,
    Timeout,
    Nondeterministic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub chapter: String,
    pub cell_index: usize,
    pub cell_id: CellId,
    pub lang: Lang,
    pub expect: Expect,
    pub runs: u32,
    pub passed: bool,
    pub failure: Option<FailureKind>,
    pub compile_ok: bool,
    /// `None` with fewer than two runs. How many distinct outputs a racy
    /// cell produced varies between validations, so it is not recorded.
    pub deterministic: Option<bool>,
    /// Distinct exit codes in order of first appearance.
    pub exit_codes: Vec<ExitCode>,
    pub timed_out: bool,
    pub diagnostics: String,
}

fn truncate(s: &str, limit: usize) -> String {
    if s.len() <= limit {
        return s.to_owned();
    }
    let mut end = limit;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    s[..end].to_owned()
}

/// Which bucket a failed example belongs to. The first unmet condition wins:
/// compilation, then time limit, then exit status, then determinism.
fn classify(outcome: &ExecutionOutcome, expect: Expect) -> FailureKind {
    if expect == Expect::CompileError || !outcome.compile.ok {
        return FailureKind::CompileFailure;
    }
    if outcome.timed_out() {
        return FailureKind::Timeout;
    }
    if outcome.runs.iter().any(|r| !r.exit_code.success()) {
        return FailureKind::RunFailure;
    }
    FailureKind::Nondeterministic
}

fn judge_record(record: &ExampleRecord, outcome: &ExecutionOutcome) -> ExampleResult {
    let expect = record.directives.expect;
    let passed = exec::judge(outcome, expect).unwrap_or(false);
    let mut exit_codes = Vec::new();
    for r in &outcome.runs {
        if !exit_codes.contains(&r.exit_code) {
            exit_codes.push(r.exit_code);
        }
    }
    ExampleResult {
        chapter: record.chapter.clone(),
        cell_index: record.cell_index,
        cell_id: record.cell_id.clone(),
        lang: record.lang,
        expect,
        runs: record.directives.runs,
        passed,
        failure: (!passed).then(|| classify(outcome, expect)),
        compile_ok: outcome.compile.ok,
        deterministic: outcome.deterministic,
        exit_codes,
        timed_out: outcome.timed_out(),
        diagnostics: truncate(&outcome.compile.diagnostics, DIAGNOSTICS_LIMIT),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub examples: u64,
    pub passed: u64,
    pub failed: u64,
    pub compile_failures: u64,
    pub run_failures: u64,
    pub timeouts: u64,
    pub nondeterministic: u64,
}

impl Totals {
    pub fn from_results(results: &[ExampleResult]) -> Totals {
        let mut t = Totals::default();
        for r in results {
            t.examples += 1;
            match r.failure {
                None => t.passed += 1,
                Some(kind) => {
                    t.failed += 1;
                    match kind {
                        FailureKind::CompileFailure => t.compile_failures += 1,
                        FailureKind::RunFailure => t.run_failures += 1,
                        FailureKind::Timeout => t.timeouts += 1,
                        FailureKind::Nondeterministic => t.nondeterministic += 1,
                    }
                }
            }
        }
        t
    }

    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub totals: Totals,
    pub results: Vec<ExampleResult>,
    pub stats: CorpusStats,
    pub wall_time_ms: u64,
}

/// Execute and judge every example on a pool of `jobs` workers. Results
/// come back in canonical order whatever the scheduling.
pub fn validate(
    manifest: &BookManifest,
    cfg: &ToolchainConfig,
    jobs: usize,
) -> Result<ValidationReport, ValidatorError> {
    let start = Instant::now();
    let records = collect_examples(manifest)?;
    let stats = corpus_stats(manifest)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ValidatorError::Infrastructure(e.to_string()))?;
    let results: Vec<ExampleResult> = pool.install(|| {
        records
            .par_iter()
            .map(|record| {
                let outcome =
                    exec::execute(&record.directives, record.body(), cfg, &CancelFlag::new()).map_err(|e| {
                        ValidatorError::Infrastructure(format!("{} cell {}: {e}", record.chapter, record.cell_index))
                    })?;
                log::debug!("{} cell {} done", record.chapter, record.cell_index);
                Ok(judge_record(record, &outcome))
            })
            .collect::<Result<_, ValidatorError>>()
    })?;
    Ok(ValidationReport {
        totals: Totals::from_results(&results),
        results,
        stats,
        wall_time_ms: start.elapsed().as_millis() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

fn failure_label(kind: FailureKind) -> &'static str {
    match kind {
        FailureKind::CompileFailure => "compile-fail",
        FailureKind::RunFailure => "run-fail",
        FailureKind::Timeout => "timeout",
        FailureKind::Nondeterministic => "nondet",
    }
}

pub fn totals_line(t: &Totals) -> String {
    format!(
        "PASS {}/{}  compile-fail {}  run-fail {}  nondet {}",
        t.passed, t.examples, t.compile_failures, t.run_failures, t.nondeterministic
    )
}

pub fn render_report(report: &ValidationReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let value = serde_json::to_value(report).expect("report serializes");
            to_canonical_bytes(&value)
        }
        ReportFormat::Text => {
            let mut out = String::new();
            for r in &report.results {
                let status = match r.failure {
                    None => "PASS".to_owned(),
                    Some(kind) => format!("FAIL({})", failure_label(kind)),
                };
                out.push_str(&format!(
                    "{status} {}#{} {} {} expect={}\n",
                    r.chapter, r.cell_index, r.cell_id, r.lang, r.expect
                ));
            }
            out.push_str(&totals_line(&report.totals));
            out.push('\n');
            if report.totals.timeouts > 0 {
                out.push_str(&format!("timeout {}\n", report.totals.timeouts));
            }
            out.into_bytes()
        }
    }
}
