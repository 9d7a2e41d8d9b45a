//! Compile and run OpenMP code cells.
//!
//! A cell is C, C++ or Fortran source, optionally headed by directive lines
//! (`//%key: value`, or `!%key: value` for Fortran) that pick the language,
//! compiler, flags, environment, time limit, repetition count and the
//! expected outcome. Running a cell more than once lets [`judge`] tell a
//! deterministic program from one with a data race.

mod directives;
mod process;
mod toolchain;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use directives::{
    has_directives, parse_directives, parse_directives_with, CellDirectives, DirectiveError, Expect, Lang,
};
pub use process::{compile, run, CancelFlag};
pub use toolchain::{build_compile_argv, find_executable, ToolchainConfig};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Directive(#[from] DirectiveError),
    #[error("compiler not found: {0}")]
    CompilerNotFound(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("failed to start program: {0}")]
    SpawnFailure(String),
    #[error("invalid toolchain configuration: {0}")]
    Config(String),
    #[error("expect: nondeterministic needs at least 2 runs")]
    ExpectationNeedsRuns,
}

impl ExecError {
    /// Missing toolchain or broken environment, as opposed to a problem
    /// with the cell itself.
    pub fn is_infrastructure(&self) -> bool {
        !matches!(self, ExecError::Directive(_) | ExecError::ExpectationNeedsRuns)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileResult {
    pub ok: bool,
    pub diagnostics: String,
    pub duration_ms: u64,
    pub binary_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitCode {
    Code(i32),
    /// Terminated by this signal number.
    Signal(i32),
}

impl ExitCode {
    pub fn success(self) -> bool {
        self == ExitCode::Code(0)
    }
}

impl fmt::Display for ExitCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExitCode::Code(c) => write!(f, "exit {c}"),
            ExitCode::Signal(s) => write!(f, "signal {s}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub exit_code: ExitCode,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub duration_ms: u64,
    pub timed_out: bool,
    pub interrupted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub compile: CompileResult,
    pub runs: Vec<RunResult>,
    /// `Some` only when there were at least two runs.
    pub deterministic: Option<bool>,
}

impl ExecutionOutcome {
    pub fn interrupted(&self) -> bool {
        self.runs.iter().any(|r| r.interrupted)
    }

    pub fn timed_out(&self) -> bool {
        self.runs.iter().any(|r| r.timed_out)
    }

    /// Number of distinct stdout byte strings across runs.
    pub fn distinct_outputs(&self) -> usize {
        let mut seen: Vec<&[u8]> = Vec::new();
        for r in &self.runs {
            if !seen.contains(&r.stdout.as_slice()) {
                seen.push(&r.stdout);
            }
        }
        seen.len()
    }
}

/// Identical stdout bytes and exit codes across all runs; `None` below two runs.
pub fn determinism(runs: &[RunResult]) -> Option<bool> {
    let (first, rest) = runs.split_first()?;
    if rest.is_empty() {
        return None;
    }
    Some(rest.iter().all(|r| r.stdout == first.stdout && r.exit_code == first.exit_code))
}

/// Parse directives, compile, and run. Compiler diagnostics, crashes and
/// timeouts are part of the outcome; only environment problems are errors.
pub fn execute_cell(source: &str, cfg: &ToolchainConfig) -> Result<ExecutionOutcome, ExecError> {
    let (d, body) = parse_directives(source)?;
    execute(&d, body, cfg, &CancelFlag::new())
}

/// Execute an already-parsed cell in a private temporary workdir. Setting
/// `cancel` kills the running child and stops further runs.
pub fn execute(
    d: &CellDirectives,
    body: &str,
    cfg: &ToolchainConfig,
    cancel: &CancelFlag,
) -> Result<ExecutionOutcome, ExecError> {
    let workdir = tempfile::Builder::new().prefix("ompbook-").tempdir().map_err(|e| ExecError::Io(e.to_string()))?;
    let compile = process::compile_with(d, body, workdir.path(), cfg, cancel)?;
    let mut runs = Vec::new();
    if let Some(binary) = compile.binary_path.as_deref() {
        for _ in 0..d.runs {
            if cancel.is_cancelled() {
                break;
            }
            let result = process::run_with(binary, d, cfg, cancel)?;
            let stop = result.interrupted;
            runs.push(result);
            if stop {
                break;
            }
        }
    }
    let deterministic = determinism(&runs);
    Ok(ExecutionOutcome { compile, runs, deterministic })
}

/// Does `outcome` meet `expect`?
pub fn judge(outcome: &ExecutionOutcome, expect: Expect) -> Result<bool, ExecError> {
    let clean_runs = || outcome.runs.iter().all(|r| r.exit_code.success() && !r.timed_out && !r.interrupted);
    match expect {
        Expect::Ok => Ok(outcome.compile.ok && clean_runs() && outcome.deterministic != Some(false)),
        Expect::CompileError => Ok(!outcome.compile.ok),
        Expect::Nondeterministic => {
            if !outcome.compile.ok {
                return Ok(false);
            }
            if outcome.runs.len() < 2 {
                return Err(ExecError::ExpectationNeedsRuns);
            }
            Ok(outcome.deterministic == Some(false))
        }
    }
}
