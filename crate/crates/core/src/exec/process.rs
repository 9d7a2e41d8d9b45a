//! Child process management: capture, deadlines, and process-group kills.

use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use super::{CellDirectives, CompileResult, ExecError, ExitCode, RunResult, ToolchainConfig};

const POLL: Duration = Duration::from_millis(10);
const COMPILE_TIMEOUT: Duration = Duration::from_secs(300);

/// Shared flag that asks a running child to be killed.
#[derive(Debug, Clone, Default)]
pub struct CancelFlag(Arc<AtomicBool>);

impl CancelFlag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

struct Captured {
    status: ExitStatus,
    stdout: Vec<u8>,
    stderr: Vec<u8>,
    elapsed: Duration,
    timed_out: bool,
    cancelled: bool,
}

fn kill_group(child: &Child) {
    // The child leads its own group (process_group(0)), so pgid == pid.
    let pgid = child.id() as libc::pid_t;
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<Vec<u8>> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut pipe) = pipe {
            let _ = pipe.read_to_end(&mut buf);
        }
        buf
    })
}

fn spawn_capture(mut cmd: Command, timeout: Duration, cancel: &CancelFlag) -> std::io::Result<Captured> {
    cmd.stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::piped()).process_group(0);
    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());

    let deadline = start + timeout;
    let (mut timed_out, mut cancelled) = (false, false);
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if cancel.is_cancelled() {
            cancelled = true;
        } else if Instant::now() >= deadline {
            timed_out = true;
        }
        if timed_out || cancelled {
            kill_group(&child);
            break child.wait()?;
        }
        thread::sleep(POLL);
    };
    let elapsed = start.elapsed();
    // Reap anything the program left behind holding our pipes open.
    kill_group(&child);
    Ok(Captured {
        status,
        stdout: out.join().unwrap_or_default(),
        stderr: err.join().unwrap_or_default(),
        elapsed,
        timed_out,
        cancelled,
    })
}

fn exit_code(status: ExitStatus) -> ExitCode {
    match (status.code(), status.signal()) {
        (Some(code), _) => ExitCode::Code(code),
        (None, Some(sig)) => ExitCode::Signal(sig),
        (None, None) => ExitCode::Signal(0),
    }
}

/// Write `body` to `cell.<ext>` in `workdir` and compile it to `cell`.
/// Paths handed to the compiler are relative so diagnostics do not mention
/// the (random) workdir.
pub fn compile(
    d: &CellDirectives,
    body: &str,
    workdir: &Path,
    cfg: &ToolchainConfig,
) -> Result<CompileResult, ExecError> {
    compile_with(d, body, workdir, cfg, &CancelFlag::new())
}

pub(crate) fn compile_with(
    d: &CellDirectives,
    body: &str,
    workdir: &Path,
    cfg: &ToolchainConfig,
    cancel: &CancelFlag,
) -> Result<CompileResult, ExecError> {
    let src = format!("cell.{}", d.lang.extension());
    let bin = "cell";
    let argv = super::build_compile_argv(d, cfg, &src, bin)?;
    std::fs::write(workdir.join(&src), body).map_err(|e| ExecError::Io(e.to_string()))?;

    let mut cmd = Command::new(&argv[0]);
    cmd.args(&argv[1..]).current_dir(workdir);
    let cap = spawn_capture(cmd, COMPILE_TIMEOUT, cancel).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ExecError::CompilerNotFound(argv[0].clone()),
        _ => ExecError::Io(e.to_string()),
    })?;

    let mut diagnostics = String::from_utf8_lossy(&cap.stdout).into_owned();
    diagnostics.push_str(&String::from_utf8_lossy(&cap.stderr));
    if cap.timed_out {
        diagnostics.push_str("compiler timed out\n");
    }
    let binary: PathBuf = workdir.join(bin);
    let ok = cap.status.success() && !cap.timed_out && !cap.cancelled && binary.is_file();
    Ok(CompileResult {
        ok,
        diagnostics,
        duration_ms: cap.elapsed.as_millis() as u64,
        binary_path: ok.then_some(binary),
    })
}

/// Minimal child environment: search path, home, temp dir, thread count,
/// then the cell's own `env:` settings.
pub(crate) fn child_env(d: &CellDirectives, cfg: &ToolchainConfig) -> Vec<(String, String)> {
    let inherit = |name: &str, fallback: &str| std::env::var(name).unwrap_or_else(|_| fallback.to_owned());
    let mut env = vec![
        ("PATH".to_owned(), inherit("PATH", "/usr/local/bin:/usr/bin:/bin")),
        ("HOME".to_owned(), inherit("HOME", "/tmp")),
        ("TMPDIR".to_owned(), inherit("TMPDIR", "/tmp")),
        ("OMP_NUM_THREADS".to_owned(), cfg.default_omp_threads.to_string()),
    ];
    for (name, value) in &d.env {
        env.retain(|(n, _)| n != name);
        env.push((name.clone(), value.clone()));
    }
    env
}

/// Run a compiled binary once under the cell's limits.
pub fn run(binary: &Path, d: &CellDirectives, cfg: &ToolchainConfig) -> Result<RunResult, ExecError> {
    run_with(binary, d, cfg, &CancelFlag::new())
}

pub(crate) fn run_with(
    binary: &Path,
    d: &CellDirectives,
    cfg: &ToolchainConfig,
    cancel: &CancelFlag,
) -> Result<RunResult, ExecError> {
    let mut cmd = Command::new(binary);
    cmd.args(&d.args).env_clear().envs(child_env(d, cfg));
    if let Some(dir) = binary.parent() {
        cmd.current_dir(dir);
    }
    let timeout = Duration::from_secs_f64(d.timeout_s(cfg));
    let cap = spawn_capture(cmd, timeout, cancel).map_err(|e| ExecError::SpawnFailure(e.to_string()))?;
    Ok(RunResult {
        exit_code: exit_code(cap.status),
        stdout: cap.stdout,
        stderr: cap.stderr,
        duration_ms: cap.elapsed.as_millis() as u64,
        timed_out: cap.timed_out,
        interrupted: cap.cancelled,
    })
}
