use std::env;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CellDirectives, ExecError};

/// Compilers and run defaults. Built-ins, then an optional config file,
/// then `OMPBOOK_*` environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolchainConfig {
    pub cc: String,
    pub cxx: String,
    pub fc: String,
    pub default_omp_threads: u32,
    pub default_timeout_s: f64,
    pub openmp_flag: String,
}

impl Default for ToolchainConfig {
    fn default() -> Self {
        ToolchainConfig {
            cc: "gcc".into(),
            cxx: "g++".into(),
            fc: "gfortran".into(),
            default_omp_threads: 4,
            default_timeout_s: 30.0,
            openmp_flag: "-fopenmp".into(),
        }
    }
}

impl ToolchainConfig {
    pub fn from_file(path: &Path) -> Result<Self, ExecError> {
        let raw = std::fs::read(path).map_err(|e| ExecError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_slice(&raw).map_err(|e| ExecError::Config(format!("{}: {e}", path.display())))
    }

    /// Overlay `OMPBOOK_CC`, `OMPBOOK_CXX`, `OMPBOOK_FC`,
    /// `OMPBOOK_OMP_NUM_THREADS` and `OMPBOOK_TIMEOUT`.
    pub fn with_env(self) -> Result<Self, ExecError> {
        self.with_vars(|name| env::var(name).ok())
    }

    pub fn with_vars(mut self, var: impl Fn(&str) -> Option<String>) -> Result<Self, ExecError> {
        if let Some(v) = var("OMPBOOK_CC") {
            self.cc = v;
        }
        if let Some(v) = var("OMPBOOK_CXX") {
            self.cxx = v;
        }
        if let Some(v) = var("OMPBOOK_FC") {
            self.fc = v;
        }
        if let Some(v) = var("OMPBOOK_OMP_NUM_THREADS") {
            self.default_omp_threads = v
                .parse()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| ExecError::Config(format!("OMPBOOK_OMP_NUM_THREADS={v}")))?;
        }
        if let Some(v) = var("OMPBOOK_TIMEOUT") {
            self.default_timeout_s = v
                .parse()
                .ok()
                .filter(|t: &f64| t.is_finite() && *t > 0.0)
                .ok_or_else(|| ExecError::Config(format!("OMPBOOK_TIMEOUT={v}")))?;
        }
        Ok(self)
    }

    /// Built-ins < file < environment.
    pub fn load(file: Option<&Path>) -> Result<Self, ExecError> {
        match file {
            Some(path) => Self::from_file(path)?.with_env(),
            None => Self::default().with_env(),
        }
    }
}

/// Locate `name` the way a shell would: paths containing `/` are taken
/// as-is, anything else is searched for on `PATH`.
pub fn find_executable(name: &str) -> Option<PathBuf> {
    fn executable(p: &Path) -> bool {
        use std::os::unix::fs::PermissionsExt;
        p.metadata().map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0).unwrap_or(false)
    }
    if name.is_empty() {
        return None;
    }
    if name.contains('/') {
        let p = PathBuf::from(name);
        return executable(&p).then_some(p);
    }
    let path = env::var_os("PATH")?;
    env::split_paths(&path).map(|dir| dir.join(name)).find(|p| executable(p))
}

/// `[compiler] ++ cflags ++ ["-o", bin, src] ++ ldflags`.
pub fn build_compile_argv(
    d: &CellDirectives,
    cfg: &ToolchainConfig,
    src: &str,
    bin: &str,
) -> Result<Vec<String>, ExecError> {
    let compiler = d.compiler(cfg);
    if find_executable(compiler).is_none() {
        return Err(ExecError::CompilerNotFound(compiler.to_owned()));
    }
    let mut argv = vec![compiler.to_owned()];
    argv.extend(d.cflags(cfg));
    argv.extend(["-o".to_owned(), bin.to_owned(), src.to_owned()]);
    argv.extend(d.ldflags.iter().cloned());
    Ok(argv)
}
