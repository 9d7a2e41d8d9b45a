use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ToolchainConfig;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DirectiveError {
    #[error("unknown directive `{0}`")]
    UnknownDirective(String),
    #[error("bad value for directive `{key}`: {value:?}")]
    BadValue { key: String, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    #[default]
    C,
    Cpp,
    Fortran,
}

impl Lang {
    pub fn extension(self) -> &'static str {
        match self {
            Lang::C => "c",
            Lang::Cpp => "cpp",
            Lang::Fortran => "f90",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Lang::C => "c",
            Lang::Cpp => "cpp",
            Lang::Fortran => "fortran",
        }
    }

    /// Marker used for directive lines in this language's comment syntax.
    pub fn directive_prefix(self) -> &'static str {
        match self {
            Lang::Fortran => "!%",
            Lang::C | Lang::Cpp => "//%",
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lang {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "c" => Ok(Lang::C),
            "cpp" | "c++" | "cxx" => Ok(Lang::Cpp),
            "fortran" | "f90" => Ok(Lang::Fortran),
            _ => Err(()),
        }
    }
}

/// What a cell is expected to do when validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    #[default]
    Ok,
    CompileError,
    Nondeterministic,
}

impl FromStr for Expect {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "ok" => Ok(Expect::Ok),
            "compile_error" | "compile-error" => Ok(Expect::CompileError),
            "nondeterministic" => Ok(Expect::Nondeterministic),
            _ => Err(()),
        }
    }
}

impl fmt::Display for Expect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Expect::Ok => "ok",
            Expect::CompileError => "compile_error",
            Expect::Nondeterministic => "nondeterministic",
        })
    }
}

/// Per-cell execution contract.
///
/// `compiler`, `cflags` and `timeout_s` left as `None` resolve against the
/// [`ToolchainConfig`] at execution time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDirectives {
    pub lang: Lang,
    pub compiler: Option<String>,
    pub cflags: Option<Vec<String>>,
    pub ldflags: Vec<String>,
    pub env: BTreeMap<String, String>,
    pub args: Vec<String>,
    pub timeout_s: Option<f64>,
    pub runs: u32,
    pub expect: Expect,
}

impl Default for CellDirectives {
    fn default() -> Self {
        CellDirectives {
            lang: Lang::C,
            compiler: None,
            cflags: None,
            ldflags: Vec::new(),
            env: BTreeMap::new(),
            args: Vec::new(),
            timeout_s: None,
            runs: 1,
            expect: Expect::Ok,
        }
    }
}

impl CellDirectives {
    pub fn for_lang(lang: Lang) -> Self {
        CellDirectives { lang, ..Default::default() }
    }

    pub fn compiler<'a>(&'a self, cfg: &'a ToolchainConfig) -> &'a str {
        self.compiler.as_deref().unwrap_or(match self.lang {
            Lang::C => &cfg.cc,
            Lang::Cpp => &cfg.cxx,
            Lang::Fortran => &cfg.fc,
        })
    }

    pub fn cflags(&self, cfg: &ToolchainConfig) -> Vec<String> {
        self.cflags.clone().unwrap_or_else(|| vec![cfg.openmp_flag.clone()])
    }

    pub fn timeout_s(&self, cfg: &ToolchainConfig) -> f64 {
        self.timeout_s.unwrap_or(cfg.default_timeout_s)
    }

    /// Apply one `key: value` setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), DirectiveError> {
        let bad = || DirectiveError::BadValue { key: key.to_owned(), value: value.to_owned() };
        let tokens = || value.split_whitespace().map(str::to_owned).collect::<Vec<_>>();
        match key {
            "lang" => self.lang = value.parse().map_err(|_| bad())?,
            "compiler" => {
                if value.is_empty() || value.contains(char::is_whitespace) {
                    return Err(bad());
                }
                self.compiler = Some(value.to_owned());
            }
            "cflags" => self.cflags = Some(tokens()),
            "ldflags" => self.ldflags = tokens(),
            "args" => self.args = tokens(),
            "env" => {
                for pair in value.split_whitespace() {
                    match pair.split_once('=') {
                        Some((name, val)) if !name.is_empty() => {
                            self.env.insert(name.to_owned(), val.to_owned());
                        }
                        _ => return Err(bad()),
                    }
                }
                if value.trim().is_empty() {
                    return Err(bad());
                }
            }
            "timeout" | "timeout_s" => {
                let t: f64 = value.parse().map_err(|_| bad())?;
                if !(t.is_finite() && t > 0.0) {
                    return Err(bad());
                }
                self.timeout_s = Some(t);
            }
            "runs" => {
                let n: u32 = value.parse().map_err(|_| bad())?;
                if n == 0 {
                    return Err(bad());
                }
                self.runs = n;
            }
            "expect" => self.expect = value.parse().map_err(|_| bad())?,
            other => return Err(DirectiveError::UnknownDirective(other.to_owned())),
        }
        Ok(())
    }
}

/// Split a directive line into `(key, value)`, or `None` if it is not one.
fn directive_line(line: &str) -> Option<(&str, &str)> {
    let rest = line.strip_prefix("//%").or_else(|| line.strip_prefix("!%"))?;
    Some(match rest.split_once(':') {
        Some((key, value)) => (key.trim(), value.trim()),
        None => (rest.trim(), ""),
    })
}

/// Parse the leading directive block of a cell starting from defaults.
pub fn parse_directives(source: &str) -> Result<(CellDirectives, &str), DirectiveError> {
    parse_directives_with(source, CellDirectives::default())
}

/// Like [`parse_directives`], layering the cell's block over `base`.
pub fn parse_directives_with(source: &str, mut base: CellDirectives) -> Result<(CellDirectives, &str), DirectiveError> {
    let mut offset = 0;
    for line in source.split_inclusive('\n') {
        let Some((key, value)) = directive_line(line.trim_end_matches(['\n', '\r'])) else {
            break;
        };
        base.apply(key, value)?;
        offset += line.len();
    }
    Ok((base, &source[offset..]))
}

/// True when the first line of `source` is a directive line.
pub fn has_directives(source: &str) -> bool {
    source.lines().next().and_then(directive_line).is_some()
}
