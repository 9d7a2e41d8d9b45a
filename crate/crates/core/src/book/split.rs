use serde::{Deserialize, Serialize};

use crate::exec::{parse_directives_with, CellDirectives, DirectiveError, Lang};

use super::CellId;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("fence opened on line {line} is never closed")]
pub struct UnterminatedFence {
    pub line: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Markdown,
    Code,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cell {
    pub kind: CellKind,
    /// Without a trailing newline.
    pub source: String,
    pub id: Option<CellId>,
    /// Fence language; `Some` exactly for code cells.
    pub lang: Option<Lang>,
}

impl Cell {
    pub fn markdown(source: impl Into<String>) -> Self {
        Cell { kind: CellKind::Markdown, source: source.into(), id: None, lang: None }
    }

    pub fn code(lang: Lang, source: impl Into<String>) -> Self {
        Cell { kind: CellKind::Code, source: source.into(), id: None, lang: Some(lang) }
    }

    pub fn is_code(&self) -> bool {
        self.kind == CellKind::Code
    }

    /// Execution directives of a code cell: `base` with the fence language,
    /// overridden by the cell's own directive block.
    pub fn directives(&self, base: &CellDirectives) -> Result<(CellDirectives, &str), DirectiveError> {
        let mut base = base.clone();
        if let Some(lang) = self.lang {
            base.lang = lang;
        }
        parse_directives_with(&self.source, base)
    }
}

struct Fence {
    marker: char,
    len: usize,
    info: String,
}

fn opening_fence(line: &str) -> Option<Fence> {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return None;
    }
    let rest = &line[indent..];
    let marker = rest.chars().next().filter(|c| *c == '`' || *c == '~')?;
    let len = rest.chars().take_while(|c| *c == marker).count();
    if len < 3 {
        return None;
    }
    let info = rest[len..].trim();
    if marker == '`' && info.contains('`') {
        return None;
    }
    Some(Fence { marker, len, info: info.to_owned() })
}

fn closes(line: &str, fence: &Fence) -> bool {
    let indent = line.len() - line.trim_start_matches(' ').len();
    if indent > 3 {
        return false;
    }
    let rest = line[indent..].trim_end();
    let len = rest.chars().take_while(|c| *c == fence.marker).count();
    len >= fence.len && len == rest.chars().count()
}

/// Fence info strings that turn a block into an executable cell.
fn code_lang(info: &str) -> Option<Lang> {
    match info {
        "c" => Some(Lang::C),
        "cpp" => Some(Lang::Cpp),
        "fortran" => Some(Lang::Fortran),
        _ => None,
    }
}

fn flush_prose(prose: &mut Vec<&str>, cells: &mut Vec<Cell>) {
    let start = prose.iter().position(|l| !l.trim().is_empty());
    let end = prose.iter().rposition(|l| !l.trim().is_empty());
    if let (Some(start), Some(end)) = (start, end) {
        cells.push(Cell::markdown(prose[start..=end].join("\n")));
    }
    prose.clear();
}

/// Split a markdown chapter into markdown and code cells.
///
/// Fenced blocks whose info string is exactly `c`, `cpp` or `fortran`
/// become code cells; every other fence (including `c norun`) stays in the
/// surrounding prose. Leading and trailing blank lines of prose cells are
/// dropped.
pub fn split_chapter(markdown: &str) -> Result<Vec<Cell>, UnterminatedFence> {
    let mut cells = Vec::new();
    let mut prose: Vec<&str> = Vec::new();
    let mut lines = markdown.lines().enumerate();

    while let Some((idx, line)) = lines.next() {
        let Some(fence) = opening_fence(line) else {
            prose.push(line);
            continue;
        };
        let mut body = Vec::new();
        let mut closing = None;
        for (_, inner) in lines.by_ref() {
            if closes(inner, &fence) {
                closing = Some(inner);
                break;
            }
            body.push(inner);
        }
        let Some(closing) = closing else {
            return Err(UnterminatedFence { line: idx + 1 });
        };
        match code_lang(&fence.info) {
            Some(lang) => {
                flush_prose(&mut prose, &mut cells);
                cells.push(Cell::code(lang, body.join("\n")));
            }
            None => {
                prose.push(line);
                prose.extend(body);
                prose.push(closing);
            }
        }
    }
    flush_prose(&mut prose, &mut cells);
    Ok(cells)
}

fn longest_backtick_run(s: &str) -> usize {
    s.split(|c| c != '`').map(str::len).max().unwrap_or(0)
}

/// Inverse of [`split_chapter`] up to blank-line and trailing-whitespace
/// normalization.
pub fn reassemble(cells: &[Cell]) -> String {
    let mut parts = Vec::with_capacity(cells.len());
    for cell in cells {
        match cell.lang {
            Some(lang) if cell.is_code() => {
                let fence = "`".repeat(longest_backtick_run(&cell.source).max(2) + 1);
                parts.push(format!("{fence}{}\n{}\n{fence}", lang.as_str(), cell.source));
            }
            _ => parts.push(cell.source.clone()),
        }
    }
    let mut text = parts.join("\n\n");
    text.push('\n');
    text
}
