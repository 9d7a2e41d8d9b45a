//! Markdown chapters to notebooks.
//!
//! A book is a JSON manifest listing chapter files. Each chapter is split
//! into markdown and code cells ([`split_chapter`]), given content-derived
//! ids ([`make_cell_id`]) and written as a canonical `.ipynb` document.
//! Output is a pure function of the manifest and chapter bytes.

mod notebook;
mod split;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Component, Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::canonical::to_canonical_bytes;
use crate::exec::{CellDirectives, DirectiveError};

pub use notebook::{assign_ids, check_notebook, emit_notebook, make_cell_id, CellId, NBFORMAT, NBFORMAT_MINOR};
pub use split::{reassemble, split_chapter, Cell, CellKind, UnterminatedFence};

#[derive(Debug, thiserror::Error)]
pub enum BookError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("{chapter}: {source}")]
    UnterminatedFence {
        chapter: String,
        #[source]
        source: UnterminatedFence,
    },
    #[error("manifest defaults: {0}")]
    Defaults(#[from] DirectiveError),
}

impl BookError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        BookError::Io { path: path.to_owned(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChapterEntry {
    /// As written in the manifest, relative to the manifest's directory.
    pub path: String,
    pub title: String,
}

fn default_kernel_name() -> String {
    crate::DEFAULT_KERNEL_NAME.to_owned()
}

fn default_output_dir() -> String {
    "_build".to_owned()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookManifest {
    pub title: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default = "default_kernel_name")]
    pub kernel_name: String,
    pub chapters: Vec<ChapterEntry>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    /// Directive settings applied to every code cell before its own block,
    /// written as in a cell (`{"cflags": "-fopenmp -O2"}`).
    #[serde(default)]
    pub defaults: BTreeMap<String, String>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

/// Lexical normalization; does not touch the filesystem.
fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for comp in path.components() {
        match comp {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other),
        }
    }
    out
}

impl BookManifest {
    pub fn load(path: &Path) -> Result<Self, BookError> {
        let raw = fs::read(path).map_err(|e| BookError::io(path, e))?;
        let root = path.parent().map(Path::to_owned).unwrap_or_default();
        Self::from_json(&raw, &root)
    }

    pub fn from_json(raw: &[u8], root: &Path) -> Result<Self, BookError> {
        let mut manifest: BookManifest = serde_json::from_slice(raw).map_err(|e| BookError::Manifest(e.to_string()))?;
        manifest.root = root.to_owned();
        manifest.validate()?;
        Ok(manifest)
    }

    fn validate(&self) -> Result<(), BookError> {
        let mut seen = HashSet::new();
        let out = normalize(&self.output_dir());
        for ch in &self.chapters {
            let path = normalize(&self.chapter_path(ch));
            if !seen.insert(path.clone()) {
                return Err(BookError::Manifest(format!("chapter `{}` listed twice", ch.path)));
            }
            if path.parent().map(normalize) == Some(out.clone()) {
                return Err(BookError::Manifest(format!(
                    "output_dir `{}` is the directory of chapter `{}`",
                    self.output_dir, ch.path
                )));
            }
        }
        self.base_directives()?;
        Ok(())
    }

    pub fn chapter_path(&self, chapter: &ChapterEntry) -> PathBuf {
        self.root.join(&chapter.path)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.root.join(&self.output_dir)
    }

    /// Built-in directive defaults with the manifest's overrides applied.
    pub fn base_directives(&self) -> Result<CellDirectives, DirectiveError> {
        let mut d = CellDirectives::default();
        for (key, value) in &self.defaults {
            d.apply(key, value)?;
        }
        Ok(d)
    }

    /// Notebook file name for a chapter, relative to the output directory.
    pub fn notebook_name(chapter: &ChapterEntry) -> PathBuf {
        let rel = normalize(Path::new(&chapter.path));
        let rel = if rel.is_absolute() || rel.starts_with("..") {
            PathBuf::from(rel.file_name().unwrap_or_default())
        } else {
            rel
        };
        rel.with_extension("ipynb")
    }
}

/// A chapter's cells with ids assigned.
pub fn load_chapter(manifest: &BookManifest, chapter: &ChapterEntry) -> Result<Vec<Cell>, BookError> {
    let path = manifest.chapter_path(chapter);
    let text = fs::read_to_string(&path).map_err(|e| BookError::io(&path, e))?;
    let mut cells = split_chapter(&text)
        .map_err(|source| BookError::UnterminatedFence { chapter: chapter.path.clone(), source })?;
    assign_ids(&chapter.path, &mut cells);
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildReport {
    pub notebooks: Vec<PathBuf>,
    pub index_json: PathBuf,
    pub index_html: PathBuf,
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn index_json(manifest: &BookManifest) -> Vec<u8> {
    let chapters: Vec<_> = manifest
        .chapters
        .iter()
        .map(|ch| {
            json!({
                "title": ch.title,
                "notebook": BookManifest::notebook_name(ch).to_string_lossy(),
            })
        })
        .collect();
    to_canonical_bytes(&json!({
        "title": manifest.title,
        "authors": manifest.authors,
        "kernel_name": manifest.kernel_name,
        "chapters": chapters,
    }))
}

fn index_html(manifest: &BookManifest) -> Vec<u8> {
    let title = escape_html(&manifest.title);
    let mut html = format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n</head>\n<body>\n<h1>{title}</h1>\n"
    );
    if !manifest.authors.is_empty() {
        html.push_str(&format!("<p>{}</p>\n", escape_html(&manifest.authors.join(", "))));
    }
    html.push_str("<ol>\n");
    for ch in &manifest.chapters {
        let href = BookManifest::notebook_name(ch);
        html.push_str(&format!(
            "<li><a href=\"{}\">{}</a></li>\n",
            escape_html(&href.to_string_lossy()),
            escape_html(&ch.title)
        ));
    }
    html.push_str("</ol>\n</body>\n</html>\n");
    html.into_bytes()
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), BookError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| BookError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| BookError::io(path, e))
}

/// Write one notebook per chapter plus `index.json` and `index.html`.
pub fn build_book(manifest: &BookManifest) -> Result<BuildReport, BookError> {
    let rendered: Vec<(PathBuf, Vec<u8>)> = manifest
        .chapters
        .par_iter()
        .map(|ch| {
            let cells = load_chapter(manifest, ch)?;
            Ok((BookManifest::notebook_name(ch), emit_notebook(&cells, manifest)))
        })
        .collect::<Result<_, BookError>>()?;

    let out = manifest.output_dir();
    let mut notebooks = Vec::with_capacity(rendered.len());
    for (name, bytes) in rendered {
        let path = out.join(name);
        write(&path, &bytes)?;
        notebooks.push(path);
    }
    let index_json_path = out.join("index.json");
    write(&index_json_path, &index_json(manifest))?;
    let index_html_path = out.join("index.html");
    write(&index_html_path, &index_html(manifest))?;
    Ok(BuildReport { notebooks, index_json: index_json_path, index_html: index_html_path })
}
