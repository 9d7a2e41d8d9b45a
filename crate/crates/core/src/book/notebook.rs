use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{BookManifest, Cell, CellKind};
use crate::canonical::to_canonical_bytes;

pub const NBFORMAT: u64 = 4;
pub const NBFORMAT_MINOR: u64 = 5;

/// 16 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CellId(String);

impl CellId {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_well_formed(s: &str) -> bool {
        s.len() == 16 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// First 16 hex chars of SHA-256(path ‖ 0x00 ‖ decimal(index) ‖ 0x00 ‖ source).
///
/// The id depends only on the cell's own position and text, so editing a
/// neighbour leaves it alone but inserting a cell before it does not.
pub fn make_cell_id(chapter_path: &str, index: usize, source: &str) -> CellId {
    let mut hasher = Sha256::new();
    hasher.update(chapter_path.as_bytes());
    hasher.update([0u8]);
    hasher.update(index.to_string().as_bytes());
    hasher.update([0u8]);
    hasher.update(source.as_bytes());
    let digest = hex::encode(hasher.finalize());
    CellId(digest[..16].to_owned())
}

pub fn assign_ids(chapter_path: &str, cells: &mut [Cell]) {
    for (index, cell) in cells.iter_mut().enumerate() {
        cell.id = Some(make_cell_id(chapter_path, index, &cell.source));
    }
}

/// Notebook `source` array: every line keeps its newline except the last.
fn source_lines(source: &str) -> Vec<&str> {
    source.split_inclusive('\n').collect()
}

fn cell_json(cell: &Cell) -> Value {
    let id = cell.id.as_ref().expect("cells must have ids before emitting");
    match cell.kind {
        CellKind::Markdown => json!({
            "cell_type": "markdown",
            "id": id,
            "metadata": {},
            "source": source_lines(&cell.source),
        }),
        CellKind::Code => json!({
            "cell_type": "code",
            "execution_count": null,
            "id": id,
            "metadata": { "ompbook": { "lang": cell.lang.unwrap_or_default() } },
            "outputs": [],
            "source": source_lines(&cell.source),
        }),
    }
}

/// Canonical notebook bytes: sorted keys, two-space indent, trailing newline.
pub fn emit_notebook(cells: &[Cell], manifest: &BookManifest) -> Vec<u8> {
    let doc = json!({
        "cells": cells.iter().map(cell_json).collect::<Vec<_>>(),
        "metadata": {
            "kernelspec": {
                "display_name": crate::KERNEL_DISPLAY_NAME,
                "language": "c",
                "name": manifest.kernel_name,
            },
            "language_info": {
                "file_extension": ".c",
                "mimetype": "text/x-csrc",
                "name": "c",
            },
        },
        "nbformat": NBFORMAT,
        "nbformat_minor": NBFORMAT_MINOR,
    });
    to_canonical_bytes(&doc)
}

/// Check the structural rules every emitted notebook must satisfy. Returns
/// the list of violations.
pub fn check_notebook(bytes: &[u8]) -> Result<(), Vec<String>> {
    let mut problems = Vec::new();
    let doc: Value = match serde_json::from_slice(bytes) {
        Ok(v) => v,
        Err(e) => return Err(vec![format!("not json: {e}")]),
    };
    if doc["nbformat"] != NBFORMAT || doc["nbformat_minor"] != NBFORMAT_MINOR {
        problems.push("nbformat must be 4.5".to_owned());
    }
    if !doc["metadata"].is_object() {
        problems.push("missing notebook metadata".to_owned());
    }
    for key in ["name", "display_name", "language"] {
        if !doc["metadata"]["kernelspec"][key].is_string() {
            problems.push(format!("kernelspec.{key} missing"));
        }
    }
    let Some(cells) = doc["cells"].as_array() else {
        problems.push("cells is not a list".to_owned());
        return Err(problems);
    };
    let mut ids = HashSet::new();
    for (i, cell) in cells.iter().enumerate() {
        match cell["id"].as_str() {
            Some(id) if CellId::is_well_formed(id) => {
                if !ids.insert(id.to_owned()) {
                    problems.push(format!("cell {i}: duplicate id {id}"));
                }
            }
            _ => problems.push(format!("cell {i}: missing or malformed id")),
        }
        if !cell["metadata"].is_object() {
            problems.push(format!("cell {i}: missing metadata"));
        }
        let source_ok =
            cell["source"].is_string() || cell["source"].as_array().is_some_and(|l| l.iter().all(Value::is_string));
        if !source_ok {
            problems.push(format!("cell {i}: bad source"));
        }
        match cell["cell_type"].as_str() {
            Some("markdown") => {}
            Some("code") => {
                if cell["outputs"] != json!([]) {
                    problems.push(format!("cell {i}: code cell has outputs"));
                }
                if !cell["execution_count"].is_null() {
                    problems.push(format!("cell {i}: execution_count is not null"));
                }
            }
            _ => problems.push(format!("cell {i}: bad cell_type")),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(problems)
    }
}
