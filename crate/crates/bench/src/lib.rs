//! Benchmark inputs.

use ompbook_core::authoring::{Outline, OutlineNode};
use ompbook_core::book::{assign_ids, split_chapter, BookManifest, Cell};
use ompbook_core::{KernelMessage, MessageHeader, MsgType};
use serde_json::json;

pub const KEY: &[u8] = b"a0436f6c-1916-498b-8eb9-e81ab9368e84";

/// An execute_request carrying a cell of `lines` lines.
pub fn execute_request(lines: usize) -> KernelMessage {
    let code: String = (0..lines).map(|i| format!("    sum += a[{i}] * b[{i}];\n")).collect();
    let mut msg = KernelMessage::new(
        MessageHeader::new(MsgType::ExecuteRequest, "bench-session", "bench"),
        json!({"code": code, "silent": false, "store_history": true, "user_expressions": {}, "allow_stdin": false}),
    );
    msg.identities = vec![b"client-identity".to_vec()];
    msg
}

/// Markdown for a chapter with `examples` code blocks between paragraphs.
pub fn chapter_markdown(examples: usize) -> String {
    let mut md = String::from("# Worksharing\n\nLoops are divided among the threads of a team.\n\n");
    for i in 0..examples {
        md.push_str(&format!(
            "## Example {i}\n\nThe loop below is split with a static schedule.\n\n```c\n//%runs: 1\n\
             #include <stdio.h>\n#include <omp.h>\nint main(void) {{\n    double sum = 0;\n\
             #pragma omp parallel for reduction(+:sum)\n    for (int j = 0; j < {n}; j++) sum += j;\n\
             printf(\"%f\\n\", sum);\n    return 0;\n}}\n```\n\n",
            n = 1000 + i
        ));
    }
    md
}

pub fn chapter_cells(examples: usize) -> Vec<Cell> {
    let mut cells = split_chapter(&chapter_markdown(examples)).expect("generated markdown is well formed");
    assign_ids("chapters/bench.md", &mut cells);
    cells
}

pub fn manifest() -> BookManifest {
    BookManifest::from_json(br#"{"title": "Bench", "chapters": []}"#, std::path::Path::new("."))
        .expect("static manifest is valid")
}

/// `count` outlines that share about half of their sections.
pub fn outlines(count: usize, sections: usize) -> Vec<Outline> {
    (0..count)
        .map(|k| Outline {
            nodes: (0..sections)
                .map(|s| {
                    let title = if s % 2 == 0 { format!("Section {s}") } else { format!("Section {s} by author {k}") };
                    let children = (0..4).map(|c| OutlineNode::new(&format!("Topic {c} of {}", s + k % 2))).collect();
                    OutlineNode::with_children(&title, children)
                })
                .collect(),
        })
        .collect()
}
