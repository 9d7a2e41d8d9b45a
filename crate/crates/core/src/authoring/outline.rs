use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlineNode {
    pub title: String,
    /// Set by [`merge_outlines`] when at least half of the inputs have this
    /// title at this position. Parsed outlines mark every node core.
    #[serde(default = "yes")]
    pub core: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<OutlineNode>,
}

fn yes() -> bool {
    true
}

impl OutlineNode {
    pub fn new(title: &str) -> Self {
        OutlineNode { title: title.to_owned(), core: true, children: vec![] }
    }

    pub fn with_children(title: &str, children: Vec<OutlineNode>) -> Self {
        OutlineNode { title: title.to_owned(), core: true, children }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outline {
    pub nodes: Vec<OutlineNode>,
}

/// Lowercase, punctuation removed, runs of whitespace collapsed to one space.
pub fn normalized(title: &str) -> String {
    let kept: String =
        title.chars().filter(|c| c.is_alphanumeric() || c.is_whitespace()).flat_map(char::to_lowercase).collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Outline {
    pub fn top_titles(&self) -> Vec<&str> {
        self.nodes.iter().map(|n| n.title.as_str()).collect()
    }

    /// Every title, depth first.
    pub fn titles(&self) -> Vec<&str> {
        fn walk<'a>(nodes: &'a [OutlineNode], out: &mut Vec<&'a str>) {
            for n in nodes {
                out.push(&n.title);
                walk(&n.children, out);
            }
        }
        let mut out = Vec::new();
        walk(&self.nodes, &mut out);
        out
    }

    /// Same titles and shape, ignoring core marks.
    pub fn same_shape(&self, other: &Outline) -> bool {
        fn eq(a: &[OutlineNode], b: &[OutlineNode]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.title == y.title && eq(&x.children, &y.children))
        }
        eq(&self.nodes, &other.nodes)
    }

    /// Markdown list: bold top-level items, two-space indent per level.
    pub fn to_markdown(&self) -> String {
        fn walk(nodes: &[OutlineNode], depth: usize, out: &mut String) {
            for n in nodes {
                let indent = "  ".repeat(depth);
                if depth == 0 {
                    out.push_str(&format!("{indent}- **{}**\n", n.title));
                } else {
                    out.push_str(&format!("{indent}- {}\n", n.title));
                }
                walk(&n.children, depth + 1, out);
            }
        }
        let mut out = String::new();
        walk(&self.nodes, 0, &mut out);
        out
    }
}

/// Strip a list marker (`-`, `*`, `+`, `1.`, `1)`) and return the rest.
fn list_item(line: &str) -> Option<&str> {
    let rest = line.trim_start();
    for marker in ["- ", "* ", "+ "] {
        if let Some(r) = rest.strip_prefix(marker) {
            return Some(r);
        }
    }
    let digits = rest.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let r = &rest[digits..];
        if let Some(r) = r.strip_prefix(". ").or_else(|| r.strip_prefix(") ")) {
            return Some(r);
        }
    }
    None
}

fn heading(line: &str) -> Option<(usize, &str)> {
    let level = line.bytes().take_while(|b| *b == b'#').count();
    if (1..=6).contains(&level) {
        let rest = &line[level..];
        if rest.is_empty() || rest.starts_with(' ') {
            return Some((level, rest.trim().trim_end_matches('#').trim()));
        }
    }
    None
}

fn clean_title(raw: &str) -> String {
    let mut t = raw.trim();
    for wrap in ["**", "__"] {
        if let Some(inner) = t.strip_prefix(wrap) {
            // "**Title**" or "**Title**: gloss"
            if let Some(end) = inner.find(wrap) {
                let tail = inner[end + wrap.len()..].trim();
                if tail.is_empty() || tail.starts_with(':') || tail.starts_with('-') {
                    t = &inner[..end];
                }
            }
        }
    }
    t.trim().to_owned()
}

fn node_at<'a>(nodes: &'a mut Vec<OutlineNode>, path: &[usize]) -> &'a mut Vec<OutlineNode> {
    match path.split_first() {
        None => nodes,
        Some((&i, rest)) => node_at(&mut nodes[i].children, rest),
    }
}

/// Best-effort outline extraction from generated markdown.
///
/// Headings nest by level; list items nest below the current heading by
/// indentation; other text lines become leaves at list level. A title
/// repeated among siblings is folded into its first occurrence.
pub fn parse_outline(markdown: &str) -> Outline {
    let mut outline = Outline::default();
    // (nesting key, index path); headings sort before any list indentation
    let mut stack: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut in_fence = false;
    for line in markdown.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("```") || trimmed.starts_with("~~~") {
            in_fence = !in_fence;
            continue;
        }
        if in_fence || trimmed.is_empty() {
            continue;
        }
        let (key, raw) = if let Some((level, text)) = heading(trimmed) {
            (level, text)
        } else if let Some(text) = list_item(line) {
            let indent = line.len() - line.trim_start().len();
            (10 + indent, text)
        } else {
            (10, trimmed)
        };
        let title = clean_title(raw);
        if normalized(&title).is_empty() {
            continue;
        }
        while stack.last().is_some_and(|(k, _)| *k >= key) {
            stack.pop();
        }
        let parent_path = stack.last().map(|(_, p)| p.clone()).unwrap_or_default();
        let siblings = node_at(&mut outline.nodes, &parent_path);
        let norm = normalized(&title);
        let index = match siblings.iter().position(|n| normalized(&n.title) == norm) {
            Some(i) => i,
            None => {
                siblings.push(OutlineNode::new(&title));
                siblings.len() - 1
            }
        };
        let mut path = parent_path;
        path.push(index);
        stack.push((key, path));
    }
    outline
}

/// Merge outlines in first-appearance order, deduplicating siblings by
/// normalized title at every level. A node is core when its title occurs
/// at the same position in at least half of the inputs (rounded up).
pub fn merge_outlines(outlines: &[Outline]) -> Outline {
    let k = outlines.len();
    let quorum = k.div_ceil(2);
    let levels: Vec<Vec<&OutlineNode>> = outlines.iter().map(|o| o.nodes.iter().collect()).collect();
    Outline { nodes: merge_level(&levels, quorum) }
}

/// `levels[i]` holds input i's nodes at the current position.
fn merge_level(levels: &[Vec<&OutlineNode>], quorum: usize) -> Vec<OutlineNode> {
    // normalized title -> slot in `merged`: first spelling, matches per input
    let mut groups: HashMap<String, usize> = HashMap::new();
    let mut merged: Vec<(&str, Vec<Vec<&OutlineNode>>)> = Vec::new();
    for (i, level) in levels.iter().enumerate() {
        for node in level {
            let slot = *groups.entry(normalized(&node.title)).or_insert_with(|| {
                merged.push((&node.title, vec![Vec::new(); levels.len()]));
                merged.len() - 1
            });
            merged[slot].1[i].push(node);
        }
    }
    merged
        .into_iter()
        .map(|(title, per_input)| {
            let count = per_input.iter().filter(|m| !m.is_empty()).count();
            let children: Vec<Vec<&OutlineNode>> =
                per_input.iter().map(|m| m.iter().flat_map(|n| n.children.iter()).collect()).collect();
            OutlineNode { title: title.to_owned(), core: count >= quorum, children: merge_level(&children, quorum) }
        })
        .collect()
}
