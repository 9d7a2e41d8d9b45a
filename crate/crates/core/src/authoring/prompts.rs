use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AuthoringError;

pub type Vars = BTreeMap<String, String>;

/// Replace every `{{name}}` in `template` with `vars[name]`.
///
/// Substituted text is not scanned again, so values may contain braces.
/// A `{{` with no matching `}}` or a non-identifier name is left as is.
pub fn render_template(template: &str, vars: &Vars) -> Result<String, AuthoringError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let name_len = after.find("}}");
        match name_len {
            Some(n) if n > 0 && after[..n].bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') => {
                let name = &after[..n];
                let value = vars.get(name).ok_or_else(|| AuthoringError::MissingPlaceholder(name.to_owned()))?;
                out.push_str(value);
                rest = &after[n + 2..];
            }
            _ => {
                out.push_str("{{");
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoStarPrompt {
    pub context: String,
    pub objective: String,
    pub style: String,
    pub tone: String,
    pub audience: String,
    pub response_format: String,
}

impl Default for CoStarPrompt {
    /// System framing for writing an OpenMP textbook.
    fn default() -> Self {
        CoStarPrompt {
            context: "You are helping an experienced parallel programming instructor write an interactive \
                      textbook on OpenMP. Chapters are Jupyter notebooks that mix explanation with runnable \
                      C, C++ and Fortran examples."
                .to_owned(),
            objective: "Help write the chapter on {{chapter_topic}}: its outline, explanations and code examples."
                .to_owned(),
            style: "Technical and precise. Follow the terminology of the OpenMP specification.".to_owned(),
            tone: "Patient and encouraging.".to_owned(),
            audience: "Students and programmers who know C but are new to parallel programming.".to_owned(),
            response_format: "Markdown. Put every complete program in a fenced code block tagged with its \
                              language (c, cpp or fortran)."
                .to_owned(),
        }
    }
}

/// The six sections under `# CONTEXT` … `# RESPONSE` headers, in that order.
pub fn render_costar(p: &CoStarPrompt, vars: &Vars) -> Result<String, AuthoringError> {
    let sections = [
        ("CONTEXT", &p.context),
        ("OBJECTIVE", &p.objective),
        ("STYLE", &p.style),
        ("TONE", &p.tone),
        ("AUDIENCE", &p.audience),
        ("RESPONSE", &p.response_format),
    ];
    let mut out = String::new();
    for (i, (header, field)) in sections.into_iter().enumerate() {
        let text = render_template(field, vars)?;
        if text.trim().is_empty() {
            return Err(AuthoringError::EmptyField(header.to_lowercase()));
        }
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("# {header}\n{}\n", text.trim_end()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptStep {
    pub name: String,
    pub template: String,
    /// Paths, themselves templates, whose contents follow the prompt.
    #[serde(default)]
    pub attachments: Vec<String>,
}

impl PromptStep {
    pub fn new(name: &str, template: &str) -> Self {
        PromptStep { name: name.to_owned(), template: template.to_owned(), attachments: vec![] }
    }

    pub fn with_attachment(mut self, path: &str) -> Self {
        self.attachments.push(path.to_owned());
        self
    }

    pub fn render(&self, vars: &Vars) -> Result<String, AuthoringError> {
        let mut prompt = render_template(&self.template, vars)?;
        for attachment in &self.attachments {
            let path = PathBuf::from(render_template(attachment, vars)?);
            let text = fs::read_to_string(&path)
                .map_err(|source| AuthoringError::Attachment { path: path.clone(), source })?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            prompt.push_str(&format!("\n\n--- {name} ---\n{}", text));
            if !text.ends_with('\n') {
                prompt.push('\n');
            }
            prompt.push_str(&format!("--- end of {name} ---"));
        }
        Ok(prompt)
    }
}

/// The four-step chapter sequence. Placeholders: `reference_topic`,
/// `reference_chapter` (a path) and `chapter_topic`.
pub fn default_sequence() -> Vec<PromptStep> {
    vec![
        PromptStep::new(
            "introduce",
            "I am writing a book on teaching others OpenMP parallel programming. Can you help me?",
        ),
        PromptStep::new(
            "reference",
            "Here is a chapter I have written on {{reference_topic}}; please analyze and learn how I created the outline.",
        )
        .with_attachment("{{reference_chapter}}"),
        PromptStep::new(
            "topic",
            "Now, I need to write a chapter on {{chapter_topic}}. Please find the descriptions of usage and related examples in the file I have uploaded.",
        ),
        PromptStep::new("outline", "Please help me complete this section by first generating an outline."),
    ]
}

/// Short sequence that asks for an outline without a reference chapter.
pub fn outline_sequence() -> Vec<PromptStep> {
    vec![
        PromptStep::new(
            "introduce",
            "I am writing a book on teaching others OpenMP parallel programming. Can you help me?",
        ),
        PromptStep::new("topic", "Now, I need to write a chapter on {{chapter_topic}}."),
        PromptStep::new("outline", "Please help me complete this section by first generating an outline."),
    ]
}

pub const REVIEW_TEMPLATE: &str = "Another author drafted the following outline for a chapter on {{chapter_topic}} \
in an OpenMP programming book. Review it: point out missing or misplaced topics, anything that disagrees with \
the OpenMP specification, and sections that should be merged or split. End with a revised outline.\n\n{{outline}}";

/// Variables for the default sequence.
pub fn sequence_vars(chapter_topic: &str, reference_topic: &str, reference_chapter: &Path) -> Vars {
    Vars::from([
        ("chapter_topic".to_owned(), chapter_topic.to_owned()),
        ("reference_topic".to_owned(), reference_topic.to_owned()),
        ("reference_chapter".to_owned(), reference_chapter.to_string_lossy().into_owned()),
    ])
}
