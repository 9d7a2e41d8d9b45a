//! LLM-assisted chapter authoring.
//!
//! A chapter is drafted by a fixed sequence of prompts sent to one chat
//! provider, optionally framed by a CO-STAR system message. Outlines from
//! several providers can be reviewed by each other and merged. Generated
//! markdown becomes book cells with explicit execution directives.

mod outline;
mod prompts;
mod provider;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::book::{split_chapter, Cell, UnterminatedFence};
use crate::exec::has_directives;

pub use outline::{merge_outlines, normalized, parse_outline, Outline, OutlineNode};
pub use prompts::{
    default_sequence, outline_sequence, render_costar, render_template, sequence_vars, CoStarPrompt, PromptStep, Vars,
    REVIEW_TEMPLATE,
};
pub use provider::{
    complete, load_mock_fixture, prompt_digest, ChatMessage, ChatProvider, Completion, HttpProvider, MockProvider,
    ProviderConfig, Role,
};

#[derive(Debug, thiserror::Error)]
pub enum AuthoringError {
    #[error("no value for placeholder `{0}`")]
    MissingPlaceholder(String),
    #[error("prompt field `{0}` is empty")]
    EmptyField(String),
    #[error("provider error{}: {body}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Provider { status: Option<u16>, body: String },
    #[error("missing or rejected credentials: {0}")]
    AuthMissing(String),
    #[error("cross review needs at least two outlines")]
    NotEnoughOutlines,
    #[error("{path}: {source}")]
    Attachment {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Split(#[from] UnterminatedFence),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub name: String,
    pub rendered_prompt: String,
    pub response: String,
    pub provider_id: String,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub steps: Vec<TranscriptStep>,
    pub conversation: Vec<ChatMessage>,
}

impl Transcript {
    /// Response of the last step.
    pub fn last_response(&self) -> Option<&str> {
        self.steps.last().map(|s| s.response.as_str())
    }

    /// After an optional leading system message, roles alternate starting
    /// with the user.
    pub fn alternates(&self) -> bool {
        let rest = match self.conversation.first() {
            Some(m) if m.role == Role::System => &self.conversation[1..],
            _ => &self.conversation[..],
        };
        rest.iter().enumerate().all(|(i, m)| m.role == if i % 2 == 0 { Role::User } else { Role::Assistant })
    }
}

/// Send each step in order, carrying the whole conversation along.
pub fn run_sequence(
    steps: &[PromptStep],
    provider: &dyn ChatProvider,
    vars: &Vars,
    system: Option<&str>,
) -> Result<Transcript, AuthoringError> {
    let mut transcript = Transcript::default();
    if let Some(system) = system {
        transcript.conversation.push(ChatMessage::system(system));
    }
    for step in steps {
        let prompt = step.render(vars)?;
        transcript.conversation.push(ChatMessage::user(prompt.clone()));
        let answer = provider.complete(&transcript.conversation)?;
        log::info!("{}: step `{}` answered in {} ms", provider.id(), step.name, answer.duration_ms);
        transcript.conversation.push(ChatMessage::assistant(answer.text.clone()));
        transcript.steps.push(TranscriptStep {
            name: step.name.clone(),
            rendered_prompt: prompt,
            response: answer.text,
            provider_id: provider.id().to_owned(),
            duration_ms: answer.duration_ms,
        });
    }
    Ok(transcript)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub reviewer: String,
    pub author: String,
    pub text: Option<String>,
    pub error: Option<String>,
}

/// Every provider reviews every other provider's outline.
///
/// Reviewers work concurrently; each one goes through the authors in
/// sorted order, so scripted providers see a fixed request order. A
/// failed request is recorded in its critique instead of aborting.
pub fn cross_review(
    outlines: &BTreeMap<String, Outline>,
    providers: &[&dyn ChatProvider],
    chapter_topic: &str,
) -> Result<Vec<Critique>, AuthoringError> {
    if outlines.len() < 2 {
        return Err(AuthoringError::NotEnoughOutlines);
    }
    let mut jobs = Vec::new();
    for reviewer in providers.iter().filter(|p| outlines.contains_key(p.id())) {
        let mut prompts = Vec::new();
        for (author, outline) in outlines.iter().filter(|(a, _)| a.as_str() != reviewer.id()) {
            let vars = Vars::from([
                ("chapter_topic".to_owned(), chapter_topic.to_owned()),
                ("outline".to_owned(), outline.to_markdown()),
            ]);
            prompts.push((author.clone(), render_template(REVIEW_TEMPLATE, &vars)?));
        }
        jobs.push((*reviewer, prompts));
    }
    let mut critiques: Vec<Critique> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .into_iter()
            .map(|(reviewer, prompts)| {
                scope.spawn(move || {
                    prompts
                        .into_iter()
                        .map(|(author, prompt)| {
                            let result = reviewer.complete(&[ChatMessage::user(prompt)]);
                            let (text, error) = match result {
                                Ok(c) => (Some(c.text), None),
                                Err(e) => (None, Some(e.to_string())),
                            };
                            Critique { reviewer: reviewer.id().to_owned(), author, text, error }
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("review thread panicked")).collect()
    });
    critiques.sort_by(|a, b| (&a.reviewer, &a.author).cmp(&(&b.reviewer, &b.author)));
    Ok(critiques)
}

/// Split generated markdown into cells and give every code cell without a
/// directive block one naming its language.
pub fn cells_from_generated(markdown: &str) -> Result<Vec<Cell>, AuthoringError> {
    let mut cells = split_chapter(markdown)?;
    for cell in cells.iter_mut().filter(|c| c.is_code()) {
        if !has_directives(&cell.source) {
            let lang = cell.lang.unwrap_or_default();
            cell.source = format!("{}lang: {}\n{}", lang.directive_prefix(), lang.as_str(), cell.source);
        }
    }
    Ok(cells)
}
