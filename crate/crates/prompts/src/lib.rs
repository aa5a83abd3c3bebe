//! Prompt generation: split one multi-event story into single-event prompts.
//!
//! The primary path asks a chat-completion service to do the split and
//! parses a numbered list from its answer. [`split_offline`] is a
//! deterministic rule-based splitter that needs no service.

mod fallback;
mod llm;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fallback::{split_offline, story_subject};
pub use llm::{
    parse_numbered_list, split_scenario, CompletionClient, HttpChatClient, LlmClientConfig,
};

/// Reconstructed splitting instruction; `{story}` and `{num_prompts}` are
/// substituted at request time.
pub const INSTRUCTION_V1: &str = include_str!("../assets/instruction_v1.txt");

pub const DEFAULT_MAX_PROMPT_CHARS: usize = 300;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("invalid prompt request: {0}")]
    InvalidRequest(String),

    #[error("cannot split the story into {requested} prompts: only {available} events found")]
    Unsatisfiable { requested: usize, available: usize },

    #[error("prompt {index} is {len} characters, over the {max}-character cap")]
    TooLong {
        index: usize,
        len: usize,
        max: usize,
    },

    #[error("completion service unreachable after {attempts} attempts: {message}")]
    Unreachable { attempts: usize, message: String },

    #[error("completion service returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("malformed completion: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub story: String,
    pub num_prompts: usize,
    pub instruction_template: String,
    pub max_prompt_chars: usize,
}

impl PromptRequest {
    pub fn new(story: impl Into<String>, num_prompts: usize) -> Self {
        Self {
            story: story.into(),
            num_prompts,
            instruction_template: INSTRUCTION_V1.to_string(),
            max_prompt_chars: DEFAULT_MAX_PROMPT_CHARS,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.story.trim().is_empty() {
            return Err(PromptError::InvalidRequest("story is empty".into()));
        }
        if self.num_prompts == 0 {
            return Err(PromptError::InvalidRequest(
                "num_prompts must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// The instruction with the story and count filled in.
    pub fn render_instruction(&self) -> String {
        self.instruction_template
            .replace("{num_prompts}", &self.num_prompts.to_string())
            .replace("{story}", &clean_whitespace(&self.story))
    }

    /// Checks the final prompt list against the request.
    pub(crate) fn check_output(&self, prompts: &[String]) -> Result<(), PromptError> {
        if prompts.len() != self.num_prompts {
            return Err(PromptError::Malformed(format!(
                "expected {} prompts, got {}",
                self.num_prompts,
                prompts.len()
            )));
        }
        for (index, p) in prompts.iter().enumerate() {
            if p.trim().is_empty() {
                return Err(PromptError::Malformed(format!("prompt {index} is empty")));
            }
            let len = p.chars().count();
            if len > self.max_prompt_chars {
                return Err(PromptError::TooLong {
                    index,
                    len,
                    max: self.max_prompt_chars,
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn clean_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Trims, capitalises the first letter and ends the prompt with a period.
pub(crate) fn finish_sentence(s: &str) -> String {
    let s = clean_whitespace(s);
    let s = s.trim_matches(|c: char| c == ',' || c == ';' || c == ':' || c.is_whitespace());
    let body = s.trim_end_matches(['.', '!', '?']);
    let end = if s.ends_with('!') || s.ends_with('?') {
        &s[body.len()..body.len() + 1]
    } else {
        "."
    };
    let mut chars = body.chars();
    match chars.next() {
        Some(first) => format!("{}{}{}", first.to_uppercase(), chars.as_str(), end),
        None => String::new(),
    }
}
