//! Prompt templates and budget-aware assembly.
//!
//! When a prompt would exceed the backend's context budget only the variable
//! payload is cut, from the end. Instructions and protected headers are never
//! touched, and every cut is recorded as a [`TruncationEvent`].

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::Task;
use crate::tokenize::{truncate_tokens, Tokenizer};

pub const CONTEXT_PLACEHOLDER: &str = "{context}";

pub const DEFAULT_LEAF_TEMPLATE: &str = include_str!("../assets/leaf_template.md");
pub const DEFAULT_PARENT_TEMPLATE: &str = include_str!("../assets/parent_template.md");
pub const DEFAULT_ANSWER_TEMPLATE: &str = include_str!("../assets/answer_template.md");

/// System prompt used for knowledge generation.
pub const DISTILL_SYSTEM_PROMPT: &str =
    "You document code repositories. Reply with a single Markdown document.";
/// System prompt used for answering questions.
pub const ANSWER_SYSTEM_PROMPT: &str =
    "You answer questions about a code repository using only the provided sources.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateKind {
    LeafTemplate,
    ParentTemplate,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("{kind:?} must contain exactly one `{{context}}` placeholder, found {found}")]
    Placeholder { kind: TemplateKind, found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: TemplateKind,
    body: String,
}

impl PromptTemplate {
    pub fn new(kind: TemplateKind, body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        let found = body.matches(CONTEXT_PLACEHOLDER).count();
        if found != 1 {
            return Err(TemplateError::Placeholder { kind, found });
        }
        Ok(PromptTemplate { kind, body })
    }

    pub fn default_leaf() -> Self {
        Self::new(TemplateKind::LeafTemplate, DEFAULT_LEAF_TEMPLATE).expect("bundled template")
    }

    pub fn default_parent() -> Self {
        Self::new(TemplateKind::ParentTemplate, DEFAULT_PARENT_TEMPLATE).expect("bundled template")
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn render(&self, context: &str) -> String {
        self.body.replacen(CONTEXT_PLACEHOLDER, context, 1)
    }
}

/// Leaf and parent templates used by one distillation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub leaf: PromptTemplate,
    pub parent: PromptTemplate,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            leaf: PromptTemplate::default_leaf(),
            parent: PromptTemplate::default_parent(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationEvent {
    pub task: Task,
    /// Node path or question the prompt was built for.
    pub label: String,
    pub original_tokens: usize,
    pub kept_tokens: usize,
    pub budget: usize,
}

/// Events recorded while building prompts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLog {
    pub truncations: Vec<TruncationEvent>,
}

impl RunLog {
    pub fn record(&mut self, event: TruncationEvent) {
        self.truncations.push(event);
    }

    pub fn extend(&mut self, other: RunLog) {
        self.truncations.extend(other.truncations);
    }

    pub fn is_empty(&self) -> bool {
        self.truncations.is_empty()
    }
}

/// A context string that fits the budget, plus what was cut (if anything).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FittedContext {
    pub context: String,
    pub truncation: Option<TruncationEvent>,
}

/// Builds `protected + payload`, cutting `payload` from the end so that the
/// whole prompt (`fixed` text plus context) stays within `budget` tokens.
///
/// `fixed` is every other piece of prompt text (system prompt, template
/// instructions). Token counts are summed per piece, which can only
/// over-estimate the count of the concatenation.
pub fn fit_context(
    tokenizer: &dyn Tokenizer,
    fixed: &[&str],
    protected: &str,
    payload: &str,
    budget: usize,
    task: Task,
    label: &str,
) -> FittedContext {
    let used: usize =
        fixed.iter().map(|t| tokenizer.count(t)).sum::<usize>() + tokenizer.count(protected);
    let available = budget.saturating_sub(used);
    let (kept, original) = truncate_tokens(tokenizer, payload, available);
    let mut context = String::with_capacity(protected.len() + kept.len());
    context.push_str(protected);
    context.push_str(kept);
    let truncation = (original > available).then(|| TruncationEvent {
        task,
        label: label.to_string(),
        original_tokens: original,
        kept_tokens: available.min(original),
        budget,
    });
    FittedContext {
        context,
        truncation,
    }
}

/// Template text with the placeholder removed; used for budgeting.
pub(crate) fn instructions_of(template: &PromptTemplate) -> String {
    template.body.replacen(CONTEXT_PLACEHOLDER, " ", 1)
}
