//! Text-generation interface shared by the distiller and the answerer.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What a request is for. Remote backends ignore it; the scripted backend
/// routes on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Leaf,
    Parent,
    Answer,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Leaf => "leaf",
            Task::Parent => "parent",
            Task::Answer => "answer",
        }
    }
}

/// Structured description of the request, carried next to the prompt text.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Route {
    pub task: Option<Task>,
    /// File name, folder name or question.
    pub subject: String,
    /// Child names for folders, retrieved doc ids for answers.
    pub items: Vec<String>,
    /// The (possibly truncated) context payload substituted into the template.
    pub context: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f32,
    pub route: Route,
}

impl GenRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.system_prompt.is_empty() || self.user_prompt.is_empty() {
            return Err(LlmError::InvalidRequest("prompts must be non-empty"));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_output_tokens must be >= 1"));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidRequest("temperature must lie in [0, 2]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenResponse {
    pub text: String,
    pub usage: Usage,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("backend unreachable after {attempts} attempts: {detail}")]
    BackendUnreachable { attempts: u32, detail: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(&'static str),
}

/// A text generator. Implementations must tolerate concurrent calls.
pub trait LlmBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Maximum prompt size (system + user) in whitespace tokens.
    fn context_budget(&self) -> usize;

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, LlmError>;
}

impl<B: LlmBackend + ?Sized> LlmBackend for &B {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn context_budget(&self) -> usize {
        (**self).context_budget()
    }
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, LlmError> {
        (**self).generate(req)
    }
}

impl<B: LlmBackend + ?Sized> LlmBackend for alloc::boxed::Box<B> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn context_budget(&self) -> usize {
        (**self).context_budget()
    }
    fn generate(&self, req: &GenRequest) -> Result<GenResponse, LlmError> {
        (**self).generate(req)
    }
}

/// Sampling settings applied to every request a pipeline stage makes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenSettings {
    pub max_output_tokens: u32,
    pub temperature: f32,
}

impl Default for GenSettings {
    fn default() -> Self {
        GenSettings {
            max_output_tokens: 1024,
            temperature: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> GenRequest {
        GenRequest {
            system_prompt: "s".into(),
            user_prompt: "u".into(),
            max_output_tokens: 1,
            temperature: 0.0,
            route: Route::default(),
        }
    }

    #[test]
    fn request_validation() {
        assert!(req().validate().is_ok());
        let mut r = req();
        r.user_prompt.clear();
        assert!(r.validate().is_err());
        let mut r = req();
        r.max_output_tokens = 0;
        assert!(r.validate().is_err());
        let mut r = req();
        r.temperature = 2.5;
        assert!(r.validate().is_err());
    }
}
