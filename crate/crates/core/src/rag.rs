//! Retrieval-augmented answering over a [`VectorIndex`].

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distill::GenMeta;
use crate::embed::EmbedBackend;
use crate::index::{retrieve, IndexError, Method, VectorIndex};
use crate::llm::{GenRequest, GenSettings, LlmBackend, LlmError, Route, Task};
use crate::prompt::{fit_context, RunLog, ANSWER_SYSTEM_PROMPT, DEFAULT_ANSWER_TEMPLATE};
use crate::tokenize::WhitespaceTokenizer;

pub const NOT_FOUND_ANSWER: &str = "not found in the repository";
pub const NO_SOURCES: &str = "No sources were retrieved.";
const SOURCE_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagAnswer {
    pub question: String,
    pub answer_text: String,
    /// Documents shown to the model, in prompt order.
    pub retrieved: Vec<Retrieved>,
    pub method: Method,
    pub gen_meta: GenMeta,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RagError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("answer generation failed: {0}")]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnswerOptions {
    pub settings: GenSettings,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerOutput {
    pub answer: RagAnswer,
    pub prompt: String,
    pub log: RunLog,
}

/// Retrieves the top `k` documents for `question` and asks the model to answer
/// from them.
///
/// Each source goes into the prompt under a `### Source <doc_id>` header in
/// retrieval order. If the prompt would exceed the backend budget the source
/// block is cut from the end; sources whose header no longer fits are dropped
/// from `retrieved` and the cut is logged.
pub fn answer(
    question: &str,
    index: &VectorIndex,
    k: usize,
    llm: &dyn LlmBackend,
    embed: &dyn EmbedBackend,
    options: &AnswerOptions,
) -> Result<AnswerOutput, RagError> {
    let hits = retrieve(index, question, k, embed)?;

    let mut payload = String::new();
    let mut starts = Vec::with_capacity(hits.len());
    for (doc, _) in &hits {
        if !payload.is_empty() {
            payload.push_str(SOURCE_SEPARATOR);
        }
        starts.push(payload.len());
        payload.push_str(&format!("### Source {}\n\n{}", doc.doc_id, doc.text));
    }

    let instructions = DEFAULT_ANSWER_TEMPLATE
        .replacen("{question}", " ", 1)
        .replacen("{sources}", " ", 1);
    let mut log = RunLog::default();
    let (sources, shown) = if hits.is_empty() {
        (NO_SOURCES.to_string(), Vec::new())
    } else {
        let fitted = fit_context(
            &WhitespaceTokenizer,
            &[ANSWER_SYSTEM_PROMPT, &instructions, question],
            "",
            &payload,
            llm.context_budget(),
            Task::Answer,
            question,
        );
        if let Some(ev) = fitted.truncation {
            log.record(ev);
        }
        let kept = fitted.context.len();
        let shown: Vec<Retrieved> = hits
            .iter()
            .zip(&starts)
            .filter(|(_, &start)| start < kept)
            .map(|((doc, score), _)| Retrieved {
                doc_id: doc.doc_id.clone(),
                score: *score,
            })
            .collect();
        let ctx = if fitted.context.is_empty() {
            NO_SOURCES.to_string()
        } else {
            fitted.context
        };
        (ctx, shown)
    };

    let prompt = DEFAULT_ANSWER_TEMPLATE
        .replacen("{question}", question, 1)
        .replacen("{sources}", &sources, 1);
    let route = Route {
        task: Some(Task::Answer),
        subject: question.to_string(),
        items: shown.iter().map(|r| r.doc_id.clone()).collect(),
        context: sources,
    };
    let req = GenRequest {
        system_prompt: ANSWER_SYSTEM_PROMPT.to_string(),
        user_prompt: prompt.clone(),
        max_output_tokens: options.settings.max_output_tokens,
        temperature: options.settings.temperature,
        route,
    };
    let resp = llm.generate(&req)?;
    Ok(AnswerOutput {
        answer: RagAnswer {
            question: question.to_string(),
            answer_text: resp.text,
            retrieved: shown,
            method: index.method(),
            gen_meta: GenMeta {
                backend_id: llm.backend_id().to_string(),
                timestamp: options.timestamp,
                truncated: !log.is_empty(),
                seq: 0,
            },
        },
        prompt,
        log,
    })
}
