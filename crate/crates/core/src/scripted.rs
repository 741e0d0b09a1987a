//! Deterministic offline backend driven by a rule table.
//!
//! Rule files are plain text, one `key = value` per line:
//!
//! ```text
//! # comment
//! @head_tokens = 16
//! @context_budget = 4000
//! leaf:* = # {subject}\n\n{head}
//! parent:* = # {subject}\n\nContains: {items}
//! answer:What does x.m do? = x.m sets x to one.
//! answer:broken* = !fail simulated outage
//! ```
//!
//! Keys are `<task>:<pattern>` where the pattern may use `*` wildcards and is
//! matched against the request subject. Exact patterns win over wildcard
//! ones; among wildcard patterns the first in file order wins. Values accept
//! `\n`, `\t` and `\\` escapes and the placeholders `{task}`, `{subject}`,
//! `{items}`, `{items_list}` and `{head}` (first K tokens of the context).
//! A value starting with `!fail` makes the request fail.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use crate::llm::{GenRequest, GenResponse, LlmBackend, LlmError, Task, Usage};
use crate::tokenize::{truncate_tokens, Tokenizer, WhitespaceTokenizer};

pub const SCRIPTED_BACKEND_ID: &str = "scripted";
pub const DEFAULT_HEAD_TOKENS: usize = 32;
pub const DEFAULT_CONTEXT_BUDGET: usize = 8192;

const DEFAULT_LEAF: &str = "# {subject}\n\n## Summary\n{head}\n";
const DEFAULT_PARENT: &str = "# {subject}\n\n## Contents\n{items_list}\n\n## Summary\n{head}\n";
const DEFAULT_ANSWER: &str = "{head}";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("line {line}: expected `key = value`")]
    MissingSeparator { line: usize },
    #[error("line {line}: unknown task `{task}` (expected leaf, parent or answer)")]
    UnknownTask { line: usize, task: String },
    #[error("line {line}: unknown setting `{name}`")]
    UnknownSetting { line: usize, name: String },
    #[error("line {line}: setting `{name}` needs a positive integer")]
    BadSetting { line: usize, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Rule {
    task: Task,
    pattern: String,
    value: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptTable {
    rules: Vec<Rule>,
    pub head_tokens: usize,
    pub context_budget: usize,
}

impl Default for ScriptTable {
    fn default() -> Self {
        ScriptTable {
            rules: Vec::new(),
            head_tokens: DEFAULT_HEAD_TOKENS,
            context_budget: DEFAULT_CONTEXT_BUDGET,
        }
    }
}

impl ScriptTable {
    pub fn parse(text: &str) -> Result<Self, ScriptError> {
        let mut table = ScriptTable::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or(ScriptError::MissingSeparator { line })?;
            let key = key.trim();
            let value = value.trim();
            if let Some(name) = key.strip_prefix('@') {
                let n: usize = value.parse().ok().filter(|n| *n > 0).ok_or_else(|| {
                    ScriptError::BadSetting {
                        line,
                        name: name.to_string(),
                    }
                })?;
                match name {
                    "head_tokens" => table.head_tokens = n,
                    "context_budget" => table.context_budget = n,
                    _ => {
                        return Err(ScriptError::UnknownSetting {
                            line,
                            name: name.to_string(),
                        })
                    }
                }
                continue;
            }
            let (task, pattern) = key.split_once(':').unwrap_or((key, "*"));
            let task = match task.trim() {
                "leaf" => Task::Leaf,
                "parent" => Task::Parent,
                "answer" => Task::Answer,
                other => {
                    return Err(ScriptError::UnknownTask {
                        line,
                        task: other.to_string(),
                    })
                }
            };
            table.rules.push(Rule {
                task,
                pattern: pattern.trim().to_string(),
                value: unescape(value),
            });
        }
        Ok(table)
    }

    /// Adds an exact-subject rule, e.g. to make answers echo known text.
    pub fn push_rule(&mut self, task: Task, pattern: &str, value: &str) {
        self.rules.push(Rule {
            task,
            pattern: pattern.to_string(),
            value: value.to_string(),
        });
    }

    fn lookup(&self, task: Task, subject: &str) -> &str {
        let candidates = || self.rules.iter().filter(|r| r.task == task);
        let exact = candidates().find(|r| !r.pattern.contains('*') && r.pattern == subject);
        let wild =
            || candidates().find(|r| r.pattern.contains('*') && glob_match(&r.pattern, subject));
        match exact.or_else(wild) {
            Some(rule) => &rule.value,
            None => match task {
                Task::Leaf => DEFAULT_LEAF,
                Task::Parent => DEFAULT_PARENT,
                Task::Answer => DEFAULT_ANSWER,
            },
        }
    }
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// `*` matches any (possibly empty) run of characters.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] != '*' && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|c| *c == '*')
}

/// Offline backend whose output is a pure function of the request.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    table: ScriptTable,
}

impl ScriptedBackend {
    pub fn new(table: ScriptTable) -> Self {
        ScriptedBackend { table }
    }

    pub fn table(&self) -> &ScriptTable {
        &self.table
    }

    fn render(&self, template: &str, req: &GenRequest, task: Task) -> String {
        let tok = WhitespaceTokenizer;
        let route = &req.route;
        let mut out = String::with_capacity(template.len() + 64);
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open..];
            let close = match after.find('}') {
                Some(c) => c,
                None => break,
            };
            let name = &after[1..close];
            match name {
                "task" => out.push_str(task.as_str()),
                "subject" => out.push_str(&route.subject),
                "items" => out.push_str(&route.items.join(", ")),
                "items_list" => {
                    let list: Vec<String> = route.items.iter().map(|i| format!("- {i}")).collect();
                    out.push_str(&list.join("\n"));
                }
                "head" => {
                    out.push_str(truncate_tokens(&tok, &route.context, self.table.head_tokens).0)
                }
                _ => out.push_str(&after[..=close]),
            }
            rest = &after[close + 1..];
        }
        out.push_str(rest);
        out
    }
}

impl LlmBackend for ScriptedBackend {
    fn backend_id(&self) -> &str {
        SCRIPTED_BACKEND_ID
    }

    fn context_budget(&self) -> usize {
        self.table.context_budget
    }

    fn generate(&self, req: &GenRequest) -> Result<GenResponse, LlmError> {
        req.validate()?;
        let task = req.route.task.unwrap_or(Task::Answer);
        let template = self.table.lookup(task, &req.route.subject);
        if let Some(msg) = template.strip_prefix("!fail") {
            return Err(LlmError::BackendUnreachable {
                attempts: 1,
                detail: format!("scripted failure:{msg}"),
            });
        }
        let tok = WhitespaceTokenizer;
        let rendered = self.render(template, req, task);
        let text = truncate_tokens(&tok, &rendered, req.max_output_tokens as usize)
            .0
            .to_string();
        let usage = Usage {
            prompt_tokens: (tok.count(&req.system_prompt) + tok.count(&req.user_prompt)) as u64,
            completion_tokens: tok.count(&text) as u64,
        };
        Ok(GenResponse {
            text,
            usage,
            backend_id: SCRIPTED_BACKEND_ID.to_string(),
        })
    }
}
