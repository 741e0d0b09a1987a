//! Tokenizers used for chunking and prompt budgeting.
//!
//! A tokenizer reports byte spans into the original text so that callers can
//! cut text on token boundaries without re-assembling it.

use alloc::vec::Vec;
use core::ops::Range;

/// Splits text into token spans.
pub trait Tokenizer: Send + Sync {
    /// Byte ranges of every token in `text`, in order and non-overlapping.
    fn spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count(&self, text: &str) -> usize {
        self.spans(text).len()
    }
}

/// Unicode-whitespace tokenizer. Deterministic and dependency free.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn spans(&self, text: &str) -> Vec<Range<usize>> {
        let mut spans = Vec::new();
        let mut start = None;
        for (i, ch) in text.char_indices() {
            match (ch.is_whitespace(), start) {
                (true, Some(s)) => {
                    spans.push(s..i);
                    start = None;
                }
                (false, None) => start = Some(i),
                _ => {}
            }
        }
        if let Some(s) = start {
            spans.push(s..text.len());
        }
        spans
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Returns the prefix of `text` ending after its `max_tokens`-th token.
///
/// The second value is the number of tokens in the original text.
pub fn truncate_tokens<'a>(
    tokenizer: &dyn Tokenizer,
    text: &'a str,
    max_tokens: usize,
) -> (&'a str, usize) {
    let spans = tokenizer.spans(text);
    let total = spans.len();
    if total <= max_tokens {
        return (text, total);
    }
    if max_tokens == 0 {
        return ("", total);
    }
    (&text[..spans[max_tokens - 1].end], total)
}
