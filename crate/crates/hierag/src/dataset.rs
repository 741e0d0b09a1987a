use std::fs;
use std::path::Path;

use hierag_core::report::{validate_dataset, EvalError, QAItem};
use serde_json::Value;

use crate::error::{CliError, CliResult, ErrorCode};

fn dataset_err(msg: impl Into<String>) -> CliError {
    CliError::new(ErrorCode::Dataset, msg)
}

/// Parses a JSON array of `{id, question, ground_truth, level}` objects.
/// Errors name the offending item id when there is one.
pub fn parse_dataset(text: &str) -> CliResult<Vec<QAItem>> {
    let root: Value =
        serde_json::from_str(text).map_err(|e| dataset_err(format!("invalid JSON: {e}")))?;
    let items = root
        .as_array()
        .ok_or_else(|| dataset_err("expected a JSON array of QA items"))?;
    let mut out = Vec::with_capacity(items.len());
    for (i, raw) in items.iter().enumerate() {
        let label = raw
            .get("id")
            .and_then(Value::as_str)
            .map(|s| format!("item `{s}`"))
            .unwrap_or_else(|| format!("item #{i}"));
        let item: QAItem = serde_json::from_value(raw.clone())
            .map_err(|e| dataset_err(format!("{label}: {e}")))?;
        out.push(item);
    }
    validate_dataset(&out).map_err(|e: EvalError| dataset_err(e.to_string()))?;
    Ok(out)
}

pub fn load_dataset(path: &Path) -> CliResult<Vec<QAItem>> {
    let text =
        fs::read_to_string(path).map_err(|e| dataset_err(format!("{}: {e}", path.display())))?;
    parse_dataset(&text)
}
