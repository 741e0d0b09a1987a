//! Flat `key = value` config files and value resolution.
//!
//! Each setting is taken from the command line if given, else from the config
//! file, else from the built-in default. Every resolved value is logged with
//! its source.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;

use crate::error::{CliError, CliResult, ErrorCode};

pub const KNOWN_KEYS: &[&str] = &[
    "method",
    "llm_backend",
    "embed_backend",
    "script",
    "endpoint_url",
    "model_name",
    "embed_endpoint_url",
    "embed_model_name",
    "embed_dim",
    "max_retries",
    "max_inflight",
    "context_budget_tokens",
    "max_output_tokens",
    "temperature",
    "timeout_secs",
    "chunk_size",
    "chunk_overlap",
    "k",
    "leaf_template",
    "parent_template",
    "workers",
    "hash_dim",
    "hash_seed",
    "ignore",
    "out",
];

/// Keys whose values are file paths, resolved against the config file's
/// directory.
const PATH_KEYS: &[&str] = &["script", "leaf_template", "parent_template", "out"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    base_dir: Option<PathBuf>,
}

impl ConfigFile {
    pub fn parse(text: &str, base_dir: Option<PathBuf>) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::new(
                    ErrorCode::Config,
                    format!("line {}: expected `key = value`", i + 1),
                )
            })?;
            let k = k.trim();
            if !KNOWN_KEYS.contains(&k) {
                return Err(CliError::new(
                    ErrorCode::Config,
                    format!("line {}: unknown key `{k}`", i + 1),
                ));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(ConfigFile { values, base_dir })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new(ErrorCode::Config, format!("{}: {e}", path.display())))?;
        let base = std::path::absolute(path)
            .ok()
            .and_then(|p| p.parent().map(Path::to_path_buf));
        let mut cfg = Self::parse(&text, base)?;
        for key in PATH_KEYS {
            if let (Some(v), Some(base)) = (cfg.values.get_mut(*key), cfg.base_dir.as_ref()) {
                if Path::new(v.as_str()).is_relative() {
                    *v = base.join(&*v).to_string_lossy().into_owned();
                }
            }
        }
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Cli,
    File,
    Default,
}

impl Source {
    fn as_str(self) -> &'static str {
        match self {
            Source::Cli => "cli",
            Source::File => "config",
            Source::Default => "default",
        }
    }
}

/// Resolves settings and records where each value came from.
#[derive(Debug, Default)]
pub struct Resolver {
    file: ConfigFile,
    pub resolved: Vec<(String, String, Source)>,
}

impl Resolver {
    pub fn new(file: ConfigFile) -> Self {
        Resolver {
            file,
            resolved: Vec::new(),
        }
    }

    fn record(&mut self, key: &str, shown: String, source: Source) {
        info!("config {key} = {shown} ({})", source.as_str());
        self.resolved.push((key.to_string(), shown, source));
    }

    pub fn value<T>(&mut self, key: &str, cli: Option<T>, default: T) -> CliResult<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let (v, src) = match cli {
            Some(v) => (v, Source::Cli),
            None => match self.file.get(key) {
                Some(raw) => (parse_value(key, raw)?, Source::File),
                None => (default, Source::Default),
            },
        };
        self.record(key, v.to_string(), src);
        Ok(v)
    }

    pub fn optional<T>(&mut self, key: &str, cli: Option<T>) -> CliResult<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let (v, src) = match cli {
            Some(v) => (Some(v), Source::Cli),
            None => match self.file.get(key) {
                Some(raw) => (Some(parse_value(key, raw)?), Source::File),
                None => (None, Source::Default),
            },
        };
        let shown = v
            .as_ref()
            .map(|v| v.to_string())
            .unwrap_or_else(|| "(unset)".into());
        self.record(key, shown, src);
        Ok(v)
    }

    /// Like [`Resolver::optional`] for paths; the result is absolute.
    pub fn path(&mut self, key: &str, cli: Option<PathBuf>) -> CliResult<Option<PathBuf>> {
        let (v, src) = match cli {
            Some(p) => (Some(p), Source::Cli),
            None => match self.file.get(key) {
                Some(raw) => (Some(PathBuf::from(raw)), Source::File),
                None => (None, Source::Default),
            },
        };
        let v = v.map(|p| absolute(&p)).transpose()?;
        let shown = v
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "(unset)".into());
        self.record(key, shown, src);
        Ok(v)
    }
}

fn parse_value<T>(key: &str, raw: &str) -> CliResult<T>
where
    T: FromStr,
    T::Err: Display,
{
    raw.parse()
        .map_err(|e| CliError::new(ErrorCode::Config, format!("bad value for `{key}`: {e}")))
}

pub fn absolute(p: &Path) -> CliResult<PathBuf> {
    std::path::absolute(p)
        .map_err(|e| CliError::new(ErrorCode::Path, format!("{}: {e}", p.display())))
}
