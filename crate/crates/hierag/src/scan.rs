//! Builds a [`RepoTree`] from a directory on disk.

use std::fs;
use std::path::{Path, PathBuf};

use globset::{Glob, GlobSet, GlobSetBuilder};
use hierag_core::tokenize::Tokenizer;
use hierag_core::tree::{LeafContent, RepoTree, TreeBuilder, TreeError};
use log::{debug, warn};
use thiserror::Error;
use walkdir::WalkDir;

/// Name of the optional per-repository ignore file (one glob per line).
pub const IGNORE_FILE: &str = ".hieragignore";
pub const DEFAULT_IGNORES: &[&str] = &[".git", ".hg", ".svn"];

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("path not found: {0}")]
    PathNotFound(PathBuf),
    #[error("not a directory: {0}")]
    NotADirectory(PathBuf),
    #[error("bad ignore pattern `{pattern}`: {reason}")]
    BadPattern { pattern: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Default)]
pub struct ScanOptions {
    /// Extra glob patterns, matched against repository-relative paths and
    /// bare file names.
    pub ignore: Vec<String>,
    /// Skip `.git`, `.hg` and `.svn`. On by default through [`ScanOptions::new`].
    pub skip_vcs: bool,
}

impl ScanOptions {
    pub fn new() -> Self {
        ScanOptions {
            ignore: Vec::new(),
            skip_vcs: true,
        }
    }
}

fn build_globs(patterns: &[String]) -> Result<GlobSet, ScanError> {
    let mut b = GlobSetBuilder::new();
    for p in patterns {
        let g = Glob::new(p).map_err(|e| ScanError::BadPattern {
            pattern: p.clone(),
            reason: e.to_string(),
        })?;
        b.add(g);
    }
    b.build().map_err(|e| ScanError::BadPattern {
        pattern: patterns.join(","),
        reason: e.to_string(),
    })
}

fn read_ignore_file(root: &Path) -> Result<Vec<String>, ScanError> {
    let path = root.join(IGNORE_FILE);
    match fs::read_to_string(&path) {
        Ok(s) => Ok(s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| l.trim_end_matches('/').to_string())
            .collect()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
        Err(source) => Err(ScanError::Io { path, source }),
    }
}

/// Classifies raw bytes: text if valid UTF-8 without NUL bytes.
pub fn classify(bytes: Vec<u8>) -> LeafContent {
    let size = bytes.len() as u64;
    if bytes.contains(&0) {
        return LeafContent::Binary { size };
    }
    match String::from_utf8(bytes) {
        Ok(s) => LeafContent::Text(s),
        Err(_) => LeafContent::Binary { size },
    }
}

/// Walks `root` without following symlinks and returns its tree.
///
/// Entries are visited in name order so the result does not depend on the
/// file system's listing order.
pub fn scan_repo(
    root: &Path,
    options: &ScanOptions,
    tokenizer: &dyn Tokenizer,
) -> Result<RepoTree, ScanError> {
    let meta = fs::metadata(root).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            ScanError::PathNotFound(root.to_path_buf())
        } else {
            ScanError::Io {
                path: root.to_path_buf(),
                source,
            }
        }
    })?;
    if !meta.is_dir() {
        return Err(ScanError::NotADirectory(root.to_path_buf()));
    }
    let root = std::path::absolute(root).map_err(|source| ScanError::Io {
        path: root.to_path_buf(),
        source,
    })?;

    let mut patterns = options.ignore.clone();
    if options.skip_vcs {
        patterns.extend(DEFAULT_IGNORES.iter().map(|s| s.to_string()));
    }
    patterns.push(IGNORE_FILE.to_string());
    patterns.extend(read_ignore_file(&root)?);
    let globs = build_globs(&patterns)?;

    let root_name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "/".to_string());
    let mut builder = TreeBuilder::new(root_name, root.to_string_lossy().into_owned());

    let walker = WalkDir::new(&root)
        .follow_links(false)
        .sort_by_file_name()
        .min_depth(1)
        .into_iter()
        .filter_entry(|e| {
            let rel = e.path().strip_prefix(&root).unwrap_or(e.path());
            !(globs.is_match(rel) || globs.is_match(e.file_name()))
        });
    for entry in walker {
        let entry = entry.map_err(|e| {
            let path = e
                .path()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| root.clone());
            ScanError::Io {
                path,
                source: e.into(),
            }
        })?;
        let rel = entry
            .path()
            .strip_prefix(&root)
            .expect("walkdir stays under root");
        let rel_str = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let ft = entry.file_type();
        if ft.is_symlink() {
            debug!("skipping symlink {rel_str}");
            continue;
        }
        if ft.is_dir() {
            builder.add_dir(&rel_str)?;
        } else if ft.is_file() {
            let bytes = fs::read(entry.path()).map_err(|source| ScanError::Io {
                path: entry.path().to_path_buf(),
                source,
            })?;
            builder.add_file(&rel_str, classify(bytes))?;
        } else {
            warn!("skipping special file {rel_str}");
        }
    }
    Ok(builder.build(tokenizer)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use hierag_core::tokenize::WhitespaceTokenizer;

    #[test]
    fn classify_bytes() {
        assert_eq!(classify(b"abc".to_vec()), LeafContent::Text("abc".into()));
        assert_eq!(
            classify(vec![b'a', 0, b'b']),
            LeafContent::Binary { size: 3 }
        );
        assert_eq!(classify(vec![0xff, 0xfe]), LeafContent::Binary { size: 2 });
        assert_eq!(classify(Vec::new()), LeafContent::Text(String::new()));
    }

    #[test]
    fn missing_and_file_roots() {
        let tok = WhitespaceTokenizer;
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(matches!(
            scan_repo(&missing, &ScanOptions::new(), &tok),
            Err(ScanError::PathNotFound(_))
        ));
        let f = dir.path().join("f.txt");
        fs::write(&f, "x").unwrap();
        assert!(matches!(
            scan_repo(&f, &ScanOptions::new(), &tok),
            Err(ScanError::NotADirectory(_))
        ));
    }
}
