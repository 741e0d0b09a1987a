//! On-disk layout for knowledge bases, the resume journal and vector indexes.
//!
//! ```text
//! <out>/implicit/kb/manifest.json
//! <out>/implicit/kb/root.md
//! <out>/implicit/kb/tree/<path>.md
//! <out>/implicit/kb/progress.jsonl      while a run is incomplete
//! <out>/{baseline,implicit}/index.jsonl
//! <out>/{baseline,implicit}/index.meta.json
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use hierag_core::distill::{DocLevel, GenMeta, KnowledgeBase, KnowledgeDoc, NodeOutput};
use hierag_core::index::{IndexedDoc, Method, VectorIndex};
use hierag_core::prompt::{RunLog, TruncationEvent};
use hierag_core::tree::NodeId;
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, CliResult, ErrorCode};

pub const MANIFEST: &str = "manifest.json";
pub const JOURNAL: &str = "progress.jsonl";
pub const INDEX_FILE: &str = "index.jsonl";
pub const INDEX_META: &str = "index.meta.json";

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent.display(), e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io_err(tmp.display(), e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path.display(), e))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

/// Relative location of a document's markdown inside the KB directory.
pub fn doc_file(path: &str) -> String {
    if path.is_empty() {
        "root.md".to_string()
    } else {
        format!("tree/{path}.md")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub node_id: NodeId,
    pub path: String,
    pub level: DocLevel,
    pub file: String,
    pub source_children: Vec<NodeId>,
    pub gen_meta: GenMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tree_fingerprint: String,
    pub run_fingerprint: String,
    pub doc_count: usize,
    /// In generation order.
    pub docs: Vec<ManifestEntry>,
    pub truncations: Vec<TruncationEvent>,
}

/// Writes the finished knowledge base and removes the journal.
pub fn write_kb(
    dir: &Path,
    kb: &KnowledgeBase,
    log: &RunLog,
    run_fingerprint: &str,
) -> CliResult<()> {
    let tree_dir = dir.join("tree");
    if tree_dir.exists() {
        fs::remove_dir_all(&tree_dir).map_err(|e| io_err(tree_dir.display(), e))?;
    }
    let mut docs = Vec::with_capacity(kb.len());
    for doc in kb.in_generation_order() {
        let file = doc_file(&doc.path);
        write_atomic(&dir.join(&file), doc.markdown.as_bytes())?;
        docs.push(ManifestEntry {
            node_id: doc.node_id.clone(),
            path: doc.path.clone(),
            level: doc.level,
            file,
            source_children: doc.source_children.clone(),
            gen_meta: doc.gen_meta.clone(),
        });
    }
    let manifest = Manifest {
        tree_fingerprint: kb.tree_fingerprint.clone(),
        run_fingerprint: run_fingerprint.to_string(),
        doc_count: docs.len(),
        docs,
        truncations: log.truncations.clone(),
    };
    write_atomic(&dir.join(MANIFEST), &to_json(&manifest))?;
    let journal = dir.join(JOURNAL);
    if journal.exists() {
        fs::remove_file(&journal).map_err(|e| io_err(journal.display(), e))?;
    }
    Ok(())
}

pub fn load_kb(dir: &Path) -> CliResult<(KnowledgeBase, Manifest)> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::new(ErrorCode::NoIndex, format!("{}: {e}", path.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::new(ErrorCode::Io, format!("{}: {e}", path.display())))?;
    let mut kb = KnowledgeBase {
        docs: Default::default(),
        tree_fingerprint: manifest.tree_fingerprint.clone(),
    };
    for e in &manifest.docs {
        let p = dir.join(&e.file);
        let markdown = fs::read_to_string(&p).map_err(|err| io_err(p.display(), err))?;
        kb.docs.insert(
            e.node_id.clone(),
            KnowledgeDoc {
                node_id: e.node_id.clone(),
                path: e.path.clone(),
                level: e.level,
                markdown,
                source_children: e.source_children.clone(),
                gen_meta: e.gen_meta.clone(),
            },
        );
    }
    Ok((kb, manifest))
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalHeader {
    run_fingerprint: String,
}

/// Append-only record of finished nodes. Its presence marks an incomplete run.
pub struct Journal {
    out: BufWriter<File>,
    path: PathBuf,
}

impl Journal {
    /// Reads the outputs of a previous interrupted run with the same
    /// fingerprint. A torn last line is ignored.
    pub fn recover(dir: &Path, run_fingerprint: &str) -> CliResult<Vec<NodeOutput>> {
        let path = dir.join(JOURNAL);
        let file = match File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(path.display(), e)),
        };
        let mut lines = BufReader::new(file).lines();
        let header: Option<JournalHeader> = lines
            .next()
            .and_then(|l| l.ok())
            .and_then(|l| serde_json::from_str(&l).ok());
        match header {
            Some(h) if h.run_fingerprint == run_fingerprint => {}
            _ => {
                warn!("ignoring journal {} from a different run", path.display());
                return Ok(Vec::new());
            }
        }
        let mut outputs = Vec::new();
        for line in lines {
            let Ok(line) = line else { break };
            match serde_json::from_str::<NodeOutput>(&line) {
                Ok(o) => outputs.push(o),
                Err(_) => {
                    warn!("journal {} ends with a partial record", path.display());
                    break;
                }
            }
        }
        info!(
            "recovered {} finished nodes from {}",
            outputs.len(),
            path.display()
        );
        Ok(outputs)
    }

    /// Starts a fresh journal holding `kept`.
    pub fn create(dir: &Path, run_fingerprint: &str, kept: &[NodeOutput]) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir.display(), e))?;
        let path = dir.join(JOURNAL);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(&path)
            .map_err(|e| io_err(path.display(), e))?;
        let mut j = Journal {
            out: BufWriter::new(file),
            path,
        };
        let header = JournalHeader {
            run_fingerprint: run_fingerprint.to_string(),
        };
        j.line(&serde_json::to_string(&header).expect("serializable"))?;
        for o in kept {
            j.append(o)?;
        }
        Ok(j)
    }

    fn line(&mut self, s: &str) -> CliResult<()> {
        writeln!(self.out, "{s}")
            .and_then(|_| self.out.flush())
            .map_err(|e| io_err(self.path.display(), e))
    }

    pub fn append(&mut self, output: &NodeOutput) -> CliResult<()> {
        self.line(&serde_json::to_string(output).expect("serializable"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub method: Method,
    pub dim: usize,
    pub embed_backend_id: String,
    pub doc_count: usize,
    pub tree_fingerprint: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_overlap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_backend_id: Option<String>,
}

pub fn write_index(dir: &Path, index: &VectorIndex, meta: &IndexMeta) -> CliResult<()> {
    let mut body = Vec::new();
    for d in index.docs() {
        serde_json::to_writer(&mut body, d).expect("serializable");
        body.push(b'\n');
    }
    write_atomic(&dir.join(INDEX_FILE), &body)?;
    write_atomic(&dir.join(INDEX_META), &to_json(meta))
}

pub fn load_index(dir: &Path) -> CliResult<(VectorIndex, IndexMeta)> {
    let meta_path = dir.join(INDEX_META);
    let data_path = dir.join(INDEX_FILE);
    if !meta_path.is_file() || !data_path.is_file() {
        return Err(CliError::new(
            ErrorCode::NoIndex,
            format!("no index at {}", dir.display()),
        ));
    }
    let bad = |p: &Path, e: &dyn std::fmt::Display| {
        CliError::new(ErrorCode::NoIndex, format!("{}: {e}", p.display()))
    };
    let meta: IndexMeta = serde_json::from_str(
        &fs::read_to_string(&meta_path).map_err(|e| io_err(meta_path.display(), e))?,
    )
    .map_err(|e| bad(&meta_path, &e))?;
    let file = File::open(&data_path).map_err(|e| io_err(data_path.display(), e))?;
    let mut docs = Vec::with_capacity(meta.doc_count);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(data_path.display(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: IndexedDoc = serde_json::from_str(&line)
            .map_err(|e| bad(&data_path, &format!("line {}: {e}", i + 1)))?;
        docs.push(doc);
    }
    if docs.len() != meta.doc_count {
        return Err(bad(
            &data_path,
            &format!("{} documents, metadata says {}", docs.len(), meta.doc_count),
        ));
    }
    let index = VectorIndex::from_docs(docs, meta.dim, meta.embed_backend_id.clone(), meta.method)
        .map_err(|e| bad(&data_path, &e))?;
    Ok((index, meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doc_files_are_distinct() {
        assert_eq!(doc_file(""), "root.md");
        assert_eq!(doc_file("a"), "tree/a.md");
        assert_eq!(doc_file("a.md"), "tree/a.md.md");
        assert_eq!(doc_file("a/b.m"), "tree/a/b.m.md");
    }
}
