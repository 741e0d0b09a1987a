//! Immutable model of a scanned file hierarchy.
//!
//! Leaves are files, internal nodes are folders. Children are kept sorted by
//! name so every traversal (and therefore every prompt assembled from it) is
//! deterministic. Node ids are derived from the repo-relative path and survive
//! rescans.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tokenize::Tokenizer;

/// Stable node identifier: a hash of the repo-relative path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn for_path(path: &str) -> Self {
        let digest = Sha256::digest(path.as_bytes());
        NodeId(hex(&digest[..16]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    use core::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf,
    Internal,
}

/// Raw content of a leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LeafContent {
    Text(String),
    /// Non-text file; only its size is kept.
    Binary {
        size: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    /// Repo-relative path with `/` separators; empty for the root.
    pub path: String,
    pub children: Vec<NodeId>,
    pub content: Option<LeafContent>,
    pub token_count: Option<usize>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.kind == NodeKind::Leaf
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.content, Some(LeafContent::Binary { .. }))
    }

    /// Path for display in prompts and headers; the root shows as `.`.
    pub fn display_path(&self) -> &str {
        if self.path.is_empty() {
            "."
        } else {
            &self.path
        }
    }

    /// Text used to describe this leaf to a model or a chunker.
    ///
    /// Binary files are replaced by a one-line descriptor. Folders have none.
    pub fn leaf_text(&self) -> Option<String> {
        match &self.content {
            Some(LeafContent::Text(t)) => Some(t.clone()),
            Some(LeafContent::Binary { size }) => Some(binary_descriptor(&self.name, *size)),
            None => None,
        }
    }
}

fn binary_descriptor(name: &str, size: u64) -> String {
    let ext = match name.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => ext,
        _ => "none",
    };
    format!("[binary file: name={name}, size={size} bytes, extension={ext}]")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("invalid repo-relative path `{0}`")]
    InvalidPath(String),
    #[error("`{0}` is both a file and a folder")]
    Conflict(String),
    #[error("malformed tree: {0}")]
    Malformed(String),
}

/// A validated file hierarchy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoTree {
    pub root: NodeId,
    pub nodes: BTreeMap<NodeId, TreeNode>,
    pub source_root: String,
}

impl RepoTree {
    pub fn node(&self, id: &NodeId) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    pub fn root_node(&self) -> &TreeNode {
        &self.nodes[&self.root]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.values().filter(|n| n.is_leaf()).count()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.len() - self.leaf_count()
    }

    /// Pre-order depth-first traversal from the root, children in name order.
    pub fn preorder(&self) -> Vec<&TreeNode> {
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut stack = Vec::from([&self.root]);
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            out.push(node);
            stack.extend(node.children.iter().rev());
        }
        out
    }

    /// Leaves in traversal order.
    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.preorder().into_iter().filter(|n| n.is_leaf())
    }

    /// Depth of every node (root = 0).
    pub fn depths(&self) -> BTreeMap<NodeId, usize> {
        let mut depths = BTreeMap::new();
        let mut stack = Vec::from([(&self.root, 0usize)]);
        while let Some((id, d)) = stack.pop() {
            depths.insert(id.clone(), d);
            for c in &self.nodes[id].children {
                stack.push((c, d + 1));
            }
        }
        depths
    }

    /// Groups node ids by decreasing depth: deepest nodes first, `[root]` last.
    ///
    /// Every node sits in a strictly later group than each of its children.
    /// Within a group nodes keep pre-order.
    pub fn levels_bottom_up(&self) -> Vec<Vec<NodeId>> {
        let depths = self.depths();
        let max = depths.values().copied().max().unwrap_or(0);
        let mut levels: Vec<Vec<NodeId>> = (0..=max).map(|_| Vec::new()).collect();
        for node in self.preorder() {
            let d = depths[&node.id];
            levels[max - d].push(node.id.clone());
        }
        levels
    }

    /// Hash over structure and content. Changes whenever any path or byte does.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for node in self.preorder() {
            h.update(match node.kind {
                NodeKind::Leaf => b"L",
                NodeKind::Internal => b"I",
            });
            h.update(node.path.as_bytes());
            h.update([0u8]);
            match &node.content {
                Some(LeafContent::Text(t)) => {
                    h.update((t.len() as u64).to_le_bytes());
                    h.update(t.as_bytes());
                }
                Some(LeafContent::Binary { size }) => {
                    h.update(b"B");
                    h.update(size.to_le_bytes());
                }
                None => {}
            }
        }
        hex(&h.finalize())
    }

    /// Checks the structural invariants: single root, each other node has
    /// exactly one parent, no cycles, sorted children, leaf/folder shape.
    pub fn validate(&self) -> Result<(), TreeError> {
        let bad = |m: String| Err(TreeError::Malformed(m));
        if !self.nodes.contains_key(&self.root) {
            return bad("root missing".into());
        }
        let mut parents: BTreeMap<&NodeId, usize> = BTreeMap::new();
        for node in self.nodes.values() {
            match node.kind {
                NodeKind::Leaf if !node.children.is_empty() => {
                    return bad(format!("leaf {} has children", node.path))
                }
                NodeKind::Internal if node.content.is_some() => {
                    return bad(format!("folder {} has content", node.path))
                }
                _ => {}
            }
            let names: Vec<&str> = node
                .children
                .iter()
                .map(|c| self.nodes.get(c).map(|n| n.name.as_str()).unwrap_or(""))
                .collect();
            if names.windows(2).any(|w| w[0] >= w[1]) {
                return bad(format!("children of `{}` not sorted", node.path));
            }
            for c in &node.children {
                if !self.nodes.contains_key(c) {
                    return bad(format!("dangling child {c}"));
                }
                *parents.entry(c).or_default() += 1;
            }
        }
        if parents.contains_key(&self.root) {
            return bad("root has a parent".into());
        }
        for id in self.nodes.keys() {
            if id != &self.root && parents.get(id) != Some(&1) {
                return bad(format!("node {id} does not have exactly one parent"));
            }
        }
        let mut seen = BTreeSet::new();
        let mut stack = Vec::from([&self.root]);
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                return bad(format!("cycle through {id}"));
            }
            stack.extend(self.nodes[id].children.iter());
        }
        if seen.len() != self.nodes.len() {
            return bad("unreachable nodes".into());
        }
        Ok(())
    }
}

/// Collects files and folders by repo-relative path and produces a
/// [`RepoTree`]. Parent folders are created implicitly.
#[derive(Debug, Clone, Default)]
pub struct TreeBuilder {
    root_name: String,
    source_root: String,
    dirs: BTreeSet<String>,
    files: BTreeMap<String, LeafContent>,
}

impl TreeBuilder {
    pub fn new(root_name: impl Into<String>, source_root: impl Into<String>) -> Self {
        TreeBuilder {
            root_name: root_name.into(),
            source_root: source_root.into(),
            ..Default::default()
        }
    }

    pub fn add_dir(&mut self, path: &str) -> Result<&mut Self, TreeError> {
        check_path(path)?;
        self.dirs.insert(path.to_string());
        Ok(self)
    }

    pub fn add_file(&mut self, path: &str, content: LeafContent) -> Result<&mut Self, TreeError> {
        check_path(path)?;
        self.files.insert(path.to_string(), content);
        Ok(self)
    }

    pub fn build(self, tokenizer: &dyn Tokenizer) -> Result<RepoTree, TreeError> {
        let mut dirs = self.dirs;
        for path in self.files.keys().chain(dirs.clone().iter()) {
            let mut p = path.as_str();
            while let Some((parent, _)) = p.rsplit_once('/') {
                dirs.insert(parent.to_string());
                p = parent;
            }
        }
        if let Some(p) = self.files.keys().find(|p| dirs.contains(*p)) {
            return Err(TreeError::Conflict(p.clone()));
        }

        let root = NodeId::for_path("");
        let mut nodes = BTreeMap::new();
        let mut children: BTreeMap<String, Vec<(String, NodeId)>> = BTreeMap::new();
        let mut link = |path: &str, id: &NodeId| {
            let (parent, name) = split_parent(path);
            children
                .entry(parent.to_string())
                .or_default()
                .push((name.to_string(), id.clone()));
        };
        for (path, content) in self.files {
            let id = NodeId::for_path(&path);
            link(&path, &id);
            let token_count = match &content {
                LeafContent::Text(t) => tokenizer.count(t),
                LeafContent::Binary { .. } => 0,
            };
            nodes.insert(
                id.clone(),
                TreeNode {
                    id,
                    name: split_parent(&path).1.to_string(),
                    kind: NodeKind::Leaf,
                    path,
                    children: Vec::new(),
                    content: Some(content),
                    token_count: Some(token_count),
                },
            );
        }
        for path in dirs {
            let id = NodeId::for_path(&path);
            link(&path, &id);
            nodes.insert(
                id.clone(),
                TreeNode {
                    id,
                    name: split_parent(&path).1.to_string(),
                    kind: NodeKind::Internal,
                    path,
                    children: Vec::new(),
                    content: None,
                    token_count: None,
                },
            );
        }
        nodes.insert(
            root.clone(),
            TreeNode {
                id: root.clone(),
                name: self.root_name,
                kind: NodeKind::Internal,
                path: String::new(),
                children: Vec::new(),
                content: None,
                token_count: None,
            },
        );
        for (parent, mut kids) in children {
            kids.sort();
            let pid = NodeId::for_path(&parent);
            nodes.get_mut(&pid).expect("parent registered").children =
                kids.into_iter().map(|(_, id)| id).collect();
        }
        let tree = RepoTree {
            root,
            nodes,
            source_root: self.source_root,
        };
        tree.validate()?;
        Ok(tree)
    }
}

fn split_parent(path: &str) -> (&str, &str) {
    path.rsplit_once('/').unwrap_or(("", path))
}

fn check_path(path: &str) -> Result<(), TreeError> {
    let ok = !path.is_empty()
        && path
            .split('/')
            .all(|seg| !seg.is_empty() && seg != "." && seg != ".." && !seg.contains('\0'));
    if ok {
        Ok(())
    } else {
        Err(TreeError::InvalidPath(path.to_string()))
    }
}
