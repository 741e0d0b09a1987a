//! Bottom-up knowledge aggregation over a [`RepoTree`].
//!
//! Every leaf is summarised from its raw content with the leaf template.
//! Folders are then summarised level by level, each from the knowledge
//! documents of its children, until the root has its own document. A level
//! starts only after the previous one is complete, so nodes inside a level
//! may be generated concurrently through a [`LevelRunner`].
//!
//! Generation sequence numbers are assigned from the bottom-up plan (level
//! order, then pre-order within a level), so they do not depend on how a
//! level was scheduled.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{GenRequest, GenSettings, LlmBackend, LlmError, Route, Task};
use crate::prompt::{
    fit_context, instructions_of, PromptTemplate, RunLog, TemplateKind, Templates,
    DISTILL_SYSTEM_PROMPT,
};
use crate::tokenize::WhitespaceTokenizer;
use crate::tree::{hex, NodeId, NodeKind, RepoTree, TreeNode};

pub const EMPTY_FOLDER_CONTEXT: &str = "This folder is empty.";
pub const EMPTY_FILE_CONTEXT: &str = "[empty file]";
const CHILD_SEPARATOR: &str = "\n\n---\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DocLevel {
    FileLevel,
    FolderLevel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenMeta {
    pub backend_id: String,
    /// Seconds since the Unix epoch, supplied by the caller for the whole run.
    pub timestamp: u64,
    pub truncated: bool,
    /// Position in the bottom-up generation plan.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub node_id: NodeId,
    pub path: String,
    pub level: DocLevel,
    pub markdown: String,
    pub source_children: Vec<NodeId>,
    pub gen_meta: GenMeta,
}

impl KnowledgeDoc {
    pub fn name(&self) -> &str {
        self.path.rsplit('/').next().unwrap_or("")
    }

    pub fn display_path(&self) -> &str {
        if self.path.is_empty() {
            "."
        } else {
            &self.path
        }
    }
}

/// One document per tree node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub docs: BTreeMap<NodeId, KnowledgeDoc>,
    pub tree_fingerprint: String,
}

impl KnowledgeBase {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Documents sorted by generation sequence.
    pub fn in_generation_order(&self) -> Vec<&KnowledgeDoc> {
        let mut docs: Vec<_> = self.docs.values().collect();
        docs.sort_by_key(|d| d.gen_meta.seq);
        docs
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DistillError {
    #[error("knowledge for child {0} is missing; bottom-up order violated")]
    MissingChildDoc(NodeId),
    #[error("`{0}` is not a file")]
    NotALeaf(String),
    #[error("`{0}` is not a folder")]
    NotAFolder(String),
    #[error("expected a {expected:?}")]
    WrongTemplate { expected: TemplateKind },
    #[error("generation failed for `{path}`: {source}")]
    Backend {
        path: String,
        #[source]
        source: LlmError,
    },
    #[error("could not persist progress: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DistillOptions {
    pub settings: GenSettings,
    pub timestamp: u64,
}

/// A generated document and the events recorded while producing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeOutput {
    pub doc: KnowledgeDoc,
    pub log: RunLog,
}

fn generate(
    backend: &dyn LlmBackend,
    options: &DistillOptions,
    node: &TreeNode,
    user_prompt: String,
    route: Route,
) -> Result<String, DistillError> {
    let req = GenRequest {
        system_prompt: DISTILL_SYSTEM_PROMPT.to_string(),
        user_prompt,
        max_output_tokens: options.settings.max_output_tokens,
        temperature: options.settings.temperature,
        route,
    };
    backend
        .generate(&req)
        .map(|r| r.text)
        .map_err(|source| DistillError::Backend {
            path: node.display_path().to_string(),
            source,
        })
}

/// Generates the file-level document for one leaf.
pub fn distill_leaf(
    node: &TreeNode,
    template: &PromptTemplate,
    backend: &dyn LlmBackend,
    options: &DistillOptions,
    seq: u64,
) -> Result<NodeOutput, DistillError> {
    if node.kind != NodeKind::Leaf {
        return Err(DistillError::NotALeaf(node.path.clone()));
    }
    if template.kind() != TemplateKind::LeafTemplate {
        return Err(DistillError::WrongTemplate {
            expected: TemplateKind::LeafTemplate,
        });
    }
    let header = format!("path: {}\nname: {}\n\n", node.path, node.name);
    let text = node.leaf_text().unwrap_or_default();
    let payload = if text.trim().is_empty() {
        EMPTY_FILE_CONTEXT
    } else {
        text.as_str()
    };
    let fitted = fit_context(
        &WhitespaceTokenizer,
        &[DISTILL_SYSTEM_PROMPT, &instructions_of(template)],
        &header,
        payload,
        backend.context_budget(),
        Task::Leaf,
        node.display_path(),
    );
    let route = Route {
        task: Some(Task::Leaf),
        subject: node.name.clone(),
        items: Vec::new(),
        context: fitted.context.clone(),
    };
    let markdown = generate(
        backend,
        options,
        node,
        template.render(&fitted.context),
        route,
    )?;
    let mut log = RunLog::default();
    let truncated = fitted.truncation.is_some();
    if let Some(ev) = fitted.truncation {
        log.record(ev);
    }
    Ok(NodeOutput {
        doc: KnowledgeDoc {
            node_id: node.id.clone(),
            path: node.path.clone(),
            level: DocLevel::FileLevel,
            markdown,
            source_children: Vec::new(),
            gen_meta: GenMeta {
                backend_id: backend.backend_id().to_string(),
                timestamp: options.timestamp,
                truncated,
                seq,
            },
        },
        log,
    })
}

/// Generates the folder-level document for `node` from its children's docs.
///
/// `child_docs` must hold exactly one document per child, in child order.
pub fn distill_parent(
    node: &TreeNode,
    child_docs: &[&KnowledgeDoc],
    template: &PromptTemplate,
    backend: &dyn LlmBackend,
    options: &DistillOptions,
    seq: u64,
) -> Result<NodeOutput, DistillError> {
    if node.kind != NodeKind::Internal {
        return Err(DistillError::NotAFolder(node.path.clone()));
    }
    if template.kind() != TemplateKind::ParentTemplate {
        return Err(DistillError::WrongTemplate {
            expected: TemplateKind::ParentTemplate,
        });
    }
    for (i, child) in node.children.iter().enumerate() {
        if child_docs.get(i).map(|d| &d.node_id) != Some(child) {
            return Err(DistillError::MissingChildDoc(child.clone()));
        }
    }
    if child_docs.len() != node.children.len() {
        // Extra documents mean the caller paired this folder with the wrong children.
        return Err(DistillError::MissingChildDoc(
            child_docs[node.children.len()].node_id.clone(),
        ));
    }

    let mut header = format!(
        "folder: {}\npath: {}\nitems:\n",
        node.name,
        node.display_path()
    );
    if child_docs.is_empty() {
        header.push_str("(none)\n");
    }
    for d in child_docs {
        header.push_str("- ");
        header.push_str(d.display_path());
        header.push('\n');
    }
    header.push('\n');

    let payload = if child_docs.is_empty() {
        EMPTY_FOLDER_CONTEXT.to_string()
    } else {
        child_docs
            .iter()
            .map(|d| format!("## {}\n\n{}", d.display_path(), d.markdown))
            .collect::<Vec<_>>()
            .join(CHILD_SEPARATOR)
    };
    let fitted = fit_context(
        &WhitespaceTokenizer,
        &[DISTILL_SYSTEM_PROMPT, &instructions_of(template)],
        &header,
        &payload,
        backend.context_budget(),
        Task::Parent,
        node.display_path(),
    );
    let route = Route {
        task: Some(Task::Parent),
        subject: node.name.clone(),
        items: child_docs.iter().map(|d| d.name().to_string()).collect(),
        context: fitted.context.clone(),
    };
    let markdown = generate(
        backend,
        options,
        node,
        template.render(&fitted.context),
        route,
    )?;
    let mut log = RunLog::default();
    let truncated = fitted.truncation.is_some();
    if let Some(ev) = fitted.truncation {
        log.record(ev);
    }
    Ok(NodeOutput {
        doc: KnowledgeDoc {
            node_id: node.id.clone(),
            path: node.path.clone(),
            level: DocLevel::FolderLevel,
            markdown,
            source_children: node.children.clone(),
            gen_meta: GenMeta {
                backend_id: backend.backend_id().to_string(),
                timestamp: options.timestamp,
                truncated,
                seq,
            },
        },
        log,
    })
}

/// Executes the independent jobs of one level.
pub trait LevelRunner {
    /// Runs `job(0..count)`. Results are returned in job order; a runner may
    /// stop early after an error and return fewer results.
    fn run_level(
        &self,
        count: usize,
        job: &(dyn Fn(usize) -> Result<NodeOutput, DistillError> + Sync),
    ) -> Vec<Result<NodeOutput, DistillError>>;
}

/// Runs jobs one after another and stops at the first failure.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl LevelRunner for Sequential {
    fn run_level(
        &self,
        count: usize,
        job: &(dyn Fn(usize) -> Result<NodeOutput, DistillError> + Sync),
    ) -> Vec<Result<NodeOutput, DistillError>> {
        let mut out = Vec::with_capacity(count);
        for i in 0..count {
            let r = job(i);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    }
}

/// The bottom-up plan: node ids grouped by level with their sequence numbers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistillPlan {
    pub levels: Vec<Vec<(NodeId, u64)>>,
}

impl DistillPlan {
    pub fn new(tree: &RepoTree) -> Self {
        let mut seq = 0u64;
        let levels = tree
            .levels_bottom_up()
            .into_iter()
            .map(|level| {
                level
                    .into_iter()
                    .map(|id| {
                        let s = seq;
                        seq += 1;
                        (id, s)
                    })
                    .collect()
            })
            .collect();
        DistillPlan { levels }
    }

    pub fn seq_of(&self) -> BTreeMap<NodeId, u64> {
        self.levels.iter().flatten().cloned().collect()
    }
}

/// Identifies a run for resume purposes: the tree, both templates, the
/// backend and the sampling settings.
pub fn run_fingerprint(
    tree: &RepoTree,
    templates: &Templates,
    backend_id: &str,
    settings: &GenSettings,
) -> String {
    let mut h = Sha256::new();
    for part in [
        tree.fingerprint().as_str(),
        templates.leaf.body(),
        templates.parent.body(),
        backend_id,
    ] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update(settings.max_output_tokens.to_le_bytes());
    h.update(settings.temperature.to_bits().to_le_bytes());
    hex(&h.finalize())
}

/// Result of a complete run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Distilled {
    pub kb: KnowledgeBase,
    /// Events of all nodes, in generation order.
    pub log: RunLog,
}

/// Distills the whole tree sequentially.
pub fn distill_tree(
    tree: &RepoTree,
    templates: &Templates,
    backend: &dyn LlmBackend,
    options: &DistillOptions,
) -> Result<Distilled, DistillError> {
    TreeDistiller::new(tree, templates, backend, options).run(&Sequential, &mut |_| Ok(()))
}

/// Configurable driver for a full bottom-up run with resume support.
pub struct TreeDistiller<'a> {
    tree: &'a RepoTree,
    templates: &'a Templates,
    backend: &'a dyn LlmBackend,
    options: &'a DistillOptions,
    completed: BTreeMap<NodeId, NodeOutput>,
}

impl<'a> TreeDistiller<'a> {
    pub fn new(
        tree: &'a RepoTree,
        templates: &'a Templates,
        backend: &'a dyn LlmBackend,
        options: &'a DistillOptions,
    ) -> Self {
        TreeDistiller {
            tree,
            templates,
            backend,
            options,
            completed: BTreeMap::new(),
        }
    }

    /// Seeds outputs recovered from an interrupted run. Outputs that do not
    /// match the current plan (unknown node, wrong level or sequence number)
    /// are dropped and regenerated. Returns how many were kept.
    pub fn resume_from(&mut self, outputs: impl IntoIterator<Item = NodeOutput>) -> usize {
        let seq = DistillPlan::new(self.tree).seq_of();
        for out in outputs {
            let Some(node) = self.tree.node(&out.doc.node_id) else {
                continue;
            };
            let level = match node.kind {
                NodeKind::Leaf => DocLevel::FileLevel,
                NodeKind::Internal => DocLevel::FolderLevel,
            };
            if out.doc.level == level && seq.get(&node.id) == Some(&out.doc.gen_meta.seq) {
                self.completed.insert(node.id.clone(), out);
            }
        }
        self.completed.len()
    }

    /// Runs every level in order. `sink` sees each newly generated output,
    /// in sequence order, as soon as its level finishes; on failure the
    /// successful outputs of the failing level are still delivered first.
    pub fn run(
        mut self,
        runner: &dyn LevelRunner,
        sink: &mut dyn FnMut(&NodeOutput) -> Result<(), String>,
    ) -> Result<Distilled, DistillError> {
        let plan = DistillPlan::new(self.tree);
        for level in &plan.levels {
            let pending: Vec<&(NodeId, u64)> = level
                .iter()
                .filter(|(id, _)| !self.completed.contains_key(id))
                .collect();
            if pending.is_empty() {
                continue;
            }
            let done = &self.completed;
            let tree = self.tree;
            let templates = self.templates;
            let backend = self.backend;
            let options = self.options;
            let job = |i: usize| -> Result<NodeOutput, DistillError> {
                let (id, seq) = pending[i];
                let node = &tree.nodes[id];
                match node.kind {
                    NodeKind::Leaf => distill_leaf(node, &templates.leaf, backend, options, *seq),
                    NodeKind::Internal => {
                        let mut child_docs = Vec::with_capacity(node.children.len());
                        for c in &node.children {
                            let d = done
                                .get(c)
                                .ok_or_else(|| DistillError::MissingChildDoc(c.clone()))?;
                            child_docs.push(&d.doc);
                        }
                        distill_parent(node, &child_docs, &templates.parent, backend, options, *seq)
                    }
                }
            };
            let results = runner.run_level(pending.len(), &job);
            let mut first_err = None;
            for r in results {
                match r {
                    Ok(out) => {
                        sink(&out).map_err(DistillError::Sink)?;
                        self.completed.insert(out.doc.node_id.clone(), out);
                    }
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_err {
                return Err(e);
            }
            if pending
                .iter()
                .any(|(id, _)| !self.completed.contains_key(id))
            {
                return Err(DistillError::Sink("level runner dropped jobs".to_string()));
            }
        }

        let mut outputs: Vec<NodeOutput> = self.completed.into_values().collect();
        outputs.sort_by_key(|o| o.doc.gen_meta.seq);
        let mut log = RunLog::default();
        let mut docs = BTreeMap::new();
        for o in outputs {
            log.extend(o.log);
            docs.insert(o.doc.node_id.clone(), o.doc);
        }
        Ok(Distilled {
            kb: KnowledgeBase {
                docs,
                tree_fingerprint: self.tree.fingerprint(),
            },
            log,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{GenResponse, Usage};
    use crate::scripted::{ScriptTable, ScriptedBackend};
    use crate::tree::{LeafContent, TreeBuilder};
    use alloc::vec;
    use core::sync::atomic::{AtomicU64, Ordering};
    use proptest::prelude::*;

    fn tree_of(files: &[(&str, &str)], dirs: &[&str]) -> RepoTree {
        let mut b = TreeBuilder::new("repo", "/r");
        for (p, c) in files {
            b.add_file(p, LeafContent::Text((*c).into())).unwrap();
        }
        for d in dirs {
            b.add_dir(d).unwrap();
        }
        b.build(&WhitespaceTokenizer).unwrap()
    }

    fn scripted() -> ScriptedBackend {
        ScriptedBackend::default()
    }

    fn id(p: &str) -> NodeId {
        NodeId::for_path(p)
    }

    #[test]
    fn leaf_doc_mentions_file_name() {
        let t = tree_of(&[("AeroMapCompare.m", "plot(track, coast)")], &[]);
        let node = t.node(&id("AeroMapCompare.m")).unwrap();
        let out = distill_leaf(
            node,
            &PromptTemplate::default_leaf(),
            &scripted(),
            &DistillOptions::default(),
            0,
        )
        .unwrap();
        assert!(out.doc.markdown.contains("AeroMapCompare.m"));
        assert_eq!(out.doc.level, DocLevel::FileLevel);
        assert!(out.doc.source_children.is_empty());
        assert!(!out.doc.gen_meta.truncated);
    }

    #[test]
    fn empty_leaf_uses_placeholder() {
        let t = tree_of(&[("empty.m", "")], &[]);
        let node = t.node(&id("empty.m")).unwrap();
        let out = distill_leaf(
            node,
            &PromptTemplate::default_leaf(),
            &scripted(),
            &DistillOptions::default(),
            0,
        )
        .unwrap();
        assert!(out.doc.markdown.contains(EMPTY_FILE_CONTEXT));
        assert!(!out.doc.gen_meta.truncated);
        assert!(out.log.is_empty());
    }

    #[test]
    fn oversized_leaf_is_truncated_once() {
        let big: String = (0..20_000).map(|i| format!("tok{i} ")).collect();
        let t = tree_of(&[("big.m", &big)], &[]);
        let node = t.node(&id("big.m")).unwrap();
        let backend = ScriptedBackend::new(ScriptTable::parse("@context_budget = 2000").unwrap());
        let out = distill_leaf(
            node,
            &PromptTemplate::default_leaf(),
            &backend,
            &DistillOptions::default(),
            0,
        )
        .unwrap();
        assert!(out.doc.gen_meta.truncated);
        assert_eq!(out.log.truncations.len(), 1);
        let ev = &out.log.truncations[0];
        assert_eq!(ev.original_tokens, 20_000);
        assert!(ev.kept_tokens < 2000);
        assert_eq!(ev.label, "big.m");
    }

    #[test]
    fn parent_lists_children_in_order() {
        let t = tree_of(&[("d/b.m", "b"), ("d/a.m", "a")], &[]);
        let backend = scripted();
        let opts = DistillOptions::default();
        let d = t.node(&id("d")).unwrap();
        let docs: Vec<KnowledgeDoc> = d
            .children
            .iter()
            .enumerate()
            .map(|(i, c)| {
                distill_leaf(
                    t.node(c).unwrap(),
                    &PromptTemplate::default_leaf(),
                    &backend,
                    &opts,
                    i as u64,
                )
                .unwrap()
                .doc
            })
            .collect();
        let refs: Vec<&KnowledgeDoc> = docs.iter().collect();
        let out = distill_parent(
            d,
            &refs,
            &PromptTemplate::default_parent(),
            &backend,
            &opts,
            2,
        )
        .unwrap();
        let md = &out.doc.markdown;
        let (a, b) = (md.find("a.m").unwrap(), md.find("b.m").unwrap());
        assert!(a < b);
        assert_eq!(out.doc.level, DocLevel::FolderLevel);
        assert_eq!(out.doc.source_children, vec![id("d/a.m"), id("d/b.m")]);
    }

    #[test]
    fn parent_rejects_missing_child() {
        let t = tree_of(&[("d/a.m", "a"), ("d/b.m", "b")], &[]);
        let backend = scripted();
        let opts = DistillOptions::default();
        let a = distill_leaf(
            t.node(&id("d/a.m")).unwrap(),
            &PromptTemplate::default_leaf(),
            &backend,
            &opts,
            0,
        )
        .unwrap()
        .doc;
        let err = distill_parent(
            t.node(&id("d")).unwrap(),
            &[&a],
            &PromptTemplate::default_parent(),
            &backend,
            &opts,
            1,
        )
        .unwrap_err();
        assert_eq!(err, DistillError::MissingChildDoc(id("d/b.m")));
    }

    #[test]
    fn wrong_node_kind_or_template() {
        let t = tree_of(&[("d/a.m", "a")], &[]);
        let b = scripted();
        let o = DistillOptions::default();
        let leaf = t.node(&id("d/a.m")).unwrap();
        let dir = t.node(&id("d")).unwrap();
        assert!(matches!(
            distill_leaf(dir, &PromptTemplate::default_leaf(), &b, &o, 0),
            Err(DistillError::NotALeaf(_))
        ));
        assert!(matches!(
            distill_leaf(leaf, &PromptTemplate::default_parent(), &b, &o, 0),
            Err(DistillError::WrongTemplate { .. })
        ));
        assert!(matches!(
            distill_parent(leaf, &[], &PromptTemplate::default_parent(), &b, &o, 0),
            Err(DistillError::NotAFolder(_))
        ));
    }

    #[test]
    fn empty_folder_gets_placeholder_doc() {
        let t = tree_of(&[], &["empty"]);
        let out = distill_parent(
            t.node(&id("empty")).unwrap(),
            &[],
            &PromptTemplate::default_parent(),
            &scripted(),
            &DistillOptions::default(),
            0,
        )
        .unwrap();
        assert!(out.doc.markdown.contains(EMPTY_FOLDER_CONTEXT));
        assert!(out.doc.source_children.is_empty());
    }

    #[test]
    fn oversized_children_keep_full_child_list() {
        let big: String = (0..3000).map(|i| format!("w{i} ")).collect();
        let t = tree_of(&[("d/a.m", ""), ("d/b.m", ""), ("d/c.m", "")], &[]);
        let mk = |p: &str, seq| KnowledgeDoc {
            node_id: id(p),
            path: p.into(),
            level: DocLevel::FileLevel,
            markdown: big.clone(),
            source_children: vec![],
            gen_meta: GenMeta {
                backend_id: "x".into(),
                timestamp: 0,
                truncated: false,
                seq,
            },
        };
        let docs = [mk("d/a.m", 0), mk("d/b.m", 1), mk("d/c.m", 2)];
        let refs: Vec<&KnowledgeDoc> = docs.iter().collect();
        let backend = ScriptedBackend::new(
            ScriptTable::parse("@context_budget = 1500\n@head_tokens = 100000\nparent:* = {head}")
                .unwrap(),
        );
        let out = distill_parent(
            t.node(&id("d")).unwrap(),
            &refs,
            &PromptTemplate::default_parent(),
            &backend,
            &DistillOptions::default(),
            3,
        )
        .unwrap();
        assert!(out.doc.gen_meta.truncated);
        assert_eq!(out.log.truncations.len(), 1);
        assert_eq!(out.doc.source_children.len(), 3);
        // the protected child list survives even though c.m's body was cut
        assert!(out.doc.markdown.contains("- d/c.m"));
        assert!(!out.doc.markdown.contains("## d/c.m"));
    }

    #[test]
    fn tree_of_eight_nodes() {
        let t = tree_of(
            &[
                ("a/1.m", "1"),
                ("a/2.m", "2"),
                ("b/3.m", "3"),
                ("b/4.m", "4"),
                ("5.m", "5"),
            ],
            &[],
        );
        assert_eq!(t.len(), 8);
        let d = distill_tree(
            &t,
            &Templates::default(),
            &scripted(),
            &DistillOptions::default(),
        )
        .unwrap();
        assert_eq!(d.kb.len(), 8);
        assert_eq!(d.kb.tree_fingerprint, t.fingerprint());
        let root = &d.kb.docs[&t.root];
        assert_eq!(root.level, DocLevel::FolderLevel);
        assert_eq!(root.source_children, t.root_node().children);
    }

    #[test]
    fn single_file_tree() {
        let t = tree_of(&[("only.m", "x")], &[]);
        let d = distill_tree(
            &t,
            &Templates::default(),
            &scripted(),
            &DistillOptions::default(),
        )
        .unwrap();
        assert_eq!(d.kb.len(), 2);
        assert_eq!(d.kb.docs[&t.root].source_children, vec![id("only.m")]);
    }

    #[test]
    fn four_node_sequence_respects_partial_order() {
        let t = tree_of(&[("d/x.m", "x"), ("y.m", "y")], &[]);
        let d = distill_tree(
            &t,
            &Templates::default(),
            &scripted(),
            &DistillOptions::default(),
        )
        .unwrap();
        let seq = |p: &str| d.kb.docs[&id(p)].gen_meta.seq;
        assert!(seq("d/x.m") < seq("d"));
        assert!(seq("d") < seq(""));
        assert!(seq("y.m") < seq(""));
    }

    /// Records the global call order to check that parents are generated
    /// after their children, independent of the plan's sequence numbers.
    struct Recording {
        inner: ScriptedBackend,
        clock: AtomicU64,
    }

    impl LlmBackend for Recording {
        fn backend_id(&self) -> &str {
            "recording"
        }
        fn context_budget(&self) -> usize {
            self.inner.context_budget()
        }
        fn generate(&self, req: &GenRequest) -> Result<GenResponse, LlmError> {
            let tick = self.clock.fetch_add(1, Ordering::SeqCst);
            Ok(GenResponse {
                text: format!("{tick}"),
                usage: Usage::default(),
                backend_id: "recording".into(),
            })
            .and_then(|r| self.inner.generate(req).map(|_| r))
        }
    }

    #[test]
    fn resume_skips_completed_nodes() {
        let t = tree_of(&[("d/x.m", "x"), ("d/z.m", "z"), ("y.m", "y")], &[]);
        let fail = ScriptedBackend::new(ScriptTable::parse("parent:d = !fail down").unwrap());
        let opts = DistillOptions::default();
        let mut saved = Vec::new();
        let err = TreeDistiller::new(&t, &Templates::default(), &fail, &opts)
            .run(&Sequential, &mut |o| {
                saved.push(o.clone());
                Ok(())
            })
            .unwrap_err();
        assert!(matches!(err, DistillError::Backend { .. }));
        // d fails before y.m is attempted, so only the two leaves under d finished
        assert_eq!(saved.len(), 2);

        let rec = Recording {
            inner: scripted(),
            clock: AtomicU64::new(0),
        };
        let mut fresh = Vec::new();
        let templates = Templates::default();
        let mut resumed = TreeDistiller::new(&t, &templates, &rec, &opts);
        assert_eq!(resumed.resume_from(saved.clone()), saved.len());
        resumed
            .run(&Sequential, &mut |o| {
                fresh.push(o.doc.path.clone());
                Ok(())
            })
            .unwrap();
        assert_eq!(fresh.len(), t.len() - saved.len());
        assert!(fresh.contains(&"d".to_string()));
        assert!(fresh.contains(&String::new()));
    }

    #[test]
    fn resumed_run_equals_uninterrupted() {
        let t = tree_of(
            &[("d/x.m", "x"), ("d/z.m", "z"), ("e/q.m", "q")],
            &["e/empty"],
        );
        let opts = DistillOptions::default();
        let full = distill_tree(&t, &Templates::default(), &scripted(), &opts).unwrap();
        let fail = ScriptedBackend::new(ScriptTable::parse("parent:e = !fail").unwrap());
        let mut saved = Vec::new();
        let _ = TreeDistiller::new(&t, &Templates::default(), &fail, &opts).run(
            &Sequential,
            &mut |o| {
                saved.push(o.clone());
                Ok(())
            },
        );
        let (templates, backend) = (Templates::default(), scripted());
        let mut resumed = TreeDistiller::new(&t, &templates, &backend, &opts);
        resumed.resume_from(saved);
        let again = resumed.run(&Sequential, &mut |_| Ok(())).unwrap();
        assert_eq!(again, full);
    }

    #[test]
    fn run_fingerprint_inputs() {
        let t = tree_of(&[("a.m", "a")], &[]);
        let tpl = Templates::default();
        let g = GenSettings::default();
        let base = run_fingerprint(&t, &tpl, "scripted", &g);
        assert_eq!(base, run_fingerprint(&t, &tpl, "scripted", &g));
        assert_ne!(base, run_fingerprint(&t, &tpl, "openai:m", &g));
        let hot = GenSettings {
            temperature: 0.5,
            ..g
        };
        assert_ne!(base, run_fingerprint(&t, &tpl, "scripted", &hot));
        let other = tree_of(&[("a.m", "b")], &[]);
        assert_ne!(base, run_fingerprint(&other, &tpl, "scripted", &g));
    }

    #[test]
    fn resume_drops_mismatched_outputs() {
        let t = tree_of(&[("a.m", "a")], &[]);
        let opts = DistillOptions::default();
        let full = distill_tree(&t, &Templates::default(), &scripted(), &opts).unwrap();
        let mut bogus = full.kb.docs[&id("a.m")].clone();
        bogus.gen_meta.seq = 99;
        let (templates, backend) = (Templates::default(), scripted());
        let mut d = TreeDistiller::new(&t, &templates, &backend, &opts);
        assert_eq!(
            d.resume_from([NodeOutput {
                doc: bogus,
                log: RunLog::default()
            }]),
            0
        );
    }

    proptest! {
        #[test]
        fn bottom_up_order_and_coverage(items in crate::tree::tests::arb_paths()) {
            let t = crate::tree::tests::build_lenient(&items);
            let rec = Recording { inner: scripted(), clock: AtomicU64::new(0) };
            let d = distill_tree(&t, &Templates::default(), &rec, &DistillOptions::default()).unwrap();
            prop_assert_eq!(d.kb.docs.keys().collect::<Vec<_>>(), t.nodes.keys().collect::<Vec<_>>());
            for node in t.nodes.values() {
                let doc = &d.kb.docs[&node.id];
                prop_assert_eq!(doc.level == DocLevel::FileLevel, node.is_leaf());
                if !node.is_leaf() {
                    prop_assert_eq!(&doc.source_children, &node.children);
                }
                for c in &node.children {
                    let child = &d.kb.docs[c];
                    prop_assert!(doc.gen_meta.seq > child.gen_meta.seq);
                    let tick = |md: &str| md.parse::<u64>().ok();
                    if let (Some(p), Some(ch)) = (tick(&doc.markdown), tick(&child.markdown)) {
                        prop_assert!(p > ch);
                    }
                }
            }
            let again = distill_tree(&t, &Templates::default(), &scripted(), &DistillOptions::default()).unwrap();
            let once_more = distill_tree(&t, &Templates::default(), &scripted(), &DistillOptions::default()).unwrap();
            prop_assert_eq!(again, once_more);
        }
    }
}
