//! Raw-content baseline: token-limited chunks of every file.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenize::Tokenizer;
use crate::tree::{NodeId, RepoTree, TreeNode};

pub const DEFAULT_CHUNK_SIZE: usize = 1000;
pub const DEFAULT_CHUNK_OVERLAP: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("chunk size must be positive")]
    ZeroSize,
    #[error("overlap {overlap} must be smaller than chunk size {size}")]
    OverlapTooLarge { size: usize, overlap: usize },
    #[error("only files can be chunked")]
    NotALeaf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkParams {
    size: usize,
    overlap: usize,
}

impl ChunkParams {
    pub fn new(size: usize, overlap: usize) -> Result<Self, ChunkError> {
        if size == 0 {
            return Err(ChunkError::ZeroSize);
        }
        if overlap >= size {
            return Err(ChunkError::OverlapTooLarge { size, overlap });
        }
        Ok(ChunkParams { size, overlap })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn overlap(&self) -> usize {
        self.overlap
    }

    pub fn stride(&self) -> usize {
        self.size - self.overlap
    }

    /// Number of chunks a file of `tokens` tokens produces.
    pub fn chunk_count(&self, tokens: usize) -> usize {
        if tokens <= self.size {
            1
        } else {
            (tokens - self.size).div_ceil(self.stride()) + 1
        }
    }
}

impl Default for ChunkParams {
    fn default() -> Self {
        ChunkParams {
            size: DEFAULT_CHUNK_SIZE,
            overlap: DEFAULT_CHUNK_OVERLAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkMetadata {
    pub path: String,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub node_id: NodeId,
    pub seq: usize,
    /// Raw text from the first to the last token of the chunk.
    pub text: String,
    pub token_count: usize,
    pub metadata: ChunkMetadata,
}

impl Chunk {
    /// Text handed to the embedder: a one-line path header plus the raw slice.
    pub fn index_text(&self) -> String {
        format!("path: {}\n{}", self.metadata.path, self.text)
    }
}

/// Splits one file into windows of at most `params.size()` tokens, advancing
/// by `params.stride()`. An empty file yields a single empty chunk.
pub fn chunk_file(
    node: &TreeNode,
    params: ChunkParams,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<Chunk>, ChunkError> {
    let text = node.leaf_text().ok_or(ChunkError::NotALeaf)?;
    let spans = tokenizer.spans(&text);
    let metadata = ChunkMetadata {
        path: node.path.clone(),
        file_name: node.name.clone(),
    };
    let make = |seq: usize, body: &str, tokens: usize| Chunk {
        doc_id: format!("{}#{}", node.path, seq),
        node_id: node.id.clone(),
        seq,
        text: body.to_string(),
        token_count: tokens,
        metadata: metadata.clone(),
    };
    if spans.is_empty() {
        return Ok(alloc::vec![make(0, "", 0)]);
    }
    let mut chunks = Vec::with_capacity(params.chunk_count(spans.len()));
    let mut start = 0;
    loop {
        let end = (start + params.size).min(spans.len());
        let body = &text[spans[start].start..spans[end - 1].end];
        chunks.push(make(chunks.len(), body, end - start));
        if end == spans.len() {
            break;
        }
        start += params.stride();
    }
    Ok(chunks)
}

/// Chunks every leaf of the tree, in traversal order.
pub fn chunk_tree(tree: &RepoTree, params: ChunkParams, tokenizer: &dyn Tokenizer) -> Vec<Chunk> {
    tree.leaves()
        .flat_map(|leaf| chunk_file(leaf, params, tokenizer).expect("leaves always chunk"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenize::WhitespaceTokenizer;
    use crate::tree::{LeafContent, TreeBuilder};
    use alloc::vec;
    use proptest::prelude::*;

    fn words(n: usize) -> String {
        (0..n)
            .map(|i| format!("t{i}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn tree(files: &[(&str, String)]) -> RepoTree {
        let mut b = TreeBuilder::new("r", "/r");
        for (p, c) in files {
            b.add_file(p, LeafContent::Text(c.clone())).unwrap();
        }
        b.build(&WhitespaceTokenizer).unwrap()
    }

    fn leaf_chunks(n: usize, size: usize, overlap: usize) -> Vec<Chunk> {
        let t = tree(&[("f.m", words(n))]);
        let leaf = t.leaves().next().unwrap().clone();
        chunk_file(
            &leaf,
            ChunkParams::new(size, overlap).unwrap(),
            &WhitespaceTokenizer,
        )
        .unwrap()
    }

    #[test]
    fn ceiling_arithmetic() {
        let c = leaf_chunks(2500, 1000, 0);
        let sizes: Vec<usize> = c.iter().map(|c| c.token_count).collect();
        assert_eq!(sizes, vec![1000, 1000, 500]);
        assert_eq!(c[2].doc_id, "f.m#2");
    }

    #[test]
    fn empty_file_one_chunk() {
        let c = leaf_chunks(0, 1000, 0);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].text, "");
        assert_eq!(c[0].metadata.path, "f.m");
        assert_eq!(c[0].metadata.file_name, "f.m");
        assert_eq!(c[0].index_text(), "path: f.m\n");
    }

    #[test]
    fn overlapping_windows() {
        let c = leaf_chunks(10, 4, 1);
        let texts: Vec<&str> = c.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["t0 t1 t2 t3", "t3 t4 t5 t6", "t6 t7 t8 t9"]);
    }

    #[test]
    fn param_validation() {
        assert_eq!(ChunkParams::new(0, 0), Err(ChunkError::ZeroSize));
        assert!(ChunkParams::new(4, 4).is_err());
        assert!(ChunkParams::new(4, 3).is_ok());
    }

    #[test]
    fn tree_totals() {
        let t = tree(&[("a.m", words(2500)), ("b/c.m", words(500))]);
        let p = ChunkParams::new(1000, 0).unwrap();
        assert_eq!(chunk_tree(&t, p, &WhitespaceTokenizer).len(), 4);
        let empty = TreeBuilder::new("r", "/r")
            .build(&WhitespaceTokenizer)
            .unwrap();
        assert!(chunk_tree(&empty, p, &WhitespaceTokenizer).is_empty());
    }

    /// Counts windows by walking token positions one stride at a time.
    fn brute_force_count(tokens: usize, size: usize, overlap: usize) -> usize {
        let mut count = 0;
        let mut start = 0;
        loop {
            count += 1;
            if start + size >= tokens {
                return count;
            }
            start += size - overlap;
        }
    }

    proptest! {
        #[test]
        fn count_matches_brute_force(n in 0usize..400, size in 1usize..50, ov in 0usize..50) {
            prop_assume!(ov < size);
            let c = leaf_chunks(n, size, ov);
            prop_assert_eq!(c.len(), brute_force_count(n, size, ov));
            prop_assert_eq!(c.len(), ChunkParams::new(size, ov).unwrap().chunk_count(n));
            for (i, ch) in c.iter().enumerate() {
                prop_assert_eq!(ch.seq, i);
                prop_assert!(ch.token_count <= size);
            }
        }

        #[test]
        fn zero_overlap_reconstructs(text in "[a-z \n\t]{0,300}", size in 1usize..20) {
            let t = tree(&[("f.m", text.clone())]);
            let leaf = t.leaves().next().unwrap().clone();
            let c = chunk_file(&leaf, ChunkParams::new(size, 0).unwrap(), &WhitespaceTokenizer).unwrap();
            let joined: Vec<String> = c
                .iter()
                .flat_map(|ch| ch.text.split_whitespace().map(String::from).collect::<Vec<_>>())
                .collect();
            let original: Vec<String> = text.split_whitespace().map(String::from).collect();
            prop_assert_eq!(joined, original);
        }
    }
}
