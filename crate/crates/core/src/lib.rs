//! Core of the hierarchical RAG toolkit: file trees, bottom-up knowledge
//! distillation, chunking, exact vector retrieval, answering and QA metrics.
//!
//! Everything here is `no_std` + `alloc`; file IO, HTTP backends and the CLI
//! live in the `hierag` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod chunk;
pub mod distill;
pub mod embed;
pub mod index;
pub mod llm;
pub mod metrics;
pub mod prompt;
pub mod rag;
pub mod report;
pub mod scripted;
pub mod tokenize;
pub mod tree;
