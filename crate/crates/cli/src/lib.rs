//! Command layer behind the `halt-rag` binary: configuration resolution, the
//! four verbs, and the artifact files they write.

pub mod artifacts;
pub mod commands;
pub mod config;
