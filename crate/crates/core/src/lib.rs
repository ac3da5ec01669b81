//! Requirement-driven bias testing for large language models.
//!
//! The crate turns a set of user-defined ethical requirements into concrete
//! prompts ([`generation`]), sends them to the models under test
//! ([`gateway`]), judges the answers with per-template oracles ([`oracle`]),
//! and aggregates the verdicts into timestamped CSV reports ([`pipeline`],
//! [`report`]).

pub mod cli;
pub mod gateway;
pub mod generation;
pub mod library;
pub mod markup;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod requirements;
