//! Socratic self-refine reasoning toolkit.
//!
//! The crate is organized around the refinement loop: a [`gateway`] talks to a
//! chat-completion backend (live HTTP or deterministic mock), [`prompts`]
//! renders the fixed instruction templates and parses structured content back
//! out of responses, [`engine`] runs the iterative refinement methods over a
//! task, [`verify`] decides answer equivalence, [`taskgen`] loads or
//! synthesizes benchmark tasks, and [`metrics`] scores persisted transcripts.

pub mod engine;
pub mod gateway;
pub mod metrics;
pub mod prompts;
pub mod taskgen;
pub mod verify;
