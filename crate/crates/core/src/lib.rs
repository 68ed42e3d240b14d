//! A manager agent coordinating specialist research agents over a shared,
//! sandboxed workspace.
//!
//! Every agent runs the same reason / act / observe loop
//! ([`runtime::agent::run_with_memory`]) with its own memory, system prompt
//! and tool set. The manager reaches the others through delegation tools
//! with enforced budgets ([`orchestration`]). Long memories are compacted
//! ([`compaction`]), sessions survive restarts ([`persistence`]), operators
//! can steer between steps ([`intervention`]) and every model call lands in
//! one ordered log ([`gateway`]). [`control`] exposes all of it as a CLI and
//! an HTTP API.

pub mod clock;
pub mod compaction;
pub mod control;
pub mod gateway;
pub mod intervention;
pub mod orchestration;
pub mod persistence;
pub mod prompt;
pub mod roster;
pub mod runtime;
pub mod workspace;
