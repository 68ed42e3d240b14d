//! Agent execution: tools, memory, action decoding and the step loop.

pub mod action;
pub mod agent;
pub mod memory;
pub mod tool;

pub use agent::{
    execute_tool_calls, run_agent, run_with_memory, RunOutcome, RuntimeContext, RuntimeError, StepCallback,
    StepContext,
};
