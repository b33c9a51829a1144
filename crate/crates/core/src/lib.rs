//! Harness for agentic program repair with fix/BRT cogeneration: bug
//! bundles, a sandboxed tool workspace, a scripted ReAct agent loop,
//! patch reviewers and selectors, and evaluation analytics.

pub mod agent;
pub mod bundle;
pub mod diff;
pub mod patch;
pub mod script;
pub mod strategies;
pub mod workspace;

#[cfg(test)]
pub(crate) mod testsupport;
