//! Deterministic scripted backends: replayable (thought, tool call)
//! sequences with an optional branch table reacting to the latest tool
//! result. These stand in for a live LLM so whole runs are replayable
//! byte-for-byte.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Backend, BackendError, Step, ToolCall};
use crate::strategies::StrategyId;

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse script file {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("no script for bundle `{bundle}` strategy `{strategy}`")]
    NoScript { bundle: String, strategy: String },
    #[error("script has no entries")]
    Empty,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptStep {
    #[serde(default)]
    pub thought: String,
    pub tool: ToolCall,
}

/// Reactive rule: emitted instead of the next sequential entry whenever
/// the latest tool result contains the key.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchRule {
    pub when_result_contains: String,
    #[serde(default)]
    pub thought: String,
    pub tool: ToolCall,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Script {
    pub entries: Vec<ScriptStep>,
    #[serde(default)]
    pub branches: Vec<BranchRule>,
}

/// Replays a script: entries in order, branch rules first when they
/// match the latest tool result, and finish after exhaustion.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: VecDeque<ScriptStep>,
    branches: Vec<BranchRule>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        ScriptedBackend {
            entries: script.entries.into(),
            branches: script.branches,
        }
    }

    /// A plain sequence of tool calls with empty thoughts.
    pub fn from_calls(calls: Vec<ToolCall>) -> Self {
        ScriptedBackend {
            entries: calls
                .into_iter()
                .map(|tool| ScriptStep {
                    thought: String::new(),
                    tool,
                })
                .collect(),
            branches: Vec::new(),
        }
    }
}

impl Backend for ScriptedBackend {
    fn next_step(
        &mut self,
        _system_instructions: &str,
        _bug_report: &str,
        history: &[Step],
    ) -> Result<(String, ToolCall), BackendError> {
        if let Some(last_result) = history.last().map(|s| s.tool_result.as_str()) {
            for rule in &self.branches {
                if last_result.contains(&rule.when_result_contains) {
                    return Ok((rule.thought.clone(), rule.tool.clone()));
                }
            }
        }
        match self.entries.pop_front() {
            Some(step) => Ok((step.thought, step.tool)),
            None => Ok((String::new(), ToolCall::Finish)),
        }
    }
}

/// A script book maps (bundle, strategy) to a rotation of scripts;
/// trajectory `i` (1-based) plays `scripts[(i - 1) % len]`. `*` is a
/// wildcard on either key.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptBook {
    pub books: Vec<BookEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BookEntry {
    pub bundle: String,
    pub strategy: String,
    pub scripts: Vec<Script>,
}

impl ScriptBook {
    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        let text = fs::read_to_string(path).map_err(|e| ScriptError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| ScriptError::Parse {
            path: path.display().to_string(),
            source: e,
        })
    }

    fn lookup(&self, bundle: &str, strategy: &str) -> Option<&BookEntry> {
        let keys = [
            (bundle, strategy),
            (bundle, "*"),
            ("*", strategy),
            ("*", "*"),
        ];
        for (b, s) in keys {
            if let Some(entry) = self
                .books
                .iter()
                .find(|e| e.bundle == b && e.strategy == s && !e.scripts.is_empty())
            {
                return Some(entry);
            }
        }
        None
    }

    /// Resolves the script for one trajectory.
    pub fn script_for(
        &self,
        bundle: &str,
        strategy: StrategyId,
        trajectory_index: usize,
    ) -> Result<Script, ScriptError> {
        let entry = self
            .lookup(bundle, strategy.as_str())
            .ok_or_else(|| ScriptError::NoScript {
                bundle: bundle.to_string(),
                strategy: strategy.to_string(),
            })?;
        let idx = trajectory_index.saturating_sub(1) % entry.scripts.len();
        Ok(entry.scripts[idx].clone())
    }
}

/// Scripted text completions, used to drive LLM-style reviewers in
/// tests and hermetic runs.
#[derive(Debug, Clone)]
pub struct ScriptedTextBackend {
    responses: VecDeque<String>,
}

impl ScriptedTextBackend {
    pub fn new<S: Into<String>>(responses: Vec<S>) -> Self {
        ScriptedTextBackend {
            responses: responses.into_iter().map(Into::into).collect(),
        }
    }

    pub fn complete(&mut self, _prompt: &str) -> Result<String, BackendError> {
        self.responses
            .pop_front()
            .ok_or_else(|| BackendError::Transport("scripted responses exhausted".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{run_trajectory, AgentConfig};
    use crate::testsupport::{calc_bundle, calc_bundle_with_oracle};
    use crate::workspace::{WorkspaceFactory, WorkspaceOptions};

    fn view(path: &str) -> ToolCall {
        ToolCall::ViewFile {
            path: path.to_string(),
            start_line: None,
            end_line: None,
        }
    }

    #[test]
    fn replays_entries_in_order() {
        let fixture = calc_bundle();
        let mut backend = ScriptedBackend::from_calls(vec![
            view("calc.py"),
            ToolCall::EditFile {
                path: "calc.py".into(),
                old_text: "a / b".into(),
                new_text: "a // b".into(),
            },
            ToolCall::Finish,
        ]);
        let mut ws = WorkspaceFactory::new(&fixture.bundle, WorkspaceOptions::default())
            .fresh()
            .unwrap();
        let t = run_trajectory(
            &fixture.bundle,
            &AgentConfig::for_strategy(StrategyId::Freeform),
            &mut backend,
            &mut ws,
        );
        assert_eq!(t.step_count(), 3);
        assert!(matches!(t.steps[0].tool_call, ToolCall::ViewFile { .. }));
        assert!(matches!(t.steps[1].tool_call, ToolCall::EditFile { .. }));
        assert_eq!(t.steps[2].tool_call, ToolCall::Finish);
    }

    #[test]
    fn exhausted_script_finishes() {
        let fixture = calc_bundle();
        let mut backend = ScriptedBackend::from_calls(vec![view("calc.py"), view("calc.py")]);
        let mut ws = WorkspaceFactory::new(&fixture.bundle, WorkspaceOptions::default())
            .fresh()
            .unwrap();
        let t = run_trajectory(
            &fixture.bundle,
            &AgentConfig::for_strategy(StrategyId::Freeform),
            &mut backend,
            &mut ws,
        );
        assert!(t.finished);
        assert_eq!(t.step_count(), 3);
        assert_eq!(t.steps[2].tool_call, ToolCall::Finish);
    }

    #[test]
    fn branch_fires_only_when_result_matches() {
        // The script runs the oracle test once; a branch reacts to a
        // failing outcome by creating a marker file.
        let script = Script {
            entries: vec![ScriptStep {
                thought: "run the reproduction test".into(),
                tool: ToolCall::RunTest {
                    command: "python3 tests/test_div_zero.py".into(),
                },
            }],
            branches: vec![BranchRule {
                when_result_contains: "outcome: Fail".into(),
                thought: "the test failed, record it".into(),
                tool: ToolCall::EditFile {
                    path: "saw_failure.txt".into(),
                    old_text: String::new(),
                    new_text: "failed\n".into(),
                },
            }],
        };

        // Variant 1: oracle fails on the bug -> branch fires once.
        let fixture = calc_bundle();
        let mut backend = ScriptedBackend::new(script.clone());
        let mut ws = WorkspaceFactory::new(&fixture.bundle, WorkspaceOptions::default())
            .fresh()
            .unwrap();
        let t = run_trajectory(
            &fixture.bundle,
            &AgentConfig::for_strategy(StrategyId::Freeform),
            &mut backend,
            &mut ws,
        );
        let edited: Vec<_> = t.edit_log.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(edited, vec!["saw_failure.txt"]);

        // Variant 2: oracle command passes -> branch never fires.
        let fixture = calc_bundle_with_oracle("true");
        let script2 = Script {
            entries: vec![ScriptStep {
                thought: String::new(),
                tool: ToolCall::RunTest {
                    command: "true".into(),
                },
            }],
            branches: script.branches.clone(),
        };
        let mut backend = ScriptedBackend::new(script2);
        let mut ws = WorkspaceFactory::new(&fixture.bundle, WorkspaceOptions::default())
            .fresh()
            .unwrap();
        let t = run_trajectory(
            &fixture.bundle,
            &AgentConfig::for_strategy(StrategyId::Freeform),
            &mut backend,
            &mut ws,
        );
        assert!(t.edit_log.is_empty());
    }

    #[test]
    fn book_resolution_prefers_exact_keys_and_rotates() {
        let mk = |query: &str| Script {
            entries: vec![ScriptStep {
                thought: String::new(),
                tool: ToolCall::SearchCode {
                    query: query.to_string(),
                },
            }],
            branches: vec![],
        };
        let book = ScriptBook {
            books: vec![
                BookEntry {
                    bundle: "calc-div-zero".into(),
                    strategy: "tdd".into(),
                    scripts: vec![mk("exact-a"), mk("exact-b")],
                },
                BookEntry {
                    bundle: "*".into(),
                    strategy: "tdd".into(),
                    scripts: vec![mk("any-bundle")],
                },
                BookEntry {
                    bundle: "*".into(),
                    strategy: "*".into(),
                    scripts: vec![mk("fallback")],
                },
            ],
        };
        let q = |s: Script| match &s.entries[0].tool {
            ToolCall::SearchCode { query } => query.clone(),
            _ => unreachable!(),
        };
        assert_eq!(q(book.script_for("calc-div-zero", StrategyId::Tdd, 1).unwrap()), "exact-a");
        assert_eq!(q(book.script_for("calc-div-zero", StrategyId::Tdd, 2).unwrap()), "exact-b");
        assert_eq!(q(book.script_for("calc-div-zero", StrategyId::Tdd, 3).unwrap()), "exact-a");
        assert_eq!(q(book.script_for("other", StrategyId::Tdd, 1).unwrap()), "any-bundle");
        assert_eq!(q(book.script_for("other", StrategyId::Tld, 9).unwrap()), "fallback");
    }

    #[test]
    fn script_book_roundtrips_through_json() {
        let book = ScriptBook {
            books: vec![BookEntry {
                bundle: "*".into(),
                strategy: "freeform".into(),
                scripts: vec![Script {
                    entries: vec![ScriptStep {
                        thought: "t".into(),
                        tool: ToolCall::Finish,
                    }],
                    branches: vec![],
                }],
            }],
        };
        let json = serde_json::to_string_pretty(&book).unwrap();
        let back: ScriptBook = serde_json::from_str(&json).unwrap();
        assert_eq!(back.books.len(), 1);
        assert_eq!(back.books[0].strategy, "freeform");
    }
}
