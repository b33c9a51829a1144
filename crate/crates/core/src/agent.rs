//! The ReAct loop: per step, obtain a (thought, tool call) from a
//! backend, execute the tool against the workspace, and append both to
//! the history until the agent finishes or hits the step limit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bundle::BugBundle;
use crate::strategies::{build_system_prompt, StrategyId};
use crate::workspace::{EditRecord, TestRecord, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 0.2,
            top_p: 0.95,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentConfig {
    /// Maximum steps per trajectory.
    pub step_limit: usize,
    /// Trajectories generated per bug.
    pub trajectories_per_bug: usize,
    /// Forwarded verbatim to remote backends; scripted backends ignore it.
    pub sampling: Sampling,
    pub strategy: StrategyId,
}

impl AgentConfig {
    pub fn for_strategy(strategy: StrategyId) -> Self {
        AgentConfig {
            step_limit: 25,
            trajectories_per_bug: 20,
            sampling: Sampling::default(),
            strategy,
        }
    }
}

/// One tool invocation named by the backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "args", rename_all = "snake_case")]
pub enum ToolCall {
    ViewFile {
        path: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        start_line: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        end_line: Option<usize>,
    },
    SearchCode {
        query: String,
    },
    EditFile {
        path: String,
        old_text: String,
        new_text: String,
    },
    RunTest {
        command: String,
    },
    Finish,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based step number.
    pub index: usize,
    pub thought: String,
    pub tool_call: ToolCall,
    pub tool_result: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub bundle_id: String,
    pub strategy: StrategyId,
    pub steps: Vec<Step>,
    /// The agent invoked finish before the step limit.
    pub finished: bool,
    /// Backend or infrastructure failure; mutually exclusive with
    /// `finished`.
    pub exception: bool,
    pub final_patch: String,
    pub edit_log: Vec<EditRecord>,
    pub test_log: Vec<TestRecord>,
}

impl Trajectory {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    /// The last test command the agent invoked, if any.
    pub fn last_test_command(&self) -> Option<&str> {
        self.test_log.last().map(|r| r.command.as_str())
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("malformed backend output: {0}")]
    Malformed(String),
    #[error("backend transport failure: {0}")]
    Transport(String),
}

/// Produces the next (thought, tool call) from the system instructions,
/// the bug report, and the history so far.
pub trait Backend: Send {
    fn next_step(
        &mut self,
        system_instructions: &str,
        bug_report: &str,
        history: &[Step],
    ) -> Result<(String, ToolCall), BackendError>;
}

/// Executes one tool call; failures come back as text for the agent.
pub fn execute_tool(ws: &mut Workspace, call: &ToolCall) -> String {
    match call {
        ToolCall::ViewFile {
            path,
            start_line,
            end_line,
        } => {
            let range = match (start_line, end_line) {
                (Some(s), Some(e)) => Some((*s, *e)),
                (Some(s), None) => Some((*s, usize::MAX)),
                (None, _) => None,
            };
            match ws.view_file(path, range) {
                Ok(text) => text,
                Err(e) => format!("error: {}", e),
            }
        }
        ToolCall::SearchCode { query } => match ws.search_code(query) {
            Ok(matches) if matches.is_empty() => "no matches".to_string(),
            Ok(matches) => matches
                .iter()
                .map(|m| format!("{}:{}: {}", m.path, m.line_number, m.line_text))
                .collect::<Vec<_>>()
                .join("\n"),
            Err(e) => format!("error: {}", e),
        },
        ToolCall::EditFile {
            path,
            old_text,
            new_text,
        } => match ws.edit_file(path, old_text, new_text) {
            Ok(msg) => msg,
            Err(e) => format!("error: {}", e),
        },
        ToolCall::RunTest { command } => match ws.run_test(command) {
            Ok(rec) => format!("outcome: {:?}\n{}", rec.outcome, rec.captured_output),
            Err(e) => format!("error: {}", e),
        },
        ToolCall::Finish => String::new(),
    }
}

/// Runs one trajectory over a fresh workspace. Malformed backend output
/// is retried once; a second failure marks the trajectory as an
/// exception with the partial steps retained. The final patch is
/// captured in every termination case.
pub fn run_trajectory(
    bundle: &BugBundle,
    config: &AgentConfig,
    backend: &mut dyn Backend,
    ws: &mut Workspace,
) -> Trajectory {
    let system = build_system_prompt(config.strategy);
    let report = bundle.report_text();

    let mut steps: Vec<Step> = Vec::new();
    let mut finished = false;
    let mut exception = false;

    for index in 1..=config.step_limit {
        let attempt = backend
            .next_step(&system, &report, &steps)
            .or_else(|_| backend.next_step(&system, &report, &steps));
        let (thought, call) = match attempt {
            Ok(out) => out,
            Err(_) => {
                exception = true;
                break;
            }
        };
        let tool_result = execute_tool(ws, &call);
        let is_finish = call == ToolCall::Finish;
        steps.push(Step {
            index,
            thought,
            tool_call: call,
            tool_result,
        });
        if is_finish {
            finished = true;
            break;
        }
    }

    let final_patch = match ws.extract_patch() {
        Ok(text) => text,
        Err(_) => {
            exception = true;
            finished = false;
            String::new()
        }
    };

    Trajectory {
        bundle_id: bundle.id.clone(),
        strategy: config.strategy,
        steps,
        finished,
        exception,
        final_patch,
        edit_log: ws.edit_log().to_vec(),
        test_log: ws.test_log().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::ScriptedBackend;
    use crate::testsupport::calc_bundle;
    use crate::workspace::{TestOutcome, WorkspaceFactory, WorkspaceOptions};

    fn fresh(bundle: &BugBundle) -> Workspace {
        WorkspaceFactory::new(bundle, WorkspaceOptions::default())
            .fresh()
            .unwrap()
    }

    fn config(strategy: StrategyId) -> AgentConfig {
        AgentConfig::for_strategy(strategy)
    }

    #[test]
    fn immediate_finish_yields_one_step_and_empty_patch() {
        let fixture = calc_bundle();
        let mut backend = ScriptedBackend::from_calls(vec![ToolCall::Finish]);
        let mut ws = fresh(&fixture.bundle);
        let t = run_trajectory(
            &fixture.bundle,
            &config(StrategyId::Freeform),
            &mut backend,
            &mut ws,
        );
        assert!(t.finished);
        assert!(!t.exception);
        assert_eq!(t.step_count(), 1);
        assert_eq!(t.final_patch, "");
    }

    #[test]
    fn step_limit_caps_unfinished_trajectories() {
        let fixture = calc_bundle();
        // 30 views, never finishing: the loop must stop at the limit.
        let calls: Vec<ToolCall> = (0..30)
            .map(|_| ToolCall::ViewFile {
                path: "calc.py".to_string(),
                start_line: None,
                end_line: None,
            })
            .collect();
        let mut backend = ScriptedBackend::from_calls(calls);
        let mut ws = fresh(&fixture.bundle);
        let t = run_trajectory(
            &fixture.bundle,
            &config(StrategyId::FixOnly),
            &mut backend,
            &mut ws,
        );
        assert!(!t.finished);
        assert!(!t.exception);
        assert_eq!(t.step_count(), 25);
    }

    #[test]
    fn fix_then_test_then_finish_produces_both_diffs_and_passing_log() {
        let fixture = calc_bundle();
        let mut backend = ScriptedBackend::from_calls(vec![
            ToolCall::EditFile {
                path: "calc.py".to_string(),
                old_text: "def divide(a, b):\n    return a / b".to_string(),
                new_text: "def divide(a, b):\n    if b == 0:\n        return None\n    return a / b"
                    .to_string(),
            },
            ToolCall::EditFile {
                path: "tests/test_div_zero.py".to_string(),
                old_text: String::new(),
                new_text: "import sys\n\nsys.path.insert(0, \".\")\n\nfrom calc import divide\n\nassert divide(1, 0) is None\nassert divide(8, 2) == 4\nprint(\"ok\")\n".to_string(),
            },
            ToolCall::RunTest {
                command: "python3 tests/test_div_zero.py".to_string(),
            },
            ToolCall::Finish,
        ]);
        let mut ws = fresh(&fixture.bundle);
        let t = run_trajectory(
            &fixture.bundle,
            &config(StrategyId::Freeform),
            &mut backend,
            &mut ws,
        );
        assert!(t.finished);
        assert_eq!(t.test_log.last().unwrap().outcome, TestOutcome::Pass);
        let patch = crate::patch::Patch::parse_classified(
            &t.final_patch,
            &fixture.bundle.test_file_patterns,
        )
        .unwrap();
        assert_eq!(patch.file_diffs.len(), 2);
        assert!(patch.has_test());
        assert!(patch.has_non_test());
    }

    #[test]
    fn backend_failure_marks_exception_and_keeps_partial_steps() {
        struct FailAfter {
            remaining: usize,
        }
        impl Backend for FailAfter {
            fn next_step(
                &mut self,
                _s: &str,
                _b: &str,
                _h: &[Step],
            ) -> Result<(String, ToolCall), BackendError> {
                if self.remaining == 0 {
                    return Err(BackendError::Malformed("bad function call".into()));
                }
                self.remaining -= 1;
                Ok((
                    "looking around".to_string(),
                    ToolCall::SearchCode {
                        query: "divide".to_string(),
                    },
                ))
            }
        }
        let fixture = calc_bundle();
        let mut backend = FailAfter { remaining: 2 };
        let mut ws = fresh(&fixture.bundle);
        let t = run_trajectory(
            &fixture.bundle,
            &config(StrategyId::Freeform),
            &mut backend,
            &mut ws,
        );
        assert!(t.exception);
        assert!(!t.finished);
        assert_eq!(t.step_count(), 2);
    }

    #[test]
    fn finished_implies_last_step_is_finish() {
        let fixture = calc_bundle();
        let mut backend = ScriptedBackend::from_calls(vec![
            ToolCall::SearchCode {
                query: "divide".into(),
            },
            ToolCall::Finish,
        ]);
        let mut ws = fresh(&fixture.bundle);
        let t = run_trajectory(
            &fixture.bundle,
            &config(StrategyId::Freeform),
            &mut backend,
            &mut ws,
        );
        assert!(t.finished);
        assert_eq!(t.steps.last().unwrap().tool_call, ToolCall::Finish);
    }

    #[test]
    fn tool_calls_serialize_with_name_and_args() {
        let call = ToolCall::ViewFile {
            path: "calc.py".into(),
            start_line: Some(2),
            end_line: Some(2),
        };
        let json = serde_json::to_string(&call).unwrap();
        assert_eq!(
            json,
            r#"{"name":"view_file","args":{"path":"calc.py","start_line":2,"end_line":2}}"#
        );
        let back: ToolCall = serde_json::from_str(&json).unwrap();
        assert_eq!(back, call);
        let finish: ToolCall = serde_json::from_str(r#"{"name":"finish"}"#).unwrap();
        assert_eq!(finish, ToolCall::Finish);
    }
}
