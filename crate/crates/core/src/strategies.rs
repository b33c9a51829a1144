//! The five prompt configurations: fix-only, BRT-only, and the three
//! cogeneration orderings (freeform, test-driven, test-last).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyId {
    BrtOnly,
    FixOnly,
    Freeform,
    Tdd,
    Tld,
}

impl StrategyId {
    pub const ALL: [StrategyId; 5] = [
        StrategyId::BrtOnly,
        StrategyId::FixOnly,
        StrategyId::Freeform,
        StrategyId::Tdd,
        StrategyId::Tld,
    ];

    /// The three configurations that ask for both a fix and a BRT.
    pub fn is_cogeneration(self) -> bool {
        matches!(self, StrategyId::Freeform | StrategyId::Tdd | StrategyId::Tld)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::BrtOnly => "brt_only",
            StrategyId::FixOnly => "fix_only",
            StrategyId::Freeform => "freeform",
            StrategyId::Tdd => "tdd",
            StrategyId::Tld => "tld",
        }
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "brt_only" | "brt-only" => Ok(StrategyId::BrtOnly),
            "fix_only" | "fix-only" => Ok(StrategyId::FixOnly),
            "freeform" => Ok(StrategyId::Freeform),
            "tdd" => Ok(StrategyId::Tdd),
            "tld" => Ok(StrategyId::Tld),
            other => Err(format!(
                "unknown strategy `{}` (expected brt_only, fix_only, freeform, tdd, or tld)",
                other
            )),
        }
    }
}

const ROLE: &str = "You are an automated program repair agent. You are given a bug report and \
a code workspace checked out at the state where the bug is present. Work strictly inside the \
workspace using the tools below, and call finish when your change is complete.";

const TOOL_DOCS: &str = "Available tools:
- view_file(path, start_line?, end_line?): show a file with 1-based line numbers, optionally restricted to a line range.
- search_code(query): case-sensitive literal search over all files; returns path, line number, and line text per match.
- edit_file(path, old_text, new_text): replace old_text, which must occur exactly once in the file, with new_text. With empty old_text, creates path with new_text as its content; with empty old_text and empty new_text, deletes path.
- run_test(command): run a permitted test command in the workspace and report its outcome and output.
- finish(): end the trajectory; the accumulated workspace changes become the final patch.";

const PLANNING: &str = "First analyze the root cause and write a plan before editing any file. \
Update the plan as you make new observations.";

/// Shared cogeneration instruction (present in freeform, TDD, and TLD).
pub const COGEN_INSTRUCTION: &str = "If the bug report mentioned a reproduction test, you will \
use it to reproduce the bug and verify your fix. If the bug report did not mention a \
reproduction test, that means no existing test reproduces the bug. Then your plan should \
include writing such a test that reliably reproduces the bug. You need to find the most \
relevant test file to write a new test.";

pub const TDD_INSTRUCTION: &str = "You must first write a reproduction test before you can \
write the fix for the bug. Run the reproduction test to confirm it reliably reproduces the \
bug before you write the fix. After you have written the fix, run the reproduction test again \
to verify your fix resolves the bug. Refine your fix until the reproduction test passes.";

pub const TLD_INSTRUCTION: &str = "You must first write the fix for the bug before you can \
write a new reproduction test. Run the reproduction test to verify your fix resolves the bug. \
Refine your fix until the reproduction test passes.";

const FIX_ONLY_TASK: &str = "Implement a fix for the bug described in the bug report.";

const BRT_ONLY_TASK: &str = "Implement a reproduction test that reliably reproduces the bug \
described in the bug report.";

/// Deterministically assembles the system instructions for a strategy.
pub fn build_system_prompt(strategy: StrategyId) -> String {
    let mut paragraphs = vec![ROLE, TOOL_DOCS, PLANNING];
    match strategy {
        StrategyId::FixOnly => paragraphs.push(FIX_ONLY_TASK),
        StrategyId::BrtOnly => paragraphs.push(BRT_ONLY_TASK),
        StrategyId::Freeform => paragraphs.push(COGEN_INSTRUCTION),
        StrategyId::Tdd => {
            paragraphs.push(COGEN_INSTRUCTION);
            paragraphs.push(TDD_INSTRUCTION);
        }
        StrategyId::Tld => {
            paragraphs.push(COGEN_INSTRUCTION);
            paragraphs.push(TLD_INSTRUCTION);
        }
    }
    paragraphs.join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freeform_has_cogen_text_but_no_ordering_rules() {
        let p = build_system_prompt(StrategyId::Freeform);
        assert!(p.contains("writing such a test that reliably reproduces the bug"));
        assert!(!p.contains(TDD_INSTRUCTION));
        assert!(!p.contains(TLD_INSTRUCTION));
    }

    #[test]
    fn tdd_has_cogen_then_tdd_text() {
        let p = build_system_prompt(StrategyId::Tdd);
        let cogen_at = p.find(COGEN_INSTRUCTION).expect("cogen text present");
        let tdd_at = p.find(TDD_INSTRUCTION).expect("tdd text present");
        assert!(cogen_at < tdd_at);
        assert!(!p.contains(TLD_INSTRUCTION));
    }

    #[test]
    fn tld_has_cogen_then_tld_text() {
        let p = build_system_prompt(StrategyId::Tld);
        assert!(p.contains(COGEN_INSTRUCTION));
        assert!(p.contains(TLD_INSTRUCTION));
        assert!(!p.contains(TDD_INSTRUCTION));
    }

    #[test]
    fn fix_only_has_none_of_the_cogen_texts() {
        let p = build_system_prompt(StrategyId::FixOnly);
        assert!(!p.contains(COGEN_INSTRUCTION));
        assert!(!p.contains(TDD_INSTRUCTION));
        assert!(!p.contains(TLD_INSTRUCTION));
    }

    #[test]
    fn all_prompts_share_the_base_and_are_stable() {
        for s in StrategyId::ALL {
            let a = build_system_prompt(s);
            let b = build_system_prompt(s);
            assert_eq!(a, b);
            assert!(a.contains("analyze the root cause and write a plan before editing any file"));
            assert!(a.contains("Available tools:"));
        }
        // Cogeneration prompts differ only in strategy paragraphs.
        let freeform = build_system_prompt(StrategyId::Freeform);
        let tdd = build_system_prompt(StrategyId::Tdd);
        assert!(tdd.starts_with(&freeform));
    }

    #[test]
    fn strategy_ids_roundtrip_through_strings() {
        for s in StrategyId::ALL {
            assert_eq!(s.as_str().parse::<StrategyId>().unwrap(), s);
        }
        assert!("mystery".parse::<StrategyId>().is_err());
    }
}
