//! The evaluation unit: a bug report plus a repository snapshot, a
//! ground-truth patch carrying the fix and its fail-to-pass reproduction
//! test, and the commands that exercise them.
//!
//! On disk a bundle is a directory:
//!
//! ```text
//! <bundle>/
//!   manifest            key = value lines, UTF-8, lists comma-separated
//!   snapshot/           pre-patch tree
//!   ground_truth.diff   unified diff, paths relative to snapshot/
//! ```

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::patch::{self, Patch};
use crate::workspace::{TestOutcome, WorkspaceFactory};

/// Unidiff budget above which a ground-truth patch draws a size warning.
pub const PATCH_SIZE_WARNING_LINES: usize = 150;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing field: {0}")]
    MissingField(&'static str),
    #[error("empty title")]
    EmptyTitle,
    #[error("bundle manifest not found at {0}")]
    MissingManifest(PathBuf),
    #[error("snapshot directory not found at {0}")]
    MissingSnapshot(PathBuf),
    #[error("ground truth diff not found at {0}")]
    MissingGroundTruth(PathBuf),
    #[error("malformed manifest line {line}: {text}")]
    MalformedManifest { line: usize, text: String },
    #[error("ground truth diff is not a valid unidiff: {0}")]
    BadGroundTruth(#[from] crate::diff::DiffError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BugReport {
    pub title: String,
    pub description: String,
}

/// A loaded bundle. Immutable after load; safe to share across
/// concurrently running trajectories.
#[derive(Debug, Clone)]
pub struct BugBundle {
    pub id: String,
    pub report: BugReport,
    pub snapshot_root: PathBuf,
    pub ground_truth_patch: String,
    pub oracle_brt_command: String,
    pub regression_test_commands: Vec<String>,
    pub build_command: Option<String>,
    pub test_file_patterns: Vec<String>,
    pub language_tag: String,
    ground_truth: Patch,
}

impl BugBundle {
    /// The ground-truth patch, parsed and test-classified.
    pub fn ground_truth(&self) -> &Patch {
        &self.ground_truth
    }

    /// Paths touched by the ground-truth patch.
    pub fn ground_truth_paths(&self) -> Vec<String> {
        self.ground_truth
            .file_diffs
            .iter()
            .map(|fd| fd.path.clone())
            .collect()
    }

    /// The bug report as presented to the agent.
    pub fn report_text(&self) -> String {
        format!("Title: {}\n\n{}", self.report.title, self.report.description)
    }
}

fn unescape(value: &str) -> String {
    value.replace("\\n", "\n")
}

fn parse_manifest(text: &str) -> Result<Vec<(String, String)>, BundleError> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or(BundleError::MalformedManifest {
            line: idx + 1,
            text: raw.to_string(),
        })?;
        pairs.push((key.trim().to_string(), unescape(value.trim())));
    }
    Ok(pairs)
}

fn read(path: &Path) -> Result<String, BundleError> {
    fs::read_to_string(path).map_err(|e| BundleError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Loads and structurally checks a bundle directory.
pub fn load_bundle(dir: &Path) -> Result<BugBundle, BundleError> {
    let manifest_path = dir.join("manifest");
    if !manifest_path.is_file() {
        return Err(BundleError::MissingManifest(manifest_path));
    }
    let pairs = parse_manifest(&read(&manifest_path)?)?;
    let get = |key: &str| -> Option<&str> {
        pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    };
    let require = |key: &'static str| -> Result<&str, BundleError> {
        get(key)
            .filter(|v| !v.is_empty())
            .ok_or(BundleError::MissingField(key))
    };

    let id = require("id")?.to_string();
    let title = get("title").unwrap_or("").trim().to_string();
    if title.is_empty() {
        return Err(BundleError::EmptyTitle);
    }
    let description = get("description").unwrap_or("").to_string();
    let oracle_brt_command = require("oracle_brt_command")?.to_string();

    let list = |key: &str| -> Vec<String> {
        get(key)
            .map(|v| {
                v.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    };
    let regression_test_commands = list("regression_test_commands");
    let build_command = get("build_command")
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty());
    let mut test_file_patterns = list("test_file_patterns");
    if test_file_patterns.is_empty() {
        test_file_patterns = patch::default_test_patterns();
    }
    let language_tag = get("language_tag").unwrap_or("unknown").to_string();

    let snapshot_root = dir.join("snapshot");
    if !snapshot_root.is_dir() {
        return Err(BundleError::MissingSnapshot(snapshot_root));
    }
    let gt_path = dir.join("ground_truth.diff");
    if !gt_path.is_file() {
        return Err(BundleError::MissingGroundTruth(gt_path));
    }
    let ground_truth_patch = read(&gt_path)?;
    let ground_truth = Patch::parse_classified(&ground_truth_patch, &test_file_patterns)?;

    Ok(BugBundle {
        id,
        report: BugReport { title, description },
        snapshot_root,
        ground_truth_patch,
        oracle_brt_command,
        regression_test_commands,
        build_command,
        test_file_patterns,
        language_tag,
        ground_truth,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    /// Warning checks report curation concerns and do not gate validity.
    pub warning: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub bundle_id: String,
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    /// Valid iff every non-warning check passed.
    pub fn is_valid(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.warning)
    }

    pub fn failing_checks(&self) -> Vec<&ValidationCheck> {
        self.checks
            .iter()
            .filter(|c| !c.passed && !c.warning)
            .collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "bundle {}: {}",
            self.bundle_id,
            if self.is_valid() { "valid" } else { "INVALID" }
        )?;
        for c in &self.checks {
            let status = match (c.passed, c.warning) {
                (true, _) => "PASS",
                (false, true) => "WARN",
                (false, false) => "FAIL",
            };
            writeln!(f, "  [{}] {}: {}", status, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn check(name: &str, passed: bool, warning: bool, detail: String) -> ValidationCheck {
    ValidationCheck {
        name: name.to_string(),
        passed,
        warning,
        detail,
    }
}

fn outcome_detail(outcome: TestOutcome, output: &str) -> String {
    let trimmed: String = output.chars().take(200).collect();
    format!("outcome {:?}: {}", outcome, trimmed.trim_end())
}

/// Oracle-validates a bundle: the ground-truth patch must apply, its BRT
/// must fail on the buggy code (with and without the oracle test
/// installed) and pass on the fixed code, and regressions must pass
/// post-patch. Size is a warning-level curation check.
pub fn validate_bundle(
    bundle: &BugBundle,
    env: &WorkspaceFactory,
) -> Result<ValidationReport, crate::workspace::WorkspaceError> {
    let mut checks = Vec::new();
    let gt = bundle.ground_truth();

    // patch_applies
    let applies = {
        let mut ws = env.fresh()?;
        match ws.apply_patch(gt, crate::workspace::DiffScope::All) {
            Ok(()) => check("patch_applies", true, false, "ground truth applies cleanly".into()),
            Err(e) => check("patch_applies", false, false, e.to_string()),
        }
    };
    let patch_ok = applies.passed;
    checks.push(applies);

    // patch_has_fix_and_test
    let has_test = gt.has_test();
    let has_fix = gt.has_non_test();
    checks.push(check(
        "patch_has_fix_and_test",
        has_test && has_fix,
        false,
        format!("test diffs: {}, non-test diffs: {}", gt.test_diffs().len(), gt.non_test_diffs().len()),
    ));

    // brt_fails_on_bug: oracle command on the pristine snapshot.
    {
        let mut ws = env.fresh()?;
        match ws.run_test(&bundle.oracle_brt_command) {
            Ok(rec) => checks.push(check(
                "brt_fails_on_bug",
                rec.outcome == TestOutcome::Fail,
                false,
                outcome_detail(rec.outcome, &rec.captured_output),
            )),
            Err(msg) => checks.push(check("brt_fails_on_bug", false, false, msg)),
        }
    }

    // brt_fails_on_bug_with_test: oracle test installed, fix absent.
    if patch_ok {
        let mut ws = env.fresh()?;
        let detail = match ws.apply_patch(gt, crate::workspace::DiffScope::TestOnly) {
            Ok(()) => match ws.run_test(&bundle.oracle_brt_command) {
                Ok(rec) => (
                    rec.outcome == TestOutcome::Fail,
                    outcome_detail(rec.outcome, &rec.captured_output),
                ),
                Err(msg) => (false, msg),
            },
            Err(e) => (false, e.to_string()),
        };
        checks.push(check("brt_fails_on_bug_with_test", detail.0, false, detail.1));
    }

    // brt_passes_on_fix
    if patch_ok {
        let mut ws = env.fresh()?;
        let detail = match ws.apply_patch(gt, crate::workspace::DiffScope::All) {
            Ok(()) => match ws.run_test(&bundle.oracle_brt_command) {
                Ok(rec) => (
                    rec.outcome == TestOutcome::Pass,
                    outcome_detail(rec.outcome, &rec.captured_output),
                ),
                Err(msg) => (false, msg),
            },
            Err(e) => (false, e.to_string()),
        };
        checks.push(check("brt_passes_on_fix", detail.0, false, detail.1));
    }

    // regressions_pass_post_patch
    if patch_ok {
        let mut ws = env.fresh()?;
        ws.apply_patch(gt, crate::workspace::DiffScope::All)?;
        let mut ok = true;
        let mut detail = String::from("no regression commands");
        for cmd in &bundle.regression_test_commands {
            match ws.run_test(cmd) {
                Ok(rec) if rec.outcome == TestOutcome::Pass => {
                    detail = format!("{} regression command(s) pass", bundle.regression_test_commands.len());
                }
                Ok(rec) => {
                    ok = false;
                    detail = format!("`{}` {}", cmd, outcome_detail(rec.outcome, &rec.captured_output));
                    break;
                }
                Err(msg) => {
                    ok = false;
                    detail = msg;
                    break;
                }
            }
        }
        checks.push(check("regressions_pass_post_patch", ok, false, detail));
    }

    // size_under_150 (warning-level curation rule)
    let lines = gt.unidiff_line_count();
    checks.push(check(
        "size_under_150",
        lines < PATCH_SIZE_WARNING_LINES,
        true,
        format!("{} unidiff lines", lines),
    ));

    Ok(ValidationReport {
        bundle_id: bundle.id.clone(),
        checks,
    })
}
