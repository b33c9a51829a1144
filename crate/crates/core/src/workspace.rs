//! Per-trajectory sandbox over a bundle snapshot: the agent's tools
//! (view, search, edit, run tests) plus final-patch extraction.
//!
//! Tool failures are returned as plain text for the agent, never as
//! process aborts. Captured command output has the workspace root path
//! scrubbed (replaced by `[WS]`) so stored records are byte-stable
//! across runs, and Python is told not to write bytecode caches so test
//! runs never dirty the tree.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tempfile::TempDir;
use thiserror::Error;
use walkdir::WalkDir;

use crate::bundle::BugBundle;
use crate::diff::{self, ChangeKind};
use crate::patch::{classify_test_file, Patch};

pub const DEFAULT_TEST_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_OUTPUT_CAP: usize = 64 * 1024;
pub const DEFAULT_SEARCH_LIMIT: usize = 100;

/// Placeholder substituted for the workspace root in captured output.
pub const ROOT_PLACEHOLDER: &str = "[WS]";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Diff(#[from] diff::DiffError),
    #[error("snapshot directory not found: {0}")]
    SnapshotMissing(PathBuf),
}

fn io_err(path: &Path, source: io::Error) -> WorkspaceError {
    WorkspaceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestOutcome {
    Pass,
    Fail,
    BuildError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub command: String,
    pub outcome: TestOutcome,
    pub captured_output: String,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    pub path: String,
    pub is_test_file: bool,
    pub kind: ChangeKind,
    pub step_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchMatch {
    pub path: String,
    pub line_number: usize,
    pub line_text: String,
}

#[derive(Debug, Clone)]
pub struct WorkspaceOptions {
    pub test_timeout: Duration,
    pub output_cap: usize,
    pub search_limit: usize,
    /// Glob patterns for agent-named test commands beyond the bundle's
    /// oracle and regression commands. `*` permits anything.
    pub allowed_test_command_patterns: Vec<String>,
}

impl Default for WorkspaceOptions {
    fn default() -> Self {
        WorkspaceOptions {
            test_timeout: DEFAULT_TEST_TIMEOUT,
            output_cap: DEFAULT_OUTPUT_CAP,
            search_limit: DEFAULT_SEARCH_LIMIT,
            allowed_test_command_patterns: vec!["*".to_string()],
        }
    }
}

/// Which file diffs of a patch to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffScope {
    All,
    TestOnly,
    NonTestOnly,
}

impl DiffScope {
    fn includes(self, is_test: bool) -> bool {
        match self {
            DiffScope::All => true,
            DiffScope::TestOnly => is_test,
            DiffScope::NonTestOnly => !is_test,
        }
    }
}

/// Materializes fresh workspaces for one bundle. Each workspace is an
/// isolated copy; distinct workspaces may run concurrently.
#[derive(Debug, Clone)]
pub struct WorkspaceFactory {
    bundle_id: String,
    snapshot: PathBuf,
    test_patterns: Vec<String>,
    oracle_command: String,
    regression_commands: Vec<String>,
    build_command: Option<String>,
    options: WorkspaceOptions,
}

impl WorkspaceFactory {
    pub fn new(bundle: &BugBundle, options: WorkspaceOptions) -> Self {
        WorkspaceFactory {
            bundle_id: bundle.id.clone(),
            snapshot: bundle.snapshot_root.clone(),
            test_patterns: bundle.test_file_patterns.clone(),
            oracle_command: bundle.oracle_brt_command.clone(),
            regression_commands: bundle.regression_test_commands.clone(),
            build_command: bundle.build_command.clone(),
            options,
        }
    }

    pub fn fresh(&self) -> Result<Workspace, WorkspaceError> {
        if !self.snapshot.is_dir() {
            return Err(WorkspaceError::SnapshotMissing(self.snapshot.clone()));
        }
        let tmp = TempDir::new().map_err(|e| io_err(Path::new("<tempdir>"), e))?;
        copy_tree(&self.snapshot, tmp.path())?;
        Ok(Workspace {
            bundle_id: self.bundle_id.clone(),
            snapshot: self.snapshot.clone(),
            root: tmp.path().to_path_buf(),
            _tmp: Some(tmp),
            test_patterns: self.test_patterns.clone(),
            oracle_command: self.oracle_command.clone(),
            regression_commands: self.regression_commands.clone(),
            build_command: self.build_command.clone(),
            options: self.options.clone(),
            edit_log: Vec::new(),
            test_log: Vec::new(),
            step: 0,
        })
    }
}

#[derive(Debug)]
pub struct Workspace {
    bundle_id: String,
    snapshot: PathBuf,
    root: PathBuf,
    _tmp: Option<TempDir>,
    test_patterns: Vec<String>,
    oracle_command: String,
    regression_commands: Vec<String>,
    build_command: Option<String>,
    options: WorkspaceOptions,
    edit_log: Vec<EditRecord>,
    test_log: Vec<TestRecord>,
    step: usize,
}

impl Workspace {
    pub fn bundle_id(&self) -> &str {
        &self.bundle_id
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn edit_log(&self) -> &[EditRecord] {
        &self.edit_log
    }

    pub fn test_log(&self) -> &[TestRecord] {
        &self.test_log
    }

    fn advance(&mut self) -> usize {
        self.step += 1;
        self.step
    }

    fn resolve(&self, rel: &str) -> Result<PathBuf, String> {
        if rel.is_empty() {
            return Err("empty path".to_string());
        }
        let p = Path::new(rel);
        if p.is_absolute() {
            return Err(format!("absolute paths are not allowed: {}", rel));
        }
        for comp in p.components() {
            match comp {
                std::path::Component::Normal(_) => {}
                _ => return Err(format!("path escapes the workspace: {}", rel)),
            }
        }
        Ok(self.root.join(p))
    }

    /// Returns the requested lines with 1-based line numbers prefixed.
    pub fn view_file(
        &mut self,
        rel: &str,
        range: Option<(usize, usize)>,
    ) -> Result<String, String> {
        self.advance();
        let full = self.resolve(rel)?;
        if !full.is_file() {
            return Err(format!("file not found: {}", rel));
        }
        let content =
            fs::read_to_string(&full).map_err(|e| format!("cannot read {}: {}", rel, e))?;
        let lines: Vec<&str> = content.lines().collect();
        let (start, end) = match range {
            Some((s, e)) => {
                if s == 0 || s > e {
                    return Err(format!("invalid line range {}..{}", s, e));
                }
                if s > lines.len() {
                    return Err(format!(
                        "line range {}..{} out of bounds for {} ({} lines)",
                        s,
                        e,
                        rel,
                        lines.len()
                    ));
                }
                (s, e.min(lines.len()))
            }
            None => (1, lines.len()),
        };
        let mut out = String::new();
        for (i, line) in lines.iter().enumerate().take(end).skip(start - 1) {
            out.push_str(&format!("{}: {}\n", i + 1, line));
        }
        Ok(out)
    }

    /// Case-sensitive literal search under the workspace root, in
    /// path-lexicographic order, capped at the configured limit.
    pub fn search_code(&mut self, query: &str) -> Result<Vec<SearchMatch>, String> {
        self.advance();
        if query.is_empty() {
            return Err("empty query".to_string());
        }
        let mut matches = Vec::new();
        'outer: for rel in self.relative_paths().map_err(|e| e.to_string())? {
            let full = self.root.join(&rel);
            let Ok(content) = fs::read_to_string(&full) else {
                continue;
            };
            for (i, line) in content.lines().enumerate() {
                if line.contains(query) {
                    matches.push(SearchMatch {
                        path: rel.clone(),
                        line_number: i + 1,
                        line_text: line.to_string(),
                    });
                    if matches.len() >= self.options.search_limit {
                        break 'outer;
                    }
                }
            }
        }
        Ok(matches)
    }

    /// Exact-unique-match replace. Empty `old_text` creates the file when
    /// it does not exist; empty `old_text` and `new_text` deletes it.
    pub fn edit_file(
        &mut self,
        rel: &str,
        old_text: &str,
        new_text: &str,
    ) -> Result<String, String> {
        let step = self.advance();
        let full = self.resolve(rel)?;
        let is_test = classify_test_file(rel, &self.test_patterns);

        if old_text.is_empty() && new_text.is_empty() {
            if !full.is_file() {
                return Err(format!("file not found: {}", rel));
            }
            fs::remove_file(&full).map_err(|e| format!("cannot delete {}: {}", rel, e))?;
            self.edit_log.push(EditRecord {
                path: rel.to_string(),
                is_test_file: is_test,
                kind: ChangeKind::Delete,
                step_index: step,
            });
            return Ok(format!("deleted {}", rel));
        }

        if old_text.is_empty() {
            if full.exists() {
                return Err(format!(
                    "file already exists: {} (provide old_text to modify it)",
                    rel
                ));
            }
            if let Some(parent) = full.parent() {
                fs::create_dir_all(parent)
                    .map_err(|e| format!("cannot create directories for {}: {}", rel, e))?;
            }
            fs::write(&full, new_text).map_err(|e| format!("cannot write {}: {}", rel, e))?;
            self.edit_log.push(EditRecord {
                path: rel.to_string(),
                is_test_file: is_test,
                kind: ChangeKind::Create,
                step_index: step,
            });
            return Ok(format!("created {}", rel));
        }

        if !full.is_file() {
            return Err(format!("file not found: {}", rel));
        }
        let content =
            fs::read_to_string(&full).map_err(|e| format!("cannot read {}: {}", rel, e))?;
        let count = content.matches(old_text).count();
        if count != 1 {
            return Err(format!(
                "{} occurrences of old_text in {} (need exactly 1)",
                count, rel
            ));
        }
        let updated = content.replacen(old_text, new_text, 1);
        fs::write(&full, updated).map_err(|e| format!("cannot write {}: {}", rel, e))?;
        self.edit_log.push(EditRecord {
            path: rel.to_string(),
            is_test_file: is_test,
            kind: ChangeKind::Modify,
            step_index: step,
        });
        Ok(format!("edited {}", rel))
    }

    fn command_permitted(&self, command: &str) -> bool {
        command == self.oracle_command
            || self.regression_commands.iter().any(|c| c == command)
            || self
                .options
                .allowed_test_command_patterns
                .iter()
                .any(|p| crate::patch::glob_match_str(p, command))
    }

    /// Runs a permitted test command (build command first, when the
    /// bundle has one) and appends the outcome to the test log.
    pub fn run_test(&mut self, command: &str) -> Result<&TestRecord, String> {
        let step = self.advance();
        if !self.command_permitted(command) {
            return Err(format!("command not permitted: {}", command));
        }

        if let Some(build) = self.build_command.clone() {
            let build_res = self.exec(&build).map_err(|e| e.to_string())?;
            if build_res.timed_out || build_res.exit_code != Some(0) {
                self.test_log.push(TestRecord {
                    command: command.to_string(),
                    outcome: TestOutcome::BuildError,
                    captured_output: format!("build command failed: {}\n{}", build, build_res.output),
                    step_index: step,
                });
                return Ok(self.test_log.last().unwrap());
            }
        }

        let res = self.exec(command).map_err(|e| e.to_string())?;
        let outcome = if res.timed_out {
            TestOutcome::Timeout
        } else if res.exit_code == Some(0) {
            TestOutcome::Pass
        } else {
            TestOutcome::Fail
        };
        self.test_log.push(TestRecord {
            command: command.to_string(),
            outcome,
            captured_output: res.output,
            step_index: step,
        });
        Ok(self.test_log.last().unwrap())
    }

    fn exec(&self, command: &str) -> Result<ExecResult, WorkspaceError> {
        let raw = exec_with_timeout(
            command,
            &self.root,
            self.options.test_timeout,
            self.options.output_cap,
        )
        .map_err(|e| io_err(&self.root, e))?;
        let root_str = self.root.to_string_lossy().to_string();
        let scrubbed = raw.output.replace(&root_str, ROOT_PLACEHOLDER);
        Ok(ExecResult {
            output: scrubbed,
            ..raw
        })
    }

    /// Applies a patch's file diffs (filtered by scope) directly to the
    /// tree. Used by reviewers and oracle scenarios, not by agent tools;
    /// the edit log reflects tool calls only.
    pub fn apply_patch(&mut self, patch: &Patch, scope: DiffScope) -> Result<(), WorkspaceError> {
        for fd in &patch.file_diffs {
            if !scope.includes(fd.is_test_file) {
                continue;
            }
            let full = self.root.join(&fd.path);
            let old = if full.is_file() {
                Some(fs::read_to_string(&full).map_err(|e| io_err(&full, e))?)
            } else {
                None
            };
            match diff::apply_file_diff(old.as_deref(), fd)? {
                Some(content) => {
                    if let Some(parent) = full.parent() {
                        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
                    }
                    fs::write(&full, content).map_err(|e| io_err(&full, e))?;
                }
                None => {
                    fs::remove_file(&full).map_err(|e| io_err(&full, e))?;
                }
            }
        }
        Ok(())
    }

    fn relative_paths_of(&self, base: &Path) -> Result<Vec<String>, WorkspaceError> {
        let mut out = Vec::new();
        for entry in WalkDir::new(base).sort_by_file_name() {
            let entry = entry.map_err(|e| WorkspaceError::Io {
                path: base.to_path_buf(),
                source: io::Error::other(e),
            })?;
            if entry.file_type().is_file() {
                let rel = entry
                    .path()
                    .strip_prefix(base)
                    .expect("walkdir stays under base")
                    .to_string_lossy()
                    .replace('\\', "/");
                out.push(rel);
            }
        }
        out.sort();
        Ok(out)
    }

    fn relative_paths(&self) -> Result<Vec<String>, WorkspaceError> {
        self.relative_paths_of(&self.root)
    }

    /// Unified diff of the workspace tree against the pristine snapshot:
    /// files in path-lexicographic order, three context lines,
    /// byte-stable across repeated calls.
    pub fn extract_patch(&self) -> Result<String, WorkspaceError> {
        let mut paths: BTreeSet<String> = BTreeSet::new();
        paths.extend(self.relative_paths_of(&self.snapshot)?);
        paths.extend(self.relative_paths_of(&self.root)?);

        let mut diffs = Vec::new();
        for rel in paths {
            let old_path = self.snapshot.join(&rel);
            let new_path = self.root.join(&rel);
            let old = read_optional(&old_path)?;
            let new = read_optional(&new_path)?;
            if let Some(fd) = diff::diff_file(&rel, old.as_deref(), new.as_deref(), 3) {
                diffs.push(fd);
            }
        }
        Ok(diff::render_patch(&diffs))
    }

    /// Restores the pristine snapshot and clears the logs.
    pub fn reset(&mut self) -> Result<(), WorkspaceError> {
        for entry in fs::read_dir(&self.root).map_err(|e| io_err(&self.root, e))? {
            let entry = entry.map_err(|e| io_err(&self.root, e))?;
            let p = entry.path();
            if p.is_dir() {
                fs::remove_dir_all(&p).map_err(|e| io_err(&p, e))?;
            } else {
                fs::remove_file(&p).map_err(|e| io_err(&p, e))?;
            }
        }
        copy_tree(&self.snapshot, &self.root)?;
        self.edit_log.clear();
        self.test_log.clear();
        self.step = 0;
        Ok(())
    }
}

fn read_optional(path: &Path) -> Result<Option<String>, WorkspaceError> {
    if !path.is_file() {
        return Ok(None);
    }
    fs::read_to_string(path).map(Some).map_err(|e| io_err(path, e))
}

fn copy_tree(from: &Path, to: &Path) -> Result<(), WorkspaceError> {
    for entry in WalkDir::new(from) {
        let entry = entry.map_err(|e| WorkspaceError::Io {
            path: from.to_path_buf(),
            source: io::Error::other(e),
        })?;
        let rel = entry
            .path()
            .strip_prefix(from)
            .expect("walkdir stays under base");
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest).map_err(|e| io_err(&dest, e))?;
        } else if entry.file_type().is_file() {
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            fs::copy(entry.path(), &dest).map_err(|e| io_err(&dest, e))?;
        }
    }
    Ok(())
}

#[derive(Debug)]
struct ExecResult {
    exit_code: Option<i32>,
    output: String,
    timed_out: bool,
}

fn exec_with_timeout(
    command: &str,
    cwd: &Path,
    timeout: Duration,
    cap: usize,
) -> io::Result<ExecResult> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(command)
        .current_dir(cwd)
        .env("PYTHONDONTWRITEBYTECODE", "1")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;

    let stdout = child.stdout.take().expect("stdout piped");
    let stderr = child.stderr.take().expect("stderr piped");
    let out_handle = spawn_capped_reader(stdout, cap);
    let err_handle = spawn_capped_reader(stderr, cap);

    let (exit_code, timed_out) = wait_with_timeout(&mut child, timeout)?;
    let stdout_text = out_handle.join().unwrap_or_default();
    let stderr_text = err_handle.join().unwrap_or_default();

    let mut output = stdout_text;
    if !stderr_text.is_empty() {
        if !output.is_empty() && !output.ends_with('\n') {
            output.push('\n');
        }
        output.push_str(&stderr_text);
    }
    if output.len() > cap {
        let mut cut = cap;
        while cut > 0 && !output.is_char_boundary(cut) {
            cut -= 1;
        }
        output.truncate(cut);
        output.push_str("\n[output truncated]");
    }
    Ok(ExecResult {
        exit_code,
        output,
        timed_out,
    })
}

fn spawn_capped_reader<R: Read + Send + 'static>(
    mut reader: R,
    cap: usize,
) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut kept: Vec<u8> = Vec::new();
        let mut chunk = [0u8; 8192];
        loop {
            match reader.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    // Keep draining past the cap so the child never blocks
                    // on a full pipe.
                    if kept.len() < cap + 1024 {
                        kept.extend_from_slice(&chunk[..n]);
                    }
                }
            }
        }
        String::from_utf8_lossy(&kept).into_owned()
    })
}

fn wait_with_timeout(child: &mut Child, timeout: Duration) -> io::Result<(Option<i32>, bool)> {
    let start = Instant::now();
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok((status.code(), false));
        }
        if start.elapsed() >= timeout {
            child.kill().ok();
            let _ = child.wait();
            return Ok((None, true));
        }
        thread::sleep(Duration::from_millis(10));
    }
}
