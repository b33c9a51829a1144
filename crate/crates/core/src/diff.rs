//! Unified diff parsing, generation, and application.
//!
//! Diffs are represented per file as hunks of context/add/remove lines.
//! Line text keeps its trailing newline; a line without one is the last
//! line of a file that does not end in a newline, and renders with the
//! standard `\ No newline at end of file` marker.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEV_NULL: &str = "/dev/null";

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("malformed hunk header at line {line}: {text}")]
    BadHunkHeader { line: usize, text: String },
    #[error("malformed diff at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("patch does not apply to `{path}` at line {line}: {reason}")]
    ApplyFailed {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("cannot {action} `{path}`: {reason}")]
    BadTarget {
        action: &'static str,
        path: String,
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeKind {
    Create,
    Modify,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    Context,
    Add,
    Remove,
}

/// One body line of a hunk. `text` includes its newline unless it is the
/// final line of a file lacking one.
#[derive(Debug, Clone, PartialEq)]
pub struct HunkLine {
    pub kind: LineKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    pub lines: Vec<HunkLine>,
}

/// A parsed diff against one file, path relative to the tree root.
#[derive(Debug, Clone, PartialEq)]
pub struct FileDiff {
    pub path: String,
    pub kind: ChangeKind,
    pub hunks: Vec<Hunk>,
    /// Classified later from the bundle's test-file patterns.
    pub is_test_file: bool,
}

impl FileDiff {
    pub fn added_line_count(&self) -> usize {
        self.hunks
            .iter()
            .flat_map(|h| &h.lines)
            .filter(|l| l.kind == LineKind::Add)
            .count()
    }

    pub fn removed_line_count(&self) -> usize {
        self.hunks
            .iter()
            .flat_map(|h| &h.lines)
            .filter(|l| l.kind == LineKind::Remove)
            .count()
    }
}

/// Splits text into lines that keep their `\n`; the last element may lack one.
pub fn split_lines_inclusive(text: &str) -> Vec<&str> {
    text.split_inclusive('\n').collect()
}

#[derive(Debug, Clone, Copy)]
enum EditOp {
    // (old_index, new_index) of the matched line pair
    Equal(usize, usize),
    // old_index of the removed line, new cursor position
    Remove(usize, usize),
    // old cursor position, new_index of the inserted line
    Insert(usize, usize),
}

/// Myers shortest-edit-script over line slices.
fn myers_ops(old: &[&str], new: &[&str]) -> Vec<EditOp> {
    let n = old.len();
    let m = new.len();
    let max = n + m;
    if max == 0 {
        return Vec::new();
    }
    let offset = max as isize;
    let width = 2 * max + 1;
    let mut v = vec![0isize; width];
    let mut trace: Vec<Vec<isize>> = Vec::new();
    let mut found_d = None;

    'outer: for d in 0..=(max as isize) {
        trace.push(v.clone());
        let mut k = -d;
        while k <= d {
            let idx = (k + offset) as usize;
            let mut x = if k == -d || (k != d && v[idx - 1] < v[idx + 1]) {
                v[idx + 1]
            } else {
                v[idx - 1] + 1
            };
            let mut y = x - k;
            while (x as usize) < n && (y as usize) < m && old[x as usize] == new[y as usize] {
                x += 1;
                y += 1;
            }
            v[idx] = x;
            if x as usize >= n && y as usize >= m {
                found_d = Some(d);
                break 'outer;
            }
            k += 2;
        }
    }

    let d_final = found_d.expect("myers always terminates within n+m edits");
    let mut ops = Vec::new();
    let mut x = n as isize;
    let mut y = m as isize;
    for d in (0..=d_final).rev() {
        let v = &trace[d as usize];
        let k = x - y;
        let prev_k = if k == -d || (k != d && v[(k - 1 + offset) as usize] < v[(k + 1 + offset) as usize])
        {
            k + 1
        } else {
            k - 1
        };
        let prev_x = v[(prev_k + offset) as usize];
        let prev_y = prev_x - prev_k;
        while x > prev_x && y > prev_y {
            ops.push(EditOp::Equal((x - 1) as usize, (y - 1) as usize));
            x -= 1;
            y -= 1;
        }
        if d > 0 {
            if x == prev_x {
                ops.push(EditOp::Insert(x as usize, (y - 1) as usize));
            } else {
                ops.push(EditOp::Remove((x - 1) as usize, y as usize));
            }
            x = prev_x;
            y = prev_y;
        }
    }
    ops.reverse();
    ops
}

fn is_change(op: &EditOp) -> bool {
    !matches!(op, EditOp::Equal(_, _))
}

/// Groups an edit script into hunks with up to `context` equal lines on
/// each side, merging changes separated by at most `2 * context` equals.
fn build_hunks(old: &[&str], new: &[&str], ops: &[EditOp], context: usize) -> Vec<Hunk> {
    let change_idx: Vec<usize> = ops
        .iter()
        .enumerate()
        .filter(|(_, op)| is_change(op))
        .map(|(i, _)| i)
        .collect();
    if change_idx.is_empty() {
        return Vec::new();
    }

    // Cluster change indices whose equal-line gap fits inside shared context.
    let mut clusters: Vec<(usize, usize)> = Vec::new();
    let mut start = change_idx[0];
    let mut last = change_idx[0];
    for &i in &change_idx[1..] {
        if i - last - 1 <= 2 * context {
            last = i;
        } else {
            clusters.push((start, last));
            start = i;
            last = i;
        }
    }
    clusters.push((start, last));

    let mut hunks = Vec::new();
    for (first, final_change) in clusters {
        let lo = first.saturating_sub(context);
        let hi = (final_change + context).min(ops.len() - 1);
        let mut lines = Vec::new();
        let mut old_len = 0;
        let mut new_len = 0;
        let (mut old_cursor, mut new_cursor) = (None, None);
        for op in &ops[lo..=hi] {
            match *op {
                EditOp::Equal(o, nn) => {
                    old_cursor.get_or_insert(o);
                    new_cursor.get_or_insert(nn);
                    old_len += 1;
                    new_len += 1;
                    lines.push(HunkLine {
                        kind: LineKind::Context,
                        text: old[o].to_string(),
                    });
                }
                EditOp::Remove(o, nn) => {
                    old_cursor.get_or_insert(o);
                    new_cursor.get_or_insert(nn);
                    old_len += 1;
                    lines.push(HunkLine {
                        kind: LineKind::Remove,
                        text: old[o].to_string(),
                    });
                }
                EditOp::Insert(o, nn) => {
                    old_cursor.get_or_insert(o);
                    new_cursor.get_or_insert(nn);
                    new_len += 1;
                    lines.push(HunkLine {
                        kind: LineKind::Add,
                        text: new[nn].to_string(),
                    });
                }
            }
        }
        // Unified convention: start is 1-based for non-empty ranges and the
        // preceding line number (0 at top) for empty ones.
        let old_start = match (old_len, old_cursor) {
            (0, Some(c)) => c,
            (_, Some(c)) => c + 1,
            (_, None) => 0,
        };
        let new_start = match (new_len, new_cursor) {
            (0, Some(c)) => c,
            (_, Some(c)) => c + 1,
            (_, None) => 0,
        };
        hunks.push(Hunk {
            old_start,
            old_len,
            new_start,
            new_len,
            lines,
        });
    }
    hunks
}

/// Diffs one file's old and new content. `None` content means the file is
/// absent on that side. Returns `None` when there is nothing to report.
pub fn diff_file(
    path: &str,
    old: Option<&str>,
    new: Option<&str>,
    context: usize,
) -> Option<FileDiff> {
    let (kind, old_text, new_text) = match (old, new) {
        (None, None) => return None,
        (None, Some(n)) => (ChangeKind::Create, "", n),
        (Some(o), None) => (ChangeKind::Delete, o, ""),
        (Some(o), Some(n)) => {
            if o == n {
                return None;
            }
            (ChangeKind::Modify, o, n)
        }
    };
    let old_lines = split_lines_inclusive(old_text);
    let new_lines = split_lines_inclusive(new_text);
    let ops = myers_ops(&old_lines, &new_lines);
    let hunks = build_hunks(&old_lines, &new_lines, &ops, context);
    if hunks.is_empty() {
        return None;
    }
    Some(FileDiff {
        path: path.to_string(),
        kind,
        hunks,
        is_test_file: false,
    })
}

const NO_NEWLINE_MARKER: &str = "\\ No newline at end of file";

fn render_body_line(out: &mut String, prefix: char, text: &str) {
    out.push(prefix);
    out.push_str(text);
    if !text.ends_with('\n') {
        out.push('\n');
        out.push_str(NO_NEWLINE_MARKER);
        out.push('\n');
    }
}

/// Renders one file diff in unified format with `a/`/`b/` labels.
pub fn render_file_diff(fd: &FileDiff) -> String {
    let mut out = String::new();
    let old_label = match fd.kind {
        ChangeKind::Create => DEV_NULL.to_string(),
        _ => format!("a/{}", fd.path),
    };
    let new_label = match fd.kind {
        ChangeKind::Delete => DEV_NULL.to_string(),
        _ => format!("b/{}", fd.path),
    };
    out.push_str(&format!("--- {}\n", old_label));
    out.push_str(&format!("+++ {}\n", new_label));
    for h in &fd.hunks {
        out.push_str(&format!(
            "@@ -{},{} +{},{} @@\n",
            h.old_start, h.old_len, h.new_start, h.new_len
        ));
        for line in &h.lines {
            let prefix = match line.kind {
                LineKind::Context => ' ',
                LineKind::Add => '+',
                LineKind::Remove => '-',
            };
            render_body_line(&mut out, prefix, &line.text);
        }
    }
    out
}

/// Renders a whole patch in the order given.
pub fn render_patch(diffs: &[FileDiff]) -> String {
    diffs.iter().map(render_file_diff).collect()
}

fn strip_label(raw: &str) -> String {
    // Drop a trailing tab-separated timestamp, then the a/ or b/ prefix.
    let path = raw.split('\t').next().unwrap_or(raw).trim_end();
    if path == DEV_NULL {
        return path.to_string();
    }
    path.strip_prefix("a/")
        .or_else(|| path.strip_prefix("b/"))
        .unwrap_or(path)
        .to_string()
}

fn parse_hunk_header(line: &str, line_no: usize) -> Result<(usize, usize, usize, usize), DiffError> {
    let err = || DiffError::BadHunkHeader {
        line: line_no,
        text: line.to_string(),
    };
    let rest = line.strip_prefix("@@ -").ok_or_else(err)?;
    let end = rest.find(" @@").ok_or_else(err)?;
    let ranges = &rest[..end];
    let mut parts = ranges.splitn(2, " +");
    let old_part = parts.next().ok_or_else(err)?;
    let new_part = parts.next().ok_or_else(err)?;
    let parse_range = |s: &str| -> Result<(usize, usize), DiffError> {
        let mut it = s.splitn(2, ',');
        let start = it
            .next()
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(err)?;
        let len = match it.next() {
            Some(v) => v.parse::<usize>().map_err(|_| err())?,
            None => 1,
        };
        Ok((start, len))
    };
    let (os, ol) = parse_range(old_part)?;
    let (ns, nl) = parse_range(new_part)?;
    Ok((os, ol, ns, nl))
}

fn is_preamble(line: &str) -> bool {
    line.starts_with("diff ")
        || line.starts_with("index ")
        || line.starts_with("new file mode")
        || line.starts_with("deleted file mode")
        || line.starts_with("old mode")
        || line.starts_with("new mode")
        || line.starts_with("similarity index")
        || line.starts_with("rename from")
        || line.starts_with("rename to")
        || line.is_empty()
}

/// Parses a unified diff into per-file diffs. Empty input parses to an
/// empty list.
pub fn parse_patch(text: &str) -> Result<Vec<FileDiff>, DiffError> {
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    let mut diffs: Vec<FileDiff> = Vec::new();
    let mut i = 0;

    while i < lines.len() {
        let raw = lines[i];
        let line = raw.strip_suffix('\n').unwrap_or(raw);
        if let Some(source) = line.strip_prefix("--- ") {
            let source = strip_label(source);
            let target_line_no = i + 2;
            let target_raw = lines.get(i + 1).ok_or(DiffError::Malformed {
                line: target_line_no,
                reason: "expected +++ line after ---".to_string(),
            })?;
            let target_line = target_raw.strip_suffix('\n').unwrap_or(target_raw);
            let target = target_line
                .strip_prefix("+++ ")
                .map(strip_label)
                .ok_or(DiffError::Malformed {
                    line: target_line_no,
                    reason: "expected +++ line after ---".to_string(),
                })?;
            i += 2;

            let kind = if source == DEV_NULL {
                ChangeKind::Create
            } else if target == DEV_NULL {
                ChangeKind::Delete
            } else {
                ChangeKind::Modify
            };
            let path = if kind == ChangeKind::Delete {
                source
            } else {
                target
            };

            let mut hunks = Vec::new();
            while i < lines.len() {
                let hraw = lines[i];
                let hline = hraw.strip_suffix('\n').unwrap_or(hraw);
                if !hline.starts_with("@@") {
                    break;
                }
                let header_line_no = i + 1;
                let (old_start, old_len, new_start, new_len) =
                    parse_hunk_header(hline, header_line_no)?;
                i += 1;
                let mut body = Vec::new();
                let mut seen_old = 0;
                let mut seen_new = 0;
                while seen_old < old_len || seen_new < new_len {
                    let braw = lines.get(i).ok_or(DiffError::Malformed {
                        line: i + 1,
                        reason: "hunk shorter than its header declares".to_string(),
                    })?;
                    let content_owned;
                    let (kind, content) = match braw.chars().next() {
                        Some(' ') => (LineKind::Context, &braw[1..]),
                        Some('+') => (LineKind::Add, &braw[1..]),
                        Some('-') => (LineKind::Remove, &braw[1..]),
                        Some('\n') => {
                            // Tolerated: an empty context line emitted bare.
                            content_owned = "\n".to_string();
                            (LineKind::Context, content_owned.as_str())
                        }
                        Some('\\') => {
                            // No-newline marker: strip the newline we attached
                            // to the previous body line.
                            if let Some(prev) = body.last_mut() {
                                let hl: &mut HunkLine = prev;
                                if hl.text.ends_with('\n') {
                                    hl.text.pop();
                                }
                            }
                            i += 1;
                            continue;
                        }
                        _ => {
                            return Err(DiffError::Malformed {
                                line: i + 1,
                                reason: "unexpected line inside hunk".to_string(),
                            })
                        }
                    };
                    match kind {
                        LineKind::Context => {
                            seen_old += 1;
                            seen_new += 1;
                        }
                        LineKind::Add => seen_new += 1,
                        LineKind::Remove => seen_old += 1,
                    }
                    if seen_old > old_len || seen_new > new_len {
                        return Err(DiffError::Malformed {
                            line: i + 1,
                            reason: "hunk longer than its header declares".to_string(),
                        });
                    }
                    body.push(HunkLine {
                        kind,
                        text: content.to_string(),
                    });
                    i += 1;
                }
                // Trailing no-newline marker for the last body line.
                if let Some(braw) = lines.get(i) {
                    if braw.starts_with('\\') {
                        if let Some(prev) = body.last_mut() {
                            if prev.text.ends_with('\n') {
                                prev.text.pop();
                            }
                        }
                        i += 1;
                    }
                }
                hunks.push(Hunk {
                    old_start,
                    old_len,
                    new_start,
                    new_len,
                    lines: body,
                });
            }
            diffs.push(FileDiff {
                path,
                kind,
                hunks,
                is_test_file: false,
            });
        } else if line.starts_with("@@") {
            return Err(DiffError::Malformed {
                line: i + 1,
                reason: "hunk header outside of a file diff".to_string(),
            });
        } else if is_preamble(line) {
            i += 1;
        } else {
            return Err(DiffError::Malformed {
                line: i + 1,
                reason: format!("unrecognized line: {}", line),
            });
        }
    }
    Ok(diffs)
}

/// Applies one file diff to the file's current content (`None` = absent).
/// Returns the new content, or `None` when the file is deleted.
pub fn apply_file_diff(
    old: Option<&str>,
    fd: &FileDiff,
) -> Result<Option<String>, DiffError> {
    match fd.kind {
        ChangeKind::Create => {
            if old.is_some() {
                return Err(DiffError::BadTarget {
                    action: "create",
                    path: fd.path.clone(),
                    reason: "file already exists".to_string(),
                });
            }
            let rebuilt = apply_hunks("", fd)?;
            Ok(Some(rebuilt))
        }
        ChangeKind::Delete => {
            let content = old.ok_or(DiffError::BadTarget {
                action: "delete",
                path: fd.path.clone(),
                reason: "file does not exist".to_string(),
            })?;
            let rebuilt = apply_hunks(content, fd)?;
            if !rebuilt.is_empty() {
                return Err(DiffError::ApplyFailed {
                    path: fd.path.clone(),
                    line: 0,
                    reason: "delete diff does not cover the whole file".to_string(),
                });
            }
            Ok(None)
        }
        ChangeKind::Modify => {
            let content = old.ok_or(DiffError::BadTarget {
                action: "modify",
                path: fd.path.clone(),
                reason: "file does not exist".to_string(),
            })?;
            Ok(Some(apply_hunks(content, fd)?))
        }
    }
}

fn apply_hunks(content: &str, fd: &FileDiff) -> Result<String, DiffError> {
    let old_lines = split_lines_inclusive(content);
    let mut out = String::new();
    let mut cursor = 0usize;
    for h in &fd.hunks {
        let hstart = if h.old_len == 0 {
            h.old_start
        } else {
            h.old_start.saturating_sub(1)
        };
        if hstart < cursor || hstart > old_lines.len() {
            return Err(DiffError::ApplyFailed {
                path: fd.path.clone(),
                line: h.old_start,
                reason: "hunk start out of range".to_string(),
            });
        }
        for line in &old_lines[cursor..hstart] {
            out.push_str(line);
        }
        cursor = hstart;
        for line in &h.lines {
            match line.kind {
                LineKind::Context | LineKind::Remove => {
                    let actual = old_lines.get(cursor).copied().unwrap_or("<end of file>");
                    if old_lines.get(cursor).copied() != Some(line.text.as_str()) {
                        return Err(DiffError::ApplyFailed {
                            path: fd.path.clone(),
                            line: cursor + 1,
                            reason: format!(
                                "expected {:?}, found {:?}",
                                line.text.trim_end_matches('\n'),
                                actual.trim_end_matches('\n')
                            ),
                        });
                    }
                    if line.kind == LineKind::Context {
                        out.push_str(&line.text);
                    }
                    cursor += 1;
                }
                LineKind::Add => out.push_str(&line.text),
            }
        }
    }
    for line in &old_lines[cursor..] {
        out.push_str(line);
    }
    Ok(out)
}
