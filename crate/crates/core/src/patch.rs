//! Patch structure, test-file classification, identifier normalization,
//! and the size metrics used by patch selection.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diff::{self, DiffError, FileDiff};

/// Test-file conventions applied when a bundle does not name its own.
pub const DEFAULT_TEST_FILE_PATTERNS: [&str; 4] = ["*_test.*", "*Test.*", "test_*.*", "tests"];

#[derive(Debug, Error)]
pub enum PatchError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("failed to read `{path}`: {source}")]
    Read {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// A parsed unidiff together with its raw text and originating trajectory.
#[derive(Debug, Clone)]
pub struct Patch {
    pub file_diffs: Vec<FileDiff>,
    pub origin: String,
    pub raw: String,
}

impl Patch {
    /// Parses unidiff text; file test classification starts out false.
    pub fn parse(text: &str) -> Result<Self, DiffError> {
        let file_diffs = diff::parse_patch(text)?;
        Ok(Patch {
            file_diffs,
            origin: String::new(),
            raw: text.to_string(),
        })
    }

    /// Parses and classifies each file diff against `patterns`.
    pub fn parse_classified(text: &str, patterns: &[String]) -> Result<Self, DiffError> {
        let mut patch = Self::parse(text)?;
        patch.classify(patterns);
        Ok(patch)
    }

    pub fn classify(&mut self, patterns: &[String]) {
        for fd in &mut self.file_diffs {
            fd.is_test_file = classify_test_file(&fd.path, patterns);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.file_diffs.is_empty()
    }

    pub fn has_test(&self) -> bool {
        self.file_diffs.iter().any(|fd| fd.is_test_file)
    }

    pub fn has_non_test(&self) -> bool {
        self.file_diffs.iter().any(|fd| !fd.is_test_file)
    }

    pub fn test_diffs(&self) -> Vec<&FileDiff> {
        self.file_diffs.iter().filter(|fd| fd.is_test_file).collect()
    }

    pub fn non_test_diffs(&self) -> Vec<&FileDiff> {
        self.file_diffs.iter().filter(|fd| !fd.is_test_file).collect()
    }

    /// Lines beginning with `+` or `-` in the diff body, excluding file
    /// headers.
    pub fn unidiff_line_count(&self) -> usize {
        self.file_diffs
            .iter()
            .map(|fd| fd.added_line_count() + fd.removed_line_count())
            .sum()
    }

    /// Paths touched by the patch, in diff order.
    pub fn paths(&self) -> Vec<&str> {
        self.file_diffs.iter().map(|fd| fd.path.as_str()).collect()
    }
}

/// Minimal `*`/`?` glob match over a whole string.
pub fn glob_match_str(pattern: &str, text: &str) -> bool {
    glob_match(pattern, text)
}

/// Minimal `*`/`?` glob match over a single path segment.
fn glob_match(pattern: &str, text: &str) -> bool {
    fn inner(p: &[char], t: &[char]) -> bool {
        match p.split_first() {
            None => t.is_empty(),
            Some(('*', rest)) => {
                (0..=t.len()).any(|skip| inner(rest, &t[skip..]))
            }
            Some(('?', rest)) => !t.is_empty() && inner(rest, &t[1..]),
            Some((c, rest)) => t.first() == Some(c) && inner(rest, &t[1..]),
        }
    }
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    inner(&p, &t)
}

/// True iff the file name or any path segment matches any pattern.
pub fn classify_test_file(path: &str, patterns: &[String]) -> bool {
    path.split('/')
        .filter(|seg| !seg.is_empty())
        .any(|seg| patterns.iter().any(|p| glob_match(p, seg)))
}

pub fn default_test_patterns() -> Vec<String> {
    DEFAULT_TEST_FILE_PATTERNS
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Read access to the pre-patch tree a patch applies to.
pub trait FileSource {
    /// Returns the file content, or `None` when the file does not exist.
    fn read_file(&self, rel_path: &str) -> Result<Option<String>, PatchError>;
}

impl FileSource for &Path {
    fn read_file(&self, rel_path: &str) -> Result<Option<String>, PatchError> {
        let full = self.join(rel_path);
        if !full.is_file() {
            return Ok(None);
        }
        fs::read_to_string(&full).map(Some).map_err(|e| PatchError::Read {
            path: rel_path.to_string(),
            source: e,
        })
    }
}

/// Identifier-normalized digests of a patch, used to group patches that
/// share an implementation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedPatch {
    /// Digest over the normalized post-application content of every
    /// changed file.
    pub full_hash: String,
    /// Same digest computed over non-test files only, with its own
    /// identifier map.
    pub fix_hash: String,
    pub has_test: bool,
    pub identifier_map_size: usize,
}

struct IdentifierMap {
    map: std::collections::HashMap<String, usize>,
}

impl IdentifierMap {
    fn new() -> Self {
        IdentifierMap {
            map: std::collections::HashMap::new(),
        }
    }

    fn index_of(&mut self, token: &str) -> usize {
        let next = self.map.len();
        *self.map.entry(token.to_string()).or_insert(next)
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Whitespace- and identifier-normalizes one file's content: runs of
/// spaces/tabs collapse to a single space, trailing whitespace is
/// stripped, blank lines are dropped, and each distinct identifier token
/// is replaced by `ID<k>` in order of first occurrence.
pub fn normalize_text(content: &str, ids: &mut impl FnMut(&str) -> usize) -> String {
    let mut out = String::new();
    for line in content.lines() {
        let mut collapsed = String::new();
        let mut in_ws = false;
        for c in line.chars() {
            if c == ' ' || c == '\t' {
                if !in_ws {
                    collapsed.push(' ');
                    in_ws = true;
                }
            } else {
                collapsed.push(c);
                in_ws = false;
            }
        }
        let trimmed = collapsed.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        let mut rewritten = String::new();
        let chars: Vec<char> = trimmed.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            if is_ident_start(chars[i]) {
                let start = i;
                while i < chars.len() && is_ident_continue(chars[i]) {
                    i += 1;
                }
                let token: String = chars[start..i].iter().collect();
                rewritten.push_str(&format!("ID{}", ids(&token)));
            } else {
                rewritten.push(chars[i]);
                i += 1;
            }
        }
        out.push_str(&rewritten);
        out.push('\n');
    }
    out
}

fn hash_scope(
    patch: &Patch,
    source: &impl FileSource,
    include: impl Fn(&FileDiff) -> bool,
) -> Result<(String, usize), PatchError> {
    let mut diffs: Vec<&FileDiff> = patch.file_diffs.iter().filter(|fd| include(fd)).collect();
    diffs.sort_by(|a, b| a.path.cmp(&b.path));

    let mut ids = IdentifierMap::new();
    let mut hasher = Sha256::new();
    for fd in diffs {
        let old = source.read_file(&fd.path)?;
        let applied = diff::apply_file_diff(old.as_deref(), fd)?;
        hasher.update(fd.path.as_bytes());
        hasher.update([0u8]);
        match applied {
            Some(content) => {
                let normalized = normalize_text(&content, &mut |tok| ids.index_of(tok));
                hasher.update(normalized.as_bytes());
            }
            None => hasher.update(b"<deleted>"),
        }
        hasher.update([0u8]);
    }
    Ok((hex(&hasher.finalize()), ids.map.len()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{:02x}", b)).collect()
}

/// Normalizes a patch against the pre-patch tree it applies to.
pub fn normalize_patch(
    patch: &Patch,
    source: &impl FileSource,
) -> Result<NormalizedPatch, PatchError> {
    let (full_hash, identifier_map_size) = hash_scope(patch, source, |_| true)?;
    let (fix_hash, _) = hash_scope(patch, source, |fd| !fd.is_test_file)?;
    Ok(NormalizedPatch {
        full_hash,
        fix_hash,
        has_test: patch.has_test(),
        identifier_map_size,
    })
}

/// The two patch sizes used by selectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeMetrics {
    /// `+`/`-` body lines in the diff text.
    pub unidiff_line_count: usize,
    /// Total line count, after application, of every file the patch
    /// touches.
    pub post_apply_line_count: usize,
}

pub fn patch_size_metrics(
    patch: &Patch,
    source: &impl FileSource,
) -> Result<SizeMetrics, PatchError> {
    let mut post_apply = 0usize;
    for fd in &patch.file_diffs {
        let old = source.read_file(&fd.path)?;
        if let Some(content) = diff::apply_file_diff(old.as_deref(), fd)? {
            post_apply += diff::split_lines_inclusive(&content).len();
        }
    }
    Ok(SizeMetrics {
        unidiff_line_count: patch.unidiff_line_count(),
        post_apply_line_count: post_apply,
    })
}
