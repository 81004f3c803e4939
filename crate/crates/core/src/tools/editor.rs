//! File editing tool: create, view, insert, str_replace.

use std::fs;
use std::io;
use std::path::Path;

use crate::model::ErrorCategory;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EditError {
    pub category: ErrorCategory,
    pub detail: String,
}

impl EditError {
    fn new(category: ErrorCategory, detail: impl Into<String>) -> Self {
        EditError {
            category,
            detail: detail.into(),
        }
    }
}

fn read_text(path: &Path, shown: &str) -> Result<String, EditError> {
    match fs::read(path) {
        Ok(bytes) => String::from_utf8(bytes).map_err(|_| EditError::new(ErrorCategory::Io, format!("{shown} is not a UTF-8 text file"))),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(EditError::new(ErrorCategory::FileNotFound, format!("{shown} does not exist"))),
        Err(e) if path.is_dir() => Err(EditError::new(ErrorCategory::FileNotFound, format!("{shown} is a directory: {e}"))),
        Err(e) => Err(EditError::new(ErrorCategory::Io, format!("{shown}: {e}"))),
    }
}

fn write_text(path: &Path, shown: &str, content: &str) -> Result<(), EditError> {
    fs::write(path, content).map_err(|e| EditError::new(ErrorCategory::Io, format!("{shown}: {e}")))
}

/// Number of (possibly overlapping) occurrences of `needle` in `haystack`.
pub fn count_occurrences(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    let mut count = 0;
    let mut from = 0;
    while let Some(found) = haystack[from..].find(needle) {
        count += 1;
        let at = from + found;
        from = at + haystack[at..].chars().next().map_or(1, char::len_utf8);
        if from > haystack.len() {
            break;
        }
    }
    count
}

pub fn create(path: &Path, shown: &str, content: &str) -> Result<String, EditError> {
    if fs::symlink_metadata(path).is_ok() {
        return Err(EditError::new(ErrorCategory::FileExists, format!("{shown} already exists")));
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| EditError::new(ErrorCategory::Io, format!("{shown}: {e}")))?;
    }
    write_text(path, shown, content)?;
    Ok(format!("created {shown} ({} lines)", content.lines().count()))
}

/// Lines `start..=end` (1-based) with line-number prefixes; `end` is clipped to EOF.
pub fn view(path: &Path, shown: &str, start: Option<usize>, end: Option<usize>) -> Result<String, EditError> {
    let text = read_text(path, shown)?;
    let lines: Vec<&str> = text.lines().collect();
    let start = start.unwrap_or(1);
    let end = end.unwrap_or(lines.len().max(start));
    if start < 1 || start > end {
        return Err(EditError::new(ErrorCategory::BadRange, format!("invalid range {start}..{end}")));
    }
    if start > lines.len().max(1) {
        return Err(EditError::new(
            ErrorCategory::BadRange,
            format!("start line {start} is past the end of {shown} ({} lines)", lines.len()),
        ));
    }
    let end = end.min(lines.len());
    let mut out = String::new();
    for (i, line) in lines.iter().enumerate().take(end).skip(start - 1) {
        out.push_str(&format!("{:>6}\t{}\n", i + 1, line));
    }
    Ok(out)
}

/// Inserts `content` after line `line` (0 prepends).
pub fn insert(path: &Path, shown: &str, line: usize, content: &str) -> Result<String, EditError> {
    let text = read_text(path, shown)?;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    if line > lines.len() {
        return Err(EditError::new(
            ErrorCategory::BadRange,
            format!("line {line} is past the end of {shown} ({} lines)", lines.len()),
        ));
    }
    let mut block = content.to_string();
    if !block.ends_with('\n') {
        block.push('\n');
    }
    let mut out = String::with_capacity(text.len() + block.len() + 1);
    for l in &lines[..line] {
        out.push_str(l);
    }
    if !out.is_empty() && !out.ends_with('\n') {
        out.push('\n');
    }
    out.push_str(&block);
    for l in &lines[line..] {
        out.push_str(l);
    }
    write_text(path, shown, &out)?;
    Ok(format!("inserted {} line(s) after line {line} of {shown}", block.lines().count()))
}

/// Replaces `old_str` with `new_str` iff it occurs exactly once.
pub fn str_replace(path: &Path, shown: &str, old_str: &str, new_str: &str) -> Result<String, EditError> {
    if old_str.is_empty() {
        return Err(EditError::new(ErrorCategory::ProtocolError, "old_str must be non-empty"));
    }
    let text = read_text(path, shown)?;
    match count_occurrences(&text, old_str) {
        0 => Err(EditError::new(ErrorCategory::OldStrNotFound, format!("old_str not found in {shown}"))),
        1 => {
            let updated = text.replacen(old_str, new_str, 1);
            write_text(path, shown, &updated)?;
            Ok(format!("replaced 1 occurrence in {shown}"))
        }
        n => Err(EditError::new(
            ErrorCategory::OldStrAmbiguous,
            format!("old_str occurs {n} times in {shown}; it must occur exactly once"),
        )),
    }
}
