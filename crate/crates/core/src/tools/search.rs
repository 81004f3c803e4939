//! Recursive regex search over a workspace tree.

use std::fs;
use std::path::{Path, PathBuf};

use globset::{Glob, GlobMatcher};
use regex::Regex;
use walkdir::WalkDir;

use crate::model::SearchMatch;
use crate::par;

pub const DEFAULT_MAX_RESULTS: usize = 1000;
/// Bytes inspected for a NUL when deciding whether a file is binary.
pub const BINARY_SNIFF_LEN: usize = 8 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchOutcome {
    pub matches: Vec<SearchMatch>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SearchError {
    #[error("invalid pattern: {0}")]
    BadPattern(String),
    #[error("invalid path filter: {0}")]
    BadFilter(String),
}

pub struct Query {
    regex: Regex,
    filter: Option<PathFilter>,
    max_results: usize,
}

struct PathFilter {
    matcher: GlobMatcher,
    /// Filters without a `/` match against the file name only.
    name_only: bool,
}

impl Query {
    pub fn new(pattern: &str, path_filter: Option<&str>, max_results: Option<usize>) -> Result<Self, SearchError> {
        let regex = Regex::new(pattern).map_err(|e| SearchError::BadPattern(e.to_string()))?;
        let filter = path_filter
            .map(|glob| {
                Glob::new(glob)
                    .map(|g| PathFilter {
                        matcher: g.compile_matcher(),
                        name_only: !glob.contains('/'),
                    })
                    .map_err(|e| SearchError::BadFilter(e.to_string()))
            })
            .transpose()?;
        Ok(Query {
            regex,
            filter,
            max_results: max_results.unwrap_or(DEFAULT_MAX_RESULTS),
        })
    }

    fn accepts(&self, rel: &str) -> bool {
        match &self.filter {
            None => true,
            Some(f) if f.name_only => f.matcher.is_match(rel.rsplit('/').next().unwrap_or(rel)),
            Some(f) => f.matcher.is_match(rel),
        }
    }
}

/// Regular files under `root`, `.git` excluded, as (absolute, relative) pairs.
pub fn candidate_files(root: &Path) -> Vec<(PathBuf, String)> {
    WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !(e.depth() == 1 && e.file_name() == ".git"))
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(root).unwrap_or(e.path()).to_string_lossy().into_owned();
            (e.path().to_path_buf(), rel)
        })
        .collect()
}

fn scan_file(query: &Query, path: &Path, rel: &str) -> Vec<SearchMatch> {
    let Ok(bytes) = fs::read(path) else {
        return Vec::new();
    };
    if bytes[..bytes.len().min(BINARY_SNIFF_LEN)].contains(&0) {
        return Vec::new();
    }
    let text = String::from_utf8_lossy(&bytes);
    let mut out = Vec::new();
    for (i, raw) in text.split_terminator('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if query.regex.is_match(line) {
            out.push(SearchMatch {
                path: rel.to_string(),
                line_number: i + 1,
                line_text: line.to_string(),
            });
        }
    }
    out
}

fn finish(query: &Query, per_file: Vec<Vec<SearchMatch>>) -> SearchOutcome {
    let mut matches: Vec<SearchMatch> = per_file.into_iter().flatten().collect();
    matches.sort_by(|a, b| a.path.cmp(&b.path).then(a.line_number.cmp(&b.line_number)));
    let truncated = matches.len() > query.max_results;
    matches.truncate(query.max_results);
    SearchOutcome { matches, truncated }
}

fn selected(query: &Query, root: &Path) -> Vec<(PathBuf, String)> {
    candidate_files(root).into_iter().filter(|(_, rel)| query.accepts(rel)).collect()
}

/// Searches every non-binary file, fanning out over files when the
/// `parallel` feature is on.
pub fn search(root: &Path, query: &Query) -> SearchOutcome {
    let files = selected(query, root);
    let per_file = par::map(&files, |(path, rel)| scan_file(query, path, rel));
    finish(query, per_file)
}

pub fn search_sequential(root: &Path, query: &Query) -> SearchOutcome {
    let files = selected(query, root);
    let per_file = par::map_sequential(&files, |(path, rel)| scan_file(query, path, rel));
    finish(query, per_file)
}
