//! Unified diff model.
//!
//! Parses the output of `git diff` (and plain `diff -u`) into files, hunks and
//! line operations, serializes back to a normalized form and applies a file
//! diff to in-memory text. The normalized form is the one git itself emits,
//! so a diff produced by git survives a parse/serialize cycle byte for byte.
//! Paths are stored without their `a/` and `b/` prefixes.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const DEV_NULL: &str = "/dev/null";
const NO_NEWLINE_MARKER: &str = "\\ No newline at end of file";

/// True iff the final component of a repository-relative path begins with
/// the literal, case-sensitive prefix `test`. Directory names never count.
pub fn is_test_path(path: &str) -> bool {
    path.rsplit('/').next().is_some_and(|name| name.starts_with("test"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedKind {
    MissingHeaders,
    BadHeader,
    HunkCountMismatch,
    TruncatedHunk,
    UnexpectedLine,
    BinaryHunk,
    NotUtf8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiffError {
    #[error("malformed diff ({kind:?}) at line {line}: {detail}")]
    Malformed {
        kind: MalformedKind,
        line: usize,
        detail: String,
    },
}

impl DiffError {
    fn at(kind: MalformedKind, line: usize, detail: impl Into<String>) -> Self {
        DiffError::Malformed {
            kind,
            line: line + 1,
            detail: detail.into(),
        }
    }

    pub fn kind(&self) -> MalformedKind {
        match self {
            DiffError::Malformed { kind, .. } => *kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineOp {
    Context,
    Add,
    Remove,
}

impl LineOp {
    fn prefix(self) -> char {
        match self {
            LineOp::Context => ' ',
            LineOp::Add => '+',
            LineOp::Remove => '-',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HunkLine {
    pub op: LineOp,
    /// Line content without the trailing newline.
    pub text: String,
    /// Set when the line is followed by `\ No newline at end of file`.
    pub no_newline: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    /// Text after the closing `@@` (function context), without the separating space.
    pub section: String,
    pub lines: Vec<HunkLine>,
}

impl Hunk {
    pub fn additions(&self) -> usize {
        self.lines.iter().filter(|l| l.op == LineOp::Add).count()
    }

    pub fn deletions(&self) -> usize {
        self.lines.iter().filter(|l| l.op == LineOp::Remove).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDiff {
    /// `None` when the source is `/dev/null` (file creation).
    pub old_path: Option<String>,
    /// `None` when the target is `/dev/null` (file deletion).
    pub new_path: Option<String>,
    /// Whether the entry was introduced by a `diff --git` line.
    pub git: bool,
    /// Extended git header lines (`index`, mode lines, ...) kept verbatim.
    pub extended: Vec<String>,
    /// The binary marker line, if git reported a binary change.
    pub binary: Option<String>,
    pub hunks: Vec<Hunk>,
}

impl FileDiff {
    /// The path the file lives at after the change (or before, for deletions).
    pub fn path(&self) -> &str {
        self.new_path
            .as_deref()
            .or(self.old_path.as_deref())
            .unwrap_or_default()
    }

    /// Every distinct path this entry touches.
    pub fn touched_paths(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(2);
        if let Some(p) = self.old_path.as_deref() {
            out.push(p);
        }
        if let Some(p) = self.new_path.as_deref() {
            if !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }

    pub fn is_test_file(&self) -> bool {
        self.touched_paths().into_iter().any(is_test_path)
    }

    pub fn is_creation(&self) -> bool {
        self.old_path.is_none()
    }

    pub fn is_deletion(&self) -> bool {
        self.new_path.is_none()
    }

    /// File mode requested for the resulting file, from `new file mode` or `new mode`.
    pub fn new_mode(&self) -> Option<u32> {
        self.extended.iter().find_map(|l| {
            l.strip_prefix("new file mode ")
                .or_else(|| l.strip_prefix("new mode "))
                .and_then(|m| u32::from_str_radix(m.trim(), 8).ok())
        })
    }

    pub fn changed_lines(&self) -> usize {
        self.hunks.iter().map(|h| h.additions() + h.deletions()).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diff {
    pub files: Vec<FileDiff>,
}

impl Diff {
    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn paths(&self) -> Vec<&str> {
        self.files.iter().map(FileDiff::path).collect()
    }

    pub fn hunk_count(&self) -> usize {
        self.files.iter().map(|f| f.hunks.len()).sum()
    }

    /// Added plus removed lines across all files.
    pub fn changed_lines(&self) -> usize {
        self.files.iter().map(FileDiff::changed_lines).sum()
    }

    pub fn has_binary(&self) -> bool {
        self.files.iter().any(|f| f.binary.is_some())
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Diff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for file in &self.files {
            write_file(f, file)?;
        }
        Ok(())
    }
}

fn write_file(f: &mut fmt::Formatter<'_>, file: &FileDiff) -> fmt::Result {
    let old = file.old_path.as_deref().or(file.new_path.as_deref()).unwrap_or_default();
    let new = file.new_path.as_deref().or(file.old_path.as_deref()).unwrap_or_default();
    if file.git {
        writeln!(f, "diff --git {} {}", quote_path("a/", old), quote_path("b/", new))?;
    }
    for line in &file.extended {
        writeln!(f, "{line}")?;
    }
    if let Some(marker) = &file.binary {
        writeln!(f, "{marker}")?;
    }
    if !file.hunks.is_empty() || !file.git {
        match &file.old_path {
            Some(p) => writeln!(f, "--- {}", quote_path("a/", p))?,
            None => writeln!(f, "--- {DEV_NULL}")?,
        }
        match &file.new_path {
            Some(p) => writeln!(f, "+++ {}", quote_path("b/", p))?,
            None => writeln!(f, "+++ {DEV_NULL}")?,
        }
    }
    for hunk in &file.hunks {
        write!(f, "@@ -{}", hunk.old_start)?;
        if hunk.old_len != 1 {
            write!(f, ",{}", hunk.old_len)?;
        }
        write!(f, " +{}", hunk.new_start)?;
        if hunk.new_len != 1 {
            write!(f, ",{}", hunk.new_len)?;
        }
        write!(f, " @@")?;
        if !hunk.section.is_empty() {
            write!(f, " {}", hunk.section)?;
        }
        writeln!(f)?;
        for line in &hunk.lines {
            writeln!(f, "{}{}", line.op.prefix(), line.text)?;
            if line.no_newline {
                writeln!(f, "{NO_NEWLINE_MARKER}")?;
            }
        }
    }
    Ok(())
}

fn needs_quoting(path: &str) -> bool {
    path.chars().any(|c| matches!(c, '"' | '\\' | '\t' | '\n') || c.is_control())
}

fn quote_path(prefix: &str, path: &str) -> String {
    if !needs_quoting(path) {
        return format!("{prefix}{path}");
    }
    let mut out = String::from("\"");
    out.push_str(prefix);
    for c in path.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c if c.is_control() => out.push_str(&format!("\\{:03o}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Parses a C-style quoted path as emitted by git. Returns the unquoted
/// string and the remainder of the input after the closing quote.
fn unquote(s: &str) -> Option<(String, &str)> {
    let body = s.strip_prefix('"')?;
    let mut bytes = Vec::new();
    let mut chars = body.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => {
                let text = String::from_utf8(bytes).ok()?;
                return Some((text, &body[i + 1..]));
            }
            '\\' => {
                let (_, esc) = chars.next()?;
                match esc {
                    'n' => bytes.push(b'\n'),
                    't' => bytes.push(b'\t'),
                    'r' => bytes.push(b'\r'),
                    '"' => bytes.push(b'"'),
                    '\\' => bytes.push(b'\\'),
                    'a' => bytes.push(7),
                    'b' => bytes.push(8),
                    'f' => bytes.push(12),
                    'v' => bytes.push(11),
                    '0'..='7' => {
                        let mut v = esc.to_digit(8)?;
                        for _ in 0..2 {
                            let (_, d) = chars.next()?;
                            v = v * 8 + d.to_digit(8)?;
                        }
                        bytes.push(u8::try_from(v).ok()?);
                    }
                    _ => return None,
                }
            }
            c => {
                let mut buf = [0u8; 4];
                bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    None
}

fn strip_side_prefix(path: &str) -> String {
    path.strip_prefix("a/")
        .or_else(|| path.strip_prefix("b/"))
        .unwrap_or(path)
        .to_string()
}

/// Parses the path from a `---`/`+++` header line body. Returns `None` for `/dev/null`.
fn header_path(raw: &str) -> Option<Option<String>> {
    let raw = raw.trim_end_matches('\r');
    let path = if raw.starts_with('"') {
        unquote(raw)?.0
    } else {
        raw.split('\t').next().unwrap_or(raw).to_string()
    };
    if path.is_empty() {
        return None;
    }
    if path == DEV_NULL {
        return Some(None);
    }
    Some(Some(strip_side_prefix(&path)))
}

fn git_line_paths(rest: &str) -> Option<(String, String)> {
    if rest.starts_with('"') {
        let (old, tail) = unquote(rest)?;
        let tail = tail.strip_prefix(' ')?;
        let new = if tail.starts_with('"') {
            unquote(tail)?.0
        } else {
            tail.to_string()
        };
        return Some((strip_side_prefix(&old), strip_side_prefix(&new)));
    }
    // Unquoted: "a/<p> b/<p>". Prefer the symmetric split, which is
    // unambiguous even when the path contains " b/".
    if rest.len() > 5 && (rest.len() - 5).is_multiple_of(2) {
        let half = (rest.len() - 5) / 2;
        if rest.is_char_boundary(half + 2) && rest.is_char_boundary(half + 3) {
            let (a, b) = (&rest[..half + 2], &rest[half + 3..]);
            if a.starts_with("a/") && b.starts_with("b/") && a[2..] == b[2..] && &rest[half + 2..half + 3] == " " {
                return Some((a[2..].to_string(), b[2..].to_string()));
            }
        }
    }
    let split = rest.find(" b/").or_else(|| rest.find(' '))?;
    let (old, new) = (&rest[..split], &rest[split + 1..]);
    let new = if new.starts_with('"') { unquote(new)?.0 } else { new.to_string() };
    Some((strip_side_prefix(old), strip_side_prefix(&new)))
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    match s.split_once(',') {
        Some((start, len)) => Some((start.parse().ok()?, len.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_hunk_header(line: &str) -> Option<(usize, usize, usize, usize, String)> {
    let rest = line.strip_prefix("@@ -")?;
    let (old, rest) = rest.split_once(" +")?;
    let (new, rest) = rest.split_once(" @@")?;
    let (old_start, old_len) = parse_range(old)?;
    let (new_start, new_len) = parse_range(new)?;
    let section = rest.strip_prefix(' ').unwrap_or(rest).to_string();
    Some((old_start, old_len, new_start, new_len, section))
}

const EXTENDED_PREFIXES: &[&str] = &[
    "index ",
    "old mode ",
    "new mode ",
    "new file mode ",
    "deleted file mode ",
    "similarity index ",
    "dissimilarity index ",
    "rename from ",
    "rename to ",
    "copy from ",
    "copy to ",
];

struct Parser<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn err(&self, kind: MalformedKind, detail: impl Into<String>) -> DiffError {
        DiffError::at(kind, self.pos, detail)
    }

    fn parse(mut self) -> Result<Diff, DiffError> {
        let mut files = Vec::new();
        while let Some(line) = self.peek() {
            if let Some(rest) = line.strip_prefix("diff --git ") {
                files.push(self.parse_git_file(rest)?);
            } else if line.starts_with("--- ") {
                let mut file = FileDiff {
                    old_path: None,
                    new_path: None,
                    git: false,
                    extended: Vec::new(),
                    binary: None,
                    hunks: Vec::new(),
                };
                self.parse_file_headers(&mut file)?;
                self.parse_hunks(&mut file)?;
                files.push(file);
            } else if line.starts_with("@@") {
                return Err(self.err(MalformedKind::MissingHeaders, "hunk without file headers"));
            } else {
                return Err(self.err(MalformedKind::UnexpectedLine, format!("unexpected line {line:?}")));
            }
        }
        Ok(Diff { files })
    }

    fn parse_git_file(&mut self, rest: &str) -> Result<FileDiff, DiffError> {
        let (old, new) = git_line_paths(rest.trim_end_matches('\r'))
            .ok_or_else(|| self.err(MalformedKind::BadHeader, "unparseable diff --git line"))?;
        self.pos += 1;
        let mut file = FileDiff {
            old_path: Some(old),
            new_path: Some(new),
            git: true,
            extended: Vec::new(),
            binary: None,
            hunks: Vec::new(),
        };
        while let Some(line) = self.peek() {
            if let Some(p) = EXTENDED_PREFIXES.iter().find(|p| line.starts_with(**p)) {
                match *p {
                    "new file mode " => file.old_path = None,
                    "deleted file mode " => file.new_path = None,
                    "rename from " | "copy from " => file.old_path = Some(line[p.len()..].to_string()),
                    "rename to " | "copy to " => file.new_path = Some(line[p.len()..].to_string()),
                    _ => {}
                }
                file.extended.push(line.to_string());
                self.pos += 1;
            } else if line.starts_with("Binary files ") {
                file.binary = Some(line.to_string());
                self.pos += 1;
                return Ok(file);
            } else if line == "GIT binary patch" {
                file.binary = Some(line.to_string());
                self.pos += 1;
                // Skip the literal/delta payload up to the next file.
                while let Some(l) = self.peek() {
                    if l.starts_with("diff --git ") {
                        break;
                    }
                    self.pos += 1;
                }
                return Ok(file);
            } else {
                break;
            }
        }
        match self.peek() {
            Some(l) if l.starts_with("--- ") => {
                let (old, new) = (file.old_path.clone(), file.new_path.clone());
                self.parse_file_headers(&mut file)?;
                // The `diff --git` line is authoritative for paths the headers omit.
                if file.old_path.is_none() && old.is_some() && !file.extended.iter().any(|l| l.starts_with("new file mode")) {
                    file.old_path = old;
                }
                if file.new_path.is_none() && new.is_some() && !file.extended.iter().any(|l| l.starts_with("deleted file mode")) {
                    file.new_path = new;
                }
                self.parse_hunks(&mut file)?;
            }
            Some(l) if l.starts_with("@@") => {
                return Err(self.err(MalformedKind::MissingHeaders, "hunk without ---/+++ headers"));
            }
            _ => {}
        }
        Ok(file)
    }

    fn parse_file_headers(&mut self, file: &mut FileDiff) -> Result<(), DiffError> {
        let minus = self.peek().unwrap_or_default();
        let old = header_path(&minus[4..])
            .ok_or_else(|| self.err(MalformedKind::BadHeader, "bad --- header"))?;
        self.pos += 1;
        let plus = match self.peek() {
            Some(l) if l.starts_with("+++ ") => l,
            _ => return Err(self.err(MalformedKind::MissingHeaders, "--- header not followed by +++")),
        };
        let new = header_path(&plus[4..])
            .ok_or_else(|| self.err(MalformedKind::BadHeader, "bad +++ header"))?;
        self.pos += 1;
        if old.is_none() && new.is_none() {
            return Err(self.err(MalformedKind::BadHeader, "both sides are /dev/null"));
        }
        file.old_path = old;
        file.new_path = new;
        if !matches!(self.peek(), Some(l) if l.starts_with("@@")) {
            return Err(self.err(MalformedKind::MissingHeaders, "file headers without hunks"));
        }
        Ok(())
    }

    fn parse_hunks(&mut self, file: &mut FileDiff) -> Result<(), DiffError> {
        while let Some(line) = self.peek() {
            if !line.starts_with("@@") {
                break;
            }
            let (old_start, old_len, new_start, new_len, section) = parse_hunk_header(line.trim_end_matches('\r'))
                .ok_or_else(|| self.err(MalformedKind::BadHeader, format!("bad hunk header {line:?}")))?;
            self.pos += 1;
            let (mut old_rem, mut new_rem) = (old_len, new_len);
            let mut lines: Vec<HunkLine> = Vec::new();
            while old_rem > 0 || new_rem > 0 {
                let Some(body) = self.peek() else {
                    return Err(self.err(
                        MalformedKind::TruncatedHunk,
                        format!("hunk ended with {old_rem} old / {new_rem} new lines outstanding"),
                    ));
                };
                if body == NO_NEWLINE_MARKER || body.starts_with("\\ ") {
                    let last = lines
                        .last_mut()
                        .ok_or_else(|| self.err(MalformedKind::UnexpectedLine, "no-newline marker before any line"))?;
                    last.no_newline = true;
                    self.pos += 1;
                    continue;
                }
                let (op, text) = match body.chars().next() {
                    None => (LineOp::Context, ""),
                    Some(' ') => (LineOp::Context, &body[1..]),
                    Some('+') => (LineOp::Add, &body[1..]),
                    Some('-') => (LineOp::Remove, &body[1..]),
                    Some(_) => {
                        return Err(self.err(
                            MalformedKind::HunkCountMismatch,
                            format!("hunk body shorter than header: {old_rem} old / {new_rem} new lines missing"),
                        ))
                    }
                };
                let takes_old = op != LineOp::Add;
                let takes_new = op != LineOp::Remove;
                if (takes_old && old_rem == 0) || (takes_new && new_rem == 0) {
                    return Err(self.err(MalformedKind::HunkCountMismatch, "hunk body longer than header"));
                }
                if takes_old {
                    old_rem -= 1;
                }
                if takes_new {
                    new_rem -= 1;
                }
                lines.push(HunkLine {
                    op,
                    text: text.to_string(),
                    no_newline: false,
                });
                self.pos += 1;
            }
            if let Some(body) = self.peek() {
                if body.starts_with("\\ ") {
                    if let Some(last) = lines.last_mut() {
                        last.no_newline = true;
                    }
                    self.pos += 1;
                }
            }
            if let Some(next) = self.peek() {
                let is_body = next.starts_with('+') || next.starts_with(' ') || (next.starts_with('-') && !next.starts_with("--- "));
                if is_body {
                    return Err(self.err(MalformedKind::HunkCountMismatch, "hunk body longer than header"));
                }
            }
            file.hunks.push(Hunk {
                old_start,
                old_len,
                new_start,
                new_len,
                section,
                lines,
            });
        }
        Ok(())
    }
}

/// Parses unified diff text. The empty string is the empty diff.
pub fn parse_diff(text: &str) -> Result<Diff, DiffError> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if text.ends_with('\n') || text.is_empty() {
        lines.pop();
    }
    Parser { lines, pos: 0 }.parse()
}

/// Parses raw bytes, rejecting non-UTF-8 input.
pub fn parse_diff_bytes(bytes: &[u8]) -> Result<Diff, DiffError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| DiffError::at(MalformedKind::NotUtf8, 0, e.to_string()))?;
    parse_diff(text)
}

/// Drops every file entry that touches a test path. Order is preserved and
/// kept entries are untouched.
pub fn filter_test_files(diff: &Diff) -> Diff {
    Diff {
        files: diff.files.iter().filter(|f| !f.is_test_file()).cloned().collect(),
    }
}

/// Splits a diff into (non-test, test) parts.
pub fn partition_test_files(diff: &Diff) -> (Diff, Diff) {
    let (test, code): (Vec<_>, Vec<_>) = diff.files.iter().cloned().partition(FileDiff::is_test_file);
    (Diff { files: code }, Diff { files: test })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApplyError {
    #[error("hunk {hunk} of {path} does not match the file contents")]
    Conflict { path: String, hunk: usize },
    #[error("{path} is not valid UTF-8 text")]
    NotText { path: String },
    #[error("{path}: binary changes cannot be applied")]
    Binary { path: String },
}

type Line<'a> = (&'a str, bool);

fn split_lines(content: &str) -> Vec<Line<'_>> {
    content
        .split_inclusive('\n')
        .map(|l| match l.strip_suffix('\n') {
            Some(t) => (t, true),
            None => (l, false),
        })
        .collect()
}

/// Applies one file entry to the original content (`None` when the file does
/// not exist). Hunks must match exactly at their stated positions. Returns the
/// new content, or `None` if the file is deleted.
pub fn apply_file(file: &FileDiff, original: Option<&str>) -> Result<Option<String>, ApplyError> {
    let path = file.path().to_string();
    if file.binary.is_some() {
        return Err(ApplyError::Binary { path });
    }
    let old = split_lines(original.unwrap_or_default());
    let mut out: Vec<(String, bool)> = Vec::with_capacity(old.len() + 8);
    let mut cursor = 0usize;
    for (idx, hunk) in file.hunks.iter().enumerate() {
        let conflict = || ApplyError::Conflict {
            path: path.clone(),
            hunk: idx + 1,
        };
        let start = if hunk.old_len == 0 { hunk.old_start } else { hunk.old_start.checked_sub(1).ok_or_else(conflict)? };
        if start < cursor || start > old.len() {
            return Err(conflict());
        }
        out.extend(old[cursor..start].iter().map(|(t, nl)| (t.to_string(), *nl)));
        let mut pos = start;
        for line in &hunk.lines {
            let newline = !line.no_newline;
            match line.op {
                LineOp::Context | LineOp::Remove => {
                    match old.get(pos) {
                        Some((t, nl)) if *t == line.text && *nl == newline => {}
                        _ => return Err(conflict()),
                    }
                    if line.op == LineOp::Context {
                        out.push((line.text.clone(), newline));
                    }
                    pos += 1;
                }
                LineOp::Add => out.push((line.text.clone(), newline)),
            }
        }
        cursor = pos;
    }
    out.extend(old[cursor..].iter().map(|(t, nl)| (t.to_string(), *nl)));
    if file.is_deletion() {
        if !out.is_empty() {
            return Err(ApplyError::Conflict {
                path,
                hunk: file.hunks.len(),
            });
        }
        return Ok(None);
    }
    let mut content = String::with_capacity(out.iter().map(|(t, _)| t.len() + 1).sum());
    for (text, nl) in out {
        content.push_str(&text);
        if nl {
            content.push('\n');
        }
    }
    Ok(Some(content))
}
