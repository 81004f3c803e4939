//! Independent reference implementations and random case generators shared
//! by the property and acceptance suites.

use std::collections::BTreeSet;
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;

use cofix_core::orchestrator::CandidateScore;
use rand::seq::SliceRandom;
use rand::Rng;

/// Byte-level restatement of the test-path rule.
pub fn is_test_path(path: &str) -> bool {
    let name = match path.rfind('/') {
        Some(i) => &path[i + 1..],
        None => path,
    };
    name.as_bytes().starts_with(b"test")
}

const DIRS: &[&str] = &["", "src/", "tests/", "testing/", "pkg/tests/", "test/", "lib/contest/", "Tests/"];
const NAMES: &[&str] = &[
    "test_a.py",
    "contest.py",
    "a_test.py",
    "Test_b.py",
    "tests.py",
    "testutil.rs",
    "latest.py",
    "main.py",
    "test",
    "conftest.py",
    "attest.py",
    "test_c.txt",
    "util.py",
];

pub struct SyntheticDiff {
    pub text: String,
    /// Touched paths of each file entry, in order.
    pub entries: Vec<Vec<String>>,
}

fn fresh_path(rng: &mut impl Rng, used: &mut BTreeSet<String>) -> String {
    loop {
        let p = format!("{}{}", DIRS.choose(rng).unwrap(), NAMES.choose(rng).unwrap());
        if used.insert(p.clone()) {
            return p;
        }
    }
}

/// A multi-file git diff mixing modifications, creations, deletions and
/// renames over test and non-test paths. `force` is always one of the paths.
pub fn synthetic_diff(rng: &mut impl Rng, force: Option<&str>) -> SyntheticDiff {
    let mut used = BTreeSet::new();
    let n = rng.gen_range(1..=7);
    let mut text = String::new();
    let mut entries = Vec::new();
    for i in 0..n {
        let path = match force {
            Some(p) if i == 0 => {
                used.insert(p.to_string());
                p.to_string()
            }
            _ => fresh_path(rng, &mut used),
        };
        match rng.gen_range(0..4) {
            0 => {
                text += &format!("diff --git a/{path} b/{path}\nindex 1111111..2222222 100644\n--- a/{path}\n+++ b/{path}\n@@ -1,2 +1,2 @@\n a\n-b\n+c\n");
                entries.push(vec![path]);
            }
            1 => {
                text += &format!("diff --git a/{path} b/{path}\nnew file mode 100644\n--- /dev/null\n+++ b/{path}\n@@ -0,0 +1 @@\n+x\n");
                entries.push(vec![path]);
            }
            2 => {
                text += &format!("diff --git a/{path} b/{path}\ndeleted file mode 100644\n--- a/{path}\n+++ /dev/null\n@@ -1 +0,0 @@\n-x\n");
                entries.push(vec![path]);
            }
            _ => {
                let to = fresh_path(rng, &mut used);
                text += &format!(
                    "diff --git a/{path} b/{to}\nsimilarity index 80%\nrename from {path}\nrename to {to}\n--- a/{path}\n+++ b/{to}\n@@ -1 +1 @@\n-a\n+b\n"
                );
                entries.push(vec![path, to]);
            }
        }
    }
    SyntheticDiff { text, entries }
}

const WORDS: &[&str] = &["alpha", "beta", "gamma", "x = 1", "    return y", "", "--- a/x", "+++ b/y", "@@ -1 +1 @@", "\\ No newline at end of file", "ünïcode", "tab\there", "-dash", "+plus", " space"];

pub fn random_line(rng: &mut impl Rng) -> String {
    let k = rng.gen_range(1..=3);
    (0..k).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

pub fn random_text(rng: &mut impl Rng, max_lines: usize) -> String {
    let n = rng.gen_range(0..=max_lines);
    let mut s: String = (0..n).map(|_| random_line(rng) + "\n").collect();
    if !s.is_empty() && rng.gen_bool(0.25) {
        s.pop();
    }
    s
}

fn files_under(root: &Path) -> Vec<String> {
    let mut out: Vec<String> = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| !(e.depth() == 1 && e.file_name() == ".git"))
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| e.path().strip_prefix(root).unwrap().to_string_lossy().into_owned())
        .collect();
    out.sort();
    out
}

/// Applies 1..=6 random edits to a working tree: line edits, inserts,
/// deletions, newline-at-EOF toggles, new files (possibly nested or empty),
/// file removals, and mode flips.
pub fn random_edits(rng: &mut impl Rng, root: &Path) {
    let edits = rng.gen_range(1..=6);
    for _ in 0..edits {
        let files = files_under(root);
        let pick = files.choose(rng).cloned();
        match (rng.gen_range(0..8), pick) {
            (0..=2, Some(f)) => {
                let p = root.join(&f);
                let text = fs::read_to_string(&p).unwrap();
                let mut lines: Vec<String> = text.split_inclusive('\n').map(str::to_string).collect();
                let at = rng.gen_range(0..=lines.len());
                match rng.gen_range(0..3) {
                    0 if at < lines.len() => lines[at] = random_line(rng) + "\n",
                    1 if at < lines.len() => {
                        lines.remove(at);
                    }
                    _ => lines.insert(at, random_line(rng) + "\n"),
                }
                fs::write(&p, lines.concat()).unwrap();
            }
            (3, Some(f)) => {
                let p = root.join(&f);
                let mut text = fs::read_to_string(&p).unwrap();
                if text.ends_with('\n') {
                    text.pop();
                } else {
                    text.push('\n');
                }
                fs::write(&p, text).unwrap();
            }
            (4, Some(f)) => fs::remove_file(root.join(f)).unwrap(),
            (5, Some(f)) => {
                let p = root.join(f);
                let mut perms = fs::metadata(&p).unwrap().permissions();
                perms.set_mode(perms.mode() ^ 0o111);
                fs::set_permissions(&p, perms).unwrap();
            }
            _ => {
                let dir = ["", "pkg_new/", "deep/er/", "tests/"].choose(rng).unwrap();
                let p = root.join(format!("{dir}added_{}.py", rng.gen_range(0..1000)));
                if !p.exists() {
                    fs::create_dir_all(p.parent().unwrap()).unwrap();
                    fs::write(&p, random_text(rng, 6)).unwrap();
                }
            }
        }
    }
}

/// Overlapping occurrence count by checking every char boundary.
pub fn occurrences(haystack: &str, needle: &str) -> usize {
    if needle.is_empty() {
        return 0;
    }
    haystack
        .char_indices()
        .filter(|&(i, _)| haystack[i..].starts_with(needle))
        .count()
}

/// A small file over a tiny alphabet and a needle that is usually, but not
/// always, drawn from it, so counts of 0, 1 and many are all common.
pub fn editor_case(rng: &mut impl Rng) -> (String, String, String) {
    const ALPHA: &[char] = &['a', 'b', 'c', '\n', 'é'];
    let len = rng.gen_range(0..40);
    let content: String = (0..len).map(|_| *ALPHA.choose(rng).unwrap()).collect();
    let chars: Vec<char> = content.chars().collect();
    let needle: String = if !chars.is_empty() && rng.gen_bool(0.8) {
        let start = rng.gen_range(0..chars.len());
        let end = rng.gen_range(start + 1..=(start + 6).min(chars.len()));
        chars[start..end].iter().collect()
    } else {
        (0..rng.gen_range(1..4)).map(|_| *ALPHA.choose(rng).unwrap()).collect()
    };
    let replacement: String = (0..rng.gen_range(0..4)).map(|_| *ALPHA.choose(rng).unwrap()).collect();
    (content, needle, replacement)
}

/// A random tree with nested text files and one binary file.
pub fn random_tree(rng: &mut impl Rng, root: &Path) {
    const LINES: &[&str] = &["foo bar", "Foo", "bar baz", "qux", "fn foo()", "x = foo(1)", "", "   indent", "end."];
    for i in 0..rng.gen_range(1..8) {
        let dir = ["", "a/", "a/b/", "c/"].choose(rng).unwrap();
        let ext = ["py", "txt", "rs"].choose(rng).unwrap();
        let p = root.join(format!("{dir}f{i}.{ext}"));
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        let n = rng.gen_range(0..12);
        let mut s: String = (0..n).map(|_| format!("{}\n", LINES.choose(rng).unwrap())).collect();
        if rng.gen_bool(0.2) {
            s = s.replace('\n', "\r\n");
        }
        if rng.gen_bool(0.2) {
            s.push_str("tail foo");
        }
        fs::write(p, s).unwrap();
    }
    fs::write(root.join("blob.bin"), b"foo\0bar\nfoo\n").unwrap();
    fs::create_dir_all(root.join(".git")).unwrap();
    fs::write(root.join(".git/config"), "foo bar\n").unwrap();
}

pub fn random_pattern(rng: &mut impl Rng) -> String {
    const ATOMS: &[&str] = &["foo", "bar", "^", "$", "\\w+", "o{2}", "[fb]", "ba[rz]", "(qux|end)", "\\.", "x = ", "^\\s+", "F"];
    let n = rng.gen_range(1..=3);
    let mut p: String = (0..n).map(|_| *ATOMS.choose(rng).unwrap()).collect();
    if rng.gen_bool(0.2) {
        p = format!("(?i){p}");
    }
    p
}

/// Per-line scan by plain directory recursion. Returns (path, line, text)
/// sorted by path then line, before truncation.
pub fn search_oracle(root: &Path, re: &regex::Regex) -> Vec<(String, usize, String)> {
    fn walk(root: &Path, dir: &Path, re: &regex::Regex, out: &mut Vec<(String, usize, String)>) {
        for entry in fs::read_dir(dir).unwrap() {
            let entry = entry.unwrap();
            let path = entry.path();
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            if rel == ".git" {
                continue;
            }
            if entry.file_type().unwrap().is_dir() {
                walk(root, &path, re, out);
                continue;
            }
            let bytes = fs::read(&path).unwrap();
            if bytes.iter().take(8192).any(|&b| b == 0) {
                continue;
            }
            let text = String::from_utf8(bytes).unwrap();
            for (i, line) in text.lines().enumerate() {
                if re.is_match(line) {
                    out.push((rel.clone(), i + 1, line.to_string()));
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, re, &mut out);
    out.sort();
    out
}

/// Random candidate scores over a union suite of `k` tests. Values are drawn
/// from narrow ranges so exact ties are frequent.
pub fn random_scores(rng: &mut impl Rng, n: usize, all_stable: bool) -> Vec<CandidateScore> {
    let k = rng.gen_range(1..=5);
    (0..n)
        .map(|_| {
            let passed: BTreeSet<String> = (0..k).filter(|_| rng.gen_bool(0.6)).map(|t| format!("tests/test_{t}.py")).collect();
            CandidateScore {
                union_passes: passed.len(),
                regression_passes: rng.gen_range(0..=2),
                changed_lines: rng.gen_range(1..=3),
                iteration_created: rng.gen_range(0..=2),
                stable: all_stable || rng.gen_bool(0.8),
                passed,
            }
        })
        .collect()
}

/// True iff candidate `a` must be ranked ahead of `b` (indices break exact ties).
fn ahead(s: &[CandidateScore], a: usize, b: usize) -> bool {
    let (x, y) = (&s[a], &s[b]);
    if x.stable != y.stable {
        return x.stable;
    }
    if x.union_passes != y.union_passes {
        return x.union_passes > y.union_passes;
    }
    if x.regression_passes != y.regression_passes {
        return x.regression_passes > y.regression_passes;
    }
    if x.changed_lines != y.changed_lines {
        return x.changed_lines < y.changed_lines;
    }
    if x.iteration_created != y.iteration_created {
        return x.iteration_created < y.iteration_created;
    }
    a < b
}

/// Brute-force re-ranking: repeatedly pick the candidate no other remaining
/// candidate beats.
pub fn rank_oracle(s: &[CandidateScore]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..s.len()).collect();
    let mut order = Vec::new();
    while !left.is_empty() {
        let best = *left
            .iter()
            .find(|&&i| left.iter().all(|&j| j == i || ahead(s, i, j)))
            .expect("ranking is a total order");
        order.push(best);
        left.retain(|&i| i != best);
    }
    order
}

/// Indices of stable candidates whose pass set is a strict subset of some
/// other stable candidate's.
pub fn dominated(s: &[CandidateScore]) -> Vec<usize> {
    (0..s.len())
        .filter(|&j| {
            s[j].stable && (0..s.len()).any(|i| i != j && s[i].stable && s[j].passed.is_subset(&s[i].passed) && s[j].passed != s[i].passed)
        })
        .collect()
}
