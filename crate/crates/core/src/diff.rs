//! Header-level parsing of unified git diffs.
//!
//! Only what the harness needs is understood here: which paths a diff
//! touches (including renames, creations and deletions), hunk structure
//! sufficient to check line counts, and textual reversal. Applying hunks to
//! a tree is left to `git apply` inside a workspace.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DiffError {
    #[error("malformed diff at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unsupported diff construct at line {line}: {reason}")]
    Unsupported { line: usize, reason: String },
}

impl DiffError {
    fn malformed(line: usize, reason: impl Into<String>) -> Self {
        DiffError::Malformed {
            line,
            reason: reason.into(),
        }
    }
}

const DEV_NULL: &str = "/dev/null";

/// One line of a diff, kept verbatim (terminator included).
#[derive(Debug, Clone, PartialEq, Eq)]
enum Line {
    GitHeader { raw: String, a: String, b: String },
    Extended(String),
    OldFile(String),
    NewFile(String),
    Hunk(HunkHeader),
    Context(String),
    Removed(String),
    Added(String),
    NoNewline(String),
    Trailer(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct HunkHeader {
    old_range: String,
    new_range: String,
    tail: String,
}

/// The portion of a diff describing a single file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilePatch {
    /// Pre-image path, `None` when the file is created.
    pub old_path: Option<String>,
    /// Post-image path, `None` when the file is deleted.
    pub new_path: Option<String>,
    lines: Vec<Line>,
}

impl FilePatch {
    pub fn is_creation(&self) -> bool {
        self.old_path.is_none()
    }

    pub fn is_deletion(&self) -> bool {
        self.new_path.is_none()
    }

    pub fn is_rename(&self) -> bool {
        matches!((&self.old_path, &self.new_path), (Some(a), Some(b)) if a != b)
    }

    /// Paths touched by this section, `/dev/null` excluded.
    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.old_path
            .iter()
            .chain(self.new_path.iter())
            .map(String::as_str)
    }

    /// The verbatim text of this section.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for line in &self.lines {
            line.render_into(&mut out);
        }
        out
    }
}

impl Line {
    fn render_into(&self, out: &mut String) {
        match self {
            Line::Hunk(h) => {
                let _ = write!(out, "@@ {} {} @@{}", h.old_range, h.new_range, h.tail);
            }
            other => out.push_str(other.raw()),
        }
    }

    fn raw(&self) -> &str {
        match self {
            Line::GitHeader { raw, .. } => raw,
            Line::Extended(s)
            | Line::OldFile(s)
            | Line::NewFile(s)
            | Line::Context(s)
            | Line::Removed(s)
            | Line::Added(s)
            | Line::NoNewline(s)
            | Line::Trailer(s) => s,
            Line::Hunk(_) => unreachable!("hunk headers are rendered, not stored raw"),
        }
    }
}

/// A parsed unified diff: optional preamble followed by per-file sections.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Diff {
    preamble: Vec<String>,
    pub files: Vec<FilePatch>,
}

impl Diff {
    pub fn parse(text: &str) -> Result<Self, DiffError> {
        Parser::new(text).run()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn paths(&self) -> BTreeSet<String> {
        self.files
            .iter()
            .flat_map(|f| f.paths().map(str::to_owned))
            .collect()
    }

    pub fn reversed(&self) -> Result<Diff, DiffError> {
        let files = self
            .files
            .iter()
            .map(reverse_file)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Diff {
            preamble: self.preamble.clone(),
            files,
        })
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for line in &self.preamble {
            out.push_str(line);
        }
        for file in &self.files {
            for line in &file.lines {
                line.render_into(&mut out);
            }
        }
        out
    }
}

/// Union of old- and new-side paths of every file in `diff`.
pub fn patch_paths(diff: &str) -> Result<BTreeSet<String>, DiffError> {
    Ok(Diff::parse(diff)?.paths())
}

/// Textual reversal: applying the result undoes `diff`.
pub fn reverse_diff(diff: &str) -> Result<String, DiffError> {
    Ok(Diff::parse(diff)?.reversed()?.render())
}

/// Concatenates diffs so that `git apply` applies them in order.
pub fn compose(parts: &[&str]) -> String {
    let mut out = String::new();
    for part in parts {
        if part.trim().is_empty() {
            continue;
        }
        out.push_str(part);
        if !part.ends_with('\n') {
            out.push('\n');
        }
    }
    out
}

struct Parser<'a> {
    lines: Vec<&'a str>,
    pos: usize,
    preamble: Vec<String>,
    files: Vec<FilePatch>,
}

#[derive(Default)]
struct SectionState {
    lines: Vec<Line>,
    git_a: Option<String>,
    git_b: Option<String>,
    old_label: Option<String>,
    new_label: Option<String>,
    rename_from: Option<String>,
    rename_to: Option<String>,
    created: bool,
    deleted: bool,
    binary: bool,
    hunks: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            lines: text.split_inclusive('\n').collect(),
            pos: 0,
            preamble: Vec::new(),
            files: Vec::new(),
        }
    }

    fn peek(&self, offset: usize) -> Option<&'a str> {
        self.lines.get(self.pos + offset).copied()
    }

    fn run(mut self) -> Result<Diff, DiffError> {
        while let Some(line) = self.peek(0) {
            if line.starts_with("diff --git ") || self.starts_plain_section() {
                self.section()?;
            } else if self.files.is_empty() {
                self.preamble.push(line.to_owned());
                self.pos += 1;
            } else {
                // Trailing text after the last hunk (e.g. a format-patch signature).
                if let Some(last) = self.files.last_mut() {
                    last.lines.push(Line::Trailer(line.to_owned()));
                }
                self.pos += 1;
            }
        }
        if self.files.is_empty() && self.preamble.iter().any(|l| !l.trim().is_empty()) {
            return Err(DiffError::malformed(1, "no file sections found"));
        }
        Ok(Diff {
            preamble: self.preamble,
            files: self.files,
        })
    }

    fn starts_plain_section(&self) -> bool {
        matches!(
            (self.peek(0), self.peek(1)),
            (Some(a), Some(b)) if a.starts_with("--- ") && b.starts_with("+++ ")
        )
    }

    fn section(&mut self) -> Result<(), DiffError> {
        let start = self.pos + 1;
        let mut st = SectionState::default();
        let first = self.peek(0).unwrap_or_default();
        if let Some(rest) = first.strip_prefix("diff --git ") {
            let (a, b) = split_git_header(strip_eol(rest))
                .ok_or_else(|| DiffError::malformed(start, "unparsable diff --git header"))?;
            st.git_a = Some(a.clone());
            st.git_b = Some(b.clone());
            st.lines.push(Line::GitHeader {
                raw: first.to_owned(),
                a,
                b,
            });
            self.pos += 1;
        }

        while let Some(line) = self.peek(0) {
            let lineno = self.pos + 1;
            if line.starts_with("diff --git ") {
                break;
            }
            if st.hunks > 0 || st.binary {
                if line.starts_with("@@") && !st.binary {
                    self.hunk(&mut st)?;
                    continue;
                }
                if self.starts_plain_section() {
                    break;
                }
                if st.binary {
                    st.lines.push(Line::Extended(line.to_owned()));
                    self.pos += 1;
                    continue;
                }
                // Anything else ends the section; the top level keeps it as trailer.
                break;
            }
            if let Some(label) = line.strip_prefix("--- ") {
                if st.old_label.is_some() {
                    return Err(DiffError::malformed(lineno, "duplicate '---' header"));
                }
                let next = self.peek(1).unwrap_or_default();
                let Some(new_label) = next.strip_prefix("+++ ") else {
                    return Err(DiffError::malformed(lineno, "'---' not followed by '+++'"));
                };
                st.old_label = Some(parse_label(strip_eol(label), lineno)?);
                st.new_label = Some(parse_label(strip_eol(new_label), lineno + 1)?);
                st.lines.push(Line::OldFile(line.to_owned()));
                st.lines.push(Line::NewFile(next.to_owned()));
                self.pos += 2;
                continue;
            }
            if line.starts_with("@@") {
                if st.old_label.is_none() {
                    return Err(DiffError::malformed(lineno, "hunk before file headers"));
                }
                self.hunk(&mut st)?;
                continue;
            }
            if st.lines.is_empty() {
                return Err(DiffError::malformed(lineno, "expected a file header"));
            }
            let body = strip_eol(line);
            if body.trim().is_empty() {
                break;
            }
            if let Some(p) = body.strip_prefix("rename from ") {
                st.rename_from = Some(unquote(p, lineno)?);
            } else if let Some(p) = body.strip_prefix("rename to ") {
                st.rename_to = Some(unquote(p, lineno)?);
            } else if body.starts_with("new file mode ") {
                st.created = true;
            } else if body.starts_with("deleted file mode ") {
                st.deleted = true;
            } else if body.starts_with("GIT binary patch") || body.starts_with("Binary files ") {
                st.binary = true;
            } else if !is_extended_header(body) {
                return Err(DiffError::malformed(
                    lineno,
                    format!("unexpected line in file header: {body:?}"),
                ));
            }
            st.lines.push(Line::Extended(line.to_owned()));
            self.pos += 1;
        }

        let (old_path, new_path) = resolve_paths(&st, start)?;
        self.files.push(FilePatch {
            old_path,
            new_path,
            lines: st.lines,
        });
        Ok(())
    }

    fn hunk(&mut self, st: &mut SectionState) -> Result<(), DiffError> {
        let lineno = self.pos + 1;
        let header = strip_eol(self.peek(0).unwrap_or_default());
        let (hunk, mut old_left, mut new_left) = parse_hunk_header(header, lineno)?;
        let eol = &self.peek(0).unwrap_or_default()[header.len()..];
        st.lines.push(Line::Hunk(HunkHeader {
            tail: format!("{}{}", hunk.tail, eol),
            ..hunk
        }));
        st.hunks += 1;
        self.pos += 1;

        while old_left > 0 || new_left > 0 {
            let Some(line) = self.peek(0) else {
                return Err(DiffError::malformed(self.pos, "diff ends inside a hunk"));
            };
            let lineno = self.pos + 1;
            let body = line.as_bytes();
            match body.first() {
                Some(b' ') | Some(b'\n') | Some(b'\r') if old_left > 0 && new_left > 0 => {
                    old_left -= 1;
                    new_left -= 1;
                    st.lines.push(Line::Context(line.to_owned()));
                }
                Some(b'-') if old_left > 0 => {
                    old_left -= 1;
                    st.lines.push(Line::Removed(line.to_owned()));
                }
                Some(b'+') if new_left > 0 => {
                    new_left -= 1;
                    st.lines.push(Line::Added(line.to_owned()));
                }
                Some(b'\\') => st.lines.push(Line::NoNewline(line.to_owned())),
                _ => {
                    return Err(DiffError::malformed(
                        lineno,
                        "hunk body does not match its header line counts",
                    ))
                }
            }
            self.pos += 1;
        }
        if let Some(line) = self.peek(0) {
            if line.starts_with('\\') {
                st.lines.push(Line::NoNewline(line.to_owned()));
                self.pos += 1;
            }
        }
        Ok(())
    }
}

fn strip_eol(line: &str) -> &str {
    line.strip_suffix('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .unwrap_or(line)
}

fn is_extended_header(body: &str) -> bool {
    const PREFIXES: &[&str] = &[
        "index ",
        "old mode ",
        "new mode ",
        "similarity index ",
        "dissimilarity index ",
        "copy from ",
        "copy to ",
    ];
    PREFIXES.iter().any(|p| body.starts_with(p))
}

fn parse_label(label: &str, line: usize) -> Result<String, DiffError> {
    let label = label.split('\t').next().unwrap_or(label);
    unquote(label, line)
}

/// Undoes git's C-style path quoting (`"a/caf\303\251"`).
fn unquote(s: &str, line: usize) -> Result<String, DiffError> {
    let Some(inner) = s.strip_prefix('"') else {
        return Ok(s.to_owned());
    };
    let inner = inner
        .strip_suffix('"')
        .ok_or_else(|| DiffError::malformed(line, "unterminated quoted path"))?;
    let mut bytes = Vec::with_capacity(inner.len());
    let mut it = inner.bytes().peekable();
    while let Some(c) = it.next() {
        if c != b'\\' {
            bytes.push(c);
            continue;
        }
        let esc = it
            .next()
            .ok_or_else(|| DiffError::malformed(line, "dangling escape in quoted path"))?;
        match esc {
            b'n' => bytes.push(b'\n'),
            b't' => bytes.push(b'\t'),
            b'"' => bytes.push(b'"'),
            b'\\' => bytes.push(b'\\'),
            b'a' => bytes.push(7),
            b'b' => bytes.push(8),
            b'f' => bytes.push(12),
            b'r' => bytes.push(b'\r'),
            b'v' => bytes.push(11),
            b'0'..=b'7' => {
                let mut v = u32::from(esc - b'0');
                for _ in 0..2 {
                    match it.peek() {
                        Some(d @ b'0'..=b'7') => {
                            v = v * 8 + u32::from(d - b'0');
                            it.next();
                        }
                        _ => break,
                    }
                }
                bytes.push(v as u8);
            }
            other => {
                return Err(DiffError::malformed(
                    line,
                    format!("unknown escape \\{}", other as char),
                ))
            }
        }
    }
    String::from_utf8(bytes).map_err(|_| DiffError::malformed(line, "quoted path is not UTF-8"))
}

/// Splits the operands of a `diff --git` line into its two labels.
fn split_git_header(rest: &str) -> Option<(String, String)> {
    if rest.starts_with('"') {
        let end = closing_quote(rest)?;
        let a = rest[..=end].to_owned();
        let b = rest[end + 1..].trim_start().to_owned();
        return (!b.is_empty()).then_some((a, b));
    }
    if let Some(idx) = rest.rfind(" \"") {
        return Some((rest[..idx].to_owned(), rest[idx + 1..].to_owned()));
    }
    // Unquoted: prefer the split where both sides name the same file.
    let candidates: Vec<usize> = rest.match_indices(" b/").map(|(i, _)| i).collect();
    for &i in &candidates {
        let (a, b) = (&rest[..i], &rest[i + 1..]);
        if a.strip_prefix("a/") == b.strip_prefix("b/") {
            return Some((a.to_owned(), b.to_owned()));
        }
    }
    if let Some(&i) = candidates.first() {
        return Some((rest[..i].to_owned(), rest[i + 1..].to_owned()));
    }
    let (a, b) = rest.split_once(' ')?;
    Some((a.to_owned(), b.to_owned()))
}

fn closing_quote(s: &str) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut i = 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'"' => return Some(i),
            _ => i += 1,
        }
    }
    None
}

fn strip_side(label: &str, prefix: &str) -> String {
    label.strip_prefix(prefix).unwrap_or(label).to_owned()
}

fn resolve_paths(
    st: &SectionState,
    line: usize,
) -> Result<(Option<String>, Option<String>), DiffError> {
    let from_git = |label: &Option<String>, prefix: &str| -> Result<Option<String>, DiffError> {
        match label {
            Some(l) => Ok(Some(strip_side(&unquote(l, line)?, prefix))),
            None => Ok(None),
        }
    };
    let old = match &st.old_label {
        Some(l) if l == DEV_NULL => None,
        Some(l) => Some(strip_side(l, "a/")),
        None if st.created => None,
        None => match &st.rename_from {
            Some(p) => Some(p.clone()),
            None => from_git(&st.git_a, "a/")?,
        },
    };
    let new = match &st.new_label {
        Some(l) if l == DEV_NULL => None,
        Some(l) => Some(strip_side(l, "b/")),
        None if st.deleted => None,
        None => match &st.rename_to {
            Some(p) => Some(p.clone()),
            None => from_git(&st.git_b, "b/")?,
        },
    };
    if old.is_none() && new.is_none() {
        return Err(DiffError::malformed(line, "file section names no path"));
    }
    Ok((old, new))
}

fn parse_hunk_header(header: &str, line: usize) -> Result<(HunkHeader, u64, u64), DiffError> {
    let bad = || DiffError::malformed(line, format!("bad hunk header {header:?}"));
    let rest = header.strip_prefix("@@ ").ok_or_else(bad)?;
    let (ranges, tail) = rest.split_once(" @@").ok_or_else(bad)?;
    let (old_range, new_range) = ranges.split_once(' ').ok_or_else(bad)?;
    let old_len = range_len(old_range.strip_prefix('-').ok_or_else(bad)?).ok_or_else(bad)?;
    let new_len = range_len(new_range.strip_prefix('+').ok_or_else(bad)?).ok_or_else(bad)?;
    Ok((
        HunkHeader {
            old_range: old_range.to_owned(),
            new_range: new_range.to_owned(),
            tail: tail.to_owned(),
        },
        old_len,
        new_len,
    ))
}

fn range_len(range: &str) -> Option<u64> {
    match range.split_once(',') {
        Some((start, len)) => {
            start.parse::<u64>().ok()?;
            len.parse().ok()
        }
        None => {
            range.parse::<u64>().ok()?;
            Some(1)
        }
    }
}

fn swap_label_prefix(label: &str, from: &str, to: &str) -> String {
    if let Some(inner) = label.strip_prefix('"') {
        if let Some(rest) = inner.strip_prefix(from) {
            return format!("\"{to}{rest}");
        }
        return label.to_owned();
    }
    match label.strip_prefix(from) {
        Some(rest) => format!("{to}{rest}"),
        None => label.to_owned(),
    }
}

fn reverse_label_line(body: &str, marker: &str, from: &str, to: &str) -> String {
    let (label, suffix) = match body.find('\t') {
        Some(i) => (&body[..i], &body[i..]),
        None => (body, ""),
    };
    let label = if label == DEV_NULL {
        label.to_owned()
    } else {
        swap_label_prefix(label, from, to)
    };
    format!("{marker}{label}{suffix}")
}

fn eol_of(line: &str) -> &str {
    &line[strip_eol(line).len()..]
}

fn reverse_file(file: &FilePatch) -> Result<FilePatch, DiffError> {
    let mut out: Vec<Line> = Vec::with_capacity(file.lines.len());
    let mut i = 0;
    let lines = &file.lines;
    let mut pending_old_mode: Option<String> = None;
    let mut pending_rename_from: Option<String> = None;

    while i < lines.len() {
        match &lines[i] {
            Line::GitHeader { raw, a, b } => {
                let eol = eol_of(raw);
                let na = swap_label_prefix(b, "b/", "a/");
                let nb = swap_label_prefix(a, "a/", "b/");
                out.push(Line::GitHeader {
                    raw: format!("diff --git {na} {nb}{eol}"),
                    a: na,
                    b: nb,
                });
            }
            Line::Extended(raw) => {
                let body = strip_eol(raw);
                let eol = eol_of(raw);
                if let Some(mode) = body.strip_prefix("new file mode ") {
                    out.push(Line::Extended(format!("deleted file mode {mode}{eol}")));
                } else if let Some(mode) = body.strip_prefix("deleted file mode ") {
                    out.push(Line::Extended(format!("new file mode {mode}{eol}")));
                } else if let Some(mode) = body.strip_prefix("old mode ") {
                    pending_old_mode = Some(format!("{mode}{eol}"));
                } else if let Some(mode) = body.strip_prefix("new mode ") {
                    out.push(Line::Extended(format!("old mode {mode}{eol}")));
                    if let Some(old) = pending_old_mode.take() {
                        out.push(Line::Extended(format!("new mode {old}")));
                    }
                } else if let Some(p) = body.strip_prefix("rename from ") {
                    pending_rename_from = Some(format!("{p}{eol}"));
                } else if let Some(p) = body.strip_prefix("rename to ") {
                    out.push(Line::Extended(format!("rename from {p}{eol}")));
                    if let Some(from) = pending_rename_from.take() {
                        out.push(Line::Extended(format!("rename to {from}")));
                    }
                } else if let Some(rest) = body.strip_prefix("index ") {
                    let (hashes, mode) = match rest.split_once(' ') {
                        Some((h, m)) => (h, format!(" {m}")),
                        None => (rest, String::new()),
                    };
                    let reversed = match hashes.split_once("..") {
                        Some((x, y)) => format!("{y}..{x}"),
                        None => hashes.to_owned(),
                    };
                    out.push(Line::Extended(format!("index {reversed}{mode}{eol}")));
                } else if body.starts_with("copy from ") || body.starts_with("copy to ") {
                    return Err(DiffError::Unsupported {
                        line: 0,
                        reason: "copy sections cannot be reversed".into(),
                    });
                } else if body.starts_with("GIT binary patch") || body.starts_with("Binary files ")
                {
                    return Err(DiffError::Unsupported {
                        line: 0,
                        reason: "binary sections cannot be reversed textually".into(),
                    });
                } else {
                    out.push(Line::Extended(raw.clone()));
                }
            }
            Line::OldFile(old) => {
                let Some(Line::NewFile(new)) = lines.get(i + 1) else {
                    unreachable!("parser pairs '---' with '+++'")
                };
                let new_body = &strip_eol(new)[4..];
                let old_body = &strip_eol(old)[4..];
                out.push(Line::OldFile(format!(
                    "{}{}",
                    reverse_label_line(new_body, "--- ", "b/", "a/"),
                    eol_of(old)
                )));
                out.push(Line::NewFile(format!(
                    "{}{}",
                    reverse_label_line(old_body, "+++ ", "a/", "b/"),
                    eol_of(new)
                )));
                i += 1;
            }
            Line::NewFile(_) => unreachable!("consumed with OldFile"),
            Line::Hunk(h) => {
                out.push(Line::Hunk(HunkHeader {
                    old_range: format!("-{}", &h.new_range[1..]),
                    new_range: format!("+{}", &h.old_range[1..]),
                    tail: h.tail.clone(),
                }));
            }
            Line::Context(_) | Line::Trailer(_) => out.push(lines[i].clone()),
            Line::NoNewline(_) => out.push(lines[i].clone()),
            Line::Removed(_) | Line::Added(_) => {
                // A maximal run of changes; a no-newline marker sticks to the line before it.
                let mut removed: Vec<Line> = Vec::new();
                let mut added: Vec<Line> = Vec::new();
                while i < lines.len() {
                    match &lines[i] {
                        Line::Removed(s) => added.push(Line::Added(format!("+{}", &s[1..]))),
                        Line::Added(s) => removed.push(Line::Removed(format!("-{}", &s[1..]))),
                        Line::NoNewline(_) => {
                            let target = match lines[i - 1] {
                                Line::Removed(_) => &mut added,
                                _ => &mut removed,
                            };
                            target.push(lines[i].clone());
                        }
                        _ => break,
                    }
                    i += 1;
                }
                out.extend(removed);
                out.extend(added);
                continue;
            }
        }
        i += 1;
    }
    if let Some(mode) = pending_old_mode {
        out.push(Line::Extended(format!("new mode {mode}")));
    }

    Ok(FilePatch {
        old_path: file.new_path.clone(),
        new_path: file.old_path.clone(),
        lines: out,
    })
}
