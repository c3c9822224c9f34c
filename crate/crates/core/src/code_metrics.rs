//! Static source metrics for Java-like files.
//!
//! [`extract_metrics`] computes 20 counts per file. A small lexer first splits
//! the text into code, comments and string/char literals; every construct
//! count below runs on the code part only, so keywords inside comments or
//! strings are never counted.
//!
//! Heuristics, in field order:
//!
//! - `loc`: lines split on `\n`; a trailing newline does not open a new line.
//! - `sloc`: lines with at least one non-whitespace character outside comments.
//! - `comment_count`: lines that contain comment text (either style).
//! - `comment_density`: `comment_count / loc`, 0 for empty input.
//! - `blank_lines`: whitespace-only lines. Every line is exactly one of blank,
//!   source, or comment-only, so `sloc + blank + comment_only = loc`.
//! - `total_tokens`/`unique_tokens`: maximal runs of `[A-Za-z0-9_$]` plus single
//!   punctuation characters, on comment-stripped text.
//! - `avg_line_length`: characters per line, newlines excluded.
//! - `code_chars`: all characters of the file.
//! - `function_count`: lines whose text before the first `(` is two or more
//!   type-like words ending in an identifier, none of them a control keyword.
//! - `variable_count`: a type keyword (`int`, `long`, `double`, `float`,
//!   `boolean`, `char`, `byte`, `short`, `String`, `var`, `let`, `const`),
//!   optional `[]`, then an identifier not followed by `(`.
//! - `loop_count`, `conditional_count`, `try_catch_count`: keyword occurrences
//!   (`for while do`, `if else switch case`, `try catch finally`).
//! - `import_count`: statements starting with `import`.
//! - `class_count`: `class` not preceded by `.` (so `Foo.class` is skipped).
//! - `interface_count`: `interface` keyword occurrences.
//! - `annotation_count`: `@Name` other than `@interface`.
//! - `method_invocation_count`: `identifier . identifier (`.
//! - `literal_count`: string literals, char literals and numeric literals.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

pub const METRIC_NAMES: [&str; 20] = [
    "loc",
    "sloc",
    "comment_count",
    "comment_density",
    "blank_lines",
    "total_tokens",
    "unique_tokens",
    "avg_line_length",
    "code_chars",
    "function_count",
    "variable_count",
    "loop_count",
    "conditional_count",
    "try_catch_count",
    "import_count",
    "class_count",
    "interface_count",
    "annotation_count",
    "method_invocation_count",
    "literal_count",
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub loc: f64,
    pub sloc: f64,
    pub comment_count: f64,
    pub comment_density: f64,
    pub blank_lines: f64,
    pub total_tokens: f64,
    pub unique_tokens: f64,
    pub avg_line_length: f64,
    pub code_chars: f64,
    pub function_count: f64,
    pub variable_count: f64,
    pub loop_count: f64,
    pub conditional_count: f64,
    pub try_catch_count: f64,
    pub import_count: f64,
    pub class_count: f64,
    pub interface_count: f64,
    pub annotation_count: f64,
    pub method_invocation_count: f64,
    pub literal_count: f64,
}

impl MetricVector {
    pub fn to_array(&self) -> [f64; 20] {
        [
            self.loc,
            self.sloc,
            self.comment_count,
            self.comment_density,
            self.blank_lines,
            self.total_tokens,
            self.unique_tokens,
            self.avg_line_length,
            self.code_chars,
            self.function_count,
            self.variable_count,
            self.loop_count,
            self.conditional_count,
            self.try_catch_count,
            self.import_count,
            self.class_count,
            self.interface_count,
            self.annotation_count,
            self.method_invocation_count,
            self.literal_count,
        ]
    }

    /// Number of lines holding only comment text and whitespace.
    pub fn comment_only_lines(&self) -> f64 {
        self.loc - self.sloc - self.blank_lines
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Code,
    Comment,
    /// Inside a string or char literal, delimiters included.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LexState {
    Code,
    LineComment,
    BlockComment,
    Str,
    Char,
}

struct Lexed {
    chars: Vec<char>,
    classes: Vec<CharClass>,
    string_literals: usize,
    char_literals: usize,
}

fn lex(source: &str) -> Lexed {
    let chars: Vec<char> = source.chars().collect();
    let mut classes = vec![CharClass::Code; chars.len()];
    let mut state = LexState::Code;
    let mut string_literals = 0;
    let mut char_literals = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        match state {
            LexState::Code => match (c, next) {
                ('/', Some('/')) => {
                    state = LexState::LineComment;
                    classes[i] = CharClass::Comment;
                    classes[i + 1] = CharClass::Comment;
                    i += 2;
                    continue;
                }
                ('/', Some('*')) => {
                    state = LexState::BlockComment;
                    classes[i] = CharClass::Comment;
                    classes[i + 1] = CharClass::Comment;
                    i += 2;
                    continue;
                }
                ('"', _) => {
                    state = LexState::Str;
                    string_literals += 1;
                    classes[i] = CharClass::Literal;
                }
                ('\'', _) => {
                    state = LexState::Char;
                    char_literals += 1;
                    classes[i] = CharClass::Literal;
                }
                _ => {}
            },
            LexState::LineComment => {
                if c == '\n' {
                    state = LexState::Code;
                } else {
                    classes[i] = CharClass::Comment;
                }
            }
            LexState::BlockComment => {
                if c == '*' && next == Some('/') {
                    classes[i] = CharClass::Comment;
                    classes[i + 1] = CharClass::Comment;
                    state = LexState::Code;
                    i += 2;
                    continue;
                }
                if c != '\n' {
                    classes[i] = CharClass::Comment;
                }
            }
            LexState::Str | LexState::Char => {
                let close = if state == LexState::Str { '"' } else { '\'' };
                if c == '\n' {
                    // unterminated literal ends at the line break
                    state = LexState::Code;
                } else {
                    classes[i] = CharClass::Literal;
                    if c == '\\' && next.is_some_and(|n| n != '\n') {
                        classes[i + 1] = CharClass::Literal;
                        i += 2;
                        continue;
                    }
                    if c == close {
                        state = LexState::Code;
                    }
                }
            }
        }
        i += 1;
    }
    Lexed {
        chars,
        classes,
        string_literals,
        char_literals,
    }
}

impl Lexed {
    /// Source with comments replaced by spaces; literals kept.
    fn without_comments(&self) -> String {
        self.chars
            .iter()
            .zip(&self.classes)
            .map(|(&c, &k)| if k == CharClass::Comment && c != '\n' { ' ' } else { c })
            .collect()
    }

    /// Source with comments and literal contents replaced by spaces.
    fn code_only(&self) -> String {
        self.chars
            .iter()
            .zip(&self.classes)
            .map(|(&c, &k)| if k != CharClass::Code && c != '\n' { ' ' } else { c })
            .collect()
    }
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '$'
}

fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if is_word_char(c) {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            tokens.push(&text[s..i]);
        }
        if !c.is_whitespace() {
            tokens.push(&text[i..i + c.len_utf8()]);
        }
    }
    if let Some(s) = start {
        tokens.push(&text[s..]);
    }
    tokens
}

const CONTROL_WORDS: &[&str] = &[
    "if", "else", "for", "while", "do", "switch", "case", "catch", "try", "finally", "return",
    "new", "throw", "throws", "synchronized", "assert", "super", "this", "yield", "import",
    "package",
];

fn is_identifier(word: &str) -> bool {
    let mut chars = word.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$')
        && chars.all(is_word_char)
}

fn is_type_like(word: &str) -> bool {
    !word.is_empty()
        && word
            .chars()
            .all(|c| is_word_char(c) || matches!(c, '<' | '>' | '[' | ']' | ',' | '.' | '?' | '@'))
}

fn is_function_definition(line: &str) -> bool {
    let Some(paren) = line.find('(') else {
        return false;
    };
    let words: Vec<&str> = line[..paren].split_whitespace().collect();
    if words.len() < 2 {
        return false;
    }
    let name = words[words.len() - 1];
    if !is_identifier(name) || CONTROL_WORDS.contains(&name) {
        return false;
    }
    words[..words.len() - 1]
        .iter()
        .all(|w| is_type_like(w) && !CONTROL_WORDS.contains(w))
}

fn variable_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"\b(?:int|long|double|float|boolean|char|byte|short|String|var|let|const)\b(?:\s*\[\s*\])*\s+[A-Za-z_$][A-Za-z0-9_$]*\s*(\()?",
        )
        .expect("valid regex")
    })
}

fn invocation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"[A-Za-z_$][A-Za-z0-9_$]*\s*\.\s*[A-Za-z_$][A-Za-z0-9_$]*\s*\(").expect("valid regex")
    })
}

fn numeric_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?:0[xX][0-9a-fA-F_]+|[0-9][0-9_]*(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?)[lLfFdD]?")
            .expect("valid regex")
    })
}

fn annotation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\s*([A-Za-z_$][A-Za-z0-9_$]*)").expect("valid regex"))
}

/// Computes the 20 static metrics of one source text.
pub fn extract_metrics(source: &str) -> MetricVector {
    let lexed = lex(source);
    let stripped = lexed.without_comments();
    let code = lexed.code_only();

    let mut lines_raw: Vec<&str> = source.split('\n').collect();
    let mut lines_code: Vec<&str> = code.split('\n').collect();
    if source.ends_with('\n') || source.is_empty() {
        lines_raw.pop();
        lines_code.pop();
    }
    // per-line comment presence from the classification
    let mut line_has_comment = vec![false; lines_raw.len()];
    let mut line_has_code = vec![false; lines_raw.len()];
    let mut line = 0;
    for (&c, &k) in lexed.chars.iter().zip(&lexed.classes) {
        if c == '\n' {
            line += 1;
            continue;
        }
        if line >= lines_raw.len() || c.is_whitespace() {
            continue;
        }
        match k {
            CharClass::Comment => line_has_comment[line] = true,
            CharClass::Code | CharClass::Literal => line_has_code[line] = true,
        }
    }

    let loc = lines_raw.len();
    let mut sloc = 0;
    let mut blank = 0;
    for (i, l) in lines_raw.iter().enumerate() {
        if l.trim().is_empty() {
            blank += 1;
        } else if line_has_code[i] {
            sloc += 1;
        }
    }
    let comment_lines = line_has_comment.iter().filter(|&&b| b).count();

    let tokens = tokenize(&stripped);
    let unique: HashSet<&str> = tokens.iter().copied().collect();
    let code_tokens = tokenize(&code);

    let mut loops = 0;
    let mut conditionals = 0;
    let mut try_catch = 0;
    let mut classes = 0;
    let mut interfaces = 0;
    for (i, t) in code_tokens.iter().enumerate() {
        match *t {
            "for" | "while" | "do" => loops += 1,
            "if" | "else" | "switch" | "case" => conditionals += 1,
            "try" | "catch" | "finally" => try_catch += 1,
            "class" if i == 0 || code_tokens[i - 1] != "." => classes += 1,
            "interface" => interfaces += 1,
            _ => {}
        }
    }

    let functions = lines_code.iter().filter(|l| is_function_definition(l)).count();
    let variables = variable_regex()
        .captures_iter(&code)
        .filter(|c| c.get(1).is_none())
        .count();
    let imports = code
        .split(';')
        .flat_map(|stmt| stmt.split('\n'))
        .filter(|l| {
            let t = l.trim_start();
            t.strip_prefix("import").is_some_and(|rest| rest.starts_with(char::is_whitespace))
        })
        .count();
    let annotations = annotation_regex()
        .captures_iter(&code)
        .filter(|c| &c[1] != "interface")
        .count();
    let invocations = invocation_regex().find_iter(&code).count();
    let numerics = numeric_regex()
        .find_iter(&code)
        .filter(|m| {
            code[..m.start()]
                .chars()
                .next_back()
                .is_none_or(|p| !is_word_char(p) && p != '.')
        })
        .count();

    let code_chars = lexed.chars.len();
    let line_chars: usize = lines_raw.iter().map(|l| l.chars().count()).sum();
    let per_line = |x: usize| if loc == 0 { 0.0 } else { x as f64 / loc as f64 };

    MetricVector {
        loc: loc as f64,
        sloc: sloc as f64,
        comment_count: comment_lines as f64,
        comment_density: per_line(comment_lines),
        blank_lines: blank as f64,
        total_tokens: tokens.len() as f64,
        unique_tokens: unique.len() as f64,
        avg_line_length: per_line(line_chars),
        code_chars: code_chars as f64,
        function_count: functions as f64,
        variable_count: variables as f64,
        loop_count: loops as f64,
        conditional_count: conditionals as f64,
        try_catch_count: try_catch as f64,
        import_count: imports as f64,
        class_count: classes as f64,
        interface_count: interfaces as f64,
        annotation_count: annotations as f64,
        method_invocation_count: invocations as f64,
        literal_count: (lexed.string_literals + lexed.char_literals + numerics) as f64,
    }
}

/// Reads a labels CSV with `path` and a 0/1 label column.
fn read_labels(labels: &Path, label_column: &str) -> Result<BTreeMap<String, u8>> {
    let text = fs::read_to_string(labels).map_err(|e| Error::io(labels, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let path_idx = headers
        .iter()
        .position(|h| h == "path")
        .ok_or_else(|| Error::Data(format!("{}: no 'path' column", labels.display())))?;
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Data(format!("{}: no '{label_column}' column", labels.display())))?;
    let mut out = BTreeMap::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let path = record.get(path_idx).unwrap_or("").to_owned();
        let label = match record.get(label_idx).unwrap_or("") {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Data(format!(
                    "{} line {}: label '{other}' is not 0 or 1",
                    labels.display(),
                    r + 2
                )))
            }
        };
        if out.insert(path.clone(), label).is_some() {
            return Err(Error::Data(format!("duplicate path '{path}' in labels")));
        }
    }
    Ok(out)
}

/// Extracts metrics for every labelled file under `root`.
///
/// Rows are ordered by relative path; `source_ids` hold those paths.
pub fn extract_corpus(root: &Path, labels: &Path, label_column: &str) -> Result<FeatureMatrix> {
    let labelled = read_labels(labels, label_column)?;
    if labelled.is_empty() {
        return Err(Error::Data(format!("{}: no labelled files", labels.display())));
    }
    let mut rows = Vec::with_capacity(labelled.len());
    let mut label_vec = Vec::with_capacity(labelled.len());
    let mut ids = Vec::with_capacity(labelled.len());
    for (rel, label) in &labelled {
        let path = root.join(rel);
        if !path.is_file() {
            return Err(Error::Data(format!("labelled file '{rel}' not found under {}", root.display())));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let text = String::from_utf8_lossy(&bytes);
        rows.push(extract_metrics(&text).to_array().to_vec());
        label_vec.push(*label);
        ids.push(rel.clone());
    }
    let names = METRIC_NAMES.iter().map(|s| s.to_string()).collect();
    FeatureMatrix::new(names, rows, label_vec, Some(ids))
}
