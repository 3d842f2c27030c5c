//! Parsing of generated answers of the form `([head], relation, [tail])`,
//! optionally several joined by commas, and the canonical renderer that is
//! its inverse.
//!
//! Strict mode accepts exactly
//!
//! ```text
//! answer  := triplet (',' triplet)*
//! triplet := '(' '[' head ']' ',' relation ',' '[' tail ']' ')'
//! ```
//!
//! with any whitespace between tokens. Lenient mode also maps full-width
//! punctuation to ASCII, accepts a single triplet without its parentheses,
//! accepts a trailing separator, skips malformed triplets, and ignores text
//! around the triplet list. Neither mode ever fails: problems are reported as
//! diagnostics carrying codepoint positions.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::RelationTriplet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    Strict,
    #[default]
    Lenient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseConfig {
    pub mode: ParseMode,
}

impl ParseConfig {
    pub const STRICT: ParseConfig = ParseConfig {
        mode: ParseMode::Strict,
    };
    pub const LENIENT: ParseConfig = ParseConfig {
        mode: ParseMode::Lenient,
    };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Codepoint offset into the input, in `[0, len]`.
    pub position: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.position, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseOutcome {
    pub triplets: Vec<RelationTriplet>,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParseOutcome {
    pub fn is_clean(&self) -> bool {
        self.diagnostics.is_empty()
    }
}

const FULL_WIDTH: [(char, char); 6] = [
    ('（', '('),
    ('）', ')'),
    ('［', '['),
    ('］', ']'),
    ('，', ','),
    ('、', ','),
];

fn normalize_char(c: char) -> char {
    FULL_WIDTH
        .iter()
        .find(|(fw, _)| *fw == c)
        .map_or(c, |(_, ascii)| *ascii)
}

fn is_full_width_reserved(c: char) -> bool {
    FULL_WIDTH.iter().any(|(fw, _)| *fw == c)
}

fn forbidden_in_entity(c: char) -> bool {
    matches!(c, '[' | ']' | '［' | '］')
}

fn forbidden_in_relation(c: char) -> bool {
    matches!(c, ',' | '[' | ']' | '(' | ')') || is_full_width_reserved(c)
}

pub fn parse(text: &str, config: ParseConfig) -> ParseOutcome {
    let orig: Vec<char> = text.chars().collect();
    if orig.iter().all(|c| c.is_whitespace()) {
        return ParseOutcome {
            triplets: Vec::new(),
            diagnostics: vec![Diagnostic {
                position: 0,
                message: "empty answer".into(),
            }],
        };
    }
    match config.mode {
        ParseMode::Strict => Cursor::new(orig.clone(), orig, true).parse_strict(),
        ParseMode::Lenient => {
            let norm = orig.iter().copied().map(normalize_char).collect();
            Cursor::new(norm, orig, false).parse_lenient()
        }
    }
}

struct Cursor {
    /// Characters the grammar is matched against.
    norm: Vec<char>,
    /// Characters token text is taken from; same length as `norm`.
    orig: Vec<char>,
    strict: bool,
}

type Step<T> = Result<T, Diagnostic>;

fn diag(position: usize, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        position,
        message: message.into(),
    }
}

impl Cursor {
    fn new(norm: Vec<char>, orig: Vec<char>, strict: bool) -> Self {
        Self { norm, orig, strict }
    }

    fn len(&self) -> usize {
        self.norm.len()
    }

    fn skip_ws(&self, mut pos: usize, end: usize) -> usize {
        while pos < end && self.norm[pos].is_whitespace() {
            pos += 1;
        }
        pos
    }

    fn describe(&self, pos: usize, end: usize) -> String {
        if pos >= end {
            "end of input".to_string()
        } else {
            format!("{:?}", self.norm[pos])
        }
    }

    fn expect(&self, pos: usize, end: usize, want: char) -> Step<usize> {
        let pos = self.skip_ws(pos, end);
        if pos < end && self.norm[pos] == want {
            Ok(pos + 1)
        } else {
            Err(diag(
                pos,
                format!("expected {want:?}, found {}", self.describe(pos, end)),
            ))
        }
    }

    fn text(&self, from: usize, to: usize) -> String {
        self.orig[from..to].iter().collect::<String>().trim().to_string()
    }

    fn entity(&self, pos: usize, end: usize, role: &str) -> Step<(String, usize)> {
        let open = self.expect(pos, end, '[')?;
        let mut i = open;
        while i < end {
            let c = self.norm[i];
            if c == ']' {
                let s = self.text(open, i);
                if s.is_empty() {
                    return Err(diag(open, format!("empty {role} entity")));
                }
                return Ok((s, i + 1));
            }
            if c == '[' || (self.strict && forbidden_in_entity(c)) {
                return Err(diag(i, format!("unexpected {c:?} inside {role} entity")));
            }
            i += 1;
        }
        Err(diag(end, format!("unterminated {role} entity")))
    }

    fn relation(&self, pos: usize, end: usize) -> Step<(String, usize)> {
        let mut i = pos;
        while i < end {
            let c = self.norm[i];
            if c == ',' {
                break;
            }
            if forbidden_in_relation(c) {
                return Err(diag(i, format!("unexpected {c:?} inside relation")));
            }
            i += 1;
        }
        let s = self.text(pos, i);
        if s.is_empty() {
            return Err(diag(pos, "empty relation"));
        }
        Ok((s, i))
    }

    /// `'[' head ']' ',' relation ',' '[' tail ']'`, optionally wrapped in
    /// parentheses. Returns the position just past the triplet.
    fn triplet(&self, pos: usize, end: usize, parens: bool) -> Step<(RelationTriplet, usize)> {
        let mut p = pos;
        if parens {
            p = self.expect(p, end, '(')?;
        }
        let (head, p) = self.entity(p, end, "head")?;
        let p = self.expect(p, end, ',')?;
        let (relation, p) = self.relation(p, end)?;
        let p = self.expect(p, end, ',')?;
        let (tail, mut p) = self.entity(p, end, "tail")?;
        if parens {
            p = self.expect(p, end, ')')?;
        }
        Ok((RelationTriplet { head, relation, tail }, p))
    }

    fn parse_strict(&self) -> ParseOutcome {
        let end = self.len();
        let mut triplets = Vec::new();
        let mut pos = 0;
        loop {
            match self.triplet(pos, end, true) {
                Ok((t, p)) => {
                    triplets.push(t);
                    pos = self.skip_ws(p, end);
                }
                Err(d) => return failed(d),
            }
            if pos == end {
                break;
            }
            if self.norm[pos] != ',' {
                return failed(diag(
                    pos,
                    format!("expected ',' or end of input, found {}", self.describe(pos, end)),
                ));
            }
            pos += 1;
        }
        ParseOutcome {
            triplets,
            diagnostics: Vec::new(),
        }
    }

    fn parse_lenient(&self) -> ParseOutcome {
        let mut out = ParseOutcome::default();
        let first_open = self.norm.iter().position(|&c| c == '(');
        let last_close = self.norm.iter().rposition(|&c| c == ')');
        let (first, last) = match (first_open, last_close) {
            (Some(f), Some(l)) if l > f => (f, l),
            _ => return self.parse_bare(out),
        };

        if self.has_content(0, first) {
            out.diagnostics.push(diag(0, "ignored text before the first '('"));
        }
        let tail_start = last + 1;
        let tail_text: String = self.norm[tail_start..].iter().filter(|c| !c.is_whitespace()).collect();
        if !tail_text.is_empty() && tail_text != "," {
            out.diagnostics
                .push(diag(tail_start, "ignored text after the last ')'"));
        }

        let segments = self.split_top_level(first, last + 1);
        let n = segments.len();
        for (k, (s, e)) in segments.into_iter().enumerate() {
            let s = self.skip_ws(s, e);
            if s == e {
                // a trailing separator leaves one empty final segment
                if k + 1 != n || n == 1 {
                    out.diagnostics.push(diag(s, "empty triplet between separators"));
                }
                continue;
            }
            match self.triplet(s, e, true) {
                Ok((t, p)) => {
                    if self.has_content(p, e) {
                        out.diagnostics.push(diag(p, "ignored text after triplet"));
                    }
                    out.triplets.push(t);
                }
                Err(d) => out.diagnostics.push(d),
            }
        }
        out
    }

    fn parse_bare(&self, mut out: ParseOutcome) -> ParseOutcome {
        let end = self.len();
        let Some(start) = self.norm.iter().position(|&c| c == '[') else {
            out.diagnostics.push(diag(0, "no triplet found"));
            return out;
        };
        if self.has_content(0, start) {
            out.diagnostics.push(diag(0, "ignored text before the first '['"));
        }
        match self.triplet(start, end, false) {
            Ok((t, p)) => {
                let rest: String = self.norm[p..].iter().filter(|c| !c.is_whitespace()).collect();
                if !rest.is_empty() && rest != "," {
                    out.diagnostics.push(diag(p, "ignored text after triplet"));
                }
                out.triplets.push(t);
            }
            Err(d) => out.diagnostics.push(d),
        }
        out
    }

    fn has_content(&self, from: usize, to: usize) -> bool {
        self.norm[from..to].iter().any(|c| !c.is_whitespace())
    }

    /// Split `[from, to)` at commas outside parentheses and brackets.
    fn split_top_level(&self, from: usize, to: usize) -> Vec<(usize, usize)> {
        let mut segments = Vec::new();
        let mut depth: usize = 0;
        let mut in_bracket = false;
        let mut start = from;
        for i in from..to {
            match self.norm[i] {
                '[' => in_bracket = true,
                ']' => in_bracket = false,
                '(' if !in_bracket => depth += 1,
                ')' if !in_bracket => depth = depth.saturating_sub(1),
                ',' if !in_bracket && depth == 0 => {
                    segments.push((start, i));
                    start = i + 1;
                }
                _ => {}
            }
        }
        segments.push((start, to));
        segments
    }
}

fn failed(d: Diagnostic) -> ParseOutcome {
    ParseOutcome {
        triplets: Vec::new(),
        diagnostics: vec![d],
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("nothing to render")]
    Empty,
    #[error("triplet {index}: {field} {value:?} cannot be rendered ({reason})")]
    Unencodable {
        index: usize,
        field: &'static str,
        value: String,
        reason: &'static str,
    },
}

fn check_token(index: usize, field: &'static str, value: &str, forbidden: fn(char) -> bool) -> Result<(), RenderError> {
    let err = |reason| RenderError::Unencodable {
        index,
        field,
        value: value.to_string(),
        reason,
    };
    if value.trim().is_empty() {
        return Err(err("empty"));
    }
    if value.trim() != value {
        return Err(err("leading or trailing whitespace"));
    }
    if value.chars().any(forbidden) {
        return Err(err("contains a reserved delimiter"));
    }
    Ok(())
}

/// Canonical `([h], r, [t])` form, joined by `", "`.
pub fn render(triplets: &[RelationTriplet]) -> Result<String, RenderError> {
    if triplets.is_empty() {
        return Err(RenderError::Empty);
    }
    let mut parts = Vec::with_capacity(triplets.len());
    for (i, t) in triplets.iter().enumerate() {
        check_token(i, "head", &t.head, forbidden_in_entity)?;
        check_token(i, "relation", &t.relation, forbidden_in_relation)?;
        check_token(i, "tail", &t.tail, forbidden_in_entity)?;
        parts.push(t.to_string());
    }
    Ok(parts.join(", "))
}

/// Whether `label` can appear as a relation in rendered output.
pub fn is_renderable_relation(label: &str) -> bool {
    check_token(0, "relation", label, forbidden_in_relation).is_ok()
}
