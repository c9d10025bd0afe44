//! Parsing of proposer responses into designs.
//!
//! A response is free text containing (usually) a fenced code block with two
//! assignments:
//!
//! ```text
//! node_dict = {'node_1': (0, 0), 'node_4': (2, 3)}  # comment
//! member_dict = {'member_1': ('node_1', 'node_4', '2')}
//! ```
//!
//! Only dict, tuple/list, string and number literals are understood. Nothing
//! in the response is ever executed. Other top-level statements are skipped
//! with a diagnostic. A `#` comment on the same line as a dict entry, or on
//! the comment-only lines directly above it, becomes that entry's rationale.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::model::{Member, Point2, TrussDesign};

const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    NoCodeBlock,
    MissingNodeDict,
    MissingMemberDict,
    SyntaxError,
    BadShape,
}

/// A parse failure; `line`/`column` are 1-based positions in the text that
/// was handed to the parser (the whole response for [`parse_response`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
    pub detail: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ParseErrorKind::NoCodeBlock => "no code block",
            ParseErrorKind::MissingNodeDict => "missing node_dict",
            ParseErrorKind::MissingMemberDict => "missing member_dict",
            ParseErrorKind::SyntaxError => "syntax error",
            ParseErrorKind::BadShape => "bad shape",
        };
        write!(
            f,
            "{kind} at line {}, column {}: {}",
            self.line, self.column, self.detail
        )
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub design: TrussDesign,
    pub rationale: IndexMap<String, String>,
    /// Bytes of response text outside the parsed code.
    pub extra_text: usize,
    /// Skipped statements and other non-fatal findings.
    pub diagnostics: Vec<String>,
}

/// Code located inside a response, with its byte offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtractedCode<'a> {
    pub text: &'a str,
    pub offset: usize,
}

/// The last fenced block that mentions `node_dict` or `member_dict` (or the
/// last fenced block if none does); without fences, everything from the
/// first `node_dict` onwards.
pub fn extract_code(response: &str) -> Result<ExtractedCode<'_>, ParseError> {
    let blocks = fenced_blocks(response);
    let mentions = |b: &(usize, usize)| {
        let t = &response[b.0..b.1];
        t.contains("node_dict") || t.contains("member_dict")
    };
    let chosen = blocks
        .iter()
        .rev()
        .find(|b| mentions(b))
        .or_else(|| blocks.last());
    if let Some(&(start, end)) = chosen {
        return Ok(ExtractedCode {
            text: &response[start..end],
            offset: start,
        });
    }
    if let Some(start) = response.find("node_dict") {
        return Ok(ExtractedCode {
            text: &response[start..],
            offset: start,
        });
    }
    Err(ParseError {
        kind: ParseErrorKind::NoCodeBlock,
        line: 1,
        column: 1,
        detail: "no fenced code block and no node_dict assignment found".into(),
    })
}

/// Byte ranges of fenced block contents. The opening fence line (including
/// any language tag) is excluded; an unterminated final fence runs to the
/// end of the text.
fn fenced_blocks(text: &str) -> Vec<(usize, usize)> {
    let fences: Vec<usize> = text.match_indices("```").map(|(i, _)| i).collect();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < fences.len() {
        let open = fences[i];
        let after = open + 3;
        let content_start = match text[after..].find('\n') {
            Some(nl) => after + nl + 1,
            None => text.len(),
        };
        // A closing fence inside the opening line cannot close this block.
        let mut j = i + 1;
        while j < fences.len() && fences[j] < content_start {
            j += 1;
        }
        match fences.get(j) {
            Some(&close) => {
                blocks.push((content_start, close));
                i = j + 1;
            }
            None => {
                blocks.push((content_start.min(text.len()), text.len()));
                break;
            }
        }
    }
    blocks
}

/// Extract and parse a full response. Error positions refer to `response`.
pub fn parse_response(response: &str) -> Result<ParsedResponse, ParseError> {
    let code = extract_code(response)?;
    let mut parsed = parse_span(response, code.offset, code.offset + code.text.len())?;
    parsed.extra_text = response.len() - code.text.len();
    Ok(parsed)
}

/// Parse code consisting of `node_dict`/`member_dict` assignments.
pub fn parse_design(code: &str) -> Result<ParsedResponse, ParseError> {
    parse_span(code, 0, code.len())
}

fn parse_span(source: &str, start: usize, end: usize) -> Result<ParsedResponse, ParseError> {
    let lexer = Lexer::new(source, start, end);
    let (tokens, comments) = lexer.run();
    let mut p = Parser {
        source,
        tokens,
        pos: 0,
        diagnostics: Vec::new(),
    };
    let mut node_dict: Option<(Value, usize)> = None;
    let mut member_dict: Option<(Value, usize)> = None;

    loop {
        p.skip_newlines();
        let Some(tok) = p.peek() else { break };
        let stmt_start = tok.start;
        if let Tok::Ident(name) = &tok.kind {
            let is_assign = matches!(p.peek_at(1).map(|t| &t.kind), Some(Tok::Punct('=')));
            if is_assign && (name == "node_dict" || name == "member_dict") {
                let name = name.clone();
                p.pos += 2;
                let value = p.value(0)?;
                p.expect_statement_end()?;
                let slot = if name == "node_dict" {
                    &mut node_dict
                } else {
                    &mut member_dict
                };
                if slot.is_some() {
                    p.diagnostics.push(format!(
                        "{name} assigned more than once; the last one is used"
                    ));
                }
                *slot = Some((value, stmt_start));
                continue;
            }
        }
        let (line, _) = line_col(source, stmt_start);
        p.diagnostics
            .push(format!("ignored statement at line {line}"));
        p.skip_statement();
    }

    let at_start = |kind, detail: &str| {
        let (line, column) = line_col(source, start);
        ParseError {
            kind,
            line,
            column,
            detail: detail.into(),
        }
    };
    let (nodes_val, _) = node_dict.ok_or_else(|| {
        at_start(
            ParseErrorKind::MissingNodeDict,
            "node_dict assignment not found",
        )
    })?;
    let (members_val, _) = member_dict.ok_or_else(|| {
        at_start(
            ParseErrorKind::MissingMemberDict,
            "member_dict assignment not found",
        )
    })?;

    let mut diagnostics = p.diagnostics;
    let mut entries = Vec::new();
    let nodes = shape_nodes(source, &nodes_val, &mut entries, &mut diagnostics)?;
    let members = shape_members(source, &members_val, &mut entries, &mut diagnostics)?;
    let rationale = attach_comments(&entries, &comments);

    Ok(ParsedResponse {
        design: TrussDesign::new(nodes, members),
        rationale,
        extra_text: 0,
        diagnostics,
    })
}

/// 1-based line and column (in characters) of byte offset `at`.
fn line_col(source: &str, at: usize) -> (usize, usize) {
    let mut at = at.min(source.len());
    while !source.is_char_boundary(at) {
        at -= 1;
    }
    let before = &source[..at];
    let line = before.bytes().filter(|&b| b == b'\n').count() + 1;
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let column = source[line_start..at].chars().count() + 1;
    (line, column)
}

// ---------------------------------------------------------------- lexing

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Punct(char),
    Newline,
    /// A malformed string or number; fatal only inside a literal.
    Bad(String),
}

#[derive(Debug, Clone)]
struct Token {
    kind: Tok,
    start: usize,
    line: usize,
}

#[derive(Debug, Clone)]
struct Comment {
    line: usize,
    text: String,
    /// Nothing but whitespace precedes the comment on its line.
    own_line: bool,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    end: usize,
    line: usize,
    line_has_code: bool,
    tokens: Vec<Token>,
    comments: Vec<Comment>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str, start: usize, end: usize) -> Self {
        let line = src[..start].bytes().filter(|&b| b == b'\n').count() + 1;
        Self {
            src,
            bytes: src.as_bytes(),
            pos: start,
            end,
            line,
            line_has_code: false,
            tokens: Vec::new(),
            comments: Vec::new(),
        }
    }

    fn push(&mut self, kind: Tok, start: usize) {
        self.tokens.push(Token {
            kind,
            start,
            line: self.line,
        });
        self.line_has_code = true;
    }

    fn run(mut self) -> (Vec<Token>, Vec<Comment>) {
        while self.pos < self.end {
            let start = self.pos;
            let b = self.bytes[self.pos];
            match b {
                b'\n' => {
                    self.push(Tok::Newline, start);
                    self.pos += 1;
                    self.line += 1;
                    self.line_has_code = false;
                }
                b' ' | b'\t' | b'\r' | b'\x0c' => self.pos += 1,
                b'\\' if self.bytes.get(self.pos + 1) == Some(&b'\n') => {
                    // explicit line continuation
                    self.pos += 2;
                    self.line += 1;
                }
                b'#' => {
                    let stop = self.src[self.pos..self.end]
                        .find('\n')
                        .map_or(self.end, |i| self.pos + i);
                    let text = self.src[self.pos + 1..stop].trim().to_owned();
                    self.comments.push(Comment {
                        line: self.line,
                        text,
                        own_line: !self.line_has_code,
                    });
                    self.pos = stop;
                }
                b'\'' | b'"' => {
                    let tok = self.string(b);
                    self.push(tok, start);
                }
                b'0'..=b'9' | b'.' => {
                    let tok = self.number();
                    self.push(tok, start);
                }
                b'-' | b'+' => {
                    let next = self.bytes.get(self.pos + 1).copied();
                    if matches!(next, Some(b'0'..=b'9' | b'.')) && self.pos + 1 < self.end {
                        let tok = self.number();
                        self.push(tok, start);
                    } else {
                        self.push(Tok::Punct(b as char), start);
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_alphabetic() || b == b'_' => {
                    while self.pos < self.end
                        && (self.bytes[self.pos].is_ascii_alphanumeric()
                            || self.bytes[self.pos] == b'_')
                    {
                        self.pos += 1;
                    }
                    let ident = self.src[start..self.pos].to_owned();
                    self.push(Tok::Ident(ident), start);
                }
                b'{' | b'}' | b'(' | b')' | b'[' | b']' | b':' | b',' | b'=' => {
                    self.push(Tok::Punct(b as char), start);
                    self.pos += 1;
                }
                _ => {
                    // Any other character: a single opaque token. It can only
                    // appear in skipped statements; the value parser rejects it.
                    let ch = self.src[self.pos..].chars().next().unwrap_or('\u{fffd}');
                    self.pos += ch.len_utf8();
                    self.push(Tok::Punct(ch), start);
                }
            }
        }
        (self.tokens, self.comments)
    }

    fn string(&mut self, quote: u8) -> Tok {
        self.pos += 1;
        let mut out: Vec<u8> = Vec::new();
        loop {
            if self.pos >= self.end || self.bytes[self.pos] == b'\n' {
                return Tok::Bad("unterminated string".into());
            }
            let b = self.bytes[self.pos];
            match b {
                b'\\' => {
                    let Some(&next) = self
                        .bytes
                        .get(self.pos + 1)
                        .filter(|_| self.pos + 1 < self.end)
                    else {
                        self.pos += 1;
                        return Tok::Bad("unterminated string".into());
                    };
                    match next {
                        b'n' => out.push(b'\n'),
                        b't' => out.push(b'\t'),
                        b'r' => out.push(b'\r'),
                        b'\\' | b'\'' | b'"' => out.push(next),
                        b'\n' => self.line += 1,
                        _ => {
                            out.push(b'\\');
                            out.push(next);
                        }
                    }
                    self.pos += 2;
                }
                _ if b == quote => {
                    self.pos += 1;
                    return Tok::Str(String::from_utf8_lossy(&out).into_owned());
                }
                _ => {
                    out.push(b);
                    self.pos += 1;
                }
            }
        }
    }

    fn number(&mut self) -> Tok {
        let start = self.pos;
        if matches!(self.bytes[self.pos], b'-' | b'+') {
            self.pos += 1;
        }
        let mut prev = 0u8;
        while self.pos < self.end {
            let b = self.bytes[self.pos];
            let ok = b.is_ascii_digit()
                || b == b'.'
                || b == b'_'
                || b == b'e'
                || b == b'E'
                || ((b == b'-' || b == b'+') && (prev == b'e' || prev == b'E'));
            if !ok {
                break;
            }
            prev = b;
            self.pos += 1;
        }
        let text: String = self.src[start..self.pos]
            .chars()
            .filter(|&c| c != '_')
            .collect();
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Tok::Num(v),
            _ => Tok::Bad(format!("invalid number `{}`", &self.src[start..self.pos])),
        }
    }
}

// --------------------------------------------------------------- parsing

#[derive(Debug, Clone)]
enum ValueKind {
    Str(String),
    Num(f64),
    Seq(Vec<Value>),
    Dict(Vec<(Value, Value)>),
}

#[derive(Debug, Clone)]
struct Value {
    kind: ValueKind,
    start: usize,
    first_line: usize,
    last_line: usize,
}

struct Parser<'a> {
    source: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    diagnostics: Vec<String>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_at(&self, k: usize) -> Option<&Token> {
        self.tokens.get(self.pos + k)
    }

    fn error_at(&self, at: usize, detail: impl Into<String>) -> ParseError {
        let (line, column) = line_col(self.source, at);
        ParseError {
            kind: ParseErrorKind::SyntaxError,
            line,
            column,
            detail: detail.into(),
        }
    }

    fn eof_offset(&self) -> usize {
        self.tokens.last().map_or(0, |t| t.start)
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek().map(|t| &t.kind), Some(Tok::Newline)) {
            self.pos += 1;
        }
    }

    /// Skip to the end of the current statement, honouring brackets.
    fn skip_statement(&mut self) {
        let mut depth = 0usize;
        while let Some(tok) = self.peek() {
            match tok.kind {
                Tok::Newline if depth == 0 => break,
                // an unbalanced bracket in prose must not swallow the dicts
                Tok::Newline if self.assignment_follows() => break,
                Tok::Punct('(' | '[' | '{') => depth += 1,
                Tok::Punct(')' | ']' | '}') => depth = depth.saturating_sub(1),
                _ => {}
            }
            self.pos += 1;
        }
    }

    fn assignment_follows(&self) -> bool {
        let name = matches!(
            self.peek_at(1).map(|t| &t.kind),
            Some(Tok::Ident(n)) if n == "node_dict" || n == "member_dict"
        );
        name && matches!(self.peek_at(2).map(|t| &t.kind), Some(Tok::Punct('=')))
    }

    fn expect_statement_end(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(Token {
                kind: Tok::Newline, ..
            }) => Ok(()),
            Some(Token {
                kind: Tok::Punct(';'),
                ..
            }) => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.error_at(t.start, "expected end of line after dict literal")),
        }
    }

    /// Skip newlines inside brackets.
    fn skip_layout(&mut self) {
        self.skip_newlines();
    }

    fn value(&mut self, depth: usize) -> Result<Value, ParseError> {
        if depth > MAX_DEPTH {
            let at = self.peek().map_or(self.eof_offset(), |t| t.start);
            return Err(self.error_at(at, "literal nested too deeply"));
        }
        self.skip_layout();
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error_at(
                self.source.len(),
                "unexpected end of input, expected a literal",
            ));
        };
        self.pos += 1;
        let mk = |kind, last_line| Value {
            kind,
            start: tok.start,
            first_line: tok.line,
            last_line,
        };
        match tok.kind {
            Tok::Str(s) => Ok(mk(ValueKind::Str(s), tok.line)),
            Tok::Num(v) => Ok(mk(ValueKind::Num(v), tok.line)),
            Tok::Punct('{') => {
                let (entries, last) = self.dict_body(depth)?;
                Ok(mk(ValueKind::Dict(entries), last))
            }
            Tok::Punct(open @ ('(' | '[')) => {
                let close = if open == '(' { ')' } else { ']' };
                let (items, last) = self.seq_body(close, depth)?;
                Ok(mk(ValueKind::Seq(items), last))
            }
            Tok::Ident(name) => Err(self.error_at(
                tok.start,
                format!("`{name}` is not a literal; only strings, numbers, tuples and dicts are accepted"),
            )),
            Tok::Bad(detail) => Err(self.error_at(tok.start, detail)),
            Tok::Newline => unreachable!("layout skipped"),
            Tok::Punct(c) => Err(self.error_at(tok.start, format!("unexpected `{c}`, expected a literal"))),
        }
    }

    fn dict_body(&mut self, depth: usize) -> Result<(Vec<(Value, Value)>, usize), ParseError> {
        let mut entries = Vec::new();
        loop {
            self.skip_layout();
            match self.peek().cloned() {
                Some(Token {
                    kind: Tok::Punct('}'),
                    line,
                    ..
                }) => {
                    self.pos += 1;
                    return Ok((entries, line));
                }
                None => {
                    return Err(self.error_at(self.source.len(), "unterminated dict, expected `}`"))
                }
                _ => {}
            }
            let key = self.value(depth + 1)?;
            self.skip_layout();
            match self.peek() {
                Some(Token {
                    kind: Tok::Punct(':'),
                    ..
                }) => self.pos += 1,
                Some(t) => return Err(self.error_at(t.start, "expected `:` after dict key")),
                None => {
                    return Err(self.error_at(self.source.len(), "unterminated dict, expected `:`"))
                }
            }
            let value = self.value(depth + 1)?;
            entries.push((key, value));
            self.skip_layout();
            match self.peek() {
                Some(Token {
                    kind: Tok::Punct(','),
                    ..
                }) => self.pos += 1,
                Some(Token {
                    kind: Tok::Punct('}'),
                    ..
                }) => {}
                Some(t) => return Err(self.error_at(t.start, "expected `,` or `}` in dict")),
                None => {
                    return Err(self.error_at(self.source.len(), "unterminated dict, expected `}`"))
                }
            }
        }
    }

    fn seq_body(&mut self, close: char, depth: usize) -> Result<(Vec<Value>, usize), ParseError> {
        let mut items = Vec::new();
        loop {
            self.skip_layout();
            match self.peek().cloned() {
                Some(Token {
                    kind: Tok::Punct(c),
                    line,
                    ..
                }) if c == close => {
                    self.pos += 1;
                    return Ok((items, line));
                }
                None => {
                    return Err(self.error_at(
                        self.source.len(),
                        format!("unterminated sequence, expected `{close}`"),
                    ))
                }
                _ => {}
            }
            items.push(self.value(depth + 1)?);
            self.skip_layout();
            match self.peek() {
                Some(Token {
                    kind: Tok::Punct(','),
                    ..
                }) => self.pos += 1,
                Some(Token {
                    kind: Tok::Punct(c),
                    ..
                }) if *c == close => {}
                Some(t) => return Err(self.error_at(t.start, format!("expected `,` or `{close}`"))),
                None => {
                    return Err(self.error_at(
                        self.source.len(),
                        format!("unterminated sequence, expected `{close}`"),
                    ))
                }
            }
        }
    }
}

// ------------------------------------------------------------ shape checks

struct Entry {
    key: String,
    first_line: usize,
    last_line: usize,
}

fn shape_error(source: &str, at: usize, detail: impl Into<String>) -> ParseError {
    let (line, column) = line_col(source, at);
    ParseError {
        kind: ParseErrorKind::BadShape,
        line,
        column,
        detail: detail.into(),
    }
}

fn dict_entries<'v>(
    source: &str,
    v: &'v Value,
    name: &str,
) -> Result<&'v [(Value, Value)], ParseError> {
    match &v.kind {
        ValueKind::Dict(entries) => Ok(entries),
        _ => Err(shape_error(
            source,
            v.start,
            format!("{name} must be a dict literal"),
        )),
    }
}

fn key_string(source: &str, k: &Value) -> Result<String, ParseError> {
    match &k.kind {
        ValueKind::Str(s) if !s.is_empty() => Ok(s.clone()),
        ValueKind::Str(_) => Err(shape_error(
            source,
            k.start,
            "keys must be non-empty strings",
        )),
        _ => Err(shape_error(source, k.start, "keys must be quoted strings")),
    }
}

fn shape_nodes(
    source: &str,
    v: &Value,
    entries: &mut Vec<Entry>,
    diagnostics: &mut Vec<String>,
) -> Result<IndexMap<String, Point2>, ParseError> {
    let mut out = IndexMap::new();
    for (k, val) in dict_entries(source, v, "node_dict")? {
        let key = key_string(source, k)?;
        let coords = match &val.kind {
            ValueKind::Seq(items) if items.len() == 2 => {
                let mut xy = [0.0; 2];
                for (slot, item) in xy.iter_mut().zip(items) {
                    match item.kind {
                        ValueKind::Num(n) => *slot = n,
                        _ => {
                            return Err(shape_error(
                                source,
                                item.start,
                                "node coordinates must be numbers",
                            ))
                        }
                    }
                }
                Point2::new(xy[0], xy[1])
            }
            ValueKind::Seq(items) => {
                return Err(shape_error(
                    source,
                    val.start,
                    format!(
                        "node `{key}` needs an (x, y) pair, found {} values",
                        items.len()
                    ),
                ))
            }
            _ => {
                return Err(shape_error(
                    source,
                    val.start,
                    format!("node `{key}` needs an (x, y) tuple"),
                ))
            }
        };
        if out.insert(key.clone(), coords).is_some() {
            diagnostics.push(format!(
                "node `{key}` defined more than once; the last one is used"
            ));
        }
        entries.push(Entry {
            key,
            first_line: k.first_line,
            last_line: val.last_line,
        });
    }
    Ok(out)
}

fn shape_members(
    source: &str,
    v: &Value,
    entries: &mut Vec<Entry>,
    diagnostics: &mut Vec<String>,
) -> Result<IndexMap<String, Member>, ParseError> {
    let mut out = IndexMap::new();
    for (k, val) in dict_entries(source, v, "member_dict")? {
        let key = key_string(source, k)?;
        let member = match &val.kind {
            ValueKind::Seq(items) if items.len() == 3 => {
                let mut parts = Vec::with_capacity(3);
                for item in items {
                    match &item.kind {
                        ValueKind::Str(s) => parts.push(s.clone()),
                        _ => {
                            return Err(shape_error(
                                source,
                                item.start,
                                format!("member `{key}` entries must be quoted strings ('start', 'end', 'area_id')"),
                            ))
                        }
                    }
                }
                let area = parts.pop().expect("three parts");
                let b = parts.pop().expect("three parts");
                let a = parts.pop().expect("three parts");
                Member::new(a, b, area)
            }
            ValueKind::Seq(items) => {
                return Err(shape_error(
                    source,
                    val.start,
                    format!(
                    "member `{key}` needs a 3-tuple ('start', 'end', 'area_id'), found {} values",
                    items.len()
                ),
                ))
            }
            _ => {
                return Err(shape_error(
                    source,
                    val.start,
                    format!("member `{key}` needs a 3-tuple ('start', 'end', 'area_id')"),
                ))
            }
        };
        if out.insert(key.clone(), member).is_some() {
            diagnostics.push(format!(
                "member `{key}` defined more than once; the last one is used"
            ));
        }
        entries.push(Entry {
            key,
            first_line: k.first_line,
            last_line: val.last_line,
        });
    }
    Ok(out)
}

fn attach_comments(entries: &[Entry], comments: &[Comment]) -> IndexMap<String, String> {
    let mut out: IndexMap<String, String> = IndexMap::new();
    // An entry's "own" lines; comments there belong to no other entry.
    for (i, e) in entries.iter().enumerate() {
        let mut parts: Vec<&str> = Vec::new();
        // Comment-only lines directly above the entry.
        let mut above = Vec::new();
        let mut line = e.first_line;
        while line > 1 {
            line -= 1;
            let owner_above = entries[..i].iter().any(|p| p.last_line == line);
            match comments.iter().find(|c| c.line == line && c.own_line) {
                Some(c) if !owner_above => above.push(c.text.as_str()),
                _ => break,
            }
        }
        above.reverse();
        parts.extend(above);
        let later_starts_on_last = entries[i + 1..].iter().any(|n| n.first_line == e.last_line);
        for c in comments {
            if !c.own_line && c.line >= e.first_line && c.line <= e.last_line {
                if c.line == e.last_line && later_starts_on_last {
                    // shared line: the comment trails the last entry on it
                    continue;
                }
                parts.push(&c.text);
            }
        }
        let text = parts
            .into_iter()
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join(" ");
        if !text.is_empty() {
            match out.get_mut(&e.key) {
                Some(existing) => {
                    existing.push(' ');
                    existing.push_str(&text);
                }
                None => {
                    out.insert(e.key.clone(), text);
                }
            }
        }
    }
    out
}
