//! Recursive-descent parser for manifest text.
//!
//! ```text
//! manifest  := header* statement*
//! header    := ("TITLE" | "DESCRIPTION") ":" rest-of-line
//!            | "PIPELINE" ":" ident ("->" ident)*      // may continue on lines starting with "->"
//! statement := ident "(" param ("," param)* ")"
//! param     := ident ":" value
//! value     := string | number | "[" value ("," value)* "]" | "NOW"
//! ```

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use super::canon::hash_source;
use super::model::{Manifest, OperatorSpec, OperatorType, ParamValue};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown operator type `{type_name}` for `{id}` at line {line}")]
    UnknownOperatorType {
        id: String,
        type_name: String,
        line: usize,
    },
    #[error("operator `{id}` defined twice (line {line})")]
    DuplicateOperatorId { id: String, line: usize },
    #[error("pipeline references undefined operator `{id}`")]
    UnresolvedPipelineRef { id: String },
    #[error("pipeline lists `{id}` more than once")]
    DuplicatePipelineRef { id: String },
}

impl ParseError {
    /// 1-based (line, column) of the error, when it has one.
    pub fn position(&self) -> Option<(usize, usize)> {
        match self {
            ParseError::Syntax { line, column, .. } => Some((*line, *column)),
            ParseError::UnknownOperatorType { line, .. }
            | ParseError::DuplicateOperatorId { line, .. } => Some((*line, 1)),
            _ => None,
        }
    }
}

/// Parses manifest text into a [`Manifest`]. Structural checks beyond what the
/// grammar and name resolution require are left to [`super::validate`].
pub fn parse(source: &str) -> Result<Manifest, ParseError> {
    let mut parser = Parser::new(source);
    let parsed = parser.manifest()?;

    let mut seen = HashSet::new();
    for id in &parsed.pipeline {
        if !seen.insert(id.as_str()) {
            return Err(ParseError::DuplicatePipelineRef { id: id.clone() });
        }
        if !parsed.operators.contains_key(id) {
            return Err(ParseError::UnresolvedPipelineRef { id: id.clone() });
        }
    }

    Ok(Manifest {
        title: parsed.title,
        description: parsed.description,
        pipeline: parsed.pipeline,
        operators: parsed.operators,
        access_pattern: None,
        schedule: None,
        manifest_hash: hash_source(source),
    })
}

struct Parsed {
    title: String,
    description: String,
    pipeline: Vec<String>,
    operators: BTreeMap<String, OperatorSpec>,
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    column: usize,
}

impl Parser {
    fn new(src: &str) -> Self {
        Self {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            column: 1,
        }
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            line: self.line,
            column: self.column,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn at_comment(&self) -> bool {
        self.peek() == Some('/') && self.peek_at(1) == Some('/')
    }

    fn skip_comment(&mut self) {
        while let Some(c) = self.peek() {
            if c == '\n' {
                break;
            }
            self.bump();
        }
    }

    /// Skips spaces, tabs and comments on the current line.
    fn skip_inline_ws(&mut self) {
        loop {
            match self.peek() {
                Some(' ') | Some('\t') | Some('\r') => {
                    self.bump();
                }
                Some('/') if self.at_comment() => self.skip_comment(),
                _ => break,
            }
        }
    }

    /// Skips all whitespace including newlines, and comments.
    fn skip_ws(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_whitespace() => {
                    self.bump();
                }
                Some('/') if self.at_comment() => self.skip_comment(),
                _ => break,
            }
        }
    }

    fn expect(&mut self, expected: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(c) if c == expected => {
                self.bump();
                Ok(())
            }
            Some(c) => self.error(format!("expected `{expected}`, found `{c}`")),
            None => self.error(format!("expected `{expected}`, found end of input")),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        let mut out = String::new();
        match self.peek() {
            Some(c) if c.is_alphabetic() || c == '_' => {}
            Some(c) => return self.error(format!("expected identifier, found `{c}`")),
            None => return self.error("expected identifier, found end of input"),
        }
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' {
                out.push(c);
                self.bump();
            } else {
                break;
            }
        }
        Ok(out)
    }

    fn rest_of_line(&mut self) -> String {
        let mut out = String::new();
        while let Some(c) = self.peek() {
            if c == '\n' || self.at_comment() {
                break;
            }
            out.push(c);
            self.bump();
        }
        self.skip_comment();
        out.trim().to_string()
    }

    fn manifest(&mut self) -> Result<Parsed, ParseError> {
        let mut title = None;
        let mut description = None;
        let mut pipeline: Option<Vec<String>> = None;
        let mut operators = BTreeMap::new();

        loop {
            self.skip_ws();
            if self.peek().is_none() {
                break;
            }
            let (line, column) = (self.line, self.column);
            let name = self.ident()?;
            self.skip_inline_ws();
            match (name.as_str(), self.peek()) {
                ("TITLE", Some(':')) | ("DESCRIPTION", Some(':')) | ("PIPELINE", Some(':')) => {
                    self.bump();
                    self.skip_inline_ws();
                    let slot_taken = match name.as_str() {
                        "TITLE" => title.is_some(),
                        "DESCRIPTION" => description.is_some(),
                        _ => pipeline.is_some(),
                    };
                    if slot_taken {
                        return Err(ParseError::Syntax {
                            line,
                            column,
                            message: format!("duplicate `{name}` header"),
                        });
                    }
                    match name.as_str() {
                        "TITLE" => title = Some(self.rest_of_line()),
                        "DESCRIPTION" => description = Some(self.rest_of_line()),
                        _ => pipeline = Some(self.pipeline()?),
                    }
                }
                (_, Some('(')) => {
                    let spec = self.operator(name.clone(), line)?;
                    if operators.contains_key(&name) {
                        return Err(ParseError::DuplicateOperatorId { id: name, line });
                    }
                    operators.insert(name, spec);
                }
                (_, _) => {
                    return self.error(format!(
                        "expected `(` after operator name `{name}` or `:` after a header"
                    ))
                }
            }
        }

        let Some(title) = title else {
            return Err(ParseError::Syntax {
                line: 1,
                column: 1,
                message: "missing `TITLE:` header".into(),
            });
        };
        let Some(pipeline) = pipeline else {
            return Err(ParseError::Syntax {
                line: 1,
                column: 1,
                message: "missing `PIPELINE:` header".into(),
            });
        };
        Ok(Parsed {
            title,
            description: description.unwrap_or_default(),
            pipeline,
            operators,
        })
    }

    fn at_arrow(&self) -> bool {
        self.peek() == Some('-') && self.peek_at(1) == Some('>')
    }

    fn pipeline(&mut self) -> Result<Vec<String>, ParseError> {
        let mut ids = vec![self.ident()?];
        loop {
            self.skip_inline_ws();
            if self.at_arrow() {
                self.bump();
                self.bump();
                self.skip_inline_ws();
                ids.push(self.ident()?);
                continue;
            }
            // A following line that starts with `->` continues the pipeline.
            let checkpoint = (self.pos, self.line, self.column);
            self.skip_ws();
            if self.at_arrow() {
                continue;
            }
            (self.pos, self.line, self.column) = checkpoint;
            break;
        }
        Ok(ids)
    }

    fn operator(&mut self, id: String, line: usize) -> Result<OperatorSpec, ParseError> {
        self.expect('(')?;
        let mut params = BTreeMap::new();
        let mut op_type = None;
        self.skip_ws();
        if self.peek() != Some(')') {
            loop {
                self.skip_ws();
                let key_line = self.line;
                let key_col = self.column;
                let key = self.ident()?;
                self.skip_ws();
                self.expect(':')?;
                self.skip_ws();
                let value = self.value()?;
                if key == "type" {
                    let ParamValue::Str(type_name) = value else {
                        return Err(ParseError::Syntax {
                            line: key_line,
                            column: key_col,
                            message: "`type` must be a quoted operator name".into(),
                        });
                    };
                    let parsed = type_name.parse::<OperatorType>().map_err(|_| {
                        ParseError::UnknownOperatorType {
                            id: id.clone(),
                            type_name: type_name.clone(),
                            line,
                        }
                    })?;
                    if op_type.replace(parsed).is_some() {
                        return Err(ParseError::Syntax {
                            line: key_line,
                            column: key_col,
                            message: "duplicate `type` parameter".into(),
                        });
                    }
                } else if params.insert(key.clone(), value).is_some() {
                    return Err(ParseError::Syntax {
                        line: key_line,
                        column: key_col,
                        message: format!("duplicate parameter `{key}`"),
                    });
                }
                self.skip_ws();
                match self.peek() {
                    Some(',') => {
                        self.bump();
                    }
                    Some(')') => break,
                    Some(c) => return self.error(format!("expected `,` or `)`, found `{c}`")),
                    None => return self.error("unterminated operator definition"),
                }
            }
        }
        self.expect(')')?;
        let Some(op_type) = op_type else {
            return Err(ParseError::Syntax {
                line,
                column: 1,
                message: format!("operator `{id}` has no `type` parameter"),
            });
        };
        Ok(OperatorSpec {
            id,
            op_type,
            params,
        })
    }

    fn value(&mut self) -> Result<ParamValue, ParseError> {
        match self.peek() {
            Some('"') => self.string().map(ParamValue::Str),
            Some('[') => {
                self.bump();
                let mut items = Vec::new();
                self.skip_ws();
                if self.peek() == Some(']') {
                    self.bump();
                    return Ok(ParamValue::List(items));
                }
                loop {
                    self.skip_ws();
                    let item = self.value()?;
                    if matches!(item, ParamValue::List(_) | ParamValue::Now) {
                        return self.error("list items must be strings or numbers");
                    }
                    items.push(item);
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => {
                            self.bump();
                        }
                        Some(']') => {
                            self.bump();
                            return Ok(ParamValue::List(items));
                        }
                        Some(c) => return self.error(format!("expected `,` or `]`, found `{c}`")),
                        None => return self.error("unterminated list"),
                    }
                }
            }
            Some(c) if c == '-' || c.is_ascii_digit() => self.number(),
            Some(c) if c.is_alphabetic() => {
                let word = self.ident()?;
                if word == "NOW" {
                    Ok(ParamValue::Now)
                } else {
                    self.error(format!("unexpected bare word `{word}`; quote strings"))
                }
            }
            Some(c) => self.error(format!("expected a value, found `{c}`")),
            None => self.error("expected a value, found end of input"),
        }
    }

    /// Double-quoted string. `\"` and `\\` are unescaped; any other backslash
    /// sequence is kept verbatim so regex escapes such as `\.` survive.
    fn string(&mut self) -> Result<String, ParseError> {
        self.expect('"')?;
        let mut out = String::new();
        loop {
            match self.peek() {
                None | Some('\n') => return self.error("unterminated string"),
                Some('"') => {
                    self.bump();
                    return Ok(out);
                }
                Some('\\') => {
                    self.bump();
                    match self.peek() {
                        Some('"') => {
                            self.bump();
                            out.push('"');
                        }
                        Some('\\') => {
                            self.bump();
                            out.push('\\');
                        }
                        _ => out.push('\\'),
                    }
                }
                Some(c) => {
                    self.bump();
                    out.push(c);
                }
            }
        }
    }

    fn number(&mut self) -> Result<ParamValue, ParseError> {
        let (line, column) = (self.line, self.column);
        let mut text = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E') {
                text.push(c);
                self.bump();
            } else {
                break;
            }
        }
        match text.parse::<f64>() {
            Ok(n) if n.is_finite() => Ok(ParamValue::Num(n)),
            _ => Err(ParseError::Syntax {
                line,
                column,
                message: format!("invalid number `{text}`"),
            }),
        }
    }
}
