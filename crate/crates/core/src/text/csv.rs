//! Loader for the benchmark CSV layout: a 1-based class index followed by
//! one or two quoted text fields.
//!
//! The parser is strict about quoting, since a stray quote in these files
//! otherwise silently swallows every following row.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledText {
    /// 0-based class index.
    pub label: usize,
    /// Lowercased text, title and body joined by one space.
    pub text: String,
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<LabeledText>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path)?;
    parse_csv(BufReader::new(file), &path.display().to_string())
}

/// Parses benchmark CSV rows from any reader. `source` names the input in
/// error messages.
pub fn parse_csv(reader: impl BufRead, source: &str) -> Result<Vec<LabeledText>> {
    let mut records = RecordReader::new(reader, source);
    let mut out = Vec::new();
    while let Some((line, fields)) = records.next_record()? {
        out.push(row_to_text(line, &fields, source)?);
    }
    Ok(out)
}

fn row_to_text(line: usize, fields: &[String], source: &str) -> Result<LabeledText> {
    let parse_err = |msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    if fields.len() < 2 {
        return Err(parse_err(format!(
            "expected a class index and at least one text field, found {} field(s)",
            fields.len()
        )));
    }
    let raw = fields[0].trim();
    let class: usize = raw
        .parse()
        .map_err(|_| parse_err(format!("class index {raw:?} is not an integer")))?;
    if class == 0 {
        return Err(Error::Label(format!(
            "{source}: line {line}: class index 0, indices are 1-based"
        )));
    }
    let text = fields[1..]
        .iter()
        .map(|f| f.trim())
        .filter(|f| !f.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    Ok(LabeledText {
        label: class - 1,
        text,
    })
}

/// Checks that every label is below `class_count`.
pub fn validate_labels(docs: &[LabeledText], class_count: usize) -> Result<()> {
    match docs.iter().find(|d| d.label >= class_count) {
        Some(d) => Err(Error::Label(format!(
            "class index {} outside the {class_count} classes seen in training",
            d.label + 1
        ))),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    FieldStart,
    Unquoted,
    Quoted,
    QuoteInQuoted,
}

struct RecordReader<R> {
    reader: R,
    source: String,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> RecordReader<R> {
    fn new(reader: R, source: &str) -> Self {
        RecordReader {
            reader,
            source: source.to_string(),
            line_no: 0,
            buf: String::new(),
        }
    }

    fn read_line(&mut self) -> Result<bool> {
        self.buf.clear();
        let n = self.reader.read_line(&mut self.buf)?;
        if n == 0 {
            return Ok(false);
        }
        self.line_no += 1;
        while self.buf.ends_with('\n') || self.buf.ends_with('\r') {
            self.buf.pop();
        }
        Ok(true)
    }

    /// Next record and the line it starts on; `None` at end of input.
    fn next_record(&mut self) -> Result<Option<(usize, Vec<String>)>> {
        loop {
            if !self.read_line()? {
                return Ok(None);
            }
            if !self.buf.trim().is_empty() {
                break;
            }
        }
        let start = self.line_no;
        let source = self.source.clone();
        let err = |msg: &str| Error::Parse {
            path: source.clone(),
            line: start,
            msg: msg.to_string(),
        };
        let mut fields = Vec::new();
        let mut field = String::new();
        let mut state = State::FieldStart;
        loop {
            for ch in self.buf.chars() {
                state = match (state, ch) {
                    (State::FieldStart, '"') => State::Quoted,
                    (State::FieldStart | State::Unquoted, ',') => {
                        fields.push(std::mem::take(&mut field));
                        State::FieldStart
                    }
                    (State::Unquoted, '"') => {
                        return Err(err("quote inside an unquoted field"));
                    }
                    (State::FieldStart | State::Unquoted, c) => {
                        field.push(c);
                        State::Unquoted
                    }
                    (State::Quoted, '"') => State::QuoteInQuoted,
                    (State::Quoted, c) => {
                        field.push(c);
                        State::Quoted
                    }
                    (State::QuoteInQuoted, '"') => {
                        field.push('"');
                        State::Quoted
                    }
                    (State::QuoteInQuoted, ',') => {
                        fields.push(std::mem::take(&mut field));
                        State::FieldStart
                    }
                    (State::QuoteInQuoted, _) => {
                        return Err(err("unexpected character after closing quote"));
                    }
                };
            }
            if state != State::Quoted {
                break;
            }
            // quoted field continues on the next physical line
            field.push('\n');
            if !self.read_line()? {
                return Err(err("unterminated quoted field"));
            }
        }
        fields.push(field);
        Ok(Some((start, fields)))
    }
}
