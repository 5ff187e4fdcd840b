//! Line-delimited dataset records.
//!
//! One JSON object per line:
//!
//! ```json
//! {"text": "...", "tuples": [{"types": ["person"], "spans": [{"text": "Ann", "start": 0, "end": 3}]}]}
//! ```
//!
//! `start`/`end` are character offsets, `end` exclusive.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Schema, TypePath};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn from_text(text: &str, start: usize, end: usize) -> Self {
        Self { text: char_slice(text, start, end).to_string(), start, end }
    }
}

/// One extracted `(spans, types)` sequence of equal length.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExtractionTuple {
    pub types: TypePath,
    pub spans: Vec<Span>,
}

impl ExtractionTuple {
    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn prefix(&self, n: usize) -> ExtractionTuple {
        ExtractionTuple { types: TypePath(self.types.0[..n].to_vec()), spans: self.spans[..n].to_vec() }
    }

    pub fn extend(&self, type_name: &str, span: Span) -> ExtractionTuple {
        let mut out = self.clone();
        out.types.0.push(type_name.to_string());
        out.spans.push(span);
        out
    }

    pub fn span_texts(&self) -> Vec<&str> {
        self.spans.iter().map(|s| s.text.as_str()).collect()
    }

    pub fn validate(&self, text: &str, schema: &Schema) -> Result<()> {
        if self.types.len() != self.spans.len() || self.spans.is_empty() {
            return Err(Error::Data(format!(
                "tuple has {} types and {} spans",
                self.types.len(),
                self.spans.len()
            )));
        }
        if !schema.contains(&self.types) {
            return Err(Error::Data(format!("type path {} is not in the schema", self.types)));
        }
        let chars = text.chars().count();
        for span in &self.spans {
            if span.start >= span.end || span.end > chars {
                return Err(Error::Data(format!("span {span:?} outside text of {chars} characters")));
            }
            if char_slice(text, span.start, span.end) != span.text {
                return Err(Error::Data(format!(
                    "span text {:?} does not match text at {}..{}",
                    span.text, span.start, span.end
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub text: String,
    #[serde(default)]
    pub tuples: Vec<ExtractionTuple>,
}

/// Slices `text` by character offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> &str {
    let byte = |c: usize| text.char_indices().nth(c).map_or(text.len(), |(b, _)| b);
    &text[byte(start)..byte(end)]
}

pub fn parse_records(reader: impl BufRead) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let file = std::fs::File::open(path.as_ref())?;
    parse_records(std::io::BufReader::new(file))
}

pub fn write_records(mut writer: impl Write, records: &[Record]) -> Result<()> {
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Validates every tuple of every record, reporting the 1-based record number.
pub fn validate_records(records: &[Record], schema: &Schema) -> Result<()> {
    for (i, record) in records.iter().enumerate() {
        for tuple in &record.tuples {
            tuple
                .validate(&record.text, schema)
                .map_err(|e| Error::Data(format!("record {}: {e}", i + 1)))?;
        }
    }
    Ok(())
}
