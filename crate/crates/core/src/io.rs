//! Line-delimited file plumbing shared by every persisted format.
//!
//! Every file starts with a JSON header line carrying a `format` tag and a
//! `version` number. Body lines are parsed one by one so errors can name the
//! offending line (1-based, header is line 1).

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl FormatError {
    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        FormatError::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        FormatError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Line number for parse errors.
    pub fn line(&self) -> Option<usize> {
        match self {
            FormatError::Parse { line, .. } => Some(*line),
            FormatError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
}

/// Parsed body line paired with its 1-based line number.
pub struct Numbered<T> {
    pub line: usize,
    pub value: T,
}

/// Reads a header-tagged file; returns the raw header JSON and the non-blank
/// body lines with their line numbers.
pub fn read_tagged(
    path: &Path,
    format: &str,
    version: u32,
) -> Result<(serde_json::Value, Vec<Numbered<String>>), FormatError> {
    let file = fs::File::open(path).map_err(|e| FormatError::io(path, e))?;
    parse_tagged(BufReader::new(file), format, version).map_err(|e| match e {
        FormatError::Io { source, .. } => FormatError::io(path, source),
        other => other,
    })
}

pub fn parse_tagged<R: BufRead>(
    reader: R,
    format: &str,
    version: u32,
) -> Result<(serde_json::Value, Vec<Numbered<String>>), FormatError> {
    let mut lines = reader.lines().enumerate();
    let header_text = match lines.next() {
        Some((_, line)) => line.map_err(|e| FormatError::Io {
            path: String::new(),
            source: e,
        })?,
        None => return Err(FormatError::parse(1, "missing header line")),
    };
    let header_value: serde_json::Value = serde_json::from_str(&header_text)
        .map_err(|e| FormatError::parse(1, format!("invalid header: {e}")))?;
    let header: Header = serde_json::from_value(header_value.clone())
        .map_err(|e| FormatError::parse(1, format!("invalid header: {e}")))?;
    if header.format != format {
        return Err(FormatError::parse(
            1,
            format!("expected format {format:?}, found {:?}", header.format),
        ));
    }
    if header.version != version {
        return Err(FormatError::parse(
            1,
            format!("unsupported {format} version {}", header.version),
        ));
    }
    let mut body = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| FormatError::Io {
            path: String::new(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        body.push(Numbered {
            line: idx + 1,
            value: line,
        });
    }
    Ok((header_value, body))
}

pub fn parse_json_line<T: DeserializeOwned>(line: &Numbered<String>) -> Result<T, FormatError> {
    serde_json::from_str(&line.value).map_err(|e| FormatError::parse(line.line, e.to_string()))
}

/// Writes the header followed by one JSON line per item.
pub fn write_tagged<T: Serialize>(
    path: &Path,
    header: &impl Serialize,
    items: impl IntoIterator<Item = T>,
) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e: std::io::Error| FormatError::io(path, e);
    let json_err = |e: serde_json::Error| FormatError::io(path, std::io::Error::other(e));
    serde_json::to_writer(&mut out, header).map_err(json_err)?;
    out.write_all(b"\n").map_err(io_err)?;
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(json_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_format_and_version() {
        let text = "{\"format\":\"a\",\"version\":1}\n";
        assert!(parse_tagged(text.as_bytes(), "a", 1).is_ok());
        let err = parse_tagged(text.as_bytes(), "b", 1).err().unwrap();
        assert_eq!(err.line(), Some(1));
        assert!(parse_tagged(text.as_bytes(), "a", 2).is_err());
        assert!(parse_tagged("".as_bytes(), "a", 1).is_err());
    }

    #[test]
    fn skips_blank_lines_and_keeps_numbers() {
        let text = "{\"format\":\"a\",\"version\":1}\n1\n\n2\n";
        let (_, body) = parse_tagged(text.as_bytes(), "a", 1).unwrap();
        let lines: Vec<usize> = body.iter().map(|l| l.line).collect();
        assert_eq!(lines, vec![2, 4]);
    }
}
