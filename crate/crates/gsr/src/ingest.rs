//! Reads interaction logs: delimited text (`user, item, timestamp` columns)
//! or JSON lines with configurable keys.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use gsr_core::data::{DataError, Interaction, InteractionDataset};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Format {
    Delimited { delimiter: u8 },
    JsonLines,
}

impl Format {
    /// `csv`, `tsv`, `jsonl` (or `json`), or a single delimiter character.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "csv" => Some(Format::Delimited { delimiter: b',' }),
            "tsv" => Some(Format::Delimited { delimiter: b'\t' }),
            "jsonl" | "json" => Some(Format::JsonLines),
            "\\t" => Some(Format::Delimited { delimiter: b'\t' }),
            _ if s.len() == 1 && s.is_ascii() => Some(Format::Delimited { delimiter: s.as_bytes()[0] }),
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Format::Delimited { delimiter: b',' } => "csv".into(),
            Format::Delimited { delimiter: b'\t' } => "tsv".into(),
            Format::Delimited { delimiter } => (*delimiter as char).to_string(),
            Format::JsonLines => "jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOptions {
    pub format: Format,
    /// Skip the first line of delimited input.
    pub has_header: bool,
    /// Zero-based user, item and timestamp columns of delimited input.
    pub columns: [usize; 3],
    /// User, item and timestamp keys of JSON-lines input.
    pub keys: [String; 3],
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            format: Format::Delimited { delimiter: b',' },
            has_header: false,
            columns: [0, 1, 2],
            keys: ["user".into(), "item".into(), "timestamp".into()],
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

fn malformed(line: u64, message: impl Into<String>) -> IngestError {
    IngestError::Malformed { line, message: message.into() }
}

fn parse_timestamp(line: u64, raw: &str) -> Result<u64, IngestError> {
    raw.trim().parse::<u64>().map_err(|_| malformed(line, format!("timestamp {raw:?} is not a non-negative integer")))
}

pub fn read_interactions(path: &Path, opts: &IngestOptions) -> Result<Vec<Interaction>, IngestError> {
    let file = File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    match opts.format {
        Format::Delimited { delimiter } => read_delimited(BufReader::new(file), delimiter, opts),
        Format::JsonLines => read_json_lines(BufReader::new(file), opts),
    }
}

pub fn read_delimited<R: std::io::Read>(input: R, delimiter: u8, opts: &IngestOptions) -> Result<Vec<Interaction>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let [uc, ic, tc] = opts.columns;
    let need = uc.max(ic).max(tc) + 1;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() < need {
            return Err(malformed(line, format!("expected at least {need} fields, found {}", rec.len())));
        }
        let (user, item) = (&rec[uc], &rec[ic]);
        if user.is_empty() || item.is_empty() {
            return Err(malformed(line, "empty user or item"));
        }
        out.push(Interaction { user: user.into(), item: item.into(), timestamp: parse_timestamp(line, &rec[tc])? });
    }
    Ok(out)
}

fn json_key(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

pub fn read_json_lines<R: BufRead>(input: R, opts: &IngestOptions) -> Result<Vec<Interaction>, IngestError> {
    let mut out = Vec::new();
    for (idx, text) in input.lines().enumerate() {
        let line = idx as u64 + 1;
        let text = text.map_err(|e| malformed(line, e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| malformed(line, format!("invalid JSON: {e}")))?;
        let field = |k: &str| v.get(k).ok_or_else(|| malformed(line, format!("missing key {k:?}")));
        let user = json_key(field(&opts.keys[0])?).ok_or_else(|| malformed(line, "user must be a string or number"))?;
        let item = json_key(field(&opts.keys[1])?).ok_or_else(|| malformed(line, "item must be a string or number"))?;
        let timestamp = match field(&opts.keys[2])? {
            Value::Number(n) => n.as_u64().ok_or_else(|| malformed(line, format!("timestamp {n} is not a non-negative integer")))?,
            Value::String(s) => parse_timestamp(line, s)?,
            other => return Err(malformed(line, format!("timestamp {other} is not an integer"))),
        };
        out.push(Interaction { user, item, timestamp });
    }
    Ok(out)
}

/// Reads `path` and builds time-ordered sequences.
pub fn load_dataset(path: &Path, opts: &IngestOptions) -> Result<InteractionDataset, IngestError> {
    Ok(InteractionDataset::from_interactions(read_interactions(path, opts)?)?)
}
