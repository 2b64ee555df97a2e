use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RelationVocab;
use crate::error::{Error, Result};

/// Half-open token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn range(self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(self) -> bool {
        self.end <= self.start
    }

    fn overlaps(self, other: Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// One sentence mentioning a head and a tail entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub tokens: Vec<String>,
    pub head: Span,
    pub tail: Span,
    pub relation: String,
    /// Sentence id of the dependency parse; defaults to `id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parse_ref: Option<String>,
    /// Original token indices, present on pruned instances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<Vec<usize>>,
}

impl Instance {
    pub fn parse_ref(&self) -> &str {
        self.parse_ref.as_deref().unwrap_or(&self.id)
    }

    pub fn head_text(&self) -> String {
        self.tokens[self.head.range()].join(" ")
    }

    pub fn tail_text(&self) -> String {
        self.tokens[self.tail.range()].join(" ")
    }

    /// Checks span bounds and overlap; returns the violated field on error.
    pub fn check(&self) -> std::result::Result<(), String> {
        let t = self.tokens.len();
        if t == 0 {
            return Err("tokens: empty sentence".into());
        }
        for (field, span) in [("head", self.head), ("tail", self.tail)] {
            if span.is_empty() {
                return Err(format!("{field}: empty span [{}, {})", span.start, span.end));
            }
            if span.end > t {
                return Err(format!(
                    "{field}: span [{}, {}) exceeds {t} tokens",
                    span.start, span.end
                ));
            }
        }
        if self.head.overlaps(self.tail) {
            return Err("head/tail: spans overlap".into());
        }
        if let Some(kept) = &self.kept {
            if kept.len() != t {
                return Err(format!("kept: {} indices for {t} tokens", kept.len()));
            }
            if kept.windows(2).any(|w| w[0] >= w[1]) {
                return Err("kept: indices not strictly increasing".into());
            }
        }
        Ok(())
    }
}

/// Parses JSON-lines instances, validating spans and relation labels.
pub fn parse_instances<R: BufRead>(input: R, source: &str, relations: &RelationVocab) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    let mut unknown: Vec<String> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |message: String| Error::Record {
            path: source.to_string(),
            line: lineno,
            message,
        };
        let inst: Instance = serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
        inst.check().map_err(record_err)?;
        if relations.id(&inst.relation).is_none() && !unknown.contains(&inst.relation) {
            unknown.push(inst.relation.clone());
        }
        out.push(inst);
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownRelation(unknown));
    }
    Ok(out)
}

pub fn load_instances(path: &Path, relations: &RelationVocab) -> Result<Vec<Instance>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_instances(BufReader::new(file), &path.display().to_string(), relations)
}

pub fn write_instances<W: Write>(out: &mut W, instances: &[Instance]) -> std::io::Result<()> {
    for inst in instances {
        serde_json::to_writer(&mut *out, inst)?;
        writeln!(out)?;
    }
    Ok(())
}
