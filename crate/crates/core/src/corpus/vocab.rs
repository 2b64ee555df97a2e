use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The label meaning "no relation" (and, for types, "no type").
pub const NA: &str = "NA";

/// Dense string ↔ id map. Id 0 is always [`NA`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct RelationVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for RelationVocab {
    fn from(labels: Vec<String>) -> Self {
        RelationVocab::new(labels)
    }
}

impl From<RelationVocab> for Vec<String> {
    fn from(v: RelationVocab) -> Self {
        v.labels
    }
}

impl RelationVocab {
    /// Builds a vocabulary from labels in order; `NA` is placed first and
    /// duplicates are dropped.
    pub fn new<S: AsRef<str>>(labels: impl IntoIterator<Item = S>) -> Self {
        let mut vocab = RelationVocab {
            labels: Vec::new(),
            index: HashMap::new(),
        };
        vocab.push(NA);
        for l in labels {
            vocab.push(l.as_ref());
        }
        vocab
    }

    fn push(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), self.labels.len() - 1);
        self.labels.len() - 1
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn na_id(&self) -> usize {
        0
    }
}

/// Relation → (head type, tail type), with one type vocabulary per side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeMapping {
    relations: RelationVocab,
    head_types: RelationVocab,
    tail_types: RelationVocab,
    /// Indexed by relation id.
    pairs: Vec<(usize, usize)>,
}

impl TypeMapping {
    /// `rows` are `(relation, head_type, tail_type)`. A missing `NA` row is
    /// added; an explicit one must map to `(NA, NA)`.
    pub fn new<S: AsRef<str>>(rows: &[(S, S, S)]) -> Result<Self> {
        let mut relations = RelationVocab::new(Vec::<&str>::new());
        let mut head_types = RelationVocab::new(Vec::<&str>::new());
        let mut tail_types = RelationVocab::new(Vec::<&str>::new());
        let mut pairs = vec![(0, 0)];
        for (rel, ht, tt) in rows {
            let (rel, ht, tt) = (rel.as_ref(), ht.as_ref(), tt.as_ref());
            if rel == NA {
                if ht != NA || tt != NA {
                    return Err(Error::Config(format!(
                        "relation NA must map to (NA, NA), found ({ht}, {tt})"
                    )));
                }
                continue;
            }
            if relations.id(rel).is_some() {
                return Err(Error::Config(format!("relation `{rel}` mapped twice")));
            }
            relations.push(rel);
            pairs.push((head_types.push(ht), tail_types.push(tt)));
        }
        Ok(TypeMapping {
            relations,
            head_types,
            tail_types,
            pairs,
        })
    }

    /// Reads `relation \t head_type \t tail_type` lines; blank lines and
    /// `#` comments are ignored.
    pub fn read_tsv<R: BufRead>(input: R, source: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::io(source, e))?;
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::Record {
                    path: source.to_string(),
                    line: i + 1,
                    message: format!("expected 3 tab-separated columns, found {}", cols.len()),
                });
            }
            rows.push((cols[0].to_string(), cols[1].to_string(), cols[2].to_string()));
        }
        Self::new(&rows)
    }

    pub fn write_tsv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (rel_id, &(h, t)) in self.pairs.iter().enumerate() {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.relations.label(rel_id),
                self.head_types.label(h),
                self.tail_types.label(t)
            )?;
        }
        Ok(())
    }

    pub fn relations(&self) -> &RelationVocab {
        &self.relations
    }

    pub fn head_types(&self) -> &RelationVocab {
        &self.head_types
    }

    pub fn tail_types(&self) -> &RelationVocab {
        &self.tail_types
    }

    /// Type pair for a relation id.
    pub fn types_of(&self, relation: usize) -> Option<(usize, usize)> {
        self.pairs.get(relation).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn na_is_id_zero() {
        let v = RelationVocab::new(["b", "a", "b"]);
        assert_eq!(v.labels(), &["NA", "b", "a"]);
        assert_eq!(v.id("a"), Some(2));
        let back: RelationVocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn mapping_from_tsv() {
        let tsv = "/loc/contains\tlocation\tlocation\n/per/born\tperson\tlocation\nNA\tNA\tNA\n";
        let m = TypeMapping::read_tsv(tsv.as_bytes(), "m.tsv").unwrap();
        assert_eq!(m.relations().len(), 3);
        assert_eq!(m.types_of(0), Some((0, 0)));
        let born = m.relations().id("/per/born").unwrap();
        let (h, t) = m.types_of(born).unwrap();
        assert_eq!((m.head_types().label(h), m.tail_types().label(t)), ("person", "location"));
        let mut buf = Vec::new();
        m.write_tsv(&mut buf).unwrap();
        assert_eq!(TypeMapping::read_tsv(buf.as_slice(), "buf").unwrap(), m);
    }

    #[test]
    fn bad_na_row_or_columns() {
        assert!(TypeMapping::new(&[("NA", "person", "NA")]).is_err());
        assert!(TypeMapping::read_tsv("a\tb\n".as_bytes(), "x").is_err());
        assert!(TypeMapping::new(&[("r", "a", "b"), ("r", "a", "c")]).is_err());
    }
}
