//! Minimal CoNLL-U reading: only ID and HEAD are consumed. Sentences are
//! keyed by their `# sent_id = ...` comment.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use super::DepTree;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSentence {
    pub sent_id: String,
    pub forms: Vec<String>,
    pub tree: DepTree,
}

struct Pending {
    sent_id: Option<String>,
    start_line: usize,
    forms: Vec<String>,
    heads: Vec<usize>,
}

/// Reads every sentence of a CoNLL-U stream into a map keyed by `sent_id`.
/// Multi-word-token ranges (`3-4`) and empty nodes (`5.1`) are skipped.
pub fn read_conllu<R: BufRead>(input: R, source: &str) -> Result<BTreeMap<String, ParsedSentence>> {
    let mut out = BTreeMap::new();
    let mut cur = Pending {
        sent_id: None,
        start_line: 1,
        forms: Vec::new(),
        heads: Vec::new(),
    };
    let err = |line: usize, message: String| Error::Record {
        path: source.to_string(),
        line,
        message,
    };

    let finish = |cur: &mut Pending, out: &mut BTreeMap<String, ParsedSentence>| -> Result<()> {
        if cur.heads.is_empty() {
            cur.sent_id = None;
            return Ok(());
        }
        let sent_id = cur
            .sent_id
            .take()
            .ok_or_else(|| err(cur.start_line, "sentence without `# sent_id`".into()))?;
        let tree = DepTree::from_heads(&cur.heads)
            .map_err(|e| err(cur.start_line, format!("sentence `{sent_id}`: {e}")))?;
        if out.contains_key(&sent_id) {
            return Err(err(cur.start_line, format!("duplicate sent_id `{sent_id}`")));
        }
        out.insert(
            sent_id.clone(),
            ParsedSentence {
                sent_id,
                forms: std::mem::take(&mut cur.forms),
                tree,
            },
        );
        cur.heads.clear();
        Ok(())
    };

    for (lineno, line) in input.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(&mut cur, &mut out)?;
            cur.start_line = lineno + 1;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                if key.trim() == "sent_id" {
                    cur.sent_id = Some(value.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 7 {
            return Err(err(lineno, format!("expected 10 tab-separated columns, found {}", cols.len())));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| err(lineno, format!("bad ID `{}`", cols[0])))?;
        if id != cur.heads.len() + 1 {
            return Err(err(lineno, format!("token ID {id} out of sequence")));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| err(lineno, format!("bad HEAD `{}`", cols[6])))?;
        cur.forms.push(cols[1].to_string());
        cur.heads.push(head);
    }
    finish(&mut cur, &mut out)?;
    Ok(out)
}

/// Writes sentences with FORM, HEAD and a placeholder DEPREL.
pub fn write_conllu<W: Write>(out: &mut W, sentences: &[ParsedSentence]) -> std::io::Result<()> {
    for s in sentences {
        writeln!(out, "# sent_id = {}", s.sent_id)?;
        for (i, form) in s.forms.iter().enumerate() {
            let head = s.tree.parent(i).map_or(0, |h| h + 1);
            let rel = if head == 0 { "root" } else { "dep" };
            writeln!(out, "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_", i + 1, form, head, rel)?;
        }
        writeln!(out)?;
    }
    Ok(())
}
