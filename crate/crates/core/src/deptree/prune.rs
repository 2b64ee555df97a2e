use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DepTree;

/// Which tokens of a sentence are fed to the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PruneMode {
    /// Subtree rooted at the parent of the entities' lowest common ancestor.
    #[default]
    Stp,
    /// Tree path between the two entity anchors.
    Sdp,
    /// Keep the whole sentence.
    None,
}

impl FromStr for PruneMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "stp" => Ok(PruneMode::Stp),
            "sdp" => Ok(PruneMode::Sdp),
            "none" => Ok(PruneMode::None),
            other => Err(format!("unknown pruning mode `{other}` (expected stp, sdp or none)")),
        }
    }
}

impl fmt::Display for PruneMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PruneMode::Stp => "stp",
            PruneMode::Sdp => "sdp",
            PruneMode::None => "none",
        })
    }
}

/// A sentence reduced to a subset of its tokens, in original order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunedSentence {
    /// Original token indices, strictly increasing.
    pub kept: Vec<usize>,
    /// Head entity anchor as a position within `kept`.
    pub head_anchor: usize,
    pub tail_anchor: usize,
    /// Entity spans as position ranges within `kept`.
    pub head_span: Range<usize>,
    pub tail_span: Range<usize>,
    /// `pos1[i] = i − head_anchor`, unclipped.
    pub pos1: Vec<i64>,
    pub pos2: Vec<i64>,
}

impl PrunedSentence {
    /// Builds the pruned view of `kept`, remapping entity spans given in
    /// original token indices. Anchors are the first span tokens, which
    /// must be in `kept`.
    pub fn from_kept(kept: Vec<usize>, head: Range<usize>, tail: Range<usize>) -> Self {
        let head_span = remap(&kept, &head);
        let tail_span = remap(&kept, &tail);
        let head_anchor = kept.binary_search(&head.start).expect("head anchor kept");
        let tail_anchor = kept.binary_search(&tail.start).expect("tail anchor kept");
        let (pos1, pos2) = relative_positions(kept.len(), head_anchor, tail_anchor, None);
        PrunedSentence {
            kept,
            head_anchor,
            tail_anchor,
            head_span,
            tail_span,
            pos1,
            pos2,
        }
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    /// Position features clipped to `[-clip, clip]`.
    pub fn clipped_positions(&self, clip: usize) -> (Vec<i64>, Vec<i64>) {
        relative_positions(self.kept.len(), self.head_anchor, self.tail_anchor, Some(clip))
    }

    /// The kept tokens of `tokens`.
    pub fn select<'a, S: AsRef<str>>(&self, tokens: &'a [S]) -> Vec<&'a str> {
        self.kept.iter().map(|&i| tokens[i].as_ref()).collect()
    }
}

/// Positions (within `kept`) of the kept tokens that fall inside `span`.
fn remap(kept: &[usize], span: &Range<usize>) -> Range<usize> {
    let start = kept.partition_point(|&i| i < span.start);
    let end = kept.partition_point(|&i| i < span.end);
    start..end
}

/// Signed distances of every position from the two anchors, optionally
/// clipped to `[-clip, clip]`.
pub fn relative_positions(
    len: usize,
    head_anchor: usize,
    tail_anchor: usize,
    clip: Option<usize>,
) -> (Vec<i64>, Vec<i64>) {
    let clamp = |d: i64| match clip {
        Some(c) => d.clamp(-(c as i64), c as i64),
        None => d,
    };
    let offsets = |anchor: usize| {
        (0..len)
            .map(|i| clamp(i as i64 - anchor as i64))
            .collect::<Vec<_>>()
    };
    (offsets(head_anchor), offsets(tail_anchor))
}

fn stp_kept(tree: &DepTree, head_anchor: usize, tail_anchor: usize) -> Vec<usize> {
    let common = tree.lca(head_anchor, tail_anchor);
    // At the root there is no parent; the whole sentence is kept.
    let top = tree.parent(common).unwrap_or(common);
    tree.subtree(top)
}

/// Sub-tree parse: all tokens under the parent of the anchors' LCA.
pub fn stp(tree: &DepTree, head_anchor: usize, tail_anchor: usize) -> PrunedSentence {
    PrunedSentence::from_kept(
        stp_kept(tree, head_anchor, tail_anchor),
        head_anchor..head_anchor + 1,
        tail_anchor..tail_anchor + 1,
    )
}

/// Shortest dependency path between the anchors.
pub fn sdp(tree: &DepTree, head_anchor: usize, tail_anchor: usize) -> PrunedSentence {
    PrunedSentence::from_kept(
        tree.path(head_anchor, tail_anchor),
        head_anchor..head_anchor + 1,
        tail_anchor..tail_anchor + 1,
    )
}

/// Prunes a sentence with entity spans in original token indices. Anchors
/// are the first token of each span.
pub fn prune(tree: &DepTree, mode: PruneMode, head: Range<usize>, tail: Range<usize>) -> PrunedSentence {
    let kept = match mode {
        PruneMode::Stp => stp_kept(tree, head.start, tail.start),
        PruneMode::Sdp => tree.path(head.start, tail.start),
        PruneMode::None => (0..tree.len()).collect(),
    };
    PrunedSentence::from_kept(kept, head, tail)
}
