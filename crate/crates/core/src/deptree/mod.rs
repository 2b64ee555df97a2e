//! Dependency trees and the pruning operations built on them.

mod conllu;
mod prune;
mod tree;

pub use conllu::{read_conllu, write_conllu, ParsedSentence};
pub use prune::{prune, relative_positions, sdp, stp, PruneMode, PrunedSentence};
pub use tree::DepTree;
