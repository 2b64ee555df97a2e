//! Instances, label vocabularies, bags and the synthetic corpus generator.

mod bag;
mod instance;
mod synthetic;
mod vocab;

pub use bag::{derive_type_labels, group_bags, Bag, BagKey, BagLabel, BagMode};
pub use instance::{load_instances, parse_instances, write_instances, Instance, Span};
pub use synthetic::{random_parents, generate_synthetic, SyntheticConfig, SyntheticCorpus};
pub use vocab::{RelationVocab, TypeMapping, NA};
