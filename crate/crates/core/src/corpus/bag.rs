use std::collections::{BTreeSet, HashMap};

use super::{Instance, RelationVocab, TypeMapping};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BagMode {
    /// Key on (head, tail, relation).
    Train,
    /// Key on (head, tail); the label is the set of gold facts.
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BagKey {
    pub head: String,
    pub tail: String,
    pub relation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BagLabel {
    Train(usize),
    /// Non-NA relation ids expressed by any member.
    Test(BTreeSet<usize>),
}

/// Instances sharing an entity pair (and, in training, a relation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    pub key: BagKey,
    /// Indices into the instance list the bag was grouped from.
    pub members: Vec<usize>,
    pub label: BagLabel,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_ids<'a>(&self, instances: &'a [Instance]) -> Vec<&'a str> {
        self.members.iter().map(|&i| instances[i].id.as_str()).collect()
    }

    /// Relation id of a training bag.
    pub fn relation(&self) -> Option<usize> {
        match self.label {
            BagLabel::Train(r) => Some(r),
            BagLabel::Test(_) => None,
        }
    }
}

/// Groups validated instances into bags in order of first appearance.
/// Relations missing from `relations` count as `NA`.
pub fn group_bags(instances: &[Instance], mode: BagMode, relations: &RelationVocab) -> Vec<Bag> {
    let mut bags: Vec<Bag> = Vec::new();
    let mut index: HashMap<BagKey, usize> = HashMap::new();
    for (i, inst) in instances.iter().enumerate() {
        let rel = relations.id(&inst.relation).unwrap_or(relations.na_id());
        let key = BagKey {
            head: inst.head_text(),
            tail: inst.tail_text(),
            relation: match mode {
                BagMode::Train => Some(inst.relation.clone()),
                BagMode::Test => None,
            },
        };
        let slot = *index.entry(key.clone()).or_insert_with(|| {
            bags.push(Bag {
                key,
                members: Vec::new(),
                label: match mode {
                    BagMode::Train => BagLabel::Train(rel),
                    BagMode::Test => BagLabel::Test(BTreeSet::new()),
                },
            });
            bags.len() - 1
        });
        let bag = &mut bags[slot];
        bag.members.push(i);
        if let BagLabel::Test(facts) = &mut bag.label {
            if rel != relations.na_id() {
                facts.insert(rel);
            }
        }
    }
    bags
}

/// (head type, tail type) of a training bag.
pub fn derive_type_labels(bag: &Bag, mapping: &TypeMapping) -> Result<(usize, usize)> {
    let rel = bag
        .relation()
        .ok_or_else(|| Error::Config("type labels need a training bag".into()))?;
    mapping
        .types_of(rel)
        .ok_or_else(|| Error::UnknownRelation(vec![format!("relation id {rel}")]))
}
