//! Glue between the corpus, the pruner, the encoder and the evaluator.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::corpus::{derive_type_labels, group_bags, BagLabel, BagMode, Instance, RelationVocab, Span, TypeMapping};
use crate::deptree::{prune, ParsedSentence, PruneMode, PrunedSentence};
use crate::encoder::{encode_sentence, EncodedSentence, WordVocab};
use crate::error::{Error, Result};
use crate::eval::{pr_curve, rank_predictions, sample_bag_setting, total_gold, BagSetting, PrCurve, PredictionRanking, ScoredBag};
use crate::model::{EncodedBag, Extractor, Task};
use crate::Real;

/// Prunes every instance with its parse. The result keeps ids, relations
/// and parse references; tokens are the kept tokens, spans are remapped,
/// and `kept` lists the kept original indices. `PruneMode::None` returns
/// the input unchanged and needs no parses.
pub fn prune_instances(
    instances: &[Instance],
    parses: &BTreeMap<String, ParsedSentence>,
    mode: PruneMode,
) -> Result<Vec<Instance>> {
    if mode == PruneMode::None {
        return Ok(instances.to_vec());
    }
    let missing: Vec<String> = instances
        .iter()
        .filter(|i| !parses.contains_key(i.parse_ref()))
        .map(|i| i.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingParse(missing));
    }
    instances
        .iter()
        .map(|inst| {
            let parse = &parses[inst.parse_ref()];
            if parse.forms.len() != inst.tokens.len() {
                return Err(Error::Instance {
                    id: inst.id.clone(),
                    message: format!(
                        "parse `{}` has {} tokens, instance has {}",
                        parse.sent_id,
                        parse.forms.len(),
                        inst.tokens.len()
                    ),
                });
            }
            let p = prune(&parse.tree, mode, inst.head.range(), inst.tail.range());
            Ok(pruned_instance(inst, &p))
        })
        .collect()
}

fn pruned_instance(inst: &Instance, p: &PrunedSentence) -> Instance {
    Instance {
        id: inst.id.clone(),
        tokens: p.select(&inst.tokens).into_iter().map(str::to_string).collect(),
        head: Span::new(p.head_span.start, p.head_span.end),
        tail: Span::new(p.tail_span.start, p.tail_span.end),
        relation: inst.relation.clone(),
        parse_ref: inst.parse_ref.clone(),
        kept: Some(p.kept.clone()),
    }
}

/// Parses keyed by sentence id.
pub fn index_parses(parses: &[ParsedSentence]) -> BTreeMap<String, ParsedSentence> {
    parses.iter().map(|p| (p.sent_id.clone(), p.clone())).collect()
}

/// Word vocabulary over every token of `instances`, in sorted order.
pub fn build_vocab(instances: &[Instance]) -> WordVocab {
    let words: BTreeSet<&str> = instances.iter().flat_map(|i| i.tokens.iter().map(String::as_str)).collect();
    WordVocab::new(words)
}

/// Encodes an instance as-is; its tokens are assumed already pruned.
pub fn encode_instance(inst: &Instance, vocab: &WordVocab, clip: usize) -> EncodedSentence {
    let view = PrunedSentence::from_kept((0..inst.tokens.len()).collect(), inst.head.range(), inst.tail.range());
    encode_sentence(&inst.tokens, &view, vocab, clip)
}

/// Training bags keyed on (head, tail, relation) with type labels.
pub fn encode_training_bags(
    instances: &[Instance],
    mapping: &TypeMapping,
    vocab: &WordVocab,
    clip: usize,
) -> Result<Vec<EncodedBag>> {
    group_bags(instances, BagMode::Train, mapping.relations())
        .into_iter()
        .map(|bag| {
            let (head_type, tail_type) = derive_type_labels(&bag, mapping)?;
            Ok(EncodedBag {
                sentences: bag.members.iter().map(|&i| encode_instance(&instances[i], vocab, clip)).collect(),
                relation: bag.relation().expect("training bag"),
                head_type,
                tail_type,
                gold: BTreeSet::new(),
                head: bag.key.head,
                tail: bag.key.tail,
            })
        })
        .collect()
}

/// Test bags keyed on (head, tail) with their gold fact sets.
pub fn encode_test_bags(
    instances: &[Instance],
    relations: &RelationVocab,
    vocab: &WordVocab,
    clip: usize,
) -> Vec<EncodedBag> {
    group_bags(instances, BagMode::Test, relations)
        .into_iter()
        .map(|bag| {
            let gold = match bag.label {
                BagLabel::Test(g) => g,
                BagLabel::Train(_) => unreachable!("test grouping"),
            };
            EncodedBag {
                sentences: bag.members.iter().map(|&i| encode_instance(&instances[i], vocab, clip)).collect(),
                relation: gold.iter().next().copied().unwrap_or(relations.na_id()),
                head_type: 0,
                tail_type: 0,
                gold,
                head: bag.key.head,
                tail: bag.key.tail,
            }
        })
        .collect()
}

/// Relation probabilities for every bag.
pub fn score_bags<T: Real>(model: &Extractor<T>, bags: &[EncodedBag]) -> Result<Vec<ScoredBag>> {
    bags.par_iter()
        .map(|b| {
            let p = model.forward_bag(b, Task::Relation)?;
            Ok(ScoredBag {
                head: b.head.clone(),
                tail: b.tail.clone(),
                scores: p.iter().map(|x| x.as_f64()).collect(),
                gold: b.gold.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub ranking: PredictionRanking,
    pub curve: PrCurve,
}

/// Scores `bags` under `setting` and builds the ranking and PR curve.
pub fn evaluate<T: Real>(model: &Extractor<T>, bags: &[EncodedBag], setting: BagSetting, seed: u64) -> Result<Evaluation> {
    let sampled = sample_bag_setting(bags, setting, seed);
    let scored = score_bags(model, &sampled)?;
    let ranking = rank_predictions(&scored);
    let curve = pr_curve(&ranking, total_gold(&scored))?;
    Ok(Evaluation { ranking, curve })
}
