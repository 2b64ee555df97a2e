//! Seeded desk-scale corpora with a known relation signal.
//!
//! Every non-NA relation `r` owns a keyword `kw{r}`. A sentence is built
//! around a root verb; the relation core `H1 H2 [,] T1 T2 [mod]` hangs off
//! the verb through the keyword, which is the parent of the head entity
//! and sits either just before the head or just after the core. The head
//! entity is the LCA and the keyword its parent, so pruning to the
//! sub-tree keeps exactly keyword and core, while the shortest path drops
//! the keyword. Noise words are attached to the verb outside the core
//! subtree. A distractor, the keyword of a different relation, often sits
//! on the other edge of the core, where word order alone cannot tell it
//! from the true keyword.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Instance, Span, TypeMapping, NA};
use crate::deptree::{DepTree, ParsedSentence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_bags: usize,
    /// Includes NA.
    pub n_relations: usize,
    /// Number of distinct filler words.
    pub vocab_size: usize,
    pub max_bag_size: usize,
    /// Filler words before and after the core, each side.
    pub min_noise: usize,
    pub max_noise: usize,
    /// Probability that a sentence carries another relation's keyword in its noise.
    pub distractor_prob: f64,
    /// Prefix for instance ids and entity names, to keep splits disjoint.
    pub prefix: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 1,
            n_bags: 200,
            n_relations: 5,
            vocab_size: 100,
            max_bag_size: 4,
            min_noise: 2,
            max_noise: 8,
            distractor_prob: 0.8,
            prefix: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub instances: Vec<Instance>,
    pub parses: Vec<ParsedSentence>,
    pub mapping: TypeMapping,
}

fn relation_name(r: usize) -> String {
    format!("/synthetic/rel_{r}")
}

/// Keyword token that signals relation `r`.
pub fn keyword(r: usize) -> String {
    format!("kw{r}")
}

/// Relations come in pairs sharing their type signature, so entity types
/// narrow the relation down but do not decide it.
fn type_group(r: usize) -> usize {
    (r - 1) / 2
}

fn mapping_for(n_relations: usize) -> TypeMapping {
    let rows: Vec<(String, String, String)> = (1..n_relations)
        .map(|r| {
            let g = type_group(r);
            (relation_name(r), format!("htype{g}"), format!("ttype{g}"))
        })
        .collect();
    TypeMapping::new(&rows).expect("generated mapping is consistent")
}

/// A uniformly shuffled random arborescence over `n` nodes.
pub fn random_parents<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut parent = vec![None; n];
    for k in 1..n {
        parent[order[k]] = Some(order[rng.gen_range(0..k)]);
    }
    parent
}

struct Builder {
    tokens: Vec<String>,
    parent: Vec<Option<usize>>,
}

impl Builder {
    fn push(&mut self, token: String, parent: Option<usize>) -> usize {
        self.tokens.push(token);
        self.parent.push(parent);
        self.tokens.len() - 1
    }
}

/// Generates `n_bags` bags with relation, type and noise structure as
/// described in the module docs. Deterministic in `config`.
pub fn generate_synthetic(config: &SyntheticConfig) -> SyntheticCorpus {
    assert!(config.n_relations >= 2, "need NA plus at least one relation");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mapping = mapping_for(config.n_relations);
    let filler = |rng: &mut ChaCha8Rng| format!("w{}", rng.gen_range(0..config.vocab_size.max(1)));

    let mut instances = Vec::new();
    let mut parses = Vec::new();
    for b in 0..config.n_bags {
        let rel = rng.gen_range(0..config.n_relations);
        // NA pairs draw their entities from an untyped pool.
        let (head_word, tail_word) = if rel == 0 {
            (format!("misc{}", rng.gen_range(0..3)), format!("misc{}", rng.gen_range(0..3)))
        } else {
            let g = type_group(rel);
            (format!("h{g}_{}", rng.gen_range(0..3)), format!("t{g}_{}", rng.gen_range(0..3)))
        };
        let head_name = format!("e{}{b}a", config.prefix);
        let tail_name = format!("e{}{b}b", config.prefix);
        let bag_size = rng.gen_range(1..=config.max_bag_size.max(1));

        for i in 0..bag_size {
            let id = format!("{}b{b}_{i}", config.prefix);
            let mut s = Builder {
                tokens: Vec::new(),
                parent: Vec::new(),
            };
            // Tokens are pushed in surface order; heads are patched once the
            // verb position is known.
            let n_pre = rng.gen_range(config.min_noise..=config.max_noise);
            let n_post = rng.gen_range(config.min_noise..=config.max_noise);
            let mut noise = Vec::new();
            for _ in 0..n_pre {
                noise.push(s.push(filler(&mut rng), None));
            }
            let verb = s.push(format!("v{}", rng.gen_range(0..4)), None);

            let distractor = if config.n_relations > 2 && rng.gen_bool(config.distractor_prob) {
                Some(loop {
                    // Prefer the relation sharing this pair's types.
                    let cand = if rel > 0 && rng.gen_bool(0.5) {
                        let sib = if rel % 2 == 1 { rel + 1 } else { rel - 1 };
                        if sib < config.n_relations { sib } else { rng.gen_range(1..config.n_relations) }
                    } else {
                        rng.gen_range(1..config.n_relations)
                    };
                    if cand != rel {
                        break keyword(cand);
                    }
                })
            } else {
                None
            };
            let kw_token = if rel == 0 { filler(&mut rng) } else { keyword(rel) };
            let kw_first = rng.gen_bool(0.5);
            // The keyword and the distractor take opposite edges of the core.
            let (before, after) = if kw_first { (Some(kw_token), distractor) } else { (distractor, Some(kw_token)) };
            let mut kw = None;
            if let Some(tok) = before {
                let i = s.push(tok, None);
                if kw_first {
                    kw = Some(i);
                } else {
                    noise.push(i);
                }
            }
            let h1 = s.push(head_word.clone(), None);
            s.push(head_name.clone(), Some(h1));
            if rng.gen_bool(0.5) {
                s.push(",".into(), Some(h1));
            }
            let t1 = s.push(tail_word.clone(), Some(h1));
            s.push(tail_name.clone(), Some(t1));
            if rng.gen_bool(0.3) {
                s.push(filler(&mut rng), Some(t1));
            }
            if let Some(tok) = after {
                let i = s.push(tok, None);
                if kw_first {
                    noise.push(i);
                } else {
                    kw = Some(i);
                }
            }
            let kw = kw.expect("keyword placed");
            s.parent[kw] = Some(verb);
            s.parent[h1] = Some(kw);

            for _ in 0..n_post {
                noise.push(s.push(filler(&mut rng), None));
            }
            s.push(".".into(), Some(verb));

            // Noise forms a random tree under the verb.
            let mut attached = vec![verb];
            let mut order = noise.clone();
            order.shuffle(&mut rng);
            for &n in &order {
                s.parent[n] = Some(attached[rng.gen_range(0..attached.len())]);
                attached.push(n);
            }

            let head_start = h1;
            let tail_start = t1;
            let tree = DepTree::validate(&s.parent).expect("generator builds trees");
            parses.push(ParsedSentence {
                sent_id: id.clone(),
                forms: s.tokens.clone(),
                tree,
            });
            instances.push(Instance {
                id,
                tokens: s.tokens,
                head: Span::new(head_start, head_start + 2),
                tail: Span::new(tail_start, tail_start + 2),
                relation: if rel == 0 { NA.to_string() } else { relation_name(rel) },
                parse_ref: None,
                kept: None,
            });
        }
    }
    SyntheticCorpus {
        instances,
        parses,
        mapping,
    }
}
