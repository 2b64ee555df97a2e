use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoder::{position_rows, EmbeddingTables, WordVocab};
use crate::numerics::Grad;

fn dims(m: usize, k: usize, l: usize) -> ModelDims {
    ModelDims {
        vocab_size: 12,
        word_dim: k,
        pos_dim: l,
        clip: 4,
        hidden: m,
        head_types: 3,
        tail_types: 4,
        relations: 5,
        query_mode: QueryMode::Shared,
    }
}

fn model_with(d: ModelDims, tasks: &[Task], seed: u64) -> Extractor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab = WordVocab::new((0..10).map(|i| format!("w{i}")));
    assert_eq!(vocab.len(), d.vocab_size);
    let tables = EmbeddingTables::init(&vocab, d.word_dim, d.pos_dim, d.clip, None, &mut rng).unwrap();
    let mut model = Extractor::new(d, tables, tasks, &mut rng).unwrap();
    // Non-zero biases so the oracle exercises them.
    for p in model.store.iter_mut() {
        if p.name.ends_with(".b_z") || p.name.ends_with(".b_h") || p.name.ends_with("out.bias") {
            for x in p.value.data_mut() {
                *x = rng.gen_range(-0.3..0.3);
            }
        }
    }
    model
}

fn random_sentence(rng: &mut ChaCha8Rng, len: usize, clip: usize) -> EncodedSentence {
    let rows = position_rows(clip);
    EncodedSentence {
        words: (0..len).map(|_| rng.gen_range(0..12)).collect(),
        pos1: (0..len).map(|_| rng.gen_range(0..rows)).collect(),
        pos2: (0..len).map(|_| rng.gen_range(0..rows)).collect(),
        entity: (0..len).map(|_| rng.gen_bool(0.3)).collect(),
    }
}

fn random_bags(n: usize, seed: u64, d: &ModelDims) -> Vec<EncodedBag> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|b| {
            let size = rng.gen_range(1..4);
            EncodedBag {
                head: format!("h{b}"),
                tail: format!("t{b}"),
                sentences: (0..size)
                    .map(|_| {
                        let len = rng.gen_range(1..6);
                        random_sentence(&mut rng, len, d.clip)
                    })
                    .collect(),
                relation: rng.gen_range(0..d.relations),
                head_type: rng.gen_range(0..d.head_types),
                tail_type: rng.gen_range(0..d.tail_types),
                gold: BTreeSet::new(),
            }
        })
        .collect()
}

fn config(beta: f64) -> TrainConfig {
    TrainConfig {
        l2: beta,
        ..TrainConfig::default()
    }
}

// ---- scalar oracle -------------------------------------------------------

fn mat(store: &ParameterStore<f64>, name: &str) -> Vec<Vec<f64>> {
    let t = &store.by_name(name).unwrap().value;
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn vecp(store: &ParameterStore<f64>, name: &str) -> Vec<f64> {
    store.by_name(name).unwrap().value.data().to_vec()
}

fn mv(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

fn sm(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn gru_oracle(store: &ParameterStore<f64>, dir: &str, xs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let g = |f: &str| format!("gru.{dir}.{f}");
    let (wz, uz, bz) = (mat(store, &g("w_z")), mat(store, &g("u_z")), vecp(store, &g("b_z")));
    let (wr, ur, br) = (mat(store, &g("w_r")), mat(store, &g("u_r")), vecp(store, &g("b_r")));
    let (wh, uh, bh) = (mat(store, &g("w_h")), mat(store, &g("u_h")), vecp(store, &g("b_h")));
    let m = bz.len();
    let mut h = vec![0.0; m];
    let mut out = vec![vec![]; xs.len()];
    let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    for t in order {
        let x = &xs[t];
        let (a, b) = (mv(&wz, x), mv(&uz, &h));
        let z: Vec<f64> = (0..m).map(|i| sig(a[i] + b[i] + bz[i])).collect();
        let (a, b) = (mv(&wr, x), mv(&ur, &h));
        let r: Vec<f64> = (0..m).map(|i| sig(a[i] + b[i] + br[i])).collect();
        let rh: Vec<f64> = (0..m).map(|i| r[i] * h[i]).collect();
        let (a, b) = (mv(&wh, x), mv(&uh, &rh));
        let c: Vec<f64> = (0..m).map(|i| (a[i] + b[i] + bh[i]).tanh()).collect();
        h = (0..m).map(|i| z[i] * h[i] + (1.0 - z[i]) * c[i]).collect();
        out[t] = h.clone();
    }
    out
}

fn oracle_probs(model: &Extractor<f64>, bag: &EncodedBag, task: Task) -> Vec<f64> {
    let s = &model.store;
    let p = task.prefix();
    let word = mat(s, WORD_TABLE);
    let pos1 = mat(s, POS1_TABLE);
    let pos2 = mat(s, POS2_TABLE);
    let wa = mat(s, &format!("{p}.word_attn.matrix"));
    let wq = vecp(s, &format!("{p}.word_attn.query"));
    let mut reps = Vec::new();
    for sent in &bag.sentences {
        let xs: Vec<Vec<f64>> = (0..sent.len())
            .map(|t| {
                let mut x = word[sent.words[t]].clone();
                x.extend(&pos1[sent.pos1[t]]);
                x.extend(&pos2[sent.pos2[t]]);
                x
            })
            .collect();
        let f = gru_oracle(s, "fwd", &xs, false);
        let b = gru_oracle(s, "bwd", &xs, true);
        let h: Vec<Vec<f64>> = f.iter().zip(&b).map(|(u, v)| u.iter().zip(v).map(|(p, q)| p + q).collect()).collect();
        let u = mv(&wa, &wq);
        let alpha = sm(&mv(&h, &u));
        let m = h[0].len();
        let mut rep = vec![0.0; m];
        for t in 0..h.len() {
            let w = alpha[t] + if sent.entity[t] { 1.0 } else { 0.0 };
            for j in 0..m {
                rep[j] += w * h[t][j];
            }
        }
        reps.push(rep);
    }
    let sa = mat(s, &format!("{p}.sent_attn.matrix"));
    let sq = vecp(s, &format!("{p}.sent_attn.query"));
    let beta = sm(&mv(&reps, &mv(&sa, &sq)));
    let m = reps[0].len();
    let pooled: Vec<f64> = (0..m).map(|j| reps.iter().zip(&beta).map(|(r, b)| b * r[j]).sum()).collect();
    let w = mat(s, &format!("{p}.out.weight"));
    let bias = vecp(s, &format!("{p}.out.bias"));
    let logits: Vec<f64> = mv(&w, &pooled).iter().zip(&bias).map(|(a, b)| a + b).collect();
    sm(&logits)
}

fn penalty(model: &Extractor<f64>, parts: &[Partition]) -> f64 {
    model
        .store
        .iter()
        .filter(|(_, p)| parts.contains(&p.partition))
        .map(|(_, p)| p.value.data().iter().map(|x| x * x).sum::<f64>())
        .sum()
}

// ---- tests ----------------------------------------------------------------

#[test]
fn forward_is_a_distribution() {
    let d = dims(6, 4, 2);
    let model = model_with(d.clone(), &Task::ALL, 1);
    for bag in random_bags(10, 2, &d) {
        for task in Task::ALL {
            let p = model.forward_bag(&bag, task).unwrap();
            assert_eq!(p.len(), d.classes(task));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|&x| x > 0.0));
        }
    }
}

#[test]
fn empty_bag_is_an_error() {
    let d = dims(4, 3, 2);
    let model = model_with(d.clone(), &[Task::Relation], 1);
    let mut bag = random_bags(1, 3, &d).remove(0);
    bag.sentences.clear();
    assert!(matches!(model.forward_bag(&bag, Task::Relation), Err(Error::EmptyBag(_))));
}

#[test]
fn missing_task_is_an_error() {
    let d = dims(4, 3, 2);
    let model = model_with(d.clone(), &[Task::Relation], 1);
    let bag = random_bags(1, 3, &d).remove(0);
    assert!(model.forward_bag(&bag, Task::Head).is_err());
}

#[test]
fn repeated_sentences_match_single() {
    let d = dims(5, 3, 2);
    let model = model_with(d.clone(), &Task::ALL, 4);
    let mut bag = random_bags(1, 5, &d).remove(0);
    bag.sentences.truncate(1);
    let single = model.forward_bag(&bag, Task::Relation).unwrap();
    bag.sentences = vec![bag.sentences[0].clone(); 4];
    let many = model.forward_bag(&bag, Task::Relation).unwrap();
    for (a, b) in single.iter().zip(&many) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn hand_sized_model_matches_scalar_oracle() {
    let d = dims(4, 3, 2);
    let model = model_with(d.clone(), &Task::ALL, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bag = EncodedBag {
        head: "a".into(),
        tail: "b".into(),
        sentences: vec![random_sentence(&mut rng, 3, d.clip), random_sentence(&mut rng, 3, d.clip)],
        relation: 1,
        head_type: 0,
        tail_type: 2,
        gold: BTreeSet::new(),
    };
    for task in Task::ALL {
        let got = model.forward_bag(&bag, task).unwrap();
        let want = oracle_probs(&model, &bag, task);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-10, "{task:?}: {a} vs {b}");
        }
    }
}

#[test]
fn losses_match_scalar_oracle() {
    let d = dims(5, 4, 2);
    let model = model_with(d.clone(), &Task::ALL, 8);
    let bags = random_bags(6, 9, &d);
    let refs: Vec<&EncodedBag> = bags.iter().collect();
    let cfg = TrainConfig {
        lambda_head: 0.7,
        lambda_tail: 0.2,
        ..config(0.01)
    };
    let n = bags.len() as f64;
    let mut je = 0.0;
    let mut jr = 0.0;
    for bag in &bags {
        let ph = oracle_probs(&model, bag, Task::Head);
        let pt = oracle_probs(&model, bag, Task::Tail);
        let pr = oracle_probs(&model, bag, Task::Relation);
        je += -cfg.lambda_head / 3.0 * ph[bag.head_type].ln() - cfg.lambda_tail / 4.0 * pt[bag.tail_type].ln();
        jr += -pr[bag.relation].ln() / 5.0;
    }
    use Partition::*;
    let je = je / n + cfg.l2 * penalty(&model, &[Shared, Head, Tail]);
    let jr = jr / n + cfg.l2 * penalty(&model, &[Shared, Relation]);
    assert!((model.entity_loss(&refs, &cfg).unwrap() - je).abs() < 1e-10);
    assert!((model.relation_loss(&refs, &cfg).unwrap() - jr).abs() < 1e-10);
    let joint = model.objective_value(&refs, Objective::Joint, &cfg).unwrap();
    assert!((joint - (cfg.lambda * je + (1.0 - cfg.lambda) * jr)).abs() < 1e-10);
    let (value, _) = model.batch_gradient(&refs, Objective::Joint, &cfg, None).unwrap();
    assert!((value - joint).abs() < 1e-10);
}

#[test]
fn zero_task_weights_annihilate_entity_loss() {
    let d = dims(4, 3, 2);
    let model = model_with(d.clone(), &Task::ALL, 10);
    let bags = random_bags(5, 11, &d);
    let refs: Vec<&EncodedBag> = bags.iter().collect();
    let cfg = TrainConfig {
        lambda_head: 0.0,
        lambda_tail: 0.0,
        ..config(0.0)
    };
    assert_eq!(model.entity_loss(&refs, &cfg).unwrap(), 0.0);
}

#[test]
fn gradients_respect_partitions() {
    let d = dims(4, 3, 2);
    let model = model_with(d.clone(), &Task::ALL, 12);
    let bags = random_bags(4, 13, &d);
    let refs: Vec<&EncodedBag> = bags.iter().collect();
    let cfg = config(0.001);
    let part = |id: ParamId| model.store.get(id).partition;
    let (_, ge) = model.batch_gradient(&refs, Objective::Entity, &cfg, None).unwrap();
    assert!(ge.ids().all(|id| part(id) != Partition::Relation));
    assert!(ge.ids().any(|id| part(id) == Partition::Head));
    let (_, gr) = model.batch_gradient(&refs, Objective::Relation, &cfg, None).unwrap();
    assert!(gr.ids().all(|id| !matches!(part(id), Partition::Head | Partition::Tail)));
    assert!(gr.ids().any(|id| part(id) == Partition::Shared));
}

#[test]
fn word_table_gradient_is_sparse() {
    let d = dims(4, 3, 2);
    let model = model_with(d.clone(), &[Task::Relation], 14);
    let bags = random_bags(1, 15, &d);
    let refs: Vec<&EncodedBag> = bags.iter().collect();
    let (_, g) = model
        .batch_gradient(&refs, Objective::Relation, &config(0.0), None)
        .unwrap();
    let id = model.store.id(WORD_TABLE).unwrap();
    let used: BTreeSet<usize> = bags[0].sentences.iter().flat_map(|s| s.words.clone()).collect();
    match g.get(id).unwrap() {
        Grad::Rows { rows, .. } => assert_eq!(rows.keys().cloned().collect::<BTreeSet<_>>(), used),
        Grad::Dense(_) => panic!("expected a row-sparse gradient"),
    }
}

#[test]
fn batch_gradient_matches_finite_differences() {
    let d = dims(4, 3, 2);
    let model = model_with(d.clone(), &Task::ALL, 16);
    let bags = random_bags(3, 17, &d);
    let refs: Vec<&EncodedBag> = bags.iter().collect();
    let cfg = config(0.01);
    let (_, grads) = model.batch_gradient(&refs, Objective::Joint, &cfg, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let h = 1e-6;
    for (id, p) in model.store.iter() {
        let g = grads.dense(id, p.value.shape());
        for _ in 0..3 {
            let i = rng.gen_range(0..p.value.len());
            let mut plus = model.clone();
            plus.store.get_mut(id).value.data_mut()[i] += h;
            let mut minus = model.clone();
            minus.store.get_mut(id).value.data_mut()[i] -= h;
            let fp = plus.objective_value(&refs, Objective::Joint, &cfg).unwrap();
            let fm = minus.objective_value(&refs, Objective::Joint, &cfg).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let an = g.data()[i];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "{} [{i}]: fd {fd} vs {an}", p.name);
        }
    }
}

#[test]
fn dropout_changes_the_loss_and_is_seeded() {
    let d = dims(6, 3, 2);
    let model = model_with(d.clone(), &[Task::Relation], 19);
    let bags = random_bags(3, 20, &d);
    let refs: Vec<&EncodedBag> = bags.iter().collect();
    let cfg = config(0.0);
    let (clean, _) = model.batch_gradient(&refs, Objective::Relation, &cfg, None).unwrap();
    let (a, _) = model.batch_gradient(&refs, Objective::Relation, &cfg, Some(&[1, 2, 3])).unwrap();
    let (b, _) = model.batch_gradient(&refs, Objective::Relation, &cfg, Some(&[1, 2, 3])).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, clean);
}

#[test]
fn per_relation_query_scores_each_relation() {
    let mut d = dims(4, 3, 2);
    d.query_mode = QueryMode::PerRelation;
    let model = model_with(d.clone(), &[Task::Relation], 21);
    assert_eq!(
        model.store.by_name("relation.sent_attn.query").unwrap().value.shape(),
        &[5, 4]
    );
    let bags = random_bags(2, 22, &d);
    let p = model.forward_bag(&bags[0], Task::Relation).unwrap();
    assert_eq!(p.len(), 5);
    assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
    let refs: Vec<&EncodedBag> = bags.iter().collect();
    assert!(model.relation_loss(&refs, &config(0.0)).unwrap() > 0.0);
}

#[test]
fn transfer_copies_shared_exactly_and_drops_entity_heads() {
    let d = dims(4, 3, 2);
    let pre = model_with(d.clone(), &[Task::Head, Task::Tail], 23);
    let fresh = model_with(d.clone(), &[Task::Relation], 24);
    let out = transfer_init(&pre, &fresh).unwrap();
    for (_, p) in out.store.iter() {
        match p.partition {
            Partition::Shared => {
                let src = pre.store.by_name(&p.name).unwrap();
                let same = p.value.data().iter().zip(src.value.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                assert!(same, "{}", p.name);
            }
            Partition::Relation => assert_eq!(p.value, fresh.store.by_name(&p.name).unwrap().value),
            _ => panic!("{} leaked", p.name),
        }
        assert!(p.m.data().iter().all(|&x| x == 0.0));
    }
    assert_eq!(out.store.step(), 0);

    let mut patched = fresh.clone();
    for name in pre.store.names_in(Partition::Shared) {
        patched.store.set_value(name, pre.store.by_name(name).unwrap().value.clone()).unwrap();
    }
    for bag in random_bags(4, 25, &d) {
        let a = out.forward_bag(&bag, Task::Relation).unwrap();
        let b = patched.forward_bag(&bag, Task::Relation).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn transfer_rejects_shape_mismatch() {
    let pre = model_with(dims(4, 3, 2), &[Task::Head, Task::Tail], 26);
    let fresh = model_with(dims(5, 3, 2), &[Task::Relation], 27);
    assert!(matches!(transfer_init(&pre, &fresh), Err(Error::Shape { .. })));
}

#[test]
fn zero_epoch_plan_leaves_store_unchanged() {
    let d = dims(4, 3, 2);
    let model = model_with(d.clone(), &Task::ALL, 28);
    let bags = random_bags(10, 29, &d);
    let plan = TrainPlan::staged(0, 0, config(0.0));
    let out = train(&plan, &bags, model.clone()).unwrap();
    assert_eq!(out.model, model);
    assert!(out.metrics.is_empty());
}

#[test]
fn training_is_deterministic_and_logs_each_epoch() {
    let d = dims(4, 3, 2);
    let model = model_with(d.clone(), &[], 30);
    let bags = random_bags(20, 31, &d);
    let cfg = TrainConfig {
        batch_size: 4,
        lr: 0.01,
        ..config(0.0001)
    };
    let plan = TrainPlan::staged(2, 3, cfg);
    let a = train(&plan, &bags, model.clone()).unwrap();
    let b = train(&plan, &bags, model).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.metrics.len(), 5);
    assert!(a.metrics.iter().all(|m| m.val_loss.is_some()));
    assert!(!a.model.has_task(Task::Head));
    let best = a.pretrained.unwrap();
    for name in best.store.names_in(Partition::Shared) {
        assert_ne!(best.store.by_name(name).unwrap().value, a.model.store.by_name(name).unwrap().value);
    }
}

#[test]
fn nan_loss_aborts_with_batch_diagnostic() {
    let d = dims(4, 3, 2);
    let mut model = model_with(d.clone(), &[Task::Relation], 32);
    model.store.get_mut(model.store.id("relation.out.bias").unwrap()).value.data_mut()[0] = f64::NAN;
    let bags = random_bags(10, 33, &d);
    let plan = TrainPlan::new(
        vec![StagePlan {
            stage: Stage::TrainRelation,
            epochs: 1,
        }],
        config(0.0),
    );
    let err = train(&plan, &bags, model).unwrap_err();
    assert!(err.is_numerical());
    assert!(err.to_string().contains("batch 0"), "{err}");
}
