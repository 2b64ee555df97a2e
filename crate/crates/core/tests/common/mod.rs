#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stp_relex::encoder::{position_rows, EmbeddingTables, EncodedSentence, WordVocab};
use stp_relex::model::{task_param_names, EncodedBag, Extractor, ModelDims, QueryMode, Task};
use stp_relex::numerics::{ParameterStore, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-3)` over
/// every input element, with central differences of step `1e-5`.
///
/// Non-scalar outputs are reduced with fixed random weights.
pub fn fd_check(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Var) -> f64 {
    let eval = |inputs: &[Tensor<f64>], weights: Option<&[f64]>| -> (f64, Vec<Tensor<f64>>, Vec<f64>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let n = tape.value(out).len();
        let w: Vec<f64> = match weights {
            Some(w) => w.to_vec(),
            None => {
                let mut r = rng(n as u64 + 7);
                (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
            }
        };
        let weighted = tape.mul_const(out, w.clone());
        let loss = tape.sum(weighted);
        let value = tape.value(loss).item();
        let back = tape.backward(loss).unwrap();
        let grads = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| back.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (value, grads, w)
    };
    let (_, grads, w) = eval(inputs, None);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= h;
            let numeric = (eval(&plus, Some(&w)).0 - eval(&minus, Some(&w)).0) / (2.0 * h);
            let analytic = grads[i].data()[j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn dims(m: usize, k: usize, l: usize) -> ModelDims {
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

/// Model over a 12-word vocabulary with non-zero biases.
pub fn model_with(d: ModelDims, tasks: &[Task], seed: u64) -> Extractor<f64> {
    let mut r = rng(seed);
    let vocab = WordVocab::new((0..10).map(|i| format!("w{i}")));
    assert_eq!(vocab.len(), d.vocab_size);
    let tables = EmbeddingTables::init(&vocab, d.word_dim, d.pos_dim, d.clip, None, &mut r).unwrap();
    let mut model = Extractor::new(d, tables, tasks, &mut r).unwrap();
    for p in model.store.iter_mut() {
        if p.name.contains(".b_") || p.name.ends_with("out.bias") {
            for x in p.value.data_mut() {
                *x = r.gen_range(-0.3..0.3);
            }
        }
    }
    model
}

pub fn random_sentence(r: &mut ChaCha8Rng, len: usize, d: &ModelDims) -> EncodedSentence {
    let rows = position_rows(d.clip);
    EncodedSentence {
        words: (0..len).map(|_| r.gen_range(0..d.vocab_size)).collect(),
        pos1: (0..len).map(|_| r.gen_range(0..rows)).collect(),
        pos2: (0..len).map(|_| r.gen_range(0..rows)).collect(),
        entity: (0..len).map(|_| r.gen_bool(0.3)).collect(),
    }
}

pub fn random_bags(n: usize, seed: u64, d: &ModelDims) -> Vec<EncodedBag> {
    let mut r = rng(seed);
    (0..n)
        .map(|b| {
            let size = r.gen_range(1..4);
            EncodedBag {
                head: format!("h{b}"),
                tail: format!("t{b}"),
                sentences: (0..size)
                    .map(|_| {
                        let len = r.gen_range(1..6);
                        random_sentence(&mut r, len, d)
                    })
                    .collect(),
                relation: r.gen_range(0..d.relations),
                head_type: r.gen_range(0..d.head_types),
                tail_type: r.gen_range(0..d.tail_types),
                gold: BTreeSet::new(),
            }
        })
        .collect()
}

// ---- plain-loop oracle of the whole forward pass ----------------------------

fn mat(store: &ParameterStore<f64>, name: &str) -> Vec<Vec<f64>> {
    let t = &store.by_name(name).unwrap().value;
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn vecp(store: &ParameterStore<f64>, name: &str) -> Vec<f64> {
    store.by_name(name).unwrap().value.data().to_vec()
}

pub fn mv(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn gru(store: &ParameterStore<f64>, dir: &str, xs: &[Vec<f64>], reverse: bool) -> Vec<Vec<f64>> {
    let g = |f: &str| format!("gru.{dir}.{f}");
    let (wz, uz, bz) = (mat(store, &g("w_z")), mat(store, &g("u_z")), vecp(store, &g("b_z")));
    let (wr, ur, br) = (mat(store, &g("w_r")), mat(store, &g("u_r")), vecp(store, &g("b_r")));
    let (wh, uh, bh) = (mat(store, &g("w_h")), mat(store, &g("u_h")), vecp(store, &g("b_h")));
    let m = bz.len();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let mut h = vec![0.0; m];
    let mut out = vec![vec![]; xs.len()];
    let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
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

/// Task probabilities of `bag`, recomputed with nested loops.
pub fn oracle_probs(model: &Extractor<f64>, bag: &EncodedBag, task: Task) -> Vec<f64> {
    let s = &model.store;
    let [wa, wq, sa, sq, w, b] = task_param_names(task);
    let word = mat(s, "embed.word");
    let pos1 = mat(s, "embed.pos1");
    let pos2 = mat(s, "embed.pos2");
    let (wa, wq) = (mat(s, &wa), vecp(s, &wq));
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
        let f = gru(s, "fwd", &xs, false);
        let bw = gru(s, "bwd", &xs, true);
        let h: Vec<Vec<f64>> = f
            .iter()
            .zip(&bw)
            .map(|(u, v)| u.iter().zip(v).map(|(p, q)| p + q).collect())
            .collect();
        let alpha = softmax(&mv(&h, &mv(&wa, &wq)));
        let m = h[0].len();
        let mut rep = vec![0.0; m];
        for t in 0..h.len() {
            let weight = alpha[t] + if sent.entity[t] { 1.0 } else { 0.0 };
            for j in 0..m {
                rep[j] += weight * h[t][j];
            }
        }
        reps.push(rep);
    }
    let (sa, sq) = (mat(s, &sa), vecp(s, &sq));
    let beta = softmax(&mv(&reps, &mv(&sa, &sq)));
    let m = reps[0].len();
    let pooled: Vec<f64> = (0..m).map(|j| reps.iter().zip(&beta).map(|(r, b)| b * r[j]).sum()).collect();
    let (w, b) = (mat(s, &w), vecp(s, &b));
    let logits: Vec<f64> = mv(&w, &pooled).iter().zip(&b).map(|(a, c)| a + c).collect();
    softmax(&logits)
}
