//! Token-to-vector encoding: word/position embeddings and the
//! bidirectional GRU.

use std::collections::HashMap;
use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::deptree::PrunedSentence;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::Real;

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Word ↔ row map for the word embedding table. Row 0 is padding, row 1
/// the unknown word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for WordVocab {
    fn from(words: Vec<String>) -> Self {
        WordVocab::new(words)
    }
}

impl From<WordVocab> for Vec<String> {
    fn from(v: WordVocab) -> Self {
        v.words
    }
}

impl WordVocab {
    /// Vocabulary over `words` in first-appearance order.
    pub fn new<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut v = WordVocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in [PAD, UNK] {
            v.insert(w);
        }
        for w in words {
            v.insert(w.as_ref());
        }
        v
    }

    fn insert(&mut self, w: &str) {
        if !self.index.contains_key(w) {
            self.index.insert(w.to_string(), self.words.len());
            self.words.push(w.to_string());
        }
    }

    pub fn pad(&self) -> usize {
        0
    }

    pub fn unk(&self) -> usize {
        1
    }

    /// Row for `word`, falling back to UNK.
    pub fn lookup(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(1)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Pretrained vectors in word2vec text format.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddings {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

/// Reads `word v1 … vk` lines with an optional `count dim` header.
pub fn read_text_embeddings<R: BufRead>(input: R, source: &str) -> Result<TextEmbeddings> {
    let mut dim: Option<usize> = None;
    let mut vectors = HashMap::new();
    let err = |line: usize, message: String| Error::Record {
        path: source.to_string(),
        line,
        message,
    };
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            dim = Some(fields[1].parse().expect("checked"));
            continue;
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(i + 1, format!("bad value: {e}")))?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(err(i + 1, format!("expected {d} values, found {}", values.len())))
            }
            _ => {}
        }
        vectors.insert(fields[0].to_string(), values);
    }
    Ok(TextEmbeddings {
        dim: dim.unwrap_or(0),
        vectors,
    })
}

/// Number of rows in a position table: `2·clip + 1` distances plus padding.
pub fn position_rows(clip: usize) -> usize {
    2 * clip + 2
}

/// Maps a clipped signed distance to its table row.
pub fn position_row(distance: i64, clip: usize) -> usize {
    let c = clip as i64;
    (distance.clamp(-c, c) + c) as usize
}

/// A pruned sentence as table rows plus its entity mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedSentence {
    pub words: Vec<usize>,
    pub pos1: Vec<usize>,
    pub pos2: Vec<usize>,
    /// True on tokens inside the head or tail entity span.
    pub entity: Vec<bool>,
}

impl EncodedSentence {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Encodes the kept tokens of `pruned` drawn from the original `tokens`.
pub fn encode_sentence<S: AsRef<str>>(
    tokens: &[S],
    pruned: &PrunedSentence,
    vocab: &WordVocab,
    clip: usize,
) -> EncodedSentence {
    let (pos1, pos2) = pruned.clipped_positions(clip);
    EncodedSentence {
        words: pruned.kept.iter().map(|&i| vocab.lookup(tokens[i].as_ref())).collect(),
        pos1: pos1.iter().map(|&d| position_row(d, clip)).collect(),
        pos2: pos2.iter().map(|&d| position_row(d, clip)).collect(),
        entity: crate::attention::entity_mask(pruned),
    }
}

/// Word and position embedding tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables<T> {
    pub word: Tensor<T>,
    pub pos1: Tensor<T>,
    pub pos2: Tensor<T>,
}

impl<T: Real> EmbeddingTables<T> {
    /// Word rows from `pretrained` where available, otherwise uniform in
    /// ±0.25; position rows Xavier-uniform; the padding word row is zero.
    pub fn init<R: Rng + ?Sized>(
        vocab: &WordVocab,
        word_dim: usize,
        pos_dim: usize,
        clip: usize,
        pretrained: Option<&TextEmbeddings>,
        rng: &mut R,
    ) -> Result<Self> {
        if let Some(p) = pretrained {
            if p.dim != word_dim {
                return Err(Error::Config(format!(
                    "pretrained embeddings have dimension {}, configured word_dim is {word_dim}",
                    p.dim
                )));
            }
        }
        let mut word = uniform(&[vocab.len(), word_dim], 0.25, rng);
        for (row, w) in vocab.words().iter().enumerate() {
            if row == vocab.pad() {
                word.row_mut(row).iter_mut().for_each(|x| *x = T::zero());
            } else if let Some(v) = pretrained.and_then(|p| p.vectors.get(w)) {
                word.row_mut(row)
                    .iter_mut()
                    .zip(v)
                    .for_each(|(x, &y)| *x = T::lit(y));
            }
        }
        let rows = position_rows(clip);
        Ok(EmbeddingTables {
            word,
            pos1: xavier(rows, pos_dim, rng),
            pos2: xavier(rows, pos_dim, rng),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.word.cols() + self.pos1.cols() + self.pos2.cols()
    }
}

pub(crate) fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Uniform in ±√(6/(fan_in+fan_out)).
pub(crate) fn xavier<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    uniform(&[rows, cols], bound, rng)
}

/// Table nodes on a tape.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingVars {
    pub word: Var,
    pub pos1: Var,
    pub pos2: Var,
}

/// `[word; pos1; pos2]` per token → `[T, k+2l]`.
pub fn embed<T: Real>(tape: &mut Tape<'_, T>, tables: EmbeddingVars, sentence: &EncodedSentence) -> Var {
    let w = tape.gather(tables.word, &sentence.words);
    let p1 = tape.gather(tables.pos1, &sentence.pos1);
    let p2 = tape.gather(tables.pos2, &sentence.pos2);
    tape.concat_cols(&[w, p1, p2])
}

/// One GRU direction: input (`w_*`, `m×d`), recurrent (`u_*`, `m×m`) and
/// bias (`b_*`, `m`) for the update (z), reset (r) and candidate (h) paths.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights<T> {
    pub w_z: Tensor<T>,
    pub u_z: Tensor<T>,
    pub b_z: Tensor<T>,
    pub w_r: Tensor<T>,
    pub u_r: Tensor<T>,
    pub b_r: Tensor<T>,
    pub w_h: Tensor<T>,
    pub u_h: Tensor<T>,
    pub b_h: Tensor<T>,
}

impl<T: Real> GruWeights<T> {
    pub const NAMES: [&'static str; 9] = ["w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h"];

    /// Xavier-uniform matrices, zero biases.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        GruWeights {
            w_z: xavier(hidden, input_dim, rng),
            u_z: xavier(hidden, hidden, rng),
            b_z: Tensor::zeros(&[hidden]),
            w_r: xavier(hidden, input_dim, rng),
            u_r: xavier(hidden, hidden, rng),
            b_r: Tensor::zeros(&[hidden]),
            w_h: xavier(hidden, input_dim, rng),
            u_h: xavier(hidden, hidden, rng),
            b_h: Tensor::zeros(&[hidden]),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        let m = Tensor::zeros(&[hidden, input_dim]);
        let u = Tensor::zeros(&[hidden, hidden]);
        let b = Tensor::zeros(&[hidden]);
        GruWeights {
            w_z: m.clone(),
            u_z: u.clone(),
            b_z: b.clone(),
            w_r: m.clone(),
            u_r: u.clone(),
            b_r: b.clone(),
            w_h: m,
            u_h: u,
            b_h: b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b_z.len()
    }

    pub fn tensors(&self) -> [&Tensor<T>; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h,
        ]
    }

    pub fn into_tensors(self) -> [Tensor<T>; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h, self.b_h,
        ]
    }

    /// Places the weights on `tape` as constant leaves.
    pub fn leaves(&self, tape: &mut Tape<'_, T>) -> GruVars {
        let v = self.tensors().map(|t| tape.leaf(t.clone()));
        GruVars::from_array(v)
    }
}

/// [`GruWeights`] as tape nodes, in the same field order.
#[derive(Debug, Clone, Copy)]
pub struct GruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

impl GruVars {
    pub fn from_array(v: [Var; 9]) -> Self {
        GruVars {
            w_z: v[0],
            u_z: v[1],
            b_z: v[2],
            w_r: v[3],
            u_r: v[4],
            b_r: v[5],
            w_h: v[6],
            u_h: v[7],
            b_h: v[8],
        }
    }
}

/// Runs one GRU direction over `x` (`[T, d]`) from a zero initial state.
/// Returns one hidden-state node per position, in input order.
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// c = tanh(W_h x + U_h (r ⊙ h) + b_h)
/// h' = z ⊙ h + (1 − z) ⊙ c
/// ```
pub fn gru_states<T: Real>(tape: &mut Tape<'_, T>, w: GruVars, x: Var, reverse: bool) -> Vec<Var> {
    let steps = tape.value(x).rows();
    let xz = tape.matmul_t(x, w.w_z);
    let xz = tape.add_row_bias(xz, w.b_z);
    let xr = tape.matmul_t(x, w.w_r);
    let xr = tape.add_row_bias(xr, w.b_r);
    let xh = tape.matmul_t(x, w.w_h);
    let xh = tape.add_row_bias(xh, w.b_h);

    let mut states: Vec<Option<Var>> = vec![None; steps];
    let mut h: Option<Var> = None;
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..steps).rev())
    } else {
        Box::new(0..steps)
    };
    for t in order {
        let zin = tape.row(xz, t);
        let hin = tape.row(xh, t);
        let next = match h {
            // h0 = 0: the recurrent terms vanish.
            None => {
                let z = tape.sigmoid(zin);
                let c = tape.tanh(hin);
                let keep = tape.one_minus(z);
                tape.mul(keep, c)
            }
            Some(prev) => {
                let uz = tape.matvec(w.u_z, prev);
                let zsum = tape.add(zin, uz);
                let z = tape.sigmoid(zsum);
                let rin = tape.row(xr, t);
                let ur = tape.matvec(w.u_r, prev);
                let rsum = tape.add(rin, ur);
                let r = tape.sigmoid(rsum);
                let rh = tape.mul(r, prev);
                let uh = tape.matvec(w.u_h, rh);
                let csum = tape.add(hin, uh);
                let c = tape.tanh(csum);
                let old = tape.mul(z, prev);
                let keep = tape.one_minus(z);
                let new = tape.mul(keep, c);
                tape.add(old, new)
            }
        };
        states[t] = Some(next);
        h = Some(next);
    }
    states.into_iter().map(|s| s.expect("every step visited")).collect()
}

/// Forward states plus backward states, element-wise, stacked to `[T, m]`.
pub fn bgru_states<T: Real>(tape: &mut Tape<'_, T>, fwd: GruVars, bwd: GruVars, x: Var) -> Var {
    let f = gru_states(tape, fwd, x, false);
    let b = gru_states(tape, bwd, x, true);
    let sums: Vec<Var> = f.iter().zip(&b).map(|(&a, &c)| tape.add(a, c)).collect();
    tape.stack_rows(&sums)
}

fn input_leaf<T: Real>(tape: &mut Tape<'_, T>, inputs: &[Vec<T>]) -> Result<Var> {
    Ok(tape.leaf(Tensor::from_rows(inputs)?))
}

/// Left-to-right GRU hidden states for a sequence of input vectors.
pub fn gru_forward<T: Real>(inputs: &[Vec<T>], weights: &GruWeights<T>) -> Result<Vec<Vec<T>>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    check_input(inputs, weights)?;
    let mut tape = Tape::new();
    let x = input_leaf(&mut tape, inputs)?;
    let w = weights.leaves(&mut tape);
    let states = gru_states(&mut tape, w, x, false);
    Ok(states.iter().map(|&s| tape.value(s).data().to_vec()).collect())
}

/// Bidirectional GRU with element-wise combination of the two directions.
pub fn bgru<T: Real>(inputs: &[Vec<T>], fwd: &GruWeights<T>, bwd: &GruWeights<T>) -> Result<Vec<Vec<T>>> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    check_input(inputs, fwd)?;
    check_input(inputs, bwd)?;
    if fwd.hidden() != bwd.hidden() {
        return Err(Error::Shape {
            name: "bgru hidden size".into(),
            expected: vec![fwd.hidden()],
            found: vec![bwd.hidden()],
        });
    }
    let mut tape = Tape::new();
    let x = input_leaf(&mut tape, inputs)?;
    let f = fwd.leaves(&mut tape);
    let b = bwd.leaves(&mut tape);
    let h = bgru_states(&mut tape, f, b, x);
    let out = tape.value(h);
    Ok((0..out.rows()).map(|t| out.row(t).to_vec()).collect())
}

fn check_input<T: Real>(inputs: &[Vec<T>], w: &GruWeights<T>) -> Result<()> {
    let d = w.w_z.cols();
    match inputs.iter().find(|x| x.len() != d) {
        Some(bad) => Err(Error::Shape {
            name: "gru input".into(),
            expected: vec![d],
            found: vec![bad.len()],
        }),
        None => Ok(()),
    }
}
