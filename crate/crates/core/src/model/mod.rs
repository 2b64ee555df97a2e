//! Task heads, objectives, parameter partitioning and transfer.

mod train;

pub use train::{accuracy, split_bags, train, EpochMetrics, Stage, StagePlan, TrainOutcome, TrainPlan};

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{bag_attention, sentence_repr, word_attention, AttentionVars};
use crate::encoder::{bgru_states, embed, xavier, uniform, EmbeddingTables, EmbeddingVars, EncodedSentence, GruVars, GruWeights};
use crate::error::{Error, Result};
use crate::numerics::{
    dropout_mask, l2_penalty, l2_penalty_grad, softmax, Gradients, ParamId, ParameterStore, Partition, Tape, Tensor,
    TrainConfig, Var,
};
use crate::Real;

/// A classification task with its own attention and output layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Head,
    Tail,
    Relation,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Head, Task::Tail, Task::Relation];

    pub fn partition(self) -> Partition {
        match self {
            Task::Head => Partition::Head,
            Task::Tail => Partition::Tail,
            Task::Relation => Partition::Relation,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Task::Head => "head",
            Task::Tail => "tail",
            Task::Relation => "relation",
        }
    }

    fn index(self) -> usize {
        match self {
            Task::Head => 0,
            Task::Tail => 1,
            Task::Relation => 2,
        }
    }
}

/// How the sentence-level attention query is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// One learned query vector per task.
    #[default]
    Shared,
    /// One query row per relation for the relation task; training uses the
    /// gold relation's row and prediction scores each relation with its own.
    PerRelation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub clip: usize,
    pub hidden: usize,
    pub head_types: usize,
    pub tail_types: usize,
    pub relations: usize,
    #[serde(default)]
    pub query_mode: QueryMode,
}

impl ModelDims {
    pub fn from_config(config: &TrainConfig, vocab_size: usize, head_types: usize, tail_types: usize, relations: usize) -> Self {
        ModelDims {
            vocab_size,
            word_dim: config.word_dim,
            pos_dim: config.pos_dim,
            clip: config.clip,
            hidden: config.hidden,
            head_types,
            tail_types,
            relations,
            query_mode: QueryMode::Shared,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + 2 * self.pos_dim
    }

    pub fn classes(&self, task: Task) -> usize {
        match task {
            Task::Head => self.head_types,
            Task::Tail => self.tail_types,
            Task::Relation => self.relations,
        }
    }

    fn per_relation_query(&self, task: Task) -> bool {
        task == Task::Relation && self.query_mode == QueryMode::PerRelation
    }
}

pub const WORD_TABLE: &str = "embed.word";
pub const POS1_TABLE: &str = "embed.pos1";
pub const POS2_TABLE: &str = "embed.pos2";

fn gru_name(dir: &str, field: &str) -> String {
    format!("gru.{dir}.{field}")
}

/// Names of the attention and output parameters of `task`.
pub fn task_param_names(task: Task) -> [String; 6] {
    let p = task.prefix();
    [
        format!("{p}.word_attn.matrix"),
        format!("{p}.word_attn.query"),
        format!("{p}.sent_attn.matrix"),
        format!("{p}.sent_attn.query"),
        format!("{p}.out.weight"),
        format!("{p}.out.bias"),
    ]
}

/// One labelled bag, already pruned and mapped to table rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBag {
    pub head: String,
    pub tail: String,
    pub sentences: Vec<EncodedSentence>,
    /// Training label; `NA` (0) for unlabeled test bags.
    pub relation: usize,
    pub head_type: usize,
    pub tail_type: usize,
    /// Gold non-NA facts for held-out evaluation.
    pub gold: BTreeSet<usize>,
}

impl EncodedBag {
    fn name(&self) -> String {
        format!("({}, {})", self.head, self.tail)
    }

    fn label(&self, task: Task) -> usize {
        match task {
            Task::Head => self.head_type,
            Task::Tail => self.tail_type,
            Task::Relation => self.relation,
        }
    }
}

/// What a training step minimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Entity-type loss over the head and tail tasks.
    Entity,
    /// Relation loss.
    Relation,
    /// `λ·entity + (1−λ)·relation`.
    Joint,
}

impl Objective {
    /// Partitions carrying an L2 penalty, with their weight.
    fn penalized(self, config: &TrainConfig) -> Vec<(Vec<Partition>, f64)> {
        use Partition::*;
        match self {
            Objective::Entity => vec![(vec![Shared, Head, Tail], 1.0)],
            Objective::Relation => vec![(vec![Shared, Relation], 1.0)],
            Objective::Joint => vec![
                (vec![Shared, Head, Tail], config.lambda),
                (vec![Shared, Relation], 1.0 - config.lambda),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct TaskIds {
    word_matrix: ParamId,
    word_query: ParamId,
    sent_matrix: ParamId,
    sent_query: ParamId,
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    word: ParamId,
    pos1: ParamId,
    pos2: ParamId,
    fwd: [ParamId; 9],
    bwd: [ParamId; 9],
    tasks: [Option<TaskIds>; 3],
}

impl Layout {
    fn resolve<T: Real>(store: &ParameterStore<T>) -> Result<Self> {
        let gru = |dir: &str| -> Result<[ParamId; 9]> {
            let ids = GruWeights::<T>::NAMES
                .iter()
                .map(|f| store.id(&gru_name(dir, f)))
                .collect::<Result<Vec<_>>>()?;
            Ok(ids.try_into().expect("nine gru tensors"))
        };
        let mut tasks = [None; 3];
        for task in Task::ALL {
            let names = task_param_names(task);
            if !store.contains(&names[0]) {
                continue;
            }
            let id = |i: usize| store.id(&names[i]);
            tasks[task.index()] = Some(TaskIds {
                word_matrix: id(0)?,
                word_query: id(1)?,
                sent_matrix: id(2)?,
                sent_query: id(3)?,
                weight: id(4)?,
                bias: id(5)?,
            });
        }
        Ok(Layout {
            word: store.id(WORD_TABLE)?,
            pos1: store.id(POS1_TABLE)?,
            pos2: store.id(POS2_TABLE)?,
            fwd: gru("fwd")?,
            bwd: gru("bwd")?,
            tasks,
        })
    }

    fn task(&self, task: Task) -> Result<TaskIds> {
        self.tasks[task.index()]
            .ok_or_else(|| Error::UnknownParameter(format!("{}.* (task not in model)", task.prefix())))
    }
}

/// Dropout settings for one bag's forward pass.
pub struct DropoutCtx<'a> {
    pub p: f64,
    pub rng: &'a mut ChaCha8Rng,
}

/// The relation extractor: dimensions plus a parameter store holding the
/// shared encoder and any subset of the three task partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Extractor<T> {
    pub dims: ModelDims,
    pub store: ParameterStore<T>,
}

impl<T: Real> Extractor<T> {
    /// Fresh model with the shared encoder and the given tasks.
    pub fn new<R: Rng + ?Sized>(
        dims: ModelDims,
        tables: EmbeddingTables<T>,
        tasks: &[Task],
        rng: &mut R,
    ) -> Result<Self> {
        let expect = |name: &str, t: &Tensor<T>, shape: Vec<usize>| {
            if t.shape() != shape.as_slice() {
                Err(Error::Shape {
                    name: name.to_string(),
                    expected: shape,
                    found: t.shape().to_vec(),
                })
            } else {
                Ok(())
            }
        };
        let pos_rows = crate::encoder::position_rows(dims.clip);
        expect(WORD_TABLE, &tables.word, vec![dims.vocab_size, dims.word_dim])?;
        expect(POS1_TABLE, &tables.pos1, vec![pos_rows, dims.pos_dim])?;
        expect(POS2_TABLE, &tables.pos2, vec![pos_rows, dims.pos_dim])?;

        let mut store = ParameterStore::new();
        store.insert(WORD_TABLE, Partition::Shared, tables.word)?;
        store.insert(POS1_TABLE, Partition::Shared, tables.pos1)?;
        store.insert(POS2_TABLE, Partition::Shared, tables.pos2)?;
        for dir in ["fwd", "bwd"] {
            let w = GruWeights::<T>::init(dims.input_dim(), dims.hidden, rng);
            for (field, t) in GruWeights::<T>::NAMES.iter().zip(w.into_tensors()) {
                store.insert(&gru_name(dir, field), Partition::Shared, t)?;
            }
        }
        let mut model = Extractor { dims, store };
        for &task in tasks {
            model.add_task(task, rng)?;
        }
        Ok(model)
    }

    /// Adds freshly initialized attention and output layers for `task`.
    pub fn add_task<R: Rng + ?Sized>(&mut self, task: Task, rng: &mut R) -> Result<()> {
        let m = self.dims.hidden;
        let z = self.dims.classes(task);
        let names = task_param_names(task);
        let part = task.partition();
        let query_bound = (6.0 / (m + 1) as f64).sqrt();
        let sent_query = if self.dims.per_relation_query(task) {
            uniform(&[z, m], query_bound, rng)
        } else {
            uniform(&[m], query_bound, rng)
        };
        let tensors = [
            xavier(m, m, rng),
            uniform(&[m], query_bound, rng),
            xavier(m, m, rng),
            sent_query,
            xavier(z, m, rng),
            Tensor::zeros(&[z]),
        ];
        for (name, t) in names.iter().zip(tensors) {
            self.store.insert(name, part, t)?;
        }
        Ok(())
    }

    pub fn has_task(&self, task: Task) -> bool {
        self.store.contains(&task_param_names(task)[0])
    }

    pub fn freeze_word_embeddings(&mut self, frozen: bool) -> Result<()> {
        self.store.set_frozen(WORD_TABLE, frozen)
    }

    /// Class probabilities of `task` for one bag, without dropout.
    ///
    /// Under [`QueryMode::PerRelation`] the relation task returns, for each
    /// relation `j`, the probability of `j` when the bag is pooled with the
    /// query of `j`; the vector then need not sum to one.
    pub fn forward_bag(&self, bag: &EncodedBag, task: Task) -> Result<Vec<T>> {
        let layout = Layout::resolve(&self.store)?;
        let mut tape = Tape::with_store(&self.store);
        let states = encode_bag(&mut tape, &layout, bag, None)?;
        if self.dims.per_relation_query(task) {
            let mut out = Vec::with_capacity(self.dims.relations);
            for j in 0..self.dims.relations {
                let logits = task_logits(&mut tape, &layout, &self.dims, task, &states, bag, Some(j))?;
                out.push(softmax(tape.value(logits).data())[j]);
            }
            return Ok(out);
        }
        let logits = task_logits(&mut tape, &layout, &self.dims, task, &states, bag, None)?;
        Ok(softmax(tape.value(logits).data()))
    }

    /// Mean per-bag objective plus L2 penalties, and its exact gradient.
    ///
    /// `dropout_seeds` switches on dropout with one RNG stream per bag.
    pub fn batch_gradient(
        &self,
        bags: &[&EncodedBag],
        objective: Objective,
        config: &TrainConfig,
        dropout_seeds: Option<&[u64]>,
    ) -> Result<(T, Gradients<T>)> {
        if bags.is_empty() {
            return Ok((T::zero(), Gradients::new()));
        }
        let layout = Layout::resolve(&self.store)?;
        let per_bag: Vec<Result<(T, Gradients<T>)>> = bags
            .par_iter()
            .enumerate()
            .map(|(i, bag)| {
                let mut rng = dropout_seeds.map(|s| <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(s[i]));
                let mut tape = Tape::with_store(&self.store);
                let ctx = rng.as_mut().map(|rng| DropoutCtx { p: config.dropout, rng });
                let loss = bag_loss(&mut tape, &layout, &self.dims, bag, objective, config, ctx)?;
                let value = tape.value(loss).item();
                let back = tape.backward(loss)?;
                Ok((value, back.params))
            })
            .collect();

        let scale = T::one() / T::from_usize(bags.len()).expect("count");
        let mut total = T::zero();
        let mut grads = Gradients::new();
        for r in per_bag {
            let (v, g) = r?;
            total += v;
            grads.merge(g);
        }
        total *= scale;
        grads.scale(scale);
        let beta = T::lit(config.l2);
        for (parts, weight) in objective.penalized(config) {
            let w = T::lit(weight);
            total += w * l2_penalty(&self.store, &parts, beta);
            l2_penalty_grad(&self.store, &parts, beta, w, &mut grads);
        }
        Ok((total, grads))
    }

    /// Objective value in evaluation mode (no dropout, no gradient).
    pub fn objective_value(&self, bags: &[&EncodedBag], objective: Objective, config: &TrainConfig) -> Result<T> {
        if bags.is_empty() {
            return Ok(T::zero());
        }
        let layout = Layout::resolve(&self.store)?;
        let values: Vec<Result<T>> = bags
            .par_iter()
            .map(|bag| {
                let mut tape = Tape::with_store(&self.store);
                let loss = bag_loss(&mut tape, &layout, &self.dims, bag, objective, config, None)?;
                Ok(tape.value(loss).item())
            })
            .collect();
        let mut total = T::zero();
        for v in values {
            total += v?;
        }
        total /= T::from_usize(bags.len()).expect("count");
        let beta = T::lit(config.l2);
        for (parts, weight) in objective.penalized(config) {
            total += T::lit(weight) * l2_penalty(&self.store, &parts, beta);
        }
        Ok(total)
    }

    /// `J_e` over a batch: mean weighted type cross-entropy plus
    /// `β(‖θ0‖² + ‖θ_head‖² + ‖θ_tail‖²)`.
    pub fn entity_loss(&self, bags: &[&EncodedBag], config: &TrainConfig) -> Result<T> {
        self.objective_value(bags, Objective::Entity, config)
    }

    /// `J_r` over a batch: mean relation cross-entropy plus
    /// `β(‖θ0‖² + ‖θ_r‖²)`.
    pub fn relation_loss(&self, bags: &[&EncodedBag], config: &TrainConfig) -> Result<T> {
        self.objective_value(bags, Objective::Relation, config)
    }

    /// Most probable class of `task`.
    pub fn predict(&self, bag: &EncodedBag, task: Task) -> Result<usize> {
        let p = self.forward_bag(bag, task)?;
        Ok(argmax(&p))
    }
}

pub(crate) fn argmax<T: Real>(p: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Encodes every sentence of `bag` to BGRU states `[T, m]`, with dropout
/// on the states when `dropout` is set.
fn encode_bag<T: Real>(
    tape: &mut Tape<'_, T>,
    layout: &Layout,
    bag: &EncodedBag,
    mut dropout: Option<DropoutCtx<'_>>,
) -> Result<Vec<Var>> {
    if bag.sentences.is_empty() {
        return Err(Error::EmptyBag(bag.name()));
    }
    let tables = EmbeddingVars {
        word: tape.param(layout.word),
        pos1: tape.param(layout.pos1),
        pos2: tape.param(layout.pos2),
    };
    let fwd = GruVars::from_array(layout.fwd.map(|id| tape.param(id)));
    let bwd = GruVars::from_array(layout.bwd.map(|id| tape.param(id)));
    let mut out = Vec::with_capacity(bag.sentences.len());
    for s in &bag.sentences {
        if s.is_empty() {
            return Err(Error::EmptyBag(format!("{} (empty sentence)", bag.name())));
        }
        let x = embed(tape, tables, s);
        let mut h = bgru_states(tape, fwd, bwd, x);
        if let Some(ctx) = dropout.as_mut() {
            let n = tape.value(h).len();
            let mask = dropout_mask::<T, _>(n, ctx.p, ctx.rng);
            h = tape.mul_const(h, mask);
        }
        out.push(h);
    }
    Ok(out)
}

/// Affine output logits of `task` for a bag whose sentence states are
/// `states`. `query_row` selects the relation-specific query.
fn task_logits<T: Real>(
    tape: &mut Tape<'_, T>,
    layout: &Layout,
    dims: &ModelDims,
    task: Task,
    states: &[Var],
    bag: &EncodedBag,
    query_row: Option<usize>,
) -> Result<Var> {
    let ids = layout.task(task)?;
    let word = AttentionVars {
        matrix: tape.param(ids.word_matrix),
        query: tape.param(ids.word_query),
    };
    let sentences: Vec<Var> = states
        .iter()
        .zip(&bag.sentences)
        .map(|(&h, s)| {
            let alpha = word_attention(tape, h, word);
            sentence_repr(tape, h, alpha, &s.entity)
        })
        .collect();
    let query = tape.param(ids.sent_query);
    let query = if dims.per_relation_query(task) {
        let row = query_row.unwrap_or(bag.relation);
        tape.row(query, row)
    } else {
        query
    };
    let sent = AttentionVars {
        matrix: tape.param(ids.sent_matrix),
        query,
    };
    let (pooled, _) = bag_attention(tape, &sentences, sent);
    let w = tape.param(ids.weight);
    let b = tape.param(ids.bias);
    let affine = tape.matvec(w, pooled);
    Ok(tape.add(affine, b))
}

/// Per-bag loss (before batch averaging and penalties).
fn bag_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    layout: &Layout,
    dims: &ModelDims,
    bag: &EncodedBag,
    objective: Objective,
    config: &TrainConfig,
    dropout: Option<DropoutCtx<'_>>,
) -> Result<Var> {
    let states = encode_bag(tape, layout, bag, dropout)?;
    let term = |tape: &mut Tape<'_, T>, task: Task, weight: f64| -> Result<Var> {
        let logits = task_logits(tape, layout, dims, task, &states, bag, None)?;
        let z = dims.classes(task) as f64;
        Ok(tape.cross_entropy(logits, bag.label(task), T::lit(weight / z)))
    };
    let loss = match objective {
        Objective::Entity => {
            let h = term(tape, Task::Head, config.lambda_head)?;
            let t = term(tape, Task::Tail, config.lambda_tail)?;
            tape.add(h, t)
        }
        Objective::Relation => term(tape, Task::Relation, 1.0)?,
        Objective::Joint => {
            let h = term(tape, Task::Head, config.lambda * config.lambda_head)?;
            let t = term(tape, Task::Tail, config.lambda * config.lambda_tail)?;
            let r = term(tape, Task::Relation, 1.0 - config.lambda)?;
            let e = tape.add(h, t);
            tape.add(e, r)
        }
    };
    Ok(loss)
}

/// Relation extractor initialized from a pretrained model: every shared
/// tensor is copied from `pretrained`, relation layers come from `fresh`,
/// and head/tail layers are dropped. Optimizer state starts from zero.
pub fn transfer_init<T: Real>(pretrained: &Extractor<T>, fresh: &Extractor<T>) -> Result<Extractor<T>> {
    let mut out = ParameterStore::new();
    for (_, p) in fresh.store.iter() {
        match p.partition {
            Partition::Shared => {
                let src = pretrained.store.by_name(&p.name)?;
                if src.value.shape() != p.value.shape() {
                    return Err(Error::Shape {
                        name: p.name.clone(),
                        expected: p.value.shape().to_vec(),
                        found: src.value.shape().to_vec(),
                    });
                }
                let id = out.insert(&p.name, Partition::Shared, src.value.clone())?;
                out.get_mut(id).frozen = p.frozen;
            }
            Partition::Relation => {
                let id = out.insert(&p.name, Partition::Relation, p.value.clone())?;
                out.get_mut(id).frozen = p.frozen;
            }
            Partition::Head | Partition::Tail => {}
        }
    }
    if !out.names().any(|n| n.starts_with("relation.")) {
        return Err(Error::Config("fresh model has no relation layers".into()));
    }
    Ok(Extractor {
        dims: fresh.dims.clone(),
        store: out,
    })
}

#[cfg(test)]
mod tests;
