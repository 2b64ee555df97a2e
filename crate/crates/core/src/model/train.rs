use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, transfer_init, EncodedBag, Extractor, Objective, Task};
use crate::error::{Error, Result};
use crate::numerics::{Adam, BatchUnit, TrainConfig};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Minimize the entity-type objective and keep the best shared state.
    PretrainEntity,
    /// Minimize the relation objective, starting from a pretrained encoder
    /// when one was produced earlier in the plan.
    TrainRelation,
    /// Minimize `λ·J_e + (1−λ)·J_r` in one pass.
    Joint,
}

impl Stage {
    fn objective(self) -> Objective {
        match self {
            Stage::PretrainEntity => Objective::Entity,
            Stage::TrainRelation => Objective::Relation,
            Stage::Joint => Objective::Joint,
        }
    }

    fn code(self) -> u64 {
        match self {
            Stage::PretrainEntity => 1,
            Stage::TrainRelation => 2,
            Stage::Joint => 3,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::PretrainEntity => "pretrain_entity",
            Stage::TrainRelation => "train_relation",
            Stage::Joint => "joint",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: Stage,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub stages: Vec<StagePlan>,
    pub config: TrainConfig,
    /// NA bags kept per non-NA bag in each epoch; `None` keeps them all.
    pub na_ratio: Option<f64>,
    /// Fraction of bags held out for validation.
    pub val_fraction: f64,
}

impl TrainPlan {
    pub fn new(stages: Vec<StagePlan>, config: TrainConfig) -> Self {
        TrainPlan {
            stages,
            config,
            na_ratio: Some(1.0),
            val_fraction: 0.1,
        }
    }

    /// Entity pretraining followed by relation training.
    pub fn staged(pretrain_epochs: usize, relation_epochs: usize, config: TrainConfig) -> Self {
        Self::new(
            vec![
                StagePlan {
                    stage: Stage::PretrainEntity,
                    epochs: pretrain_epochs,
                },
                StagePlan {
                    stage: Stage::TrainRelation,
                    epochs: relation_epochs,
                },
            ],
            config,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if let Some(r) = self.na_ratio {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::Config("na_ratio must be a non-negative number".into()));
            }
        }
        let pos = |s: Stage| self.stages.iter().position(|p| p.stage == s);
        if let (Some(p), Some(r)) = (pos(Stage::PretrainEntity), pos(Stage::TrainRelation)) {
            if p > r {
                return Err(Error::Config("pretrain_entity must precede train_relation".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: Stage,
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: Extractor<T>,
    pub metrics: Vec<EpochMetrics>,
    /// Best entity-pretrained model, when the plan pretrained.
    pub pretrained: Option<Extractor<T>>,
}

fn mix(parts: &[u64]) -> u64 {
    // splitmix64 folded over the parts
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Deterministic train/validation split of bag indices.
pub fn split_bags(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(&[seed, 0x5711])));
    let n_val = (n as f64 * val_fraction).floor() as usize;
    let mut val = idx.split_off(n - n_val);
    idx.sort_unstable();
    val.sort_unstable();
    (idx, val)
}

fn epoch_bags(bags: &[EncodedBag], train: &[usize], na_ratio: Option<f64>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let (mut na, mut chosen): (Vec<usize>, Vec<usize>) = train.iter().partition(|&&i| bags[i].relation == 0);
    if let Some(r) = na_ratio {
        let keep = ((chosen.len() as f64) * r).round() as usize;
        if keep < na.len() {
            na.shuffle(rng);
            na.truncate(keep);
        }
    }
    chosen.extend(na);
    chosen.shuffle(rng);
    chosen
}

fn batches(bags: &[EncodedBag], order: &[usize], config: &TrainConfig) -> Vec<Vec<usize>> {
    let size = config.batch_size.max(1);
    match config.batch_unit {
        BatchUnit::Bags => order.chunks(size).map(<[usize]>::to_vec).collect(),
        BatchUnit::Sentences => {
            let mut out = Vec::new();
            let mut cur = Vec::new();
            let mut count = 0;
            for &i in order {
                cur.push(i);
                count += bags[i].sentences.len();
                if count >= size {
                    out.push(std::mem::take(&mut cur));
                    count = 0;
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
            out
        }
    }
}

/// Accuracy on `idx` in evaluation mode. Entity stages average head and
/// tail accuracy.
pub fn accuracy<T: Real>(model: &Extractor<T>, bags: &[EncodedBag], idx: &[usize], stage: Stage) -> Result<f64> {
    use rayon::prelude::*;
    if idx.is_empty() {
        return Ok(0.0);
    }
    let tasks: &[Task] = match stage {
        Stage::PretrainEntity => &[Task::Head, Task::Tail],
        Stage::TrainRelation | Stage::Joint => &[Task::Relation],
    };
    let hits: Vec<Result<usize>> = idx
        .par_iter()
        .map(|&i| {
            let mut n = 0;
            for &task in tasks {
                let p = model.forward_bag(&bags[i], task)?;
                if argmax(&p) == bags[i].label(task) {
                    n += 1;
                }
            }
            Ok(n)
        })
        .collect();
    let mut total = 0;
    for h in hits {
        total += h?;
    }
    Ok(total as f64 / (idx.len() * tasks.len()) as f64)
}

/// Runs every stage of `plan` on `bags`.
///
/// A relation stage that follows entity pretraining starts from
/// [`transfer_init`] of the best pretrained state. Missing task layers are
/// added with an RNG derived from the plan seed. Stages with zero epochs
/// leave the model untouched.
pub fn train<T: Real>(plan: &TrainPlan, bags: &[EncodedBag], model: Extractor<T>) -> Result<TrainOutcome<T>> {
    plan.validate()?;
    let config = &plan.config;
    let seed = config.seed;
    let (train_idx, val_idx) = split_bags(bags.len(), plan.val_fraction, seed);
    let adam = Adam::new(T::lit(config.lr));

    let mut model = model;
    let mut metrics = Vec::new();
    let mut pretrained: Option<Extractor<T>> = None;

    for (stage_no, sp) in plan.stages.iter().enumerate() {
        if sp.epochs == 0 {
            continue;
        }
        let stage = sp.stage;
        let objective = stage.objective();
        let mut init_rng = ChaCha8Rng::seed_from_u64(mix(&[seed, stage.code(), 0x1417]));
        let needed: &[Task] = match stage {
            Stage::PretrainEntity => &[Task::Head, Task::Tail],
            Stage::TrainRelation => &[Task::Relation],
            Stage::Joint => &[Task::Head, Task::Tail, Task::Relation],
        };
        for &task in needed {
            if !model.has_task(task) {
                model.add_task(task, &mut init_rng)?;
            }
        }
        if stage == Stage::TrainRelation {
            if let Some(best) = &pretrained {
                model = transfer_init(best, &model)?;
            }
        }
        model.freeze_word_embeddings(config.freeze_word_embeddings)?;

        let mut best: Option<(f64, Extractor<T>)> = None;
        for epoch in 1..=sp.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(&[seed, stage_no as u64, epoch as u64]));
            let order = epoch_bags(bags, &train_idx, plan.na_ratio, &mut rng);
            let mut loss_sum = 0.0;
            let mut n_batches = 0usize;
            for (b, batch) in batches(bags, &order, config).iter().enumerate() {
                let refs: Vec<&EncodedBag> = batch.iter().map(|&i| &bags[i]).collect();
                let seeds: Vec<u64> = (0..refs.len())
                    .map(|k| mix(&[seed, stage_no as u64, epoch as u64, b as u64, k as u64, rng.gen()]))
                    .collect();
                let (loss, grads) = model.batch_gradient(&refs, objective, config, Some(&seeds))?;
                let loss = loss.as_f64();
                if !loss.is_finite() || !grads.all_finite() {
                    let ids: Vec<String> = refs.iter().map(|bag| bag.name()).collect();
                    return Err(Error::Numerical(format!(
                        "{stage} epoch {epoch} batch {b}: non-finite loss {loss} over bags {}",
                        ids.join(" ")
                    )));
                }
                adam.step(&mut model.store, &grads)?;
                loss_sum += loss;
                n_batches += 1;
            }
            let train_acc = accuracy(&model, bags, &train_idx, stage)?;
            let val_loss = if val_idx.is_empty() {
                None
            } else {
                let refs: Vec<&EncodedBag> = val_idx.iter().map(|&i| &bags[i]).collect();
                Some(model.objective_value(&refs, objective, config)?.as_f64())
            };
            let loss = loss_sum / n_batches.max(1) as f64;
            if stage == Stage::PretrainEntity {
                let score = val_loss.unwrap_or(loss);
                if best.as_ref().is_none_or(|(s, _)| score < *s) {
                    best = Some((score, model.clone()));
                }
            }
            metrics.push(EpochMetrics {
                stage,
                epoch,
                loss,
                train_acc,
                val_loss,
            });
        }
        if stage == Stage::PretrainEntity {
            let (_, m) = best.expect("at least one epoch");
            model = m.clone();
            pretrained = Some(m);
        }
    }
    Ok(TrainOutcome {
        model,
        metrics,
        pretrained,
    })
}
