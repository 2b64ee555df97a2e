//! Dense tensors, reverse-mode differentiation, losses, dropout, Adam and
//! the checkpoint container.

mod checkpoint;
mod config;
mod optim;
mod store;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use config::{BatchUnit, TrainConfig};
pub use optim::Adam;
pub use store::{ParamId, Parameter, ParameterStore, Partition};
pub use tape::{Backward, Grad, Gradients, Tape, Var};
pub use tensor::Tensor;

use rand::Rng;

use crate::Real;

/// Probability floor applied by [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Max-subtracted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&x| (x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossEntropy<T> {
    pub value: T,
    /// The gold probability was below [`PROB_FLOOR`] and got clamped.
    pub clamped: bool,
}

/// `−(1/z) log probs[gold]` with `z = probs.len()`.
pub fn cross_entropy<T: Real>(probs: &[T], gold: usize) -> CrossEntropy<T> {
    let floor = T::lit(PROB_FLOOR);
    let p = probs[gold];
    let clamped = p < floor;
    let z = T::from_usize(probs.len()).expect("class count");
    CrossEntropy {
        value: -(p.max(floor).ln()) / z,
        clamped,
    }
}

/// `β` times the sum of squared entries over the parameters in `tags`.
pub fn l2_penalty<T: Real>(store: &ParameterStore<T>, tags: &[Partition], beta: T) -> T {
    let total: T = store
        .iter()
        .filter(|(_, p)| tags.contains(&p.partition))
        .map(|(_, p)| p.value.sum_squares())
        .sum();
    beta * total
}

/// Adds the gradient of [`l2_penalty`] times `weight` into `grads`.
pub fn l2_penalty_grad<T: Real>(
    store: &ParameterStore<T>,
    tags: &[Partition],
    beta: T,
    weight: T,
    grads: &mut Gradients<T>,
) {
    if beta == T::zero() || weight == T::zero() {
        return;
    }
    let k = (beta + beta) * weight;
    for (id, p) in store.iter().filter(|(_, p)| tags.contains(&p.partition)) {
        grads.add_dense(id, p.value.map(|x| x * k));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropoutMode {
    Train,
    Eval,
}

/// Inverted-dropout multipliers: `0` with probability `p`, else `1/(1−p)`.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep })
        .collect()
}

pub fn dropout<T: Real, R: Rng + ?Sized>(
    activations: &[T],
    p: f64,
    mode: DropoutMode,
    rng: &mut R,
) -> Vec<T> {
    match mode {
        DropoutMode::Eval => activations.to_vec(),
        DropoutMode::Train => dropout_mask::<T, R>(activations.len(), p, rng)
            .into_iter()
            .zip(activations)
            .map(|(k, &x)| k * x)
            .collect(),
    }
}
