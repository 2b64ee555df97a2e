//! Entity-wise mask, word-level attention, sentence pooling and selective
//! attention over the sentences of a bag.

use crate::deptree::PrunedSentence;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::Real;

/// `true` at positions inside the head or tail entity span.
pub fn entity_mask(pruned: &PrunedSentence) -> Vec<bool> {
    (0..pruned.len())
        .map(|i| pruned.head_span.contains(&i) || pruned.tail_span.contains(&i))
        .collect()
}

pub(crate) fn mask_values<T: Real>(mask: &[bool]) -> Vec<T> {
    mask.iter()
        .map(|&m| if m { T::one() } else { T::zero() })
        .collect()
}

/// Attention parameters `A` (`m×m`) and query `r` (`m`) as tape nodes.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub matrix: Var,
    pub query: Var,
}

/// Softmax over `h_t · A · r` for the rows of `states` (`[T, m]`).
pub fn word_attention<T: Real>(tape: &mut Tape<'_, T>, states: Var, params: AttentionVars) -> Var {
    let u = tape.matvec(params.matrix, params.query);
    let scores = tape.matvec(states, u);
    tape.softmax(scores)
}

/// `Σ_t (α^w_t + α^e_t) h_t`. The combined weights are not renormalized.
pub fn sentence_repr<T: Real>(tape: &mut Tape<'_, T>, states: Var, alpha: Var, mask: &[bool]) -> Var {
    let weights = tape.add_const(alpha, &mask_values::<T>(mask));
    tape.vecmat(weights, states)
}

/// Selective attention: `α^s = softmax(S_i · A · r)`, `S = Σ α^s_i S_i`.
/// Returns `(S, α^s)`.
pub fn bag_attention<T: Real>(tape: &mut Tape<'_, T>, sentences: &[Var], params: AttentionVars) -> (Var, Var) {
    let stacked = tape.stack_rows(sentences);
    let u = tape.matvec(params.matrix, params.query);
    let scores = tape.matvec(stacked, u);
    let alpha = tape.softmax(scores);
    (tape.vecmat(alpha, stacked), alpha)
}

/// Word-attention weights for plain hidden states.
pub fn word_attention_weights<T: Real>(states: &[Vec<T>], matrix: &Tensor<T>, query: &[T]) -> Result<Vec<T>> {
    if states.is_empty() {
        return Err(Error::Config("word attention over an empty sentence".into()));
    }
    let mut tape = Tape::new();
    let h = tape.leaf(Tensor::from_rows(states)?);
    let params = AttentionVars {
        matrix: tape.leaf(matrix.clone()),
        query: tape.leaf(Tensor::vector(query.to_vec())),
    };
    let a = word_attention(&mut tape, h, params);
    Ok(tape.value(a).data().to_vec())
}

/// Sentence representation for plain inputs.
pub fn sentence_vector<T: Real>(states: &[Vec<T>], alpha: &[T], mask: &[bool]) -> Result<Vec<T>> {
    let mut tape = Tape::new();
    let h = tape.leaf(Tensor::from_rows(states)?);
    let a = tape.leaf(Tensor::vector(alpha.to_vec()));
    let s = sentence_repr(&mut tape, h, a, mask);
    Ok(tape.value(s).data().to_vec())
}

/// Bag representation and sentence weights for plain inputs.
pub fn bag_vector<T: Real>(sentences: &[Vec<T>], matrix: &Tensor<T>, query: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    if sentences.is_empty() {
        return Err(Error::EmptyBag("<inline>".into()));
    }
    let mut tape = Tape::new();
    let rows: Vec<Var> = sentences
        .iter()
        .map(|s| tape.leaf(Tensor::vector(s.clone())))
        .collect();
    let params = AttentionVars {
        matrix: tape.leaf(matrix.clone()),
        query: tape.leaf(Tensor::vector(query.to_vec())),
    };
    let (s, alpha) = bag_attention(&mut tape, &rows, params);
    Ok((tape.value(s).data().to_vec(), tape.value(alpha).data().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deptree::{prune, DepTree, PruneMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vecs(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    fn rand_matrix(m: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_rows(&rand_vecs(m, m, rng)).unwrap()
    }

    #[test]
    fn example_mask() {
        // in Shanghai , China .   (kept subtree of the example sentence)
        let tree = DepTree::validate(&[None, Some(0), Some(1), Some(1), Some(1)]).unwrap();
        let p = prune(&tree, PruneMode::None, 1..2, 3..4);
        assert_eq!(entity_mask(&p), vec![false, true, false, true, false]);
        let two = prune(&tree, PruneMode::None, 1..3, 3..4);
        assert_eq!(entity_mask(&two).iter().filter(|&&m| m).count(), 3);
        let only = DepTree::validate(&[None, Some(0)]).unwrap();
        assert_eq!(entity_mask(&prune(&only, PruneMode::None, 0..1, 1..2)), vec![true, true]);
    }

    #[test]
    fn word_attention_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_matrix(3, &mut rng);
        let r = vec![0.3, -0.2, 0.9];
        let same = vec![vec![0.1, 0.2, 0.3]; 4];
        let w = word_attention_weights(&same, &a, &r).unwrap();
        assert!(w.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        assert_eq!(word_attention_weights(&same[..1], &a, &r).unwrap(), vec![1.0]);
    }

    #[test]
    fn word_attention_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (t, m) = (rng.gen_range(1..7), rng.gen_range(1..5));
            let h = rand_vecs(t, m, &mut rng);
            let a = rand_matrix(m, &mut rng);
            let r: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let scores: Vec<f64> = h
                .iter()
                .map(|ht| {
                    let mut s = 0.0;
                    for i in 0..m {
                        for j in 0..m {
                            s += ht[i] * a.row(i)[j] * r[j];
                        }
                    }
                    s
                })
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            let got = word_attention_weights(&h, &a, &r).unwrap();
            for (g, s) in got.iter().zip(&scores) {
                assert!((g - s.exp() / z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sentence_repr_reductions() {
        let h = vec![vec![1.0, 2.0], vec![3.0, -1.0]];
        let s = sentence_vector(&h, &[0.25, 0.75], &[false, false]).unwrap();
        assert_eq!(s, vec![2.5, -0.25]);
        let same = vec![vec![0.5f64, -0.5]; 3];
        let s = sentence_vector(&same, &[1.0 / 3.0; 3], &[false; 3]).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-15 && (s[1] + 0.5).abs() < 1e-15);
        let s = sentence_vector(&h, &[0.25, 0.75], &[true, false]).unwrap();
        assert_eq!(s, vec![3.5, 1.75]);
    }

    #[test]
    fn bag_attention_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_matrix(3, &mut rng);
        let r = vec![0.5, 0.1, -0.4];
        let one = vec![vec![0.2, -0.3, 0.7]];
        let (s, alpha) = bag_vector(&one, &a, &r).unwrap();
        assert_eq!(s, one[0]);
        assert_eq!(alpha, vec![1.0]);
        let same = vec![one[0].clone(); 4];
        let (s, _) = bag_vector(&same, &a, &r).unwrap();
        for (x, y) in s.iter().zip(&one[0]) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(bag_vector::<f64>(&[], &a, &r).is_err());
    }
}
