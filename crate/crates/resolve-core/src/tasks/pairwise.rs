//! Pairwise order relation: 64 random Gaussian objects carry a hidden
//! total order by index; the model sees a pair and predicts whether the
//! first precedes the second.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{three_way_split, Split};

pub const N_OBJECTS: usize = 64;
pub const OBJECT_DIM: usize = 32;

#[derive(Clone, Debug)]
pub struct PairwiseDataset {
    /// 64 objects, each an i.i.d. standard normal vector in R^32.
    pub objects: Vec<Vec<f64>>,
    /// All ordered pairs (i, j), row-major: pair k = (k / 64, k % 64).
    pub pairs: Vec<(usize, usize)>,
    /// label = 1 iff i < j (strict order; self-pairs are 0).
    pub labels: Vec<u8>,
    pub split: Split,
    pub seed: u64,
}

pub fn gen_pairwise_order(seed: u64) -> PairwiseDataset {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let objects: Vec<Vec<f64>> = (0..N_OBJECTS)
        .map(|_| (0..OBJECT_DIM).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut pairs = Vec::with_capacity(N_OBJECTS * N_OBJECTS);
    let mut labels = Vec::with_capacity(N_OBJECTS * N_OBJECTS);
    for i in 0..N_OBJECTS {
        for j in 0..N_OBJECTS {
            pairs.push((i, j));
            labels.push(u8::from(i < j));
        }
    }
    let split = three_way_split(pairs.len(), 0.15, 0.35, &mut rng);
    PairwiseDataset {
        objects,
        pairs,
        labels,
        split,
        seed,
    }
}

impl PairwiseDataset {
    /// Deterministically sample `size` training pairs from the train pool.
    pub fn train_subset(&self, size: usize, seed: u64) -> Vec<usize> {
        let mut pool = self.split.train.clone();
        pool.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
        pool.truncate(size);
        pool
    }

    /// Model input for pair `k`: the two object vectors stacked, `[2, 32]`.
    pub fn input(&self, k: usize) -> [&[f64]; 2] {
        let (i, j) = self.pairs[k];
        [&self.objects[i], &self.objects[j]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_count_is_4096() {
        let d = gen_pairwise_order(0);
        assert_eq!(d.pairs.len(), 4096);
        assert_eq!(d.labels.len(), 4096);
    }

    #[test]
    fn order_examples() {
        let d = gen_pairwise_order(0);
        let label = |i: usize, j: usize| d.labels[i * N_OBJECTS + j];
        // indices here are 0-based, so objects 3 and 7 are o_4 and o_8
        assert_eq!(label(3, 7), 1);
        assert_eq!(label(7, 3), 0);
        for i in 0..N_OBJECTS {
            assert_eq!(label(i, i), 0, "self-pairs are strict");
        }
    }

    #[test]
    fn labels_are_transitive_exhaustively() {
        let d = gen_pairwise_order(1);
        let label = |i: usize, j: usize| d.labels[i * N_OBJECTS + j] == 1;
        for i in 0..N_OBJECTS {
            for j in 0..N_OBJECTS {
                if !label(i, j) {
                    continue;
                }
                for k in 0..N_OBJECTS {
                    if label(j, k) {
                        assert!(label(i, k));
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_bit_identical_per_seed() {
        let a = gen_pairwise_order(42);
        let b = gen_pairwise_order(42);
        assert_eq!(a.objects, b.objects);
        assert_eq!(a.split, b.split);
        let c = gen_pairwise_order(43);
        assert_ne!(a.objects, c.objects);
    }

    #[test]
    fn train_subsets_are_nested_draws_from_the_pool() {
        let d = gen_pairwise_order(0);
        let s10 = d.train_subset(10, 5);
        let s210 = d.train_subset(210, 5);
        assert_eq!(s10.len(), 10);
        assert_eq!(s210.len(), 210);
        assert_eq!(&s210[..10], &s10[..]);
        let pool: std::collections::HashSet<_> = d.split.train.iter().collect();
        assert!(s210.iter().all(|i| pool.contains(i)));
    }
}
