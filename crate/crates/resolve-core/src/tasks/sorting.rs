//! Object sorting: objects are concatenations of two ranked attribute
//! vectors; the model receives a shuffled sequence and predicts the
//! argsort under the lexicographic order (first attribute primary).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{three_way_split, Split};

pub const N_A: usize = 4;
pub const N_B: usize = 12;
pub const DIM_A: usize = 4;
pub const DIM_B: usize = 8;
pub const OBJECT_DIM: usize = DIM_A + DIM_B;

#[derive(Clone, Debug)]
pub struct SortingDataset {
    /// 48 objects in R^12: object `i*12 + j` is `concat(a_i, b_j)`, and its
    /// rank equals its index (lexicographic, A primary).
    pub objects: Vec<Vec<f64>>,
    /// Each sample lists `seq_len` distinct object indices in shuffled order.
    pub sequences: Vec<Vec<usize>>,
    /// Argsort targets: `target[k]` is the position of the k-th smallest.
    pub targets: Vec<Vec<usize>>,
    pub seq_len: usize,
    pub split: Split,
    pub seed: u64,
}

pub fn gen_sorting(seed: u64, seq_len: usize, n_samples: usize) -> SortingDataset {
    assert!(seq_len >= 2 && seq_len <= N_A * N_B);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let attr_a: Vec<Vec<f64>> = (0..N_A)
        .map(|_| (0..DIM_A).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let attr_b: Vec<Vec<f64>> = (0..N_B)
        .map(|_| (0..DIM_B).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let mut objects = Vec::with_capacity(N_A * N_B);
    for a in &attr_a {
        for b in &attr_b {
            let mut o = a.clone();
            o.extend_from_slice(b);
            objects.push(o);
        }
    }
    let mut sequences = Vec::with_capacity(n_samples);
    let mut targets = Vec::with_capacity(n_samples);
    let mut all: Vec<usize> = (0..objects.len()).collect();
    for _ in 0..n_samples {
        // distinct objects so the order over the sequence is total
        let (chosen, _) = all.partial_shuffle(&mut rng, seq_len);
        let seq = chosen.to_vec();
        let mut order: Vec<usize> = (0..seq_len).collect();
        order.sort_by_key(|&k| seq[k]);
        sequences.push(seq);
        targets.push(order);
    }
    let split = three_way_split(n_samples, 0.10, 0.20, &mut rng);
    SortingDataset {
        objects,
        sequences,
        targets,
        seq_len,
        split,
        seed,
    }
}

impl SortingDataset {
    pub fn train_subset(&self, size: usize, seed: u64) -> Vec<usize> {
        let mut pool = self.split.train.clone();
        pool.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
        pool.truncate(size);
        pool
    }

    /// Feature rows of sample `k`, one object vector per position.
    pub fn input(&self, k: usize) -> Vec<&[f64]> {
        self.sequences[k]
            .iter()
            .map(|&o| self.objects[o].as_slice())
            .collect()
    }
}
