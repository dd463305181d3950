//! Deterministic generators and loaders for the relational tasks, plus
//! the sequence metrics.

pub mod metrics;
pub mod mnist;
pub mod pairwise;
pub mod sorting;

use rand::seq::SliceRandom;
use rand::Rng;

/// Disjoint index lists over one dataset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffle `0..n` and split off `floor(n·frac_val)` validation and
/// `floor(n·frac_test)` test indices; the remainder trains.
pub fn three_way_split<R: Rng>(n: usize, frac_val: f64, frac_test: f64, rng: &mut R) -> Split {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = (n as f64 * frac_val).floor() as usize;
    let n_test = (n as f64 * frac_test).floor() as usize;
    let val = idx[..n_val].to_vec();
    let test = idx[n_val..n_val + n_test].to_vec();
    let train = idx[n_val + n_test..].to_vec();
    Split { train, val, test }
}
