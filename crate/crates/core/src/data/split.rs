use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub k: usize,
    pub seed: u64,
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Shuffled k-fold partition of `0..n`. The first `n % k` test folds hold
/// one extra index. Index lists are sorted.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!("cannot split {n} rows into {k} folds")));
    }
    let perm = permutation(n, seed);
    let (base, extra) = (n / k, n % k);
    let mut assignment = vec![0; n];
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        for &i in &perm[start..start + len] {
            assignment[i] = f;
        }
        start += len;
    }
    let folds = (0..k)
        .map(|f| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assignment[i] == f);
            Fold { train, test }
        })
        .collect();
    Ok(FoldPlan { folds, k, seed })
}

/// Single shuffled train/test split with `round(n * test_fraction)` test rows.
pub fn holdout(n: usize, test_fraction: f64, seed: u64) -> Result<Fold> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n_test == n {
        return Err(Error::Config(format!("test fraction {test_fraction} leaves an empty split of {n} rows")));
    }
    let perm = permutation(n, seed);
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok(Fold { train, test })
}

/// Shuffled mini-batches over `0..n`; the last batch may be short.
pub fn batches(n: usize, size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(permutation(n, seed).chunks(size).map(<[usize]>::to_vec).collect())
}
