use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One random train/test partition. Both index lists are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub fold_id: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Monte Carlo cross-validation: `folds` independent random partitions, each
/// holding out `round(n * test_frac)` samples. Folds may share test samples.
pub fn monte_carlo_splits(n: usize, folds: usize, test_frac: f64, seed: u64) -> Result<Vec<DatasetSplit>> {
    if folds == 0 {
        return Err(Error::Config("need at least one fold".into()));
    }
    if !(test_frac > 0.0 && test_frac < 1.0) {
        return Err(Error::Config(format!("test fraction must lie in (0, 1), got {test_frac}")));
    }
    let n_test = (n as f64 * test_frac).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Config(format!(
            "{n} samples at test fraction {test_frac} leave an empty train or test set"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..folds)
        .map(|fold_id| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let mut test = idx[..n_test].to_vec();
            let mut train = idx[n_test..].to_vec();
            test.sort_unstable();
            train.sort_unstable();
            DatasetSplit {
                fold_id,
                seed,
                train,
                test,
            }
        })
        .collect())
}
