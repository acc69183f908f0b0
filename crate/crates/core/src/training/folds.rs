use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One cross-validation split over subject ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
}

impl FoldSplit {
    /// Every subject trains; nothing is held out.
    pub fn all_train(subjects: &[String]) -> Self {
        Self {
            fold_index: 0,
            train_subjects: subjects.to_vec(),
            val_subjects: Vec::new(),
        }
    }
}

/// Seeded shuffle, then contiguous partition; the first `n % folds` folds
/// hold one extra subject. Training lists keep the input order.
pub fn make_folds(subject_ids: &[String], folds: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    let n = subject_ids.len();
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Config(format!("{n} subjects cannot fill {folds} folds")));
    }
    let mut shuffled = subject_ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / folds, n % folds);
    let mut start = 0;
    Ok((0..folds)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let val = shuffled[start..start + size].to_vec();
            start += size;
            let train = subject_ids.iter().filter(|s| !val.contains(s)).cloned().collect();
            FoldSplit {
                fold_index: i,
                train_subjects: train,
                val_subjects: val,
            }
        })
        .collect())
}
