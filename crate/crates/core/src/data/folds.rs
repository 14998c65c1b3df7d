use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Sequence indices assigned to each split of one fold.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Fold {
    pub fn all(&self) -> Vec<usize> {
        let mut v = self.train.clone();
        v.extend(&self.validation);
        v.extend(&self.test);
        v
    }
}

/// Shuffles whole sequences into `n_folds` disjoint blocks of
/// `seq_per_fold` sequences, each split by `ratios` (train, validation,
/// test). Split sizes are rounded; the test split takes the remainder.
pub fn split_folds<R: Rng + ?Sized>(
    n_sequences: usize,
    n_folds: usize,
    seq_per_fold: usize,
    ratios: (f64, f64, f64),
    rng: &mut R,
) -> Result<Vec<Fold>> {
    if n_folds == 0 || seq_per_fold == 0 {
        return Err(Error::Param("n_folds and seq_per_fold must be positive".into()));
    }
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!(
            "split ratios must be in [0, 1] and sum to 1, got {ratios:?}"
        )));
    }
    let needed = n_folds * seq_per_fold;
    if n_sequences < needed {
        return Err(Error::Param(format!(
            "{n_folds} folds of {seq_per_fold} sequences need {needed} sequences, dataset has {n_sequences}"
        )));
    }
    let n_train = (tr * seq_per_fold as f64).round() as usize;
    let n_val = ((va * seq_per_fold as f64).round() as usize).min(seq_per_fold - n_train.min(seq_per_fold));
    let n_train = n_train.min(seq_per_fold);

    let mut order: Vec<usize> = (0..n_sequences).collect();
    order.shuffle(rng);
    Ok(order[..needed]
        .chunks(seq_per_fold)
        .map(|chunk| Fold {
            train: chunk[..n_train].to_vec(),
            validation: chunk[n_train..n_train + n_val].to_vec(),
            test: chunk[n_train + n_val..].to_vec(),
        })
        .collect())
}
