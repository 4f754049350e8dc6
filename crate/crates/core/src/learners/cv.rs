use rand::seq::SliceRandom;

use super::{Classifier, Dataset, MajorityVote, Trainer};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};

/// Stratified fold index per row. Each class is shuffled under `seed` and
/// dealt round-robin, continuing the dealer position across classes.
pub fn stratified_folds(data: &Dataset, folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed);
    let mut assignment = vec![0usize; data.len()];
    let mut dealer = 0usize;
    for class in [0u8, 1u8] {
        let mut rows: Vec<usize> = (0..data.len()).filter(|&i| data.label(i) == class).collect();
        rows.shuffle(&mut rng);
        for r in rows {
            assignment[r] = dealer % folds;
            dealer += 1;
        }
    }
    assignment
}

/// Mean held-out accuracy over `folds` stratified folds.
///
/// A fold whose training part the trainer rejects as degenerate (a single
/// class) falls back to the majority vote of that training part.
pub fn cross_validate<T: Trainer>(data: &Dataset, folds: usize, trainer: &T, seed: u64) -> Result<f64> {
    if folds < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 folds, got {folds}")));
    }
    if data.len() < folds {
        return Err(Error::DegenerateData(format!(
            "{} rows cannot fill {folds} folds",
            data.len()
        )));
    }
    let assignment = stratified_folds(data, folds, seed);
    let mut total = 0.0;
    for fold in 0..folds {
        let train: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != fold).collect();
        let test: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == fold).collect();
        let train_set = data.subset(&train);
        let fold_seed = derive_seed(seed, fold as u64 + 1);
        let correct = match trainer.fit(&train_set, fold_seed) {
            Ok(model) => count_correct(&model, data, &test)?,
            Err(Error::DegenerateData(_)) => count_correct(&MajorityVote::fit(&train_set), data, &test)?,
            Err(e) => return Err(e),
        };
        total += correct as f64 / test.len() as f64;
    }
    Ok(total / folds as f64)
}

fn count_correct<C: Classifier>(model: &C, data: &Dataset, rows: &[usize]) -> Result<usize> {
    let mut correct = 0;
    for &r in rows {
        if model.predict(&data.inputs()[r])?.0 == data.label(r) {
            correct += 1;
        }
    }
    Ok(correct)
}
