use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Patient-level assignment to `k` cross-validation folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

pub const DEFAULT_FOLDS: usize = 10;

/// Shuffles the patients with `seed` and deals them round-robin into `k`
/// folds.
pub fn make_folds(manifest: &Manifest, k: usize, seed: u64) -> Result<FoldPlan> {
    let mut patients: Vec<&str> = manifest.patients();
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    if k > patients.len() {
        return Err(Error::InvalidInput(format!(
            "{k} folds requested but only {} patients",
            patients.len()
        )));
    }
    // Shuffle a canonical ordering so the plan does not depend on row order.
    patients.sort_unstable();
    patients.shuffle(&mut rng::stream(seed, &[tag::FOLDS]));
    let assignments = patients
        .iter()
        .enumerate()
        .map(|(i, p)| (p.to_string(), i % k))
        .collect();
    Ok(FoldPlan {
        k,
        seed,
        assignments,
    })
}

impl FoldPlan {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.assignments.get(patient_id).copied()
    }

    /// Test patients of `fold`, sorted.
    pub fn test_patients(&self, fold: usize) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(p, _)| p.as_str())
            .collect()
    }

    /// Row indices of the training and test partitions of `fold`.
    ///
    /// Fails if a row's patient is missing from the plan or if any patient
    /// would land on both sides.
    pub fn split(&self, patient_ids: &[&str], fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if fold >= self.k {
            return Err(Error::InvalidInput(format!(
                "fold {fold} out of range for {} folds",
                self.k
            )));
        }
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, pid) in patient_ids.iter().enumerate() {
            match self.fold_of(pid) {
                Some(f) if f == fold => test.push(i),
                Some(_) => train.push(i),
                None => {
                    return Err(Error::InvalidInput(format!(
                        "patient {pid} is not in the fold plan"
                    )))
                }
            }
        }
        let train_patients: HashSet<&str> = train.iter().map(|&i| patient_ids[i]).collect();
        if let Some(&i) = test.iter().find(|&&i| train_patients.contains(patient_ids[i])) {
            return Err(Error::Internal(format!(
                "patient {} appears in both partitions of fold {fold}",
                patient_ids[i]
            )));
        }
        Ok((train, test))
    }
}
