use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Stratified k-fold assignment.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// Fold index of each graph.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }

    pub fn check_fold(&self, fold: usize) -> Result<()> {
        if fold < self.k {
            Ok(())
        } else {
            Err(Error::contract(format!("fold {fold} outside [0, {})", self.k)))
        }
    }
}

/// Shuffles each class under `seed` and deals its members round-robin. The
/// dealing position carries over between classes so fold sizes stay level.
pub fn make_folds(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::contract(format!("need k >= 2 folds, got {k}")));
    }
    let mut assignment = vec![0; ds.graphs.len()];
    let mut next = 0;
    for class in 0..ds.num_classes {
        let mut members: Vec<usize> = (0..ds.graphs.len()).filter(|&i| ds.graphs[i].label == class).collect();
        if members.len() < k {
            return Err(Error::contract(format!(
                "class {class} has {} graphs, fewer than {k} folds",
                members.len()
            )));
        }
        let mut rng = rng_for(seed, &[0xf01d, class as u64]);
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldPlan { k, seed, assignment })
}
