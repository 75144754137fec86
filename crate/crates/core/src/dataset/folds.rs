use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, stream};

/// One user-independent split, as clip indices into the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub validation_actors: Vec<u32>,
}

/// Shuffles distinct actors with `seed`, deals them round-robin into `k`
/// groups, and validates fold `i` on group `i`.
pub fn make_folds(actor_ids: &[u32], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid(format!(
            "cross-validation needs at least 2 folds, got {k}"
        )));
    }
    let mut actors: Vec<u32> = actor_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if actors.len() < k {
        return Err(Error::invalid(format!(
            "{} distinct actors cannot fill {k} folds",
            actors.len()
        )));
    }
    actors.shuffle(&mut seed::rng(&[seed, stream::FOLDS]));
    let mut groups: Vec<Vec<u32>> = vec![Vec::new(); k];
    for (i, a) in actors.into_iter().enumerate() {
        groups[i % k].push(a);
    }
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(index, mut group)| {
            group.sort_unstable();
            let (validation, train) = (0..actor_ids.len())
                .partition(|&c| group.binary_search(&actor_ids[c]).is_ok());
            Fold {
                index,
                train,
                validation,
                validation_actors: group,
            }
        })
        .collect())
}
