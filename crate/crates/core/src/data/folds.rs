use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::Dataset;
use crate::error::{Error, Result};

/// Disjoint folds covering every sample, stratified by (modality, class).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    /// Global sample indices of each fold, ascending.
    pub folds: Vec<Vec<usize>>,
}

impl FoldSplit {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Query fold `r` and the remaining samples (training and database), ascending.
    pub fn round(&self, r: usize) -> (&[usize], Vec<usize>) {
        let mut rest: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(f, _)| *f != r)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        rest.sort_unstable();
        (&self.folds[r], rest)
    }
}

/// Shuffles each (modality, class) group and deals it round-robin over the
/// folds, continuing from where the previous group stopped.
pub fn make_folds(dataset: &Dataset, n_folds: usize, seed: u64) -> Result<FoldSplit> {
    if n_folds < 2 {
        return Err(Error::invalid("at least two folds are required"));
    }
    let mut groups: BTreeMap<(usize, Option<i64>), Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.records.iter().enumerate() {
        groups.entry((r.modality, r.class)).or_default().push(i);
    }
    if let Some(((m, c), g)) = groups.iter().find(|(_, g)| g.len() < n_folds) {
        return Err(Error::invalid(format!(
            "modality {} class {c:?} has {} samples, fewer than {n_folds} folds",
            m + 1,
            g.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut folds = vec![Vec::new(); n_folds];
    let mut next = 0;
    for members in groups.values_mut() {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[next].push(i);
            next = (next + 1) % n_folds;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldSplit { folds })
}
