//! Label-derived pairwise constraints.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};

/// Similar (same-class) and dissimilar (different-class) sample pairs.
/// Indices refer to positions in the label slice the set was built from and
/// every pair is stored as `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub similar: Vec<(usize, usize)>,
    pub dissimilar: Vec<(usize, usize)>,
}

impl ConstraintSet {
    /// `N_S`
    pub fn n_similar(&self) -> usize {
        self.similar.len()
    }

    /// `N_D`
    pub fn n_dissimilar(&self) -> usize {
        self.dissimilar.len()
    }

    /// Largest sample index referenced by any pair.
    pub fn max_index(&self) -> Option<usize> {
        self.similar.iter().chain(&self.dissimilar).map(|&(_, j)| j).max()
    }
}

/// Enumerates all same-class and different-class pairs in `(i, j)`
/// lexicographic order. When `max_pairs_per_set` is given, each list that
/// exceeds it is subsampled uniformly without replacement (order preserved).
pub fn build_constraints(labels: &[Label], max_pairs_per_set: Option<usize>, seed: u64) -> Result<ConstraintSet> {
    if labels.len() < 2 {
        return Err(Error::invalid("constraints need at least 2 samples"));
    }
    if max_pairs_per_set == Some(0) {
        return Err(Error::invalid("max pairs per set must be at least 1"));
    }
    let mut similar = Vec::new();
    let mut dissimilar = Vec::new();
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            if labels[i] == labels[j] {
                similar.push((i, j));
            } else {
                dissimilar.push((i, j));
            }
        }
    }
    if similar.is_empty() {
        return Err(Error::invalid("no similar pairs"));
    }
    if dissimilar.is_empty() {
        return Err(Error::invalid("no dissimilar pairs"));
    }
    if let Some(cap) = max_pairs_per_set {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        similar = subsample(similar, cap, &mut rng);
        dissimilar = subsample(dissimilar, cap, &mut rng);
    }
    Ok(ConstraintSet { similar, dissimilar })
}

fn subsample(pairs: Vec<(usize, usize)>, cap: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    if pairs.len() <= cap {
        return pairs;
    }
    let mut keep = index::sample(rng, pairs.len(), cap).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|k| pairs[k]).collect()
}
