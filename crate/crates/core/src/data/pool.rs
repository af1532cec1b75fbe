use rand::seq::index::sample;

use super::MultiDomainDataset;
use crate::error::{MudalError, Result};
use crate::rng::stream;

#[derive(Clone, Debug, PartialEq)]
struct DomainPool {
    is_labeled: Vec<bool>,
    /// Labeled indices in reveal order, with their revealed labels.
    labeled: Vec<usize>,
    labels: Vec<usize>,
}

/// Per-domain labeled sets. Labels only become readable through [`reveal`](Self::reveal).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPool {
    domains: Vec<DomainPool>,
}

impl LabeledPool {
    /// An empty pool shaped like `dataset`.
    pub fn empty(dataset: &MultiDomainDataset) -> Self {
        Self {
            domains: dataset
                .domains()
                .iter()
                .map(|d| DomainPool {
                    is_labeled: vec![false; d.n_train()],
                    labeled: Vec::new(),
                    labels: Vec::new(),
                })
                .collect(),
        }
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn labeled(&self, j: usize) -> &[usize] {
        &self.domains[j].labeled
    }

    pub fn labels(&self, j: usize) -> &[usize] {
        &self.domains[j].labels
    }

    pub fn n_labeled(&self, j: usize) -> usize {
        self.domains[j].labeled.len()
    }

    pub fn total_labeled(&self) -> usize {
        self.domains.iter().map(|d| d.labeled.len()).sum()
    }

    pub fn train_size(&self, j: usize) -> usize {
        self.domains[j].is_labeled.len()
    }

    pub fn n_unlabeled(&self, j: usize) -> usize {
        self.train_size(j) - self.n_labeled(j)
    }

    pub fn is_labeled(&self, j: usize, idx: usize) -> bool {
        self.domains[j].is_labeled[idx]
    }

    /// Unlabeled train indices of domain `j`, ascending.
    pub fn unlabeled(&self, j: usize) -> Vec<usize> {
        self.domains[j]
            .is_labeled
            .iter()
            .enumerate()
            .filter_map(|(k, &l)| (!l).then_some(k))
            .collect()
    }

    /// Move `indices` of domain `j` to the labeled set and read their labels
    /// from the annotator. Rejects the whole call if any index is out of
    /// range, repeated, or already labeled.
    pub fn reveal(&mut self, dataset: &MultiDomainDataset, j: usize, indices: &[usize]) -> Result<()> {
        let pool = self
            .domains
            .get_mut(j)
            .ok_or_else(|| MudalError::Pool(format!("no domain {j}")))?;
        let mut seen = std::collections::HashSet::with_capacity(indices.len());
        for &idx in indices {
            if idx >= pool.is_labeled.len() {
                return Err(MudalError::Pool(format!("index {idx} outside domain {j}")));
            }
            if pool.is_labeled[idx] || !seen.insert(idx) {
                return Err(MudalError::Pool(format!("index {idx} of domain {j} labeled twice")));
            }
        }
        for &idx in indices {
            pool.is_labeled[idx] = true;
            pool.labeled.push(idx);
            pool.labels.push(dataset.annotate(j, idx));
        }
        Ok(())
    }
}

/// Round-0 pool: `m0 / N` uniformly drawn labels per domain (the remainder
/// goes to the lowest-indexed domains).
pub fn init_pool(dataset: &MultiDomainDataset, m0: usize, seed: u64) -> Result<LabeledPool> {
    let n = dataset.n_domains();
    let mut pool = LabeledPool::empty(dataset);
    for j in 0..n {
        let k = m0 / n + usize::from(j < m0 % n);
        let size = pool.train_size(j);
        if k > size {
            return Err(MudalError::Budget(format!(
                "initial budget of {k} exceeds the {size} train samples of domain {j}"
            )));
        }
        let mut rng = stream(seed, "init-pool", j as u64);
        let mut picked = sample(&mut rng, size, k).into_vec();
        picked.sort_unstable();
        pool.reveal(dataset, j, &picked)?;
    }
    Ok(pool)
}
