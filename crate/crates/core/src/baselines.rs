//! PureSVD and item-based kNN scorers.

use ndarray::Array2;
use thiserror::Error;

use crate::data::RatingMatrix;
use crate::linalg::{self, LinalgError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("neighbor count must be at least 1")]
    InvalidK,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Rank-`rank_k` truncated SVD reconstruction of the zero-filled matrix.
pub fn puresvd_scores(train: &RatingMatrix, rank_k: usize) -> Result<Array2<f64>, BaselineError> {
    let (m, n) = train.shape();
    let max = m.min(n);
    if rank_k == 0 || rank_k > max {
        return Err(BaselineError::RankOutOfRange { rank: rank_k, max });
    }
    let dense = train.to_dense();
    let svd = if max <= 2000 {
        linalg::full_svd(dense.view())?.truncate(rank_k)
    } else {
        linalg::randomized_svd(dense.view(), rank_k, 10, 4, 0x5eed)?
    };
    Ok(svd.reconstruct_with(svd.s.as_slice().expect("contiguous singular values")))
}

/// Cosine similarity between item columns of the zero-filled matrix, with a
/// zero diagonal. Items with no observations have zero similarity to all.
pub fn cosine_similarity(train: &RatingMatrix) -> Array2<f64> {
    let n = train.num_items();
    let mut norms = vec![0.0f64; n];
    for e in train.entries() {
        norms[e.item] += e.value * e.value;
    }
    norms.iter_mut().for_each(|v| *v = v.sqrt());

    let mut sim = Array2::<f64>::zeros((n, n));
    for user in 0..train.num_users() {
        let row = train.user_row(user);
        for a in row {
            for b in row {
                if a.item != b.item {
                    sim[[a.item, b.item]] += a.value * b.value;
                }
            }
        }
    }
    for ((i, j), v) in sim.indexed_iter_mut() {
        if *v != 0.0 {
            *v /= norms[i] * norms[j];
        }
    }
    sim
}

/// Each item's `k` most similar items with positive weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemSimilarityModel {
    k: usize,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl ItemSimilarityModel {
    pub fn fit(train: &RatingMatrix, k: usize) -> Result<Self, BaselineError> {
        if k == 0 {
            return Err(BaselineError::InvalidK);
        }
        let sim = cosine_similarity(train);
        let neighbors = sim
            .rows()
            .into_iter()
            .map(|row| {
                let mut cands: Vec<(usize, f64)> = row
                    .iter()
                    .enumerate()
                    .filter(|&(_, &w)| w > 0.0)
                    .map(|(j, &w)| (j, w))
                    .collect();
                cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                cands.truncate(k);
                cands
            })
            .collect();
        Ok(Self { k, neighbors })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, item: usize) -> &[(usize, f64)] {
        &self.neighbors[item]
    }

    /// Score of item `c` for user `u`: sum over `u`'s items `j` of the
    /// weight of `c` in `j`'s neighbor list.
    pub fn scores(&self, train: &RatingMatrix) -> Array2<f64> {
        let mut out = Array2::zeros(train.shape());
        for user in 0..train.num_users() {
            let mut row = out.row_mut(user);
            for e in train.user_row(user) {
                for &(c, w) in &self.neighbors[e.item] {
                    row[c] += w;
                }
            }
        }
        out
    }
}

pub fn itemknn_scores(train: &RatingMatrix, k: usize) -> Result<Array2<f64>, BaselineError> {
    Ok(ItemSimilarityModel::fit(train, k)?.scores(train))
}
