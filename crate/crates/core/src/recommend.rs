//! Top-N lists from a score matrix, and reconstruction diagnostics.

use std::cmp::Ordering;
use std::io::Write;

use ndarray::{Array2, ArrayView1};
use serde::Serialize;
use thiserror::Error;

use crate::data::RatingMatrix;

/// Entries above this count as nonzero in [`reconstruction_stats`].
pub const NONZERO_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error("user {user} out of range ({users} users)")]
    UserOutOfRange { user: usize, users: usize },
    #[error("score matrix is {got:?}, training matrix is {expected:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedList {
    pub user: usize,
    /// `(item, score)`, best first.
    pub items: Vec<(usize, f64)>,
}

impl RankedList {
    /// 1-based position of `item`, if listed.
    pub fn position(&self, item: usize) -> Option<usize> {
        self.items.iter().position(|&(i, _)| i == item).map(|p| p + 1)
    }

    pub fn truncated(&self, n: usize) -> RankedList {
        RankedList {
            user: self.user,
            items: self.items[..n.min(self.items.len())].to_vec(),
        }
    }
}

// Higher score first, then lower item index. NaN sorts last.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    match (a.1.is_nan(), b.1.is_nan()) {
        (false, false) => b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)),
        (x, y) => x.cmp(&y).then(a.0.cmp(&b.0)),
    }
}

fn check_shape(x_hat: &Array2<f64>, train: &RatingMatrix) -> Result<(), RecommendError> {
    if x_hat.dim() != train.shape() {
        return Err(RecommendError::Shape {
            expected: train.shape(),
            got: x_hat.dim(),
        });
    }
    Ok(())
}

fn rank_row(scores: ArrayView1<f64>, train: &RatingMatrix, user: usize, n_list: usize) -> RankedList {
    let seen = train.user_row(user);
    let mut seen_iter = seen.iter().map(|e| e.item).peekable();
    let mut candidates: Vec<(usize, f64)> = Vec::with_capacity(scores.len().saturating_sub(seen.len()));
    for (item, &score) in scores.iter().enumerate() {
        if seen_iter.peek() == Some(&item) {
            seen_iter.next();
            continue;
        }
        candidates.push((item, score));
    }
    let n = n_list.min(candidates.len());
    if n > 0 && n < candidates.len() {
        candidates.select_nth_unstable_by(n - 1, rank_order);
        candidates.truncate(n);
    }
    candidates.sort_unstable_by(rank_order);
    RankedList {
        user,
        items: candidates,
    }
}

/// Ranks the user's unobserved items by score, descending, ties by
/// ascending item index.
pub fn top_n(
    x_hat: &Array2<f64>,
    train: &RatingMatrix,
    user: usize,
    n_list: usize,
) -> Result<RankedList, RecommendError> {
    check_shape(x_hat, train)?;
    if user >= train.num_users() {
        return Err(RecommendError::UserOutOfRange {
            user,
            users: train.num_users(),
        });
    }
    Ok(rank_row(x_hat.row(user), train, user, n_list))
}

/// [`top_n`] for every user, in user order.
pub fn top_n_all(x_hat: &Array2<f64>, train: &RatingMatrix, n_list: usize) -> Result<Vec<RankedList>, RecommendError> {
    check_shape(x_hat, train)?;
    Ok((0..train.num_users())
        .map(|u| rank_row(x_hat.row(u), train, u, n_list))
        .collect())
}

/// CSV with header `user_id,rank,item_id,score`, external ids, 1-based rank.
pub fn write_ranked_csv<W: Write>(lists: &[RankedList], train: &RatingMatrix, out: W) -> Result<(), RecommendError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["user_id", "rank", "item_id", "score"])?;
    for list in lists {
        for (rank, &(item, score)) in list.items.iter().enumerate() {
            w.write_record([
                train.user_ids()[list.user].to_string(),
                (rank + 1).to_string(),
                train.item_ids()[item].to_string(),
                score.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconStats {
    /// Fraction of unobserved cells with a value above the threshold.
    pub recovered_density: f64,
    /// Mean over all unobserved cells.
    pub mean_recovered: f64,
    /// Mean over observed cells.
    pub mean_preserved: f64,
    /// Mean over unobserved cells that came out nonzero.
    pub mean_recovered_nonzero: f64,
}

pub fn reconstruction_stats(x_hat: &Array2<f64>, train: &RatingMatrix) -> Result<ReconStats, RecommendError> {
    check_shape(x_hat, train)?;
    let mask = train.mask();
    let (mut off_sum, mut off_count, mut nz_sum, mut nz_count) = (0.0, 0usize, 0.0, 0usize);
    let (mut on_sum, mut on_count) = (0.0, 0usize);
    for (&v, &observed) in x_hat.iter().zip(mask.iter()) {
        if observed {
            on_sum += v;
            on_count += 1;
        } else {
            off_sum += v;
            off_count += 1;
            if v > NONZERO_THRESHOLD {
                nz_sum += v;
                nz_count += 1;
            }
        }
    }
    let mean = |s: f64, c: usize| if c == 0 { 0.0 } else { s / c as f64 };
    Ok(ReconStats {
        recovered_density: mean(nz_count as f64, off_count),
        mean_recovered: mean(off_sum, off_count),
        mean_preserved: mean(on_sum, on_count),
        mean_recovered_nonzero: mean(nz_sum, nz_count),
    })
}
