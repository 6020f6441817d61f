use proptest::prelude::*;

use crate::data::{Entry, RatingMatrix};

/// Sparse matrices up to `max_users × max_items` with ratings in `1..=5`
/// and at least one entry.
pub fn arb_matrix(max_users: usize, max_items: usize) -> impl Strategy<Value = RatingMatrix> {
    (1..=max_users, 1..=max_items)
        .prop_flat_map(|(m, n)| {
            (
                Just((m, n)),
                proptest::collection::vec(proptest::option::weighted(0.35, 1u8..=5), m * n),
            )
        })
        .prop_filter_map("needs an entry", |((m, n), cells)| {
            let entries: Vec<Entry> = cells
                .iter()
                .enumerate()
                .filter_map(|(k, v)| {
                    v.map(|v| Entry {
                        user: k / n,
                        item: k % n,
                        value: v as f64,
                    })
                })
                .collect();
            if entries.is_empty() {
                return None;
            }
            Some(RatingMatrix::new(m, n, entries).unwrap())
        })
}
