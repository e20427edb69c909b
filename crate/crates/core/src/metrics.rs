//! Binary-relevance ranking metrics.

use rayon::prelude::*;

use crate::domain::Matrix;
use crate::graph::rank_items;

/// A user's items in descending score order, truncated to `cutoff`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub cutoff: usize,
}

impl RankedList {
    /// Ranks `scores`, skipping any item in `exclude` (sorted or not).
    pub fn from_scores(user: usize, scores: &[f64], exclude: &[usize], cutoff: usize) -> Self {
        let items = rank_items(scores)
            .into_iter()
            .filter(|i| !exclude.contains(i))
            .take(cutoff)
            .collect();
        Self { user, items, cutoff }
    }
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// NDCG@k with gain `1/log2(rank+1)` for relevant items (rank is 1-based).
/// Zero when there are no relevant items.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    assert!(k >= 1, "ndcg cutoff must be >= 1");
    if relevant.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(pos, _)| discount(pos + 1))
        .sum();
    let ideal: f64 = (1..=k.min(relevant.len())).map(discount).sum();
    dcg / ideal
}

pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    assert!(k >= 1, "recall cutoff must be >= 1");
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

/// Mean NDCG@k over users with at least one relevant item.
pub fn mean_ndcg_at_k(scores: &Matrix, relevant: &[Vec<usize>], exclude: &[Vec<usize>], k: usize) -> f64 {
    let per_user: Vec<f64> = (0..scores.rows())
        .into_par_iter()
        .filter(|&u| !relevant[u].is_empty())
        .map(|u| {
            let ex = exclude.get(u).map(Vec::as_slice).unwrap_or(&[]);
            let list = RankedList::from_scores(u, scores.row(u), ex, k);
            ndcg_at_k(&list.items, &relevant[u], k)
        })
        .collect();
    if per_user.is_empty() {
        0.0
    } else {
        per_user.iter().sum::<f64>() / per_user.len() as f64
    }
}
