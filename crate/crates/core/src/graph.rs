//! LightGCN over the user-item bipartite graph.
//!
//! Layer `k+1` of a user is the degree-normalized sum of its items' layer-`k`
//! embeddings (and symmetrically for items). Final embeddings average layers
//! `0..=K`, and a pair is scored by the dot product of its final embeddings.
//!
//! The whole map from base to final embeddings is linear and symmetric, so
//! the backward pass is the same kernel applied to the incoming gradient.

use std::fmt;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{LoggedDataset, Matrix, TargetPolicy};
use crate::error::{Error, Result};
use crate::formats::{self, Checkpoint};
use crate::rng::{self, Domain};

/// Standard deviation of the initial base embeddings.
pub const INIT_STD: f64 = 0.1;

/// Undirected user-item graph with precomputed edge normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    num_users: usize,
    num_items: usize,
    /// `(item, 1/sqrt(|N_u| |N_i|))` per user, sorted by item.
    user_adj: Vec<Vec<(usize, f64)>>,
    /// `(user, 1/sqrt(|N_u| |N_i|))` per item, sorted by user.
    item_adj: Vec<Vec<(usize, f64)>>,
}

impl BipartiteGraph {
    /// Builds the graph from `(user, item)` edges; duplicates are merged.
    pub fn from_edges(
        num_users: usize,
        num_items: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        if let Some(&(u, i)) = edges.iter().find(|&&(u, i)| u >= num_users || i >= num_items) {
            return Err(Error::InvalidInput(format!(
                "edge ({u}, {i}) outside a {num_users}x{num_items} graph"
            )));
        }
        edges.sort_unstable();
        edges.dedup();
        let mut udeg = vec![0usize; num_users];
        let mut ideg = vec![0usize; num_items];
        for &(u, i) in &edges {
            udeg[u] += 1;
            ideg[i] += 1;
        }
        let mut user_adj = vec![Vec::new(); num_users];
        let mut item_adj = vec![Vec::new(); num_items];
        for &(u, i) in &edges {
            let norm = 1.0 / ((udeg[u] as f64).sqrt() * (ideg[i] as f64).sqrt());
            user_adj[u].push((i, norm));
            item_adj[i].push((u, norm));
        }
        Ok(Self {
            num_users,
            num_items,
            user_adj,
            item_adj,
        })
    }

    /// Graph whose edges are the clicked pairs of a log.
    pub fn from_clicks(dataset: &LoggedDataset) -> Self {
        let edges = dataset
            .records
            .iter()
            .filter(|r| r.clicked())
            .map(|r| (r.user, r.item));
        Self::from_edges(dataset.num_users, dataset.num_items, edges)
            .expect("dataset indices are validated against its dimensions")
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_edges(&self) -> usize {
        self.user_adj.iter().map(Vec::len).sum()
    }

    pub fn user_neighbors(&self, u: usize) -> &[(usize, f64)] {
        &self.user_adj[u]
    }

    pub fn item_neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.item_adj[i]
    }

    /// Edges in `(user, item)` order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.user_adj
            .iter()
            .enumerate()
            .flat_map(|(u, row)| row.iter().map(move |&(i, _)| (u, i)))
            .collect()
    }

    /// Per-user neighbor item lists (the training positives).
    pub fn user_items(&self) -> Vec<Vec<usize>> {
        self.user_adj
            .iter()
            .map(|row| row.iter().map(|&(i, _)| i).collect())
            .collect()
    }
}

fn spread(src: &Matrix, adj: &[Vec<(usize, f64)>], dst: &mut Matrix) {
    let d = src.cols();
    dst.as_mut_slice()
        .par_chunks_mut(d.max(1))
        .zip(adj.par_iter())
        .for_each(|(out, nbrs)| {
            out.iter_mut().for_each(|x| *x = 0.0);
            for &(j, w) in nbrs {
                for (o, s) in out.iter_mut().zip(src.row(j)) {
                    *o += w * s;
                }
            }
        });
}

/// `(1/(K+1)) sum_{k=0..K} A^k E` for stacked user/item tables `E`.
pub fn propagate(
    users: &Matrix,
    items: &Matrix,
    graph: &BipartiteGraph,
    num_layers: usize,
) -> Result<(Matrix, Matrix)> {
    if users.rows() != graph.num_users || items.rows() != graph.num_items {
        return Err(Error::DimensionMismatch(format!(
            "tables are {}x_ / {}x_, graph is {}x{}",
            users.rows(),
            items.rows(),
            graph.num_users,
            graph.num_items
        )));
    }
    if users.cols() != items.cols() {
        return Err(Error::DimensionMismatch("user and item widths differ".into()));
    }
    let mut acc_u = users.clone();
    let mut acc_i = items.clone();
    let mut cur_u = users.clone();
    let mut cur_i = items.clone();
    let mut next_u = Matrix::zeros(users.rows(), users.cols());
    let mut next_i = Matrix::zeros(items.rows(), items.cols());
    for _ in 0..num_layers {
        spread(&cur_i, &graph.user_adj, &mut next_u);
        spread(&cur_u, &graph.item_adj, &mut next_i);
        std::mem::swap(&mut cur_u, &mut next_u);
        std::mem::swap(&mut cur_i, &mut next_i);
        for (a, c) in acc_u.as_mut_slice().iter_mut().zip(cur_u.as_slice()) {
            *a += c;
        }
        for (a, c) in acc_i.as_mut_slice().iter_mut().zip(cur_i.as_slice()) {
            *a += c;
        }
    }
    let scale = 1.0 / (num_layers as f64 + 1.0);
    acc_u.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
    acc_i.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
    Ok((acc_u, acc_i))
}

/// Pulls gradients on final embeddings back to base embeddings. The
/// normalized adjacency is symmetric, so this is [`propagate`] itself.
pub fn propagate_backward(
    grad_users: &Matrix,
    grad_items: &Matrix,
    graph: &BipartiteGraph,
    num_layers: usize,
) -> Result<(Matrix, Matrix)> {
    propagate(grad_users, grad_items, graph, num_layers)
}

/// How a ranking model is turned into a stochastic policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PolicyMode {
    /// `pi(i|u) ~ exp(score / temperature)`
    Softmax { temperature: f64 },
    /// Uniform over the `k` best-scoring items.
    TopkUniform { k: usize },
}

impl fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyMode::Softmax { temperature } => write!(f, "softmax({temperature})"),
            PolicyMode::TopkUniform { k } => write!(f, "topk_uniform({k})"),
        }
    }
}

impl std::str::FromStr for PolicyMode {
    type Err = Error;

    /// Accepts `softmax:<temperature>` or `topk:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::config(
                "policy",
                format!("`{s}` is not `softmax:<temperature>` or `topk:<k>`"),
            )
        };
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "softmax" => {
                let temperature: f64 = arg.parse().map_err(|_| bad())?;
                if !(temperature > 0.0 && temperature.is_finite()) {
                    return Err(Error::config("policy", "softmax temperature must be positive"));
                }
                Ok(PolicyMode::Softmax { temperature })
            }
            "topk" => {
                let k: usize = arg.parse().map_err(|_| bad())?;
                if k == 0 {
                    return Err(Error::config("policy", "top-k needs k >= 1"));
                }
                Ok(PolicyMode::TopkUniform { k })
            }
            _ => Err(bad()),
        }
    }
}

/// Base embedding tables plus a cache of their propagated form.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    users: Matrix,
    items: Matrix,
    num_layers: usize,
    cache: Option<(Matrix, Matrix)>,
}

impl EmbeddingModel {
    pub fn from_tables(users: Matrix, items: Matrix, num_layers: usize) -> Result<Self> {
        if users.cols() != items.cols() {
            return Err(Error::DimensionMismatch("user and item widths differ".into()));
        }
        if users.as_slice().iter().chain(items.as_slice()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("embedding tables contain non-finite values".into()));
        }
        Ok(Self {
            users,
            items,
            num_layers,
            cache: None,
        })
    }

    /// I.i.d. N(0, 0.1^2) initialization, one RNG substream per row.
    pub fn random(num_users: usize, num_items: usize, dim: usize, num_layers: usize, seed: u64) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
        let table = |rows: usize, offset: usize| {
            let mut m = Matrix::zeros(rows, dim);
            m.as_mut_slice()
                .par_chunks_mut(dim.max(1))
                .enumerate()
                .for_each(|(r, row)| {
                    let mut rng = rng::substream(seed, Domain::EmbeddingInit, (offset + r) as u64);
                    for x in row.iter_mut() {
                        *x = normal.sample(&mut rng);
                    }
                });
            m
        };
        Self {
            users: table(num_users, 0),
            items: table(num_items, num_users),
            num_layers,
            cache: None,
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.rows()
    }

    pub fn num_items(&self) -> usize {
        self.items.rows()
    }

    pub fn dim(&self) -> usize {
        self.users.cols()
    }

    pub fn num_layers(&self) -> usize {
        self.num_layers
    }

    pub fn base_users(&self) -> &Matrix {
        &self.users
    }

    pub fn base_items(&self) -> &Matrix {
        &self.items
    }

    /// Mutable access to both base tables. Invalidates the cache.
    pub fn base_mut(&mut self) -> (&mut Matrix, &mut Matrix) {
        self.cache = None;
        (&mut self.users, &mut self.items)
    }

    pub fn is_propagated(&self) -> bool {
        self.cache.is_some()
    }

    pub fn propagate(&mut self, graph: &BipartiteGraph) -> Result<()> {
        self.cache = Some(propagate(&self.users, &self.items, graph, self.num_layers)?);
        Ok(())
    }

    /// Final `(user, item)` embeddings.
    pub fn final_embeddings(&self) -> Result<(&Matrix, &Matrix)> {
        self.cache.as_ref().map(|(u, i)| (u, i)).ok_or(Error::StaleCache)
    }

    pub fn score(&self, user: usize, item: usize) -> Result<f64> {
        let (eu, ei) = self.final_embeddings()?;
        Ok(dot(eu.row(user), ei.row(item)))
    }

    /// Full `U x I` score matrix.
    pub fn score_matrix(&self) -> Result<Matrix> {
        let (eu, ei) = self.final_embeddings()?;
        let n_items = ei.rows();
        let mut out = Matrix::zeros(eu.rows(), n_items);
        out.as_mut_slice()
            .par_chunks_mut(n_items.max(1))
            .enumerate()
            .for_each(|(u, row)| {
                let e = eu.row(u);
                for (i, s) in row.iter_mut().enumerate() {
                    *s = dot(e, ei.row(i));
                }
            });
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            num_layers: self.num_layers,
            users: self.users.clone(),
            items: self.items.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        Self::from_tables(ckpt.users, ckpt.items, ckpt.num_layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        formats::write_checkpoint(&self.to_checkpoint(), f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::from_checkpoint(formats::read_checkpoint(f)?)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Items ordered by descending score, ties broken by ascending index.
pub fn rank_items(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Turns a score matrix into a policy. Items in `exclude[u]` get probability
/// zero for user `u`, unless that would leave the user with no items.
pub fn policy_from_scores(
    scores: &Matrix,
    mode: PolicyMode,
    exclude: Option<&[Vec<usize>]>,
) -> Result<TargetPolicy> {
    let n_items = scores.cols();
    if let Some(ex) = exclude {
        if ex.len() != scores.rows() {
            return Err(Error::DimensionMismatch(
                "exclusion lists do not match the user count".into(),
            ));
        }
    }
    let eligible_mask = |u: usize| -> Option<Vec<bool>> {
        let ex = exclude.map(|e| e[u].as_slice()).filter(|e| !e.is_empty())?;
        let mut mask = vec![true; n_items];
        for &i in ex {
            if i < n_items {
                mask[i] = false;
            }
        }
        mask.iter().any(|&m| m).then_some(mask)
    };
    match mode {
        PolicyMode::Softmax { temperature } => {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return Err(Error::config("policy", "softmax temperature must be positive"));
            }
            let mut probs = Matrix::zeros(scores.rows(), n_items);
            probs
                .as_mut_slice()
                .par_chunks_mut(n_items.max(1))
                .enumerate()
                .for_each(|(u, row)| {
                    let mask = eligible_mask(u);
                    let ok = |i: usize| mask.as_ref().is_none_or(|m| m[i]);
                    let s = scores.row(u);
                    let max = (0..n_items)
                        .filter(|&i| ok(i))
                        .map(|i| s[i] / temperature)
                        .fold(f64::NEG_INFINITY, f64::max);
                    for (i, p) in row.iter_mut().enumerate() {
                        *p = if ok(i) { (s[i] / temperature - max).exp() } else { 0.0 };
                    }
                    let total: f64 = row.iter().sum();
                    row.iter_mut().for_each(|p| *p /= total);
                });
            TargetPolicy::dense(probs)
        }
        PolicyMode::TopkUniform { k } => {
            if k == 0 || k > n_items {
                return Err(Error::config(
                    "policy",
                    format!("top-k needs 1 <= k <= {n_items}, got {k}"),
                ));
            }
            let rows: Vec<Vec<(usize, f64)>> = (0..scores.rows())
                .into_par_iter()
                .map(|u| {
                    let mask = eligible_mask(u);
                    let top: Vec<usize> = rank_items(scores.row(u))
                        .into_iter()
                        .filter(|&i| mask.as_ref().is_none_or(|m| m[i]))
                        .take(k)
                        .collect();
                    let p = 1.0 / top.len() as f64;
                    top.into_iter().map(|i| (i, p)).collect()
                })
                .collect();
            TargetPolicy::sparse(n_items, rows)
        }
    }
}

/// Policy induced by a propagated model.
pub fn extract_policy(
    model: &EmbeddingModel,
    mode: PolicyMode,
    exclude: Option<&[Vec<usize>]>,
) -> Result<TargetPolicy> {
    policy_from_scores(&model.score_matrix()?, mode, exclude)
}
