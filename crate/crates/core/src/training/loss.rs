//! Weighted pointwise (BCE) and pairwise (BPR) objectives, with analytic
//! gradients with respect to the final embeddings.

use serde::{Deserialize, Serialize};

use crate::domain::Matrix;
use crate::graph::dot;

/// Floor applied to every log argument.
pub const LOG_FLOOR: f64 = 1e-12;

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-log(max(p, floor))` and its derivative with respect to `p`'s logit,
/// given `p = sigmoid(s)` and `q = 1 - p = sigmoid(-s)`.
#[inline]
fn neg_log_sigmoid(p: f64, q: f64) -> (f64, f64) {
    if p < LOG_FLOOR {
        (-LOG_FLOOR.ln(), 0.0)
    } else {
        (-p.ln(), -q)
    }
}

/// A (user, clicked item, negative item) training triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub user: usize,
    pub positive: usize,
    pub negative: usize,
    pub weight: f64,
}

/// A logged (user, item, reward) example for the pointwise objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BceExample {
    pub user: usize,
    pub item: usize,
    pub reward: f64,
    pub weight: f64,
}

/// Gradients with respect to the final user and item embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingGrads {
    pub users: Matrix,
    pub items: Matrix,
}

impl EmbeddingGrads {
    pub fn zeros_like(users: &Matrix, items: &Matrix) -> Self {
        Self {
            users: Matrix::zeros(users.rows(), users.cols()),
            items: Matrix::zeros(items.rows(), items.cols()),
        }
    }
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// `-sum w [r log sigmoid(y) + (1-r) log(1 - sigmoid(y))]` with `y = e_u . e_i`.
pub fn ips_bce_loss_and_grad(batch: &[BceExample], eu: &Matrix, ei: &Matrix) -> (f64, EmbeddingGrads) {
    let mut grads = EmbeddingGrads::zeros_like(eu, ei);
    let mut loss = 0.0;
    for ex in batch {
        if ex.weight == 0.0 {
            continue;
        }
        let (u, i) = (eu.row(ex.user), ei.row(ex.item));
        let y = dot(u, i);
        let (p, q) = (sigmoid(y), sigmoid(-y));
        // d/dy of -log p is -q, of -log q is p
        let (lp, gp) = neg_log_sigmoid(p, q);
        let (lq, gq_of_neg) = neg_log_sigmoid(q, p);
        let gq = -gq_of_neg;
        let term = ex.reward * lp + (1.0 - ex.reward) * lq;
        let dy = ex.weight * (ex.reward * gp + (1.0 - ex.reward) * gq);
        loss += ex.weight * term;
        axpy(grads.users.row_mut(ex.user), dy, i);
        axpy(grads.items.row_mut(ex.item), dy, u);
    }
    (loss, grads)
}

/// Unweighted per-triplet BPR loss `-log sigmoid(y_ui - y_uj)` and its
/// derivative with respect to the margin.
pub fn bpr_terms(batch: &[Triplet], eu: &Matrix, ei: &Matrix) -> Vec<(f64, f64)> {
    batch
        .iter()
        .map(|t| {
            let u = eu.row(t.user);
            let s = dot(u, ei.row(t.positive)) - dot(u, ei.row(t.negative));
            neg_log_sigmoid(sigmoid(s), sigmoid(-s))
        })
        .collect()
}

/// Propensity regularizer over a batch.
///
/// Returns `alpha / |B| * sum_b w_b^2 l_b` and, per triplet, the extra
/// multiplier `alpha * w_b^2 / |B|` it adds on top of the IPS weight. With
/// `alpha = 0` both are zero and the objective is plain IPS-BPR.
pub fn pr_penalty_and_grad(weights: &[f64], unweighted_losses: &[f64], alpha: f64) -> (f64, Vec<f64>) {
    let n = weights.len().max(1) as f64;
    let scale: Vec<f64> = weights.iter().map(|w| alpha * w * w / n).collect();
    let penalty = scale.iter().zip(unweighted_losses).map(|(s, l)| s * l).sum();
    (penalty, scale)
}

/// Loss breakdown of one BPR batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BprLoss {
    /// `sum_b w_b l_b`
    pub weighted: f64,
    /// Propensity-regularizer term.
    pub penalty: f64,
}

impl BprLoss {
    pub fn total(&self) -> f64 {
        self.weighted + self.penalty
    }
}

/// `sum_b w_b l_b + alpha/|B| sum_b w_b^2 l_b` and its gradients. Naive BPR
/// is the case `w = 1, alpha = 0`.
pub fn ips_bpr_loss_and_grad(batch: &[Triplet], eu: &Matrix, ei: &Matrix, pr_alpha: f64) -> (BprLoss, EmbeddingGrads) {
    let terms = bpr_terms(batch, eu, ei);
    let weights: Vec<f64> = batch.iter().map(|t| t.weight).collect();
    let losses: Vec<f64> = terms.iter().map(|t| t.0).collect();
    let (penalty, extra) = pr_penalty_and_grad(&weights, &losses, pr_alpha);
    let weighted = weights.iter().zip(&losses).map(|(w, l)| w * l).sum();
    let mut grads = EmbeddingGrads::zeros_like(eu, ei);
    for ((t, &(_, ds)), x) in batch.iter().zip(&terms).zip(&extra) {
        let coef = (t.weight + x) * ds;
        if coef == 0.0 {
            continue;
        }
        let u = eu.row(t.user);
        let (pi, pj) = (ei.row(t.positive), ei.row(t.negative));
        let gu = grads.users.row_mut(t.user);
        axpy(gu, coef, pi);
        axpy(gu, -coef, pj);
        axpy(grads.items.row_mut(t.positive), coef, u);
        axpy(grads.items.row_mut(t.negative), -coef, u);
    }
    (BprLoss { weighted, penalty }, grads)
}
