//! Gradients through full propagation against central differences.

use ipsrec::rng::{substream, Domain};
use ipsrec::training::{batch_loss_and_base_grads, Batch, BceExample, Triplet};
use ipsrec::{BipartiteGraph, EmbeddingModel, Matrix};
use rand::Rng;

fn random_instance(seed: u64) -> (EmbeddingModel, BipartiteGraph, Vec<Triplet>, Vec<BceExample>) {
    let (nu, ni) = (6, 8);
    let mut rng = substream(seed, Domain::Acceptance, 0);
    let mut edges = Vec::new();
    for u in 0..nu {
        for i in 0..ni {
            if rng.random_bool(0.35) {
                edges.push((u, i));
            }
        }
    }
    let graph = BipartiteGraph::from_edges(nu, ni, edges).unwrap();
    let users = Matrix::from_fn(nu, 4, |_, _| rng.random_range(-1.0..1.0));
    let items = Matrix::from_fn(ni, 4, |_, _| rng.random_range(-1.0..1.0));
    let model = EmbeddingModel::from_tables(users, items, 2).unwrap();
    let triplets = (0..10)
        .map(|_| {
            let positive = rng.random_range(0..ni);
            let negative = (positive + rng.random_range(1..ni)) % ni;
            Triplet { user: rng.random_range(0..nu), positive, negative, weight: rng.random_range(1.0..20.0) }
        })
        .collect();
    let bce = (0..10)
        .map(|_| BceExample {
            user: rng.random_range(0..nu),
            item: rng.random_range(0..ni),
            reward: rng.random_bool(0.5) as u8 as f64,
            weight: rng.random_range(1.0..20.0),
        })
        .collect();
    (model, graph, triplets, bce)
}

fn check(model: &EmbeddingModel, graph: &BipartiteGraph, batch: &Batch, alpha: f64) -> f64 {
    let h = 1e-5;
    let (_, grads) = batch_loss_and_base_grads(&mut model.clone(), graph, batch, alpha).unwrap();
    let loss_at = |table: usize, k: usize, delta: f64| {
        let mut m = model.clone();
        let (u, i) = m.base_mut();
        let t = if table == 0 { u } else { i };
        t.as_mut_slice()[k] += delta;
        batch_loss_and_base_grads(&mut m, graph, batch, alpha).unwrap().0
    };
    let mut worst: f64 = 0.0;
    for (table, analytic) in [(0, &grads.users), (1, &grads.items)] {
        for (k, &a) in analytic.as_slice().iter().enumerate() {
            let fd = (loss_at(table, k, h) - loss_at(table, k, -h)) / (2.0 * h);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

#[test]
fn all_objectives_pass_central_difference() {
    for seed in 0..10 {
        let (model, graph, triplets, bce) = random_instance(seed);
        let naive: Vec<Triplet> = triplets.iter().map(|t| Triplet { weight: 1.0, ..*t }).collect();
        let cases = [
            ("naive_bpr", Batch::Pairwise(naive), 0.0),
            ("ips_bpr", Batch::Pairwise(triplets.clone()), 0.0),
            ("ips_bpr_pr", Batch::Pairwise(triplets), 0.1),
            ("ips_bce", Batch::Pointwise(bce), 0.0),
        ];
        for (name, batch, alpha) in cases {
            let err = check(&model, &graph, &batch, alpha);
            assert!(err < 1e-4, "{name} seed {seed}: max relative error {err:e}");
        }
    }
}
