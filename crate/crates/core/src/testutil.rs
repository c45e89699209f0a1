use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Edge, Graph, PreparedGraph};
use crate::nn::Tensor2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected-ish random graph: a path backbone plus random chords.
pub fn random_graph(n: usize, features: usize, classes: usize, seed: u64) -> Graph {
    let mut r = rng(seed);
    let mut edges: Vec<Edge> = (1..n).map(|i| Edge::new(r.random_range(0..i), i)).collect();
    for _ in 0..n {
        let (a, b) = (r.random_range(0..n), r.random_range(0..n));
        if a != b {
            edges.push(Edge::new(a, b));
        }
    }
    let x: Vec<f64> = (0..n * features).map(|_| r.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| r.random_range(0..classes.max(1))).collect();
    Graph::new(
        format!("rand{seed}"),
        n,
        edges,
        Tensor2::from_vec(n, features, x).unwrap(),
        Some(labels),
        Some(r.random_range(0..classes.max(1))),
    )
    .unwrap()
}

pub fn prepared(n: usize, features: usize, classes: usize, seed: u64) -> Arc<PreparedGraph> {
    Arc::new(PreparedGraph::from_graph(random_graph(n, features, classes, seed)))
}
