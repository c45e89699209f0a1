use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use super::{Edge, Graph};
use crate::error::Result;
use crate::nn::Tensor2;

/// Dense `D^{-1/2} (A + I) D^{-1/2}` with `A` the binary symmetric adjacency
/// and `D` the degree matrix of `A + I`.
pub fn normalize_adjacency(graph: &Graph) -> Tensor2 {
    NormalizedAdjacency::from_graph(graph).to_dense()
}

/// Row-sparse form of the normalized adjacency used for aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    rows: Vec<Vec<(usize, f64)>>,
}

impl NormalizedAdjacency {
    pub fn from_graph(graph: &Graph) -> Self {
        Self::from_neighbors(&graph.neighbors())
    }

    pub fn from_neighbors(neighbors: &[Vec<usize>]) -> Self {
        let inv_sqrt: Vec<f64> = neighbors
            .iter()
            .map(|n| 1.0 / ((n.len() + 1) as f64).sqrt())
            .collect();
        let rows = neighbors
            .iter()
            .enumerate()
            .map(|(i, list)| {
                let mut row: Vec<(usize, f64)> = list
                    .iter()
                    .map(|&j| (j, inv_sqrt[i] * inv_sqrt[j]))
                    .collect();
                row.push((i, inv_sqrt[i] * inv_sqrt[i]));
                row.sort_unstable_by_key(|&(j, _)| j);
                row
            })
            .collect();
        Self { rows }
    }

    pub fn node_count(&self) -> usize {
        self.rows.len()
    }

    pub fn to_dense(&self) -> Tensor2 {
        let n = self.rows.len();
        let mut out = Tensor2::zeros(n, n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out.set(i, j, v);
            }
        }
        out
    }

    /// `Â · X`. Since `Â` is symmetric this is also its own adjoint.
    pub fn apply(&self, x: &Tensor2) -> Tensor2 {
        assert_eq!(x.rows(), self.rows.len(), "adjacency/feature row mismatch");
        let mut out = Tensor2::zeros(x.rows(), x.cols());
        for (i, row) in self.rows.iter().enumerate() {
            let dst = out.row_mut(i);
            for &(j, w) in row {
                for (d, s) in dst.iter_mut().zip(x.row(j)) {
                    *d += w * s;
                }
            }
        }
        out
    }
}

/// A graph bundled with the tensors the model consumes.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub graph: Arc<Graph>,
    pub adjacency: NormalizedAdjacency,
    /// Raw neighbour lists (no self-loop), used by local-structure vectors.
    pub neighbors: Vec<Vec<usize>>,
}

impl PreparedGraph {
    pub fn new(graph: Arc<Graph>) -> Self {
        let neighbors = graph.neighbors();
        let adjacency = NormalizedAdjacency::from_neighbors(&neighbors);
        Self {
            graph,
            adjacency,
            neighbors,
        }
    }

    pub fn from_graph(graph: Graph) -> Self {
        Self::new(Arc::new(graph))
    }

    pub fn features(&self) -> &Tensor2 {
        self.graph.features()
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }
}

/// BFS neighbourhood of `center` up to `hops`, truncated to `cap` nodes.
///
/// The centre becomes node 0; the remaining nodes follow BFS order with
/// neighbours visited in ascending index order.
pub fn ego_network(graph: &Graph, center: usize, hops: usize, cap: usize) -> Result<Graph> {
    let neighbors = graph.neighbors();
    let mut local = vec![usize::MAX; graph.node_count()];
    let mut order = Vec::new();
    bfs_into(graph, &neighbors, center, hops, cap, &mut local, &mut order)?;
    induced(graph, &order, &local, format!("{}#ego{center}", graph.id()))
}

/// Union of the capped ego networks of `centers`, in first-visit order.
/// Each centre contributes at most `cap` nodes not already taken.
pub fn ego_union(graph: &Graph, centers: &[usize], hops: usize, cap: usize) -> Result<Graph> {
    if centers.is_empty() {
        return Err(crate::Error::invalid("ego union needs at least one centre"));
    }
    let neighbors = graph.neighbors();
    let mut local = vec![usize::MAX; graph.node_count()];
    let mut order = Vec::new();
    for &c in centers {
        bfs_into(graph, &neighbors, c, hops, cap, &mut local, &mut order)?;
    }
    let id = format!("{}#egos{}", graph.id(), centers.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("-"));
    induced(graph, &order, &local, id)
}

fn bfs_into(
    graph: &Graph,
    neighbors: &[Vec<usize>],
    center: usize,
    hops: usize,
    cap: usize,
    local: &mut [usize],
    order: &mut Vec<usize>,
) -> Result<()> {
    let n = graph.node_count();
    if center >= n {
        return Err(crate::Error::invalid(format!(
            "ego centre {center} outside graph `{}` of {n} nodes",
            graph.id()
        )));
    }
    let mut budget = cap.max(1);
    if local[center] == usize::MAX {
        local[center] = order.len();
        order.push(center);
        budget -= 1;
    }
    let mut queue = VecDeque::from([(center, 0usize)]);
    let mut visited = HashSet::from([center]);
    'bfs: while let Some((v, depth)) = queue.pop_front() {
        if depth == hops {
            continue;
        }
        for &u in &neighbors[v] {
            if visited.insert(u) {
                if local[u] == usize::MAX {
                    if budget == 0 {
                        break 'bfs;
                    }
                    budget -= 1;
                    local[u] = order.len();
                    order.push(u);
                }
                queue.push_back((u, depth + 1));
            }
        }
    }
    Ok(())
}

fn induced(graph: &Graph, order: &[usize], local: &[usize], id: String) -> Result<Graph> {
    let mut edges = Vec::new();
    for e in graph.edges() {
        let (a, b) = (local[e.src], local[e.dst]);
        if a != usize::MAX && b != usize::MAX {
            edges.push(Edge {
                src: a,
                dst: b,
                weight: e.weight.clone(),
            });
        }
    }
    let rows: Vec<Vec<f64>> = order.iter().map(|&v| graph.features().row(v).to_vec()).collect();
    let features = Tensor2::from_rows(&rows)?;
    let labels = graph
        .node_labels()
        .map(|l| order.iter().map(|&v| l[v]).collect());
    Graph::new(id, order.len(), edges, features, labels, graph.graph_label())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        let edges = edges.iter().map(|&(a, b)| Edge::new(a, b)).collect();
        Graph::new("g", n, edges, Tensor2::zeros(n, 1), Some((0..n).collect()), None).unwrap()
    }

    #[test]
    fn single_node_is_identity() {
        assert_eq!(normalize_adjacency(&graph(1, &[])), Tensor2::identity(1));
    }

    #[test]
    fn single_edge_is_all_halves() {
        let a = normalize_adjacency(&graph(2, &[(0, 1)]));
        assert!(a.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn path_matches_dense_formula() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        // A + I and D computed directly.
        let a_hat = [[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]];
        let deg: Vec<f64> = a_hat.iter().map(|r| r.iter().sum()).collect();
        let dense = normalize_adjacency(&g);
        for i in 0..3 {
            for j in 0..3 {
                let expected = a_hat[i][j] / (deg[i] * deg[j]).sqrt();
                assert!((dense.get(i, j) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn isolated_node_keeps_self_loop() {
        let a = normalize_adjacency(&graph(3, &[(0, 1)]));
        assert_eq!(a.get(2, 2), 1.0);
        assert_eq!(a.get(2, 0), 0.0);
    }

    #[test]
    fn sparse_apply_matches_dense() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]);
        let adj = NormalizedAdjacency::from_graph(&g);
        let x = Tensor2::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0], vec![2.0, -2.0]]).unwrap();
        let sparse = adj.apply(&x);
        let dense = adj.to_dense().matmul(&x).unwrap();
        for (a, b) in sparse.data().iter().zip(dense.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn ego_network_bfs_and_cap() {
        // 0-1-2-3 path plus 1-4.
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (1, 4)]);
        let ego = ego_network(&g, 1, 1, 50).unwrap();
        assert_eq!(ego.node_labels().unwrap(), &[1, 0, 2, 4]);
        assert_eq!(ego.edges().len(), 3);
        let ego2 = ego_network(&g, 0, 2, 50).unwrap();
        assert_eq!(ego2.node_labels().unwrap(), &[0, 1, 2, 4]);
        let capped = ego_network(&g, 1, 2, 2).unwrap();
        assert_eq!(capped.node_count(), 2);
        assert!(ego_network(&g, 9, 2, 50).is_err());
    }

    #[test]
    fn ego_union_merges_neighbourhoods() {
        // Two components: 0-1-2 and 3-4.
        let g = graph(5, &[(0, 1), (1, 2), (3, 4)]);
        let u = ego_union(&g, &[0, 3], 1, 50).unwrap();
        assert_eq!(u.node_labels().unwrap(), &[0, 1, 3, 4]);
        assert_eq!(u.edges().len(), 2);
        // Overlapping centres share nodes rather than duplicating them.
        let o = ego_union(&g, &[0, 1], 1, 50).unwrap();
        assert_eq!(o.node_labels().unwrap(), &[0, 1, 2]);
        assert_eq!(ego_union(&g, &[1], 2, 50).unwrap().node_labels(), ego_network(&g, 1, 2, 50).unwrap().node_labels());
        assert!(ego_union(&g, &[], 1, 50).is_err());
    }
}
