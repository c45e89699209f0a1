//! Graph data model, class-incremental task streams, document-graph
//! construction and the `graphcl-v1` dataset format.

mod adjacency;
mod document;
pub mod io;
mod task;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;

pub use adjacency::{ego_network, ego_union, normalize_adjacency, NormalizedAdjacency, PreparedGraph};
pub use document::{build_document_graph, DocumentGraphOptions, TextBox};
pub use task::{relabel_with_other, split_class_incremental, SplitOptions, Task, TaskStream, UnitRef};

/// How units and labels are arranged in a continual-learning scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Node units on one large graph.
    Nunc,
    /// Node units spread over many small graphs.
    Gunc,
    /// Whole graphs as units, one label per graph.
    Gugc,
}

impl Scenario {
    pub fn unit_kind(self) -> UnitKind {
        match self {
            Scenario::Gugc => UnitKind::Graph,
            Scenario::Nunc | Scenario::Gunc => UnitKind::Node,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Nunc => "nunc",
            Scenario::Gunc => "gunc",
            Scenario::Gugc => "gugc",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nunc" => Ok(Scenario::Nunc),
            "gunc" => Ok(Scenario::Gunc),
            "gugc" => Ok(Scenario::Gugc),
            other => Err(Error::invalid(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Node,
    Graph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// Optional edge attributes; carried through but not consumed by the GCN.
    pub weight: Option<Vec<f64>>,
}

impl Edge {
    pub fn new(src: usize, dst: usize) -> Self {
        Self { src, dst, weight: None }
    }
}

/// A graph with node features and optional node or graph labels.
///
/// Immutable once built; [`Graph::new`] validates every structural invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    id: String,
    node_count: usize,
    edges: Vec<Edge>,
    features: Tensor2,
    node_labels: Option<Vec<usize>>,
    graph_label: Option<usize>,
}

impl Graph {
    pub fn new(
        id: impl Into<String>,
        node_count: usize,
        edges: Vec<Edge>,
        features: Tensor2,
        node_labels: Option<Vec<usize>>,
        graph_label: Option<usize>,
    ) -> Result<Self> {
        let id = id.into();
        let fail = |reason: String| Error::InvalidGraph { id: id.clone(), reason };
        if features.rows() != node_count {
            return Err(fail(format!(
                "{} feature rows for {node_count} nodes",
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(fail("non-finite node feature".into()));
        }
        if let Some(e) = edges.iter().find(|e| e.src >= node_count || e.dst >= node_count) {
            return Err(fail(format!(
                "edge ({}, {}) out of range for {node_count} nodes",
                e.src, e.dst
            )));
        }
        if let Some(labels) = &node_labels {
            if labels.len() != node_count {
                return Err(fail(format!("{} node labels for {node_count} nodes", labels.len())));
            }
        }
        Ok(Self {
            id,
            node_count,
            edges,
            features,
            node_labels,
            graph_label,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn node_labels(&self) -> Option<&[usize]> {
        self.node_labels.as_deref()
    }

    pub fn node_label(&self, node: usize) -> Option<usize> {
        self.node_labels.as_ref().and_then(|l| l.get(node).copied())
    }

    pub fn graph_label(&self) -> Option<usize> {
        self.graph_label
    }

    /// Sorted, deduplicated undirected neighbour lists without self-loops.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for e in &self.edges {
            if e.src != e.dst {
                adj[e.src].push(e.dst);
                adj[e.dst].push(e.src);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}
