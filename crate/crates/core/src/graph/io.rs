//! `graphcl-v1` dataset files: a `{"format":"graphcl-v1"}` header line
//! followed by one JSON graph record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Edge, Graph};
use crate::error::{Error, Result};
use crate::nn::Tensor2;

pub const FORMAT_VERSION: &str = "graphcl-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum RecordId {
    Text(String),
    Number(u64),
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphRecord {
    id: RecordId,
    num_nodes: usize,
    edges: Vec<[usize; 2]>,
    x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y_node: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y_graph: Option<usize>,
    /// Per-edge attribute vectors, parallel to `edges`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<Vec<Vec<f64>>>,
}

impl GraphRecord {
    fn from_graph(g: &Graph) -> Self {
        let has_weights = g.edges().iter().any(|e| e.weight.is_some());
        Self {
            id: RecordId::Text(g.id().to_string()),
            num_nodes: g.node_count(),
            edges: g.edges().iter().map(|e| [e.src, e.dst]).collect(),
            x: g.features().to_rows(),
            y_node: g.node_labels().map(<[usize]>::to_vec),
            y_graph: g.graph_label(),
            w: has_weights.then(|| g.edges().iter().map(|e| e.weight.clone().unwrap_or_default()).collect()),
        }
    }

    fn into_graph(self) -> Result<Graph> {
        let id = match self.id {
            RecordId::Text(s) => s,
            RecordId::Number(n) => n.to_string(),
        };
        if let Some(w) = &self.w {
            if w.len() != self.edges.len() {
                return Err(Error::InvalidGraph {
                    id,
                    reason: format!("{} edge weight vectors for {} edges", w.len(), self.edges.len()),
                });
            }
        }
        let mut weights = self.w.map(|w| w.into_iter());
        let edges = self
            .edges
            .iter()
            .map(|&[src, dst]| Edge {
                src,
                dst,
                weight: weights.as_mut().and_then(Iterator::next),
            })
            .collect();
        let features = if self.x.is_empty() {
            Tensor2::zeros(0, 0)
        } else {
            Tensor2::from_rows(&self.x).map_err(|e| Error::InvalidGraph {
                id: id.clone(),
                reason: e.to_string(),
            })?
        };
        Graph::new(id, self.num_nodes, edges, features, self.y_node, self.y_graph)
    }
}

pub fn write_dataset<W: Write>(mut out: W, graphs: &[Graph]) -> Result<()> {
    serde_json::to_writer(&mut out, &Header { format: FORMAT_VERSION.into() })?;
    out.write_all(b"\n")?;
    for g in graphs {
        serde_json::to_writer(&mut out, &GraphRecord::from_graph(g))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a dataset. Syntax errors report their 1-based line number; graphs
/// that violate structural invariants report their id.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Vec<Graph>> {
    let mut lines = input.lines().enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line?,
        None => return Err(Error::Parse { line: 1, reason: "missing format header".into() }),
    };
    let header: Header = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        line: 1,
        reason: format!("bad header: {e}"),
    })?;
    if header.format != FORMAT_VERSION {
        return Err(Error::Parse {
            line: 1,
            reason: format!("unsupported format `{}`", header.format),
        });
    }
    let mut graphs = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: GraphRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            reason: e.to_string(),
        })?;
        graphs.push(record.into_graph()?);
    }
    Ok(graphs)
}

pub fn save_dataset(path: impl AsRef<Path>, graphs: &[Graph]) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), graphs)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Graph>> {
    read_dataset(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Graph> {
        let g1 = Graph::new(
            "a",
            3,
            vec![Edge::new(0, 1), Edge::new(1, 2)],
            Tensor2::from_rows(&[vec![0.1, 1.0 / 3.0], vec![-2.5, 1e-300], vec![7.0, 0.0]]).unwrap(),
            Some(vec![0, 1, 1]),
            None,
        )
        .unwrap();
        let g2 = Graph::new(
            "b",
            2,
            vec![Edge {
                src: 0,
                dst: 1,
                weight: Some(vec![0.5, -0.25]),
            }],
            Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(),
            None,
            Some(4),
        )
        .unwrap();
        vec![g1, g2]
    }

    #[test]
    fn round_trip_is_identity() {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &sample()).unwrap();
        assert!(buf.starts_with(b"{\"format\":\"graphcl-v1\"}\n"));
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn header_only_is_empty() {
        let data = b"{\"format\":\"graphcl-v1\"}\n";
        assert!(read_dataset(&data[..]).unwrap().is_empty());
    }

    #[test]
    fn version_and_line_errors() {
        assert!(read_dataset(&b"{\"format\":\"graphcl-v0\"}\n"[..]).is_err());
        assert!(read_dataset(&b""[..]).is_err());
        let bad = b"{\"format\":\"graphcl-v1\"}\n{\"id\":1,\"num_nodes\":1,\"edges\":[],\"x\":[[0.0]]}\n{oops}\n";
        match read_dataset(&bad[..]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invariant_violation_names_graph() {
        let bad = b"{\"format\":\"graphcl-v1\"}\n{\"id\":\"broken\",\"num_nodes\":2,\"edges\":[[0,5]],\"x\":[[0.0],[1.0]]}\n";
        let err = read_dataset(&bad[..]).unwrap_err();
        assert!(matches!(err, Error::InvalidGraph { ref id, .. } if id == "broken"));
    }
}
