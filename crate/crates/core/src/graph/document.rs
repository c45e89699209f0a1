use serde::{Deserialize, Serialize};

use super::{Edge, Graph};
use crate::error::{Error, Result};
use crate::nn::Tensor2;

/// A text box on a page, in normalized page coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    pub features: Vec<f64>,
    pub label: usize,
}

impl TextBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.width, self.y + 0.5 * self.height)
    }

    fn validate(&self, index: usize) -> Result<()> {
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        if !in_unit(self.x) || !in_unit(self.y) || !(self.width > 0.0) || !(self.height > 0.0) {
            return Err(Error::invalid(format!(
                "text box {index} outside the unit page or with non-positive extent"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DocumentGraphOptions {
    /// Maximum centre offset, in page units, for two boxes to count as aligned.
    pub align_tol: f64,
    /// Maximum centre distance as a fraction of the page diagonal.
    pub dist_thresh: f64,
}

impl Default for DocumentGraphOptions {
    fn default() -> Self {
        Self {
            align_tol: 0.02,
            dist_thresh: 0.3,
        }
    }
}

/// Connects two boxes when they share a row or column and are close.
///
/// Edge `(i, j)` with `i < j` exists iff the vertical or horizontal centre
/// offset is within `align_tol` and the centre distance is within
/// `dist_thresh` page diagonals. Each edge carries `[dx, dy, distance]` as
/// its weight vector.
pub fn build_document_graph(id: impl Into<String>, boxes: &[TextBox], opts: &DocumentGraphOptions) -> Result<Graph> {
    if boxes.is_empty() {
        return Err(Error::invalid("document graph needs at least one text box"));
    }
    for tol in [opts.align_tol, opts.dist_thresh] {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(Error::invalid(format!("tolerance {tol} outside (0, 1)")));
        }
    }
    let dim = boxes[0].features.len();
    for (i, b) in boxes.iter().enumerate() {
        b.validate(i)?;
        if b.features.len() != dim {
            return Err(Error::invalid(format!("text box {i} has {} features, expected {dim}", b.features.len())));
        }
    }

    let diagonal = std::f64::consts::SQRT_2;
    let centers: Vec<(f64, f64)> = boxes.iter().map(TextBox::center).collect();
    let mut edges = Vec::new();
    for i in 0..boxes.len() {
        for j in (i + 1)..boxes.len() {
            let dx = centers[j].0 - centers[i].0;
            let dy = centers[j].1 - centers[i].1;
            let aligned = dy.abs() <= opts.align_tol || dx.abs() <= opts.align_tol;
            let dist = dx.hypot(dy);
            if aligned && dist / diagonal <= opts.dist_thresh {
                edges.push(Edge {
                    src: i,
                    dst: j,
                    weight: Some(vec![dx, dy, dist]),
                });
            }
        }
    }
    let rows: Vec<Vec<f64>> = boxes.iter().map(|b| b.features.clone()).collect();
    let labels = boxes.iter().map(|b| b.label).collect();
    Graph::new(id, boxes.len(), edges, Tensor2::from_rows(&rows)?, Some(labels), None)
}
