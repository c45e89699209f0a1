//! Accuracy matrices and the continual-learning summary metrics.
//!
//! `a[i][j]` is the accuracy on task `j`'s test set measured right after
//! training task `i` (both 0-based here). Only the lower triangle exists.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{PreparedGraph, UnitRef};
use crate::model::{Network, OutputLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    tasks: usize,
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            tasks,
            rows: Vec::with_capacity(tasks),
        }
    }

    /// Builds a complete matrix from its lower-triangular rows.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Rebuilds a complete matrix from the row-major lower triangle.
    pub fn from_lower_triangle(tasks: usize, values: &[f64]) -> Result<Self> {
        if values.len() != tasks * (tasks + 1) / 2 {
            return Err(Error::invalid(format!(
                "{} values cannot fill a {tasks}-task lower triangle",
                values.len()
            )));
        }
        let mut rest = values;
        let mut rows = Vec::with_capacity(tasks);
        for t in 1..=tasks {
            let (row, tail) = rest.split_at(t);
            rows.push(row.to_vec());
            rest = tail;
        }
        Self::from_rows(rows)
    }

    /// Appends the row for the next trained task; it must hold one accuracy
    /// per task seen so far, each in `[0, 1]`.
    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        let t = self.rows.len() + 1;
        if t > self.tasks {
            return Err(Error::invalid(format!("matrix already holds {} rows", self.tasks)));
        }
        if row.len() != t {
            return Err(Error::invalid(format!("row {t} needs {t} entries, got {}", row.len())));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn task_count(&self) -> usize {
        self.tasks
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn is_complete(&self) -> bool {
        self.rows.len() == self.tasks
    }

    pub fn get(&self, trained: usize, evaluated: usize) -> Option<f64> {
        self.rows.get(trained)?.get(evaluated).copied()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.rows.iter().enumerate().map(|(i, r)| r[i]).collect()
    }

    pub fn lower_triangle(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    fn require_complete(&self) -> Result<()> {
        if self.tasks == 0 || !self.is_complete() {
            return Err(Error::UndefinedMetric("accuracy matrix is incomplete"));
        }
        Ok(())
    }
}

/// Mean accuracy over all tasks after training the last one.
pub fn average_performance(m: &AccuracyMatrix) -> Result<f64> {
    m.require_complete()?;
    let last = &m.rows[m.tasks - 1];
    Ok(last.iter().sum::<f64>() / m.tasks as f64)
}

/// Mean change from just-after-training accuracy to final accuracy over all
/// but the last task. Negative values indicate forgetting.
pub fn average_forgetting(m: &AccuracyMatrix) -> Result<f64> {
    m.require_complete()?;
    if m.tasks < 2 {
        return Err(Error::UndefinedMetric("average forgetting needs at least two tasks"));
    }
    let last = &m.rows[m.tasks - 1];
    let total: f64 = (0..m.tasks - 1).map(|j| last[j] - m.rows[j][j]).sum();
    Ok(total / (m.tasks - 1) as f64)
}

/// Mean of the diagonal, i.e. each task's accuracy right after training it.
pub fn independent_ap(m: &AccuracyMatrix) -> Result<f64> {
    m.require_complete()?;
    let diag = m.diagonal();
    Ok(diag.iter().sum::<f64>() / diag.len() as f64)
}

/// Fraction of `units` whose argmax prediction is their label's output unit.
///
/// Units whose label is the OTHER class are left out entirely. A label the
/// layout does not know counts as a miss.
pub fn evaluate_task<N: Network>(
    net: &N,
    layout: &OutputLayout,
    graphs: &[Arc<PreparedGraph>],
    units: &[UnitRef],
) -> Result<f64> {
    // Logit row and label per unit, grouped so each graph is encoded once.
    let mut by_graph: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &u in units {
        let g = graphs
            .get(u.graph())
            .ok_or_else(|| Error::invalid(format!("unit refers to missing graph {}", u.graph())))?;
        let (row, label) = match u {
            UnitRef::Graph(_) => (0, g.graph.graph_label()),
            UnitRef::Node { node, .. } => (node, g.graph.node_label(node)),
        };
        let label = label.ok_or_else(|| Error::invalid(format!("unlabelled test unit {u:?}")))?;
        if layout.other_class() != Some(label) {
            by_graph.entry(u.graph()).or_default().push((row, label));
        }
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (gi, entries) in by_graph {
        let logits = net.logits(&graphs[gi])?;
        for (row, label) in entries {
            total += 1;
            if layout.unit_of(label) == Some(argmax(logits.row(row))) {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid("evaluation over an empty test set"));
    }
    Ok(correct as f64 / total as f64)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
