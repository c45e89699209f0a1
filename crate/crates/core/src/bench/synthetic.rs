//! Desk-scale synthetic datasets for the three scenarios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_document_graph, DocumentGraphOptions, Edge, Graph, Scenario, TextBox};
use crate::nn::Tensor2;

/// Parameters of a class-conditional stochastic-block dataset.
///
/// `units_per_class` counts graphs per class for GUGC, documents in total for
/// GUNC, and nodes per class for NUNC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub kind: Scenario,
    pub classes: usize,
    pub units_per_class: usize,
    pub nodes_min: usize,
    pub nodes_max: usize,
    pub p_intra: f64,
    pub p_inter: f64,
    pub feature_dim: usize,
    /// Norm of each class centre.
    pub separation: f64,
    /// Standard deviation of per-node feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::for_kind(Scenario::Gugc)
    }
}

impl SyntheticSpec {
    pub fn for_kind(kind: Scenario) -> Self {
        let base = Self {
            kind,
            classes: 6,
            units_per_class: 100,
            nodes_min: 20,
            nodes_max: 40,
            p_intra: 0.3,
            p_inter: 0.05,
            feature_dim: 16,
            separation: 1.0,
            noise: 1.0,
            seed: 0,
        };
        match kind {
            Scenario::Gugc => base,
            Scenario::Gunc => Self {
                units_per_class: 60,
                nodes_min: 1,
                nodes_max: 3,
                ..base
            },
            Scenario::Nunc => Self {
                p_intra: 0.04,
                p_inter: 0.004,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.classes == 0 || self.units_per_class == 0 || self.feature_dim == 0 {
            return Err(Error::invalid("synthetic spec needs classes, units and features"));
        }
        if self.nodes_min == 0 || self.nodes_min > self.nodes_max {
            return Err(Error::invalid(format!(
                "node range {}..={} is empty",
                self.nodes_min, self.nodes_max
            )));
        }
        if !prob(self.p_intra) || !prob(self.p_inter) {
            return Err(Error::invalid("edge probabilities must lie in [0, 1]"));
        }
        if !(self.separation >= 0.0) || !(self.noise >= 0.0) {
            return Err(Error::invalid("separation and noise must be non-negative"));
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        format!("synthetic-{}", self.kind)
    }
}

/// Generates the dataset described by `spec`; identical specs give
/// identical graphs.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<Graph>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centres = class_centres(spec, &mut rng);
    match spec.kind {
        Scenario::Gugc => (0..spec.classes * spec.units_per_class)
            .map(|i| {
                let class = i % spec.classes;
                let n = rng.random_range(spec.nodes_min..=spec.nodes_max);
                let blocks: Vec<usize> = (0..n).map(|v| v * 2 / n).collect();
                let edges = block_edges(&blocks, spec, &mut rng);
                let x = noisy_features(&vec![class; n], &centres, spec, &mut rng);
                Graph::new(format!("g{i}"), n, edges, x, None, Some(class))
            })
            .collect(),
        Scenario::Nunc => {
            let labels: Vec<usize> = (0..spec.classes * spec.units_per_class).map(|v| v % spec.classes).collect();
            let edges = block_edges(&labels, spec, &mut rng);
            let x = noisy_features(&labels, &centres, spec, &mut rng);
            Ok(vec![Graph::new("sbm", labels.len(), edges, x, Some(labels), None)?])
        }
        Scenario::Gunc => (0..spec.units_per_class)
            .map(|d| synthetic_document(d, &centres, spec, &mut rng))
            .collect(),
    }
}

fn class_centres(spec: &SyntheticSpec, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..spec.classes)
        .map(|_| {
            let v: Vec<f64> = (0..spec.feature_dim).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
            v.iter().map(|a| a / norm * spec.separation).collect()
        })
        .collect()
}

fn noisy_features(classes: &[usize], centres: &[Vec<f64>], spec: &SyntheticSpec, rng: &mut impl Rng) -> Tensor2 {
    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    let mut x = Tensor2::zeros(classes.len(), spec.feature_dim);
    for (r, &c) in classes.iter().enumerate() {
        for (v, m) in x.row_mut(r).iter_mut().zip(&centres[c]) {
            *v = m + noise.sample(rng);
        }
    }
    x
}

/// Stochastic block edges; `blocks[v]` is node `v`'s community.
fn block_edges(blocks: &[usize], spec: &SyntheticSpec, rng: &mut impl Rng) -> Vec<Edge> {
    let mut edges = Vec::new();
    for i in 0..blocks.len() {
        for j in (i + 1)..blocks.len() {
            let p = if blocks[i] == blocks[j] { spec.p_intra } else { spec.p_inter };
            if rng.random::<f64>() < p {
                edges.push(Edge::new(i, j));
            }
        }
    }
    edges
}

/// A receipt-like page: one row per field class, with between `nodes_min`
/// and `nodes_max` boxes per row laid out left to right.
fn synthetic_document(index: usize, centres: &[Vec<f64>], spec: &SyntheticSpec, rng: &mut impl Rng) -> Result<Graph> {
    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    let row_height = 0.9 / spec.classes as f64;
    let mut order: Vec<usize> = (0..spec.classes).collect();
    // A light shuffle of row order keeps position from fully determining the class.
    for i in (1..order.len()).rev() {
        if rng.random::<f64>() < 0.3 {
            order.swap(i, i - 1);
        }
    }
    let mut boxes = Vec::new();
    for (row, &class) in order.iter().enumerate() {
        let count = rng.random_range(spec.nodes_min..=spec.nodes_max);
        let width = 0.8 / count as f64;
        for k in 0..count {
            let features = centres[class].iter().map(|m| m + noise.sample(rng)).collect();
            boxes.push(TextBox {
                x: 0.05 + k as f64 * width,
                y: 0.05 + row as f64 * row_height,
                width: width * 0.9,
                height: row_height * 0.5,
                features,
                label: class,
            });
        }
    }
    build_document_graph(format!("doc{index}"), &boxes, &DocumentGraphOptions::default())
}
