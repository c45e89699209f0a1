//! Finite-difference audit of the model and every loss term.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::continual::{
    total_loss, BufferItem, CurrentItem, EwcState, LossWeights, OutputDistill, OutputDistillMode, StepBatch,
    StepContext, Targets,
};
use crate::graph::{Edge, Graph, PreparedGraph, UnitKind, UnitRef};
use crate::model::{GcnModel, ModelCheckpoint, Network, OutputLayout, ParamId};
use crate::nn::{grad_check, GradCheckOptions, GradCheckReport, Probe, Tensor2};

/// Loss configurations covered by [`gradient_audit`].
pub const AUDIT_TERMS: [&str; 11] = [
    "ce_graph", "ce_node", "er", "ls", "ls_node", "gs", "gs_node", "ewc", "lwf", "dk", "total",
];

fn random_graph(n: usize, features: usize, classes: usize, rng: &mut impl Rng, id: String) -> Graph {
    let mut edges: Vec<Edge> = (1..n).map(|i| Edge::new(rng.random_range(0..i), i)).collect();
    for _ in 0..n {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b {
            edges.push(Edge::new(a, b));
        }
    }
    let x = (0..n * features).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let label = rng.random_range(0..classes);
    Graph::new(id, n, edges, Tensor2::from_vec(n, features, x).expect("sized"), Some(labels), Some(label))
        .expect("valid by construction")
}

struct Setup {
    model: GcnModel,
    teacher: ModelCheckpoint,
    graphs: Vec<Arc<PreparedGraph>>,
    items: Vec<BufferItem>,
    layout: OutputLayout,
    ewc: EwcState,
}

const FEATURES: usize = 5;
const HIDDEN: usize = 8;
const CLASSES: usize = 4;

fn setup(kind: UnitKind, seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = GcnModel::new(FEATURES, HIDDEN, kind, 2, &mut rng);
    let teacher = GcnModel::new(FEATURES, HIDDEN, kind, 2, &mut rng).checkpoint(0);
    model.expand_head(CLASSES - 2, &mut rng);
    let graphs: Vec<Arc<PreparedGraph>> = (0..3)
        .map(|i| {
            let n = rng.random_range(6..12);
            Arc::new(PreparedGraph::from_graph(random_graph(
                n,
                FEATURES,
                CLASSES,
                &mut rng,
                format!("audit{seed}-{i}"),
            )))
        })
        .collect();
    let items = (0..3)
        .map(|i| BufferItem {
            unit: UnitRef::Graph(i),
            label: rng.random_range(0..CLASSES),
            graph: graphs[i].clone(),
            node: (kind == UnitKind::Node).then(|| rng.random_range(0..graphs[i].node_count())),
        })
        .collect();
    let fisher = ParamId::ALL
        .iter()
        .map(|&id| {
            let t = teacher.tensor(id);
            let data = (0..t.rows() * t.cols()).map(|_| rng.random_range(0.0..1.0)).collect();
            Tensor2::from_vec(t.rows(), t.cols(), data).expect("sized")
        })
        .collect();
    let anchors = ParamId::ALL.iter().map(|&id| teacher.tensor(id).clone()).collect();
    let mut layout = OutputLayout::new(None);
    layout.extend(&(0..CLASSES).collect::<Vec<_>>());
    Setup {
        model,
        teacher,
        graphs,
        items,
        layout,
        ewc: EwcState::from_parts(0.5, fisher, anchors),
    }
}

fn current(setup: &Setup, kind: UnitKind, rng: &mut impl Rng) -> Vec<CurrentItem> {
    setup.graphs[..2]
        .iter()
        .map(|g| CurrentItem {
            graph: g.clone(),
            targets: match kind {
                UnitKind::Graph => Targets::Graph(rng.random_range(0..CLASSES)),
                UnitKind::Node => Targets::Nodes(
                    (0..g.node_count())
                        .step_by(2)
                        .map(|r| (r, rng.random_range(0..CLASSES)))
                        .collect(),
                ),
            },
        })
        .collect()
}

/// Gradient-checks one named loss configuration against central differences.
pub fn audit_term(term: &str, seed: u64) -> GradCheckReport {
    let kind = if term.ends_with("_node") {
        UnitKind::Node
    } else {
        UnitKind::Graph
    };
    let mut s = setup(kind, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let cur = current(&s, kind, &mut rng);
    let none = LossWeights::NONE;
    let (weights, od, ewc, replay, distill) = match term {
        "ce_graph" | "ce_node" => (none, None, false, false, false),
        "er" => (LossWeights { alpha: 1.0, ..none }, None, false, true, false),
        "ls" | "ls_node" => (LossWeights { beta: 1.0, ..none }, None, false, false, true),
        "gs" | "gs_node" => (LossWeights { gamma: 1.0, ..none }, None, false, false, true),
        "ewc" => (none, None, true, false, false),
        "lwf" | "dk" => {
            let mode = if term == "lwf" {
                OutputDistillMode::Lwf
            } else {
                OutputDistillMode::Dk
            };
            let od = OutputDistill {
                mode,
                temperature: 2.0,
                weight: 1.0,
            };
            (none, Some(od), false, false, false)
        }
        "total" => {
            let w = LossWeights {
                alpha: 0.5,
                beta: 0.5,
                gamma: 0.5,
            };
            let od = OutputDistill {
                mode: OutputDistillMode::Lwf,
                temperature: 2.0,
                weight: 0.5,
            };
            (w, Some(od), true, true, true)
        }
        other => panic!("unknown audit term `{other}`"),
    };
    let items = std::mem::take(&mut s.items);
    let batch = StepBatch {
        current: cur,
        replay: if replay { items.iter().collect() } else { Vec::new() },
        distill: if distill {
            items.iter().map(|i| i.graph.clone()).chain(s.graphs[..1].iter().cloned()).collect()
        } else {
            Vec::new()
        },
    };
    let ctx = StepContext {
        previous: Some(&s.teacher),
        layout: &s.layout,
        weights,
        k_n: 4,
        output_distill: od,
        ewc: ewc.then_some(&s.ewc),
        seed,
    };
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    grad_check(
        &mut s.model,
        |m, with_grad| {
            let mut grads = m.zero_gradients();
            let (loss, fingerprint) =
                total_loss(m, &batch, &ctx, with_grad.then_some(&mut grads)).expect("audit losses are well formed");
            if with_grad {
                m.set_gradients(&grads);
            }
            Probe {
                loss: loss.total,
                fingerprint,
            }
        },
        &opts,
    )
}

/// Every audit term at every seed, as `(term, seed, report)`.
pub fn gradient_audit(seeds: impl IntoIterator<Item = u64> + Clone) -> Vec<(&'static str, u64, GradCheckReport)> {
    let mut out = Vec::new();
    for term in AUDIT_TERMS {
        for seed in seeds.clone() {
            out.push((term, seed, audit_term(term, seed)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_term_passes_on_two_seeds() {
        for (term, seed, report) in gradient_audit(0..2) {
            assert!(report.max_rel_error < 1e-4, "{term} seed {seed}: {report:?}");
            assert!(report.checked > 30, "{term} seed {seed}: {report:?}");
        }
    }
}
