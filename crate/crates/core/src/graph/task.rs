use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, Scenario, UnitKind};
use crate::error::{Error, Result};

/// A training or evaluation unit: a whole graph, or one node of a graph.
/// Indices refer to positions in the dataset the stream was split from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UnitRef {
    Graph(usize),
    Node { graph: usize, node: usize },
}

impl UnitRef {
    pub fn graph(self) -> usize {
        match self {
            UnitRef::Graph(g) | UnitRef::Node { graph: g, .. } => g,
        }
    }

    /// Class label of the unit in `dataset`, if labelled.
    pub fn label(self, dataset: &[Graph]) -> Option<usize> {
        match self {
            UnitRef::Graph(g) => dataset.get(g)?.graph_label(),
            UnitRef::Node { graph, node } => dataset.get(graph)?.node_label(node),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: usize,
    pub scenario: Scenario,
    /// Sorted class ids introduced by this task.
    pub classes: Vec<usize>,
    pub train: Vec<UnitRef>,
    pub val: Vec<UnitRef>,
    pub test: Vec<UnitRef>,
    /// Training nodes outside `classes`, trained towards the OTHER class.
    pub negatives: Vec<UnitRef>,
    pub other_class: Option<usize>,
}

impl Task {
    pub fn unit_kind(&self) -> UnitKind {
        self.scenario.unit_kind()
    }

    pub fn contains_class(&self, class: usize) -> bool {
        self.classes.binary_search(&class).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub total_classes: usize,
    pub scenario: Scenario,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Reserved id of the OTHER class.
    pub fn other_class(&self) -> usize {
        self.total_classes
    }

    pub fn other_enabled(&self) -> bool {
        self.tasks.iter().any(|t| t.other_class.is_some())
    }

    /// Class ids in task order.
    pub fn class_order(&self) -> Vec<usize> {
        self.tasks.iter().flat_map(|t| t.classes.iter().copied()).collect()
    }

    /// Applies [`relabel_with_other`] to every task.
    pub fn with_other(mut self, dataset: &[Graph]) -> Result<Self> {
        let total = self.total_classes;
        self.tasks = self
            .tasks
            .iter()
            .map(|t| relabel_with_other(t, dataset, total))
            .collect::<Result<_>>()?;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub seed: u64,
    /// Shuffle the class-to-task assignment instead of ascending order.
    pub shuffle_classes: bool,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            shuffle_classes: false,
            train_frac: 0.6,
            val_frac: 0.2,
        }
    }
}

/// Splits a labelled dataset into tasks with disjoint, equal-size class sets.
///
/// Graph-unit classification splits graphs per class. Node units are split per
/// class for NUNC, while GUNC assigns whole graphs to train/val/test so a
/// document never straddles splits.
pub fn split_class_incremental(
    dataset: &[Graph],
    classes_per_task: usize,
    scenario: Scenario,
    opts: &SplitOptions,
) -> Result<TaskStream> {
    if classes_per_task == 0 {
        return Err(Error::invalid("classes_per_task must be positive"));
    }
    if !(opts.train_frac > 0.0 && opts.val_frac >= 0.0 && opts.train_frac + opts.val_frac <= 1.0) {
        return Err(Error::invalid("split fractions must satisfy 0 < train, 0 <= val, train + val <= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let units_by_class = collect_units(dataset, scenario)?;
    let classes: Vec<usize> = units_by_class.keys().copied().collect();
    if classes.len() < classes_per_task {
        return Err(Error::invalid(format!(
            "{} classes cannot fill a task of {classes_per_task}",
            classes.len()
        )));
    }
    if classes.len() % classes_per_task != 0 {
        return Err(Error::invalid(format!(
            "{} classes do not divide into tasks of {classes_per_task}",
            classes.len()
        )));
    }
    let total_classes = classes.last().map_or(0, |c| c + 1);

    let mut split: BTreeMap<usize, [Vec<UnitRef>; 3]> = BTreeMap::new();
    match scenario {
        Scenario::Gunc => {
            let mut graph_ids: Vec<usize> = (0..dataset.len()).collect();
            graph_ids.shuffle(&mut rng);
            let (n_train, n_val) = split_sizes(graph_ids.len(), opts);
            let mut part = vec![2usize; dataset.len()];
            for (pos, &g) in graph_ids.iter().enumerate() {
                part[g] = if pos < n_train {
                    0
                } else if pos < n_train + n_val {
                    1
                } else {
                    2
                };
            }
            for (&class, units) in &units_by_class {
                let entry = split.entry(class).or_default();
                for &u in units {
                    entry[part[u.graph()]].push(u);
                }
            }
        }
        Scenario::Nunc | Scenario::Gugc => {
            for (&class, units) in &units_by_class {
                let mut units = units.clone();
                units.shuffle(&mut rng);
                let (n_train, n_val) = split_sizes(units.len(), opts);
                let test = units.split_off(n_train + n_val);
                let val = units.split_off(n_train);
                split.insert(class, [units, val, test]);
            }
        }
    }
    if let Some((class, _)) = split.iter().find(|(_, parts)| parts[0].is_empty()) {
        return Err(Error::invalid(format!("class {class} has no training unit")));
    }

    let mut order = classes;
    if opts.shuffle_classes {
        order.shuffle(&mut rng);
    }
    let tasks = order
        .chunks(classes_per_task)
        .enumerate()
        .map(|(id, chunk)| {
            let mut classes = chunk.to_vec();
            classes.sort_unstable();
            let gather = |which: usize| {
                let mut units: Vec<UnitRef> = classes
                    .iter()
                    .flat_map(|c| split[c][which].iter().copied())
                    .collect();
                units.sort_unstable();
                units
            };
            Task {
                id,
                scenario,
                train: gather(0),
                val: gather(1),
                test: gather(2),
                classes,
                negatives: Vec::new(),
                other_class: None,
            }
        })
        .collect();
    Ok(TaskStream {
        tasks,
        total_classes,
        scenario,
    })
}

fn split_sizes(n: usize, opts: &SplitOptions) -> (usize, usize) {
    let n_train = ((n as f64 * opts.train_frac).round() as usize).clamp(1.min(n), n);
    let n_val = ((n as f64 * opts.val_frac).round() as usize).min(n - n_train);
    (n_train, n_val)
}

fn collect_units(dataset: &[Graph], scenario: Scenario) -> Result<BTreeMap<usize, Vec<UnitRef>>> {
    let mut by_class: BTreeMap<usize, Vec<UnitRef>> = BTreeMap::new();
    for (gi, g) in dataset.iter().enumerate() {
        match scenario.unit_kind() {
            UnitKind::Graph => {
                let label = g.graph_label().ok_or_else(|| Error::InvalidGraph {
                    id: g.id().to_string(),
                    reason: "graph classification requires a graph label".into(),
                })?;
                by_class.entry(label).or_default().push(UnitRef::Graph(gi));
            }
            UnitKind::Node => {
                let labels = g.node_labels().ok_or_else(|| Error::InvalidGraph {
                    id: g.id().to_string(),
                    reason: "node classification requires node labels".into(),
                })?;
                for (node, &label) in labels.iter().enumerate() {
                    by_class.entry(label).or_default().push(UnitRef::Node { graph: gi, node });
                }
            }
        }
    }
    Ok(by_class)
}

/// Marks every node of the task's training graphs whose label lies outside
/// the task's classes as a negative for the OTHER class (`total_classes`).
/// Dataset labels are left untouched.
pub fn relabel_with_other(task: &Task, dataset: &[Graph], total_classes: usize) -> Result<Task> {
    if task.scenario != Scenario::Gunc {
        return Err(Error::invalid(format!(
            "OTHER relabelling only applies to gunc streams, not {}",
            task.scenario
        )));
    }
    let graphs: BTreeSet<usize> = task.train.iter().map(|u| u.graph()).collect();
    let mut negatives = Vec::new();
    for &gi in &graphs {
        let g = dataset
            .get(gi)
            .ok_or_else(|| Error::invalid(format!("unit refers to missing graph {gi}")))?;
        if let Some(labels) = g.node_labels() {
            for (node, &label) in labels.iter().enumerate() {
                if !task.contains_class(label) {
                    negatives.push(UnitRef::Node { graph: gi, node });
                }
            }
        }
    }
    Ok(Task {
        negatives,
        other_class: Some(total_classes),
        ..task.clone()
    })
}
