//! Per-task training loop and the full task-stream protocol.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::buffer::{BufferItem, ReplayBuffer};
use super::ewc::{fisher_from_gradients, EwcState};
use super::losses::{total_loss, CurrentItem, LossBreakdown, LossWeights, OutputDistill, StepBatch, StepContext, Targets};
use super::strategy::{Recipe, Strategy};
use crate::error::{Error, Result};
use crate::graph::{ego_network, ego_union, PreparedGraph, Scenario, Task, TaskStream, UnitRef};
use crate::metrics::{average_forgetting, average_performance, evaluate_task, independent_ap, AccuracyMatrix};
use crate::model::{GcnModel, ModelCheckpoint, OutputLayout, ParamId, DEFAULT_HIDDEN};
use crate::nn::{adam_step, AdamConfig, ParamSlot, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Current-task units per step (graphs for graph-unit scenarios).
    pub batch_size: usize,
    pub hidden: usize,
    /// Buffer capacity `δ`.
    pub buffer_capacity: usize,
    /// Replayed items per step `k`.
    pub replay_k: usize,
    /// Buffer graphs per step for structure distillation; `None` means
    /// `batch_size`.
    pub k_g: Option<usize>,
    /// Also distil structure on the current batch's graphs.
    pub distill_current: bool,
    /// Nodes per graph for the local-structure term.
    pub k_n: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub temperature: f64,
    pub ewc_lambda: f64,
    /// Weight of the LwF/DK term.
    pub distill_weight: f64,
    /// Ego networks stand in for replayed nodes of single-graph streams.
    pub ego_hops: usize,
    pub ego_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-2,
            batch_size: 16,
            hidden: DEFAULT_HIDDEN,
            buffer_capacity: 1000,
            replay_k: 16,
            k_g: None,
            distill_current: true,
            k_n: 15,
            alpha: 0.5,
            beta: 0.5,
            gamma: 0.5,
            temperature: 2.0,
            ewc_lambda: 100.0,
            distill_weight: 1.0,
            ego_hops: 2,
            ego_cap: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be at least 1".to_string());
        }
        if self.hidden == 0 {
            problems.push("hidden must be at least 1".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr {} must be positive", self.lr));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(0.0..=1.0).contains(&w) {
                problems.push(format!("{name} {w} outside [0, 1]"));
            }
        }
        if !(self.temperature > 0.0) {
            problems.push("temperature must be positive".to_string());
        }
        if !(self.ewc_lambda >= 0.0) || !(self.distill_weight >= 0.0) {
            problems.push("ewc_lambda and distill_weight must be non-negative".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(problems.join("; ")))
        }
    }

    pub fn k_g(&self) -> usize {
        self.k_g.unwrap_or(self.batch_size)
    }
}

/// Result of running one strategy over a task stream.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub strategy: Strategy,
    pub matrix: AccuracyMatrix,
    /// One checkpoint per task, taken right after training it.
    pub checkpoints: Vec<ModelCheckpoint>,
    /// Output layout in force after each task.
    pub layouts: Vec<OutputLayout>,
    /// Buffer class counts after each task's rebalance.
    pub buffer_counts: Vec<BTreeMap<usize, usize>>,
    pub steps: u64,
}

impl RunOutcome {
    /// Final-row mean, or the diagonal mean for the independent baseline.
    pub fn ap(&self) -> Result<f64> {
        if self.strategy == Strategy::Independent {
            independent_ap(&self.matrix)
        } else {
            average_performance(&self.matrix)
        }
    }

    /// `None` when forgetting does not apply: the independent baseline, or a
    /// single-task stream.
    pub fn af(&self) -> Result<Option<f64>> {
        if self.strategy == Strategy::Independent || self.matrix.task_count() < 2 {
            return Ok(None);
        }
        average_forgetting(&self.matrix).map(Some)
    }
}

struct Learner<'a> {
    graphs: &'a [Arc<PreparedGraph>],
    scenario: Scenario,
    cfg: &'a TrainConfig,
    recipe: Recipe,
    model: GcnModel,
    layout: OutputLayout,
    buffer: ReplayBuffer,
    ewc: EwcState,
    teacher: Option<ModelCheckpoint>,
    steps: u64,
    rng: ChaCha8Rng,
    egos: HashMap<(usize, usize), Arc<PreparedGraph>>,
}

impl<'a> Learner<'a> {
    fn new(
        graphs: &'a [Arc<PreparedGraph>],
        scenario: Scenario,
        other: Option<usize>,
        cfg: &'a TrainConfig,
        recipe: Recipe,
        seed: u64,
    ) -> Result<Self> {
        let input_dim = graphs
            .first()
            .ok_or_else(|| Error::invalid("empty dataset"))?
            .features()
            .cols();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = OutputLayout::new(other);
        let model = GcnModel::new(input_dim, cfg.hidden, scenario.unit_kind(), layout.width(), &mut rng);
        let buffer = ReplayBuffer::new(cfg.buffer_capacity, rng.random());
        Ok(Self {
            graphs,
            scenario,
            cfg,
            recipe,
            model,
            layout,
            buffer,
            ewc: EwcState::new(cfg.ewc_lambda),
            teacher: None,
            steps: 0,
            rng,
            egos: HashMap::new(),
        })
    }

    fn add_classes(&mut self, classes: &[usize]) {
        let added = self.layout.extend(classes);
        self.model.expand_head(added, &mut self.rng);
    }

    /// Output unit a unit trains towards: its class among `active`, OTHER
    /// otherwise (when enabled), or nothing.
    fn target(&self, unit: UnitRef, active: &BTreeSet<usize>) -> Result<Option<(usize, usize)>> {
        let g = &self.graphs.get(unit.graph()).ok_or_else(|| Error::invalid("unit outside dataset"))?.graph;
        let (row, label) = match unit {
            UnitRef::Graph(_) => (0, g.graph_label()),
            UnitRef::Node { node, .. } => (node, g.node_label(node)),
        };
        let label = label.ok_or_else(|| Error::invalid(format!("unlabelled training unit {unit:?}")))?;
        let out = if active.contains(&label) {
            self.layout.unit_of(label)
        } else if self.layout.other_class().is_some() {
            Some(0)
        } else {
            None
        };
        Ok(out.map(|u| (row, u)))
    }

    /// Shuffled batches over `units`. Graph-unit node streams batch whole
    /// graphs with every supervised node; single-graph streams batch nodes.
    fn batches(&mut self, units: &[UnitRef], active: &BTreeSet<usize>, shuffle: bool) -> Result<Vec<Vec<CurrentItem>>> {
        let bs = self.cfg.batch_size;
        let mut out = Vec::new();
        match self.scenario {
            Scenario::Gugc => {
                let mut items = Vec::with_capacity(units.len());
                for &u in units {
                    if let Some((_, t)) = self.target(u, active)? {
                        items.push(CurrentItem {
                            graph: self.graphs[u.graph()].clone(),
                            targets: Targets::Graph(t),
                        });
                    }
                }
                if shuffle {
                    items.shuffle(&mut self.rng);
                }
                let mut items = items.into_iter().peekable();
                while items.peek().is_some() {
                    out.push(items.by_ref().take(bs).collect());
                }
            }
            Scenario::Gunc | Scenario::Nunc => {
                let mut rows = Vec::with_capacity(units.len());
                for &u in units {
                    if let Some(rt) = self.target(u, active)? {
                        rows.push((u.graph(), rt));
                    }
                }
                let groups: Vec<Vec<(usize, (usize, usize))>> = if self.scenario == Scenario::Gunc {
                    let mut by_graph: BTreeMap<usize, Vec<_>> = BTreeMap::new();
                    for r in rows {
                        by_graph.entry(r.0).or_default().push(r);
                    }
                    let mut graphs: Vec<Vec<_>> = by_graph.into_values().collect();
                    if shuffle {
                        graphs.shuffle(&mut self.rng);
                    }
                    graphs.chunks(bs).map(|c| c.concat()).collect()
                } else {
                    if shuffle {
                        rows.shuffle(&mut self.rng);
                    }
                    rows.chunks(bs).map(<[_]>::to_vec).collect()
                };
                for group in groups {
                    let mut by_graph: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
                    for (g, rt) in group {
                        by_graph.entry(g).or_default().push(rt);
                    }
                    out.push(
                        by_graph
                            .into_iter()
                            .map(|(g, pairs)| CurrentItem {
                                graph: self.graphs[g].clone(),
                                targets: Targets::Nodes(pairs),
                            })
                            .collect(),
                    );
                }
            }
        }
        Ok(out)
    }

    fn step(&mut self, current: Vec<CurrentItem>, context: &str) -> Result<LossBreakdown> {
        let cfg = self.cfg;
        let recipe = self.recipe;
        let teacher = self.teacher.as_ref();
        let structure = teacher.is_some() && (recipe.local || recipe.global);
        let replay = if recipe.replay {
            self.buffer.sample(cfg.replay_k, &mut self.rng)
        } else {
            Vec::new()
        };
        let mut distill: Vec<Arc<PreparedGraph>> = Vec::new();
        if structure {
            distill.extend(self.buffer.sample(cfg.k_g(), &mut self.rng).into_iter().map(|i| i.graph.clone()));
            if cfg.distill_current {
                for c in &current {
                    match (&c.targets, self.scenario) {
                        // The whole graph is too big to distil; use the ego union of K_n batch nodes.
                        (Targets::Nodes(rows), Scenario::Nunc) => {
                            if rows.is_empty() || cfg.k_n == 0 {
                                continue;
                            }
                            let picks = index::sample(&mut self.rng, rows.len(), cfg.k_n.min(rows.len()));
                            let mut centers: Vec<usize> = picks.into_iter().map(|i| rows[i].0).collect();
                            centers.sort_unstable();
                            let g = ego_union(&c.graph.graph, &centers, cfg.ego_hops, cfg.ego_cap)?;
                            distill.push(Arc::new(PreparedGraph::from_graph(g)));
                        }
                        _ => {
                            if !distill.iter().any(|g| Arc::ptr_eq(g, &c.graph)) {
                                distill.push(c.graph.clone());
                            }
                        }
                    }
                }
            }
        }
        let weights = LossWeights {
            alpha: if recipe.replay { cfg.alpha } else { 0.0 },
            beta: if recipe.local && cfg.k_n > 0 { cfg.beta } else { 0.0 },
            gamma: if recipe.global { cfg.gamma } else { 0.0 },
        };
        let ctx = StepContext {
            previous: teacher,
            layout: &self.layout,
            weights,
            k_n: cfg.k_n,
            output_distill: match (recipe.output_distill, teacher) {
                (Some(mode), Some(_)) => Some(OutputDistill {
                    mode,
                    temperature: cfg.temperature,
                    weight: cfg.distill_weight,
                }),
                _ => None,
            },
            ewc: (recipe.ewc && !self.ewc.is_empty()).then_some(&self.ewc),
            seed: self.rng.random(),
        };
        let batch = StepBatch { current, replay, distill };
        let mut grads = self.model.zero_gradients();
        let (loss, _) = total_loss(&self.model, &batch, &ctx, Some(&mut grads))?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFinite {
                context: format!("{context}, optimiser step {}: {loss:?}", self.steps + 1),
            });
        }
        self.model.set_gradients(&grads);
        let freeze = recipe.freeze_body && self.teacher.is_some();
        let mut slots: Vec<&mut ParamSlot> = self
            .model
            .param_slots_mut()
            .into_iter()
            .zip(ParamId::ALL)
            .filter(|(_, id)| !freeze || id.is_head())
            .map(|(s, _)| s)
            .collect();
        self.steps += 1;
        adam_step(&mut slots, &AdamConfig::with_lr(cfg.lr), self.steps).map_err(|e| match e {
            Error::NonFinite { context: c } => Error::NonFinite {
                context: format!("{context}: {c}"),
            },
            other => other,
        })?;
        Ok(loss)
    }

    fn train(&mut self, task_id: usize, units: &[UnitRef], active: &BTreeSet<usize>) -> Result<()> {
        for epoch in 0..self.cfg.epochs {
            let batches = self.batches(units, active, true)?;
            let mut total = 0.0;
            let n = batches.len();
            for batch in batches {
                let ctx = format!("task {task_id} epoch {epoch}");
                total += self.step(batch, &ctx)?.total;
            }
            log::debug!("task {task_id} epoch {epoch}: mean loss {:.5}", total / n.max(1) as f64);
        }
        Ok(())
    }

    /// Checkpoint, EWC consolidation and buffer update at the end of a task.
    fn finish(&mut self, task: &Task, units: &[UnitRef], active: &BTreeSet<usize>) -> Result<ModelCheckpoint> {
        if self.recipe.ewc {
            let mut samples = Vec::new();
            for batch in self.batches(units, active, false)? {
                let ctx = StepContext {
                    previous: None,
                    layout: &self.layout,
                    weights: LossWeights::NONE,
                    k_n: 0,
                    output_distill: None,
                    ewc: None,
                    seed: 0,
                };
                let mut g = self.model.zero_gradients();
                let step = StepBatch {
                    current: batch,
                    ..StepBatch::default()
                };
                total_loss(&self.model, &step, &ctx, Some(&mut g))?;
                samples.push(g);
            }
            if let Some(f) = fisher_from_gradients(&samples) {
                self.ewc.consolidate(&self.model, f);
            }
        }
        if self.recipe.replay {
            let mut items = Vec::with_capacity(task.train.len());
            for &u in &task.train {
                let label = match u {
                    UnitRef::Graph(g) => self.graphs[g].graph.graph_label(),
                    UnitRef::Node { graph, node } => self.graphs[graph].graph.node_label(node),
                };
                let label = label.ok_or_else(|| Error::invalid(format!("unlabelled training unit {u:?}")))?;
                let (graph, node) = match (self.scenario, u) {
                    (Scenario::Nunc, UnitRef::Node { graph, node }) => (self.ego(graph, node)?, Some(0)),
                    (_, UnitRef::Node { graph, node }) => (self.graphs[graph].clone(), Some(node)),
                    (_, UnitRef::Graph(g)) => (self.graphs[g].clone(), None),
                };
                items.push(BufferItem { unit: u, label, graph, node });
            }
            self.buffer.extend_and_rebalance(items);
        }
        let ckpt = self.model.checkpoint(task.id);
        self.teacher = Some(ckpt.clone());
        Ok(ckpt)
    }

    fn ego(&mut self, graph: usize, node: usize) -> Result<Arc<PreparedGraph>> {
        if let Some(g) = self.egos.get(&(graph, node)) {
            return Ok(g.clone());
        }
        let ego = ego_network(&self.graphs[graph].graph, node, self.cfg.ego_hops, self.cfg.ego_cap)?;
        let g = Arc::new(PreparedGraph::from_graph(ego));
        self.egos.insert((graph, node), g.clone());
        Ok(g)
    }
}

/// Units a task trains on: its labelled units plus any OTHER negatives.
fn task_units(task: &Task) -> Vec<UnitRef> {
    let mut units: Vec<UnitRef> = task.train.iter().chain(&task.negatives).copied().collect();
    units.sort_unstable();
    units.dedup();
    units
}

/// Trains `strategy` over every task of `stream` in order, evaluating on the
/// test sets of all tasks seen so far after each one.
///
/// `graphs` must be the prepared form of the dataset the stream was split
/// from, in the same order.
pub fn run_stream(
    stream: &TaskStream,
    graphs: &[Arc<PreparedGraph>],
    strategy: Strategy,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if stream.is_empty() {
        return Err(Error::invalid("empty task stream"));
    }
    let recipe = strategy.recipe();
    let other = stream.other_enabled().then(|| stream.other_class());
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut outcome = RunOutcome {
        strategy,
        matrix: AccuracyMatrix::new(stream.len()),
        checkpoints: Vec::with_capacity(stream.len()),
        layouts: Vec::with_capacity(stream.len()),
        buffer_counts: Vec::with_capacity(stream.len()),
        steps: 0,
    };

    if recipe.independent {
        for (t, task) in stream.tasks.iter().enumerate() {
            let mut learner = Learner::new(graphs, stream.scenario, other, cfg, recipe, seeds.random())?;
            learner.add_classes(&task.classes);
            let active: BTreeSet<usize> = task.classes.iter().copied().collect();
            let units = task_units(task);
            learner.train(t, &units, &active)?;
            let ckpt = learner.finish(task, &units, &active)?;
            outcome.steps += learner.steps;
            outcome.checkpoints.push(ckpt);
            outcome.layouts.push(learner.layout.clone());
            outcome.buffer_counts.push(BTreeMap::new());
            let row = (0..=t)
                .map(|j| {
                    let tj = &stream.tasks[j];
                    evaluate_task(&outcome.checkpoints[j], &outcome.layouts[j], graphs, &tj.test)
                })
                .collect::<Result<Vec<_>>>()?;
            outcome.matrix.push_row(row)?;
        }
        return Ok(outcome);
    }

    let mut learner = Learner::new(graphs, stream.scenario, other, cfg, recipe, seeds.random())?;
    let mut seen: BTreeSet<usize> = BTreeSet::new();
    let mut seen_units: BTreeSet<UnitRef> = BTreeSet::new();
    for (t, task) in stream.tasks.iter().enumerate() {
        learner.add_classes(&task.classes);
        seen.extend(task.classes.iter().copied());
        let (units, active) = if recipe.joint {
            seen_units.extend(task_units(task));
            (seen_units.iter().copied().collect::<Vec<_>>(), seen.clone())
        } else {
            (task_units(task), task.classes.iter().copied().collect())
        };
        learner.train(t, &units, &active)?;
        let ckpt = learner.finish(task, &units, &active)?;
        let row = stream.tasks[..=t]
            .iter()
            .map(|tj| evaluate_task(&learner.model, &learner.layout, graphs, &tj.test))
            .collect::<Result<Vec<_>>>()?;
        outcome.matrix.push_row(row)?;
        outcome.checkpoints.push(ckpt);
        outcome.layouts.push(learner.layout.clone());
        outcome.buffer_counts.push(learner.buffer.class_counts());
        log::info!(
            "{strategy} task {t}: row {:?}",
            outcome.matrix.rows()[t].iter().map(|a| (a * 1000.0).round() / 10.0).collect::<Vec<_>>()
        );
    }
    outcome.steps = learner.steps;
    Ok(outcome)
}
